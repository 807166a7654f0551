"""Per-process Counting automaton for congested anonymous dynamic networks.

The blocking control flow (send, wait for the round's inbox, continue) is
written as a generator: every ``yield`` emits the round's outgoing message
and resumes with that round's inbox.  ``Process.outgoing``/``Process.deliver``
adapt it to the engine's pull model.  ``phase`` mirrors where the generator
is suspended so that a monitor can check phase lockstep.
"""

from __future__ import annotations

from collections import Counter
from enum import Enum
from typing import Callable, Hashable

from . import messages as M
from .history_tree import ROOT_ID, HistoryTree, extract_view
from .messages import Label, Message

LEADER_LABEL = "leader"
NON_LEADER_LABEL = "non-leader"

MODES = ("basic", "simultaneous", "generalized")


class Phase(str, Enum):
    BEGIN_ROUND = "begin"
    VHT_BROADCAST = "vht"
    ACK_BROADCAST = "ack"
    ERROR = "error"
    WAIT = "wait"
    RESET = "reset"
    FINAL = "final"
    OUTPUT = "output"


class _Restart:
    def __repr__(self):
        return "RESTART"


RESTART = _Restart()


class Inconsistent(Exception):
    """An update referenced IDs this process does not know."""


class TempForest:
    """Level under construction: roots are copies of the previous VHT level."""

    def __init__(self, roots=()):
        self.parent: dict[int, int | None] = {r: None for r in roots}
        self.red: dict[int, dict[int, int]] = {}

    def root(self, id_: int) -> int:
        if id_ not in self.parent:
            raise Inconsistent(f"id {id_} not in the temporary VHT")
        while self.parent[id_] is not None:
            id_ = self.parent[id_]
        return id_

    def __contains__(self, id_) -> bool:
        return id_ in self.parent

    def structure(self) -> tuple:
        return tuple(
            (i, p, tuple(sorted(self.red.get(i, {}).items()))) for i, p in sorted(self.parent.items())
        )


class LevelGraph:
    def __init__(self, nodes=()):
        self.adj: dict[int, set[int]] = {v: set() for v in nodes}

    def has_edge(self, a: int, b: int) -> bool:
        return b in self.adj.get(a, ())

    def add_edge(self, a: int, b: int) -> None:
        self.adj[a].add(b)
        self.adj[b].add(a)

    def connected(self, a: int, b: int) -> bool:
        seen, stack = {a}, [a]
        while stack:
            v = stack.pop()
            if v == b:
                return True
            for w in self.adj[v]:
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        return False

    def edges(self) -> list[tuple[int, int]]:
        return sorted((a, b) for a in self.adj for b in self.adj[a] if a < b)

    def is_forest(self) -> bool:
        seen: set[int] = set()
        for s in self.adj:
            if s in seen:
                continue
            seen.add(s)
            stack = [(s, None)]
            while stack:
                v, par = stack.pop()
                for w in self.adj[v]:
                    if w == par:
                        continue
                    if w in seen:
                        return False
                    seen.add(w)
                    stack.append((w, v))
        return True

    def is_spanning_tree(self) -> bool:
        if not self.adj:
            return True
        start = next(iter(self.adj))
        return self.is_forest() and all(self.connected(start, v) for v in self.adj)

    def structure(self) -> tuple:
        return (tuple(sorted(self.adj)), tuple(self.edges()))


class Process:
    """One anonymous process.

    ``count_fn`` maps the leader's view to ``None`` (unknown) or a result:
    an int in basic/simultaneous mode, an input multiset in generalized mode.
    """

    def __init__(
        self,
        is_leader: bool,
        *,
        mode: str = "basic",
        input_value: int | None = None,
        count_fn: Callable[[HistoryTree], object] | None = None,
    ):
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}")
        if mode == "generalized" and not is_leader and input_value is None:
            raise ValueError("generalized mode needs an input value for every non-leader")
        self.mode = mode
        self.leader = is_leader
        self.input_value = input_value
        if count_fn is None:
            from .counting import Malformed, count_from_view

            def count_fn(view, _mode=mode):
                # a genuine view is never malformed; keep building if one is
                try:
                    return count_from_view(view, generalized=_mode == "generalized").value
                except Malformed:
                    return None

        self.count_fn = count_fn
        self.init_state()
        self.output = None
        self.output_round: int | None = None
        self.terminated = False
        self.resets = 0
        self.max_diam = self.diam
        self.events: list[tuple] = []
        self._digest = None
        self._gen = self._main()
        self._pending: Message | None = next(self._gen)

    # --- variables ---------------------------------------------------------

    def init_state(self) -> None:
        self.current_round = 0
        self.vht = HistoryTree()
        self.diam = 1
        self.network_size = None
        self.obs: list[tuple[int, int]] = []
        self.temp = TempForest()
        self.level_graph = LevelGraph()
        self.phase = Phase.BEGIN_ROUND
        if self.mode == "generalized":
            self.vht.add_node(0, ROOT_ID, LEADER_LABEL)
            self.my_id = 0 if self.leader else ROOT_ID
            self.next_fresh_id = 1
            self.current_level = 0
        else:
            self.vht.add_node(0, ROOT_ID, LEADER_LABEL)
            self.vht.add_node(1, ROOT_ID, NON_LEADER_LABEL)
            self.my_id = 0 if self.leader else 1
            self.next_fresh_id = 2
            self.current_level = 1

    def _touch(self) -> None:
        self._digest = None

    def agreement_digest(self) -> tuple:
        """Variables that all non-error processes must agree on."""
        if self._digest is None:
            d = (
                self.current_level,
                self.next_fresh_id,
                self.vht.structure(),
                self.temp.structure(),
                self.level_graph.structure(),
            )
            self._digest = (d, hash(d))
        return self._digest[0]

    def agreement_hash(self) -> int:
        self.agreement_digest()
        return self._digest[1]

    @property
    def is_error(self) -> bool:
        return self.phase == Phase.ERROR

    # --- engine adapter ----------------------------------------------------

    def outgoing(self) -> Message | None:
        return self._pending

    def deliver(self, inbox: Counter) -> None:
        if self.terminated:
            return
        if self.mode == "simultaneous" and self.phase != Phase.FINAL:
            finals = [m for m in inbox if m.label == Label.FINAL]
            if finals:
                self.current_round += 1
                self._gen.close()
                self._gen = self._finale(max(finals, key=lambda m: m.priority))
                self._pending = next(self._gen)
                return
        try:
            self._pending = self._gen.send(inbox)
        except StopIteration:
            self._pending = None
            self.terminated = True
            self.phase = Phase.OUTPUT

    # --- communication -----------------------------------------------------

    def _send_and_receive(self, msg: Message):
        inbox = yield msg
        self.current_round += 1
        return inbox

    def _broadcast_step(self, top: Message):
        inbox = yield from self._send_and_receive(top)
        return M.highest(top, inbox)

    def _broadcast_phase(self, msg: Message):
        top = msg
        for _ in range(self.diam):
            top = yield from self._broadcast_step(top)
        if top.label == Label.ERROR:
            yield from self._handle_error(top)
            return RESTART
        if top.label == Label.RESET:
            yield from self._broadcast_reset(top)
            return RESTART
        return top

    # --- main loop ---------------------------------------------------------

    def _main(self):
        while True:
            yield from self._build_level()
            result = None
            if self.leader:
                view = extract_view(self.vht, self.my_id)
                result = self.count_fn(view)
                self.network_size = result
            self.events.append(("finalize", self.current_level, self.current_round))
            self.current_level += 1
            self._touch()
            if result is not None:
                break
        if self.mode == "simultaneous":
            yield from self._finale(M.final(result, self.current_round))
            return
        self._emit(result)

    def _emit(self, value) -> None:
        self.output = value
        self.output_round = self.current_round
        self.phase = Phase.OUTPUT

    def _build_level(self):
        # each pass of this loop is a (re)entry at the level set-up
        while True:
            if self.mode == "generalized" and self.current_level == 0:
                ok = yield from self._level_loop(self.make_input_message, self._apply_input)
            elif (yield from self._set_up_new_level()) is RESTART:
                # a reset may have rewound us to the input stage
                continue
            else:
                ok = yield from self._level_loop(self.make_vht_message, self._apply_update)
            if ok:
                return

    def _level_loop(self, make_message, apply):
        while True:
            original = make_message()
            self.phase = Phase.VHT_BROADCAST
            vht_msg = yield from self._broadcast_phase(original)
            if vht_msg is RESTART:
                return False
            self.phase = Phase.ACK_BROADCAST
            ack = yield from self._broadcast_phase(vht_msg if self.leader else M.NULL)
            if ack is RESTART:
                return False
            if ack != vht_msg:
                yield from self._broadcast_error(self.current_level)
                return False
            try:
                apply(ack)
            except Inconsistent:
                yield from self._broadcast_error(self.current_level)
                return False
            if ack.label == Label.END:
                return True

    def _apply_update(self, ack: Message) -> None:
        if ack.label == Label.EDGE:
            self.update_temp_vht(ack.id1, ack.id2, ack.mult)
        elif ack.label == Label.DONE:
            self.update_vht(ack.id)

    # --- level construction ------------------------------------------------

    def _set_up_new_level(self):
        self.phase = Phase.BEGIN_ROUND
        self.events.append(("begin", self.current_level, self.current_round + 1, self.my_id))
        inbox = yield from self._send_and_receive(M.begin(self.my_id))
        return (yield from self.set_up_new_level(inbox))

    def set_up_new_level(self, inbox: Counter):
        """Consume the begin round's inbox; a generator because the error
        branch keeps communicating."""
        strays = [m for m in inbox if m.label != Label.BEGIN]
        if strays:
            yield from self._handle_error(max(strays, key=lambda m: m.priority))
            return RESTART
        self.obs = sorted(
            [(m.id, k) for m, k in inbox.items() if m.id != self.my_id] + [(self.my_id, 2)]
        )
        prev = self.vht.level(self.current_level - 1)
        self.temp = TempForest(prev)
        self.level_graph = LevelGraph(prev)
        self._touch()
        return "OK"

    def make_vht_message(self) -> Message:
        if not self.obs:
            if self.my_id in self.vht:
                return M.END
            return M.done(self.my_id)
        id2, mult = self.obs[0]
        return M.edge(self.my_id, id2, mult)

    def _root_in_graph(self, id_: int) -> int:
        r = self.temp.root(id_)
        if r not in self.level_graph.adj:
            raise Inconsistent(f"root {r} missing from the level graph")
        return r

    def prevent_cycles(self) -> None:
        node1 = self._root_in_graph(self.my_id)
        keep = []
        for id2, mult in self.obs:
            if id2 not in self.level_graph.adj:
                raise Inconsistent(f"observed id {id2} missing from the level graph")
            if (
                node1 != id2
                and not self.level_graph.has_edge(node1, id2)
                and self.level_graph.connected(node1, id2)
            ):
                continue
            keep.append((id2, mult))
        self.obs = keep
        self._touch()

    def update_temp_vht(self, id1: int, id2: int, mult: int) -> None:
        if id1 not in self.temp:
            raise Inconsistent(f"edge from unknown id {id1}")
        root1 = self._root_in_graph(id1)
        root2 = self._root_in_graph(id2)
        child = self.next_fresh_id
        self.next_fresh_id += 1
        self.temp.parent[child] = id1
        self.temp.red[child] = {root2: mult}
        if self.my_id == id1 and (id2, mult) in self.obs:
            self.obs.remove((id2, mult))
            self.my_id = child
        self._touch()
        if root1 != root2 and not self.level_graph.has_edge(root1, root2):
            self.level_graph.add_edge(root1, root2)
            self.prevent_cycles()

    def update_vht(self, id_: int) -> None:
        if id_ not in self.temp or id_ in self.vht:
            raise Inconsistent(f"cannot finalize id {id_}")
        root = self.temp.root(id_)
        if root == id_ or root not in self.vht:
            raise Inconsistent(f"id {id_} has no accepted edges")
        self.vht.add_node(id_, root)
        it = id_
        while it != root:
            for src, m in self.temp.red.get(it, {}).items():
                self.vht.add_red(id_, src, m)
            it = self.temp.parent[it]
        self._touch()

    # --- generalized inputs ------------------------------------------------

    def make_input_message(self) -> Message:
        if self.leader:
            return M.END
        if any(self.vht.nodes[i].label == self.input_value for i in self.vht.level(0)):
            return M.END
        return M.input_value(self.input_value)

    def _apply_input(self, ack: Message) -> None:
        if ack.label != Label.INPUT:
            return
        if any(self.vht.nodes[i].label == ack.value for i in self.vht.level(0)):
            raise Inconsistent(f"input {ack.value} accepted twice")
        nid = self.next_fresh_id
        self.next_fresh_id += 1
        self.vht.add_node(nid, ROOT_ID, ack.value)
        if not self.leader and self.input_value == ack.value:
            self.my_id = nid
        self._touch()

    # --- errors and resets -------------------------------------------------

    def _handle_error(self, msg: Message):
        if msg.label == Label.ERROR and msg.level < self.current_level:
            self.current_level = msg.level
            self._touch()
        if self.leader:
            self.phase = Phase.WAIT
            for _ in range(2 * self.diam + 1):
                yield from self._send_and_receive(M.NULL)
            yield from self._broadcast_reset(self.make_reset_message())
        else:
            yield from self._broadcast_error(self.current_level)

    def make_reset_message(self) -> Message:
        return M.reset(self.current_level, self.current_round, 2 * self.diam)

    def _broadcast_error(self, level: int):
        self.phase = Phase.ERROR
        msg = M.error(level)
        while msg.label != Label.RESET:
            msg = yield from self._broadcast_step(msg)
        yield from self._broadcast_reset(msg)

    def _broadcast_reset(self, reset_msg: Message):
        self.phase = Phase.RESET
        final_round = reset_msg.starting_round + reset_msg.new_diam
        top = reset_msg
        while self.current_round < final_round:
            top = yield from self._broadcast_step(top)
        try:
            self.apply_reset(reset_msg)
        except Inconsistent:
            yield from self._broadcast_error(reset_msg.level)

    def apply_reset(self, reset_msg: Message) -> None:
        level = reset_msg.level
        if self.my_id in self.vht:
            node = self.my_id
        else:
            node = self.temp.root(self.my_id)
            if node not in self.vht:
                raise Inconsistent(f"no VHT node behind id {self.my_id}")
        if self.mode == "generalized" and level == 0:
            self.my_id = 0 if self.leader else ROOT_ID
            self.vht.delete_from_level(1)
            for i in list(self.vht.level(0)):
                if i != 0:
                    del self.vht.nodes[i]
            self.vht.levels[1] = [0]
            self.vht.nodes[ROOT_ID].children = [0]
        else:
            if self.vht.nodes[node].level < level - 1:
                raise Inconsistent(f"VHT too shallow to rewind to level {level}")
            self.my_id = self.vht.ancestor(node, level - 1)
            self.vht.delete_from_level(level)
        self.current_level = level
        self.diam = reset_msg.new_diam
        self.max_diam = max(self.max_diam, self.diam)
        # every live ID now sits in the truncated VHT; restart numbering there
        self.next_fresh_id = max(self.vht.nodes) + 1
        self.obs = []
        self.temp = TempForest()
        self.level_graph = LevelGraph()
        self.resets += 1
        self.events.append(("reset", level, self.current_round))
        self._touch()

    # --- simultaneous termination -------------------------------------------

    def _finale(self, msg: Message):
        self.phase = Phase.FINAL
        n, c = msg.params
        while self.current_round < c + n:
            yield from self._send_and_receive(msg)
        self._emit(n)


class TUnionProcess:
    """Repeat the inner process's message for ``T`` real rounds and feed it the
    union of the block's inboxes as a single virtual round."""

    def __init__(self, inner: Process, T: int):
        if T < 1:
            raise ValueError("T must be at least 1")
        self.inner = inner
        self.T = T
        self._acc: Counter = Counter()
        self._k = 0
        self.real_round = 0

    def __getattr__(self, name):
        return getattr(self.inner, name)

    @property
    def terminated(self) -> bool:
        return self.inner.terminated

    def outgoing(self):
        return self.inner.outgoing()

    def deliver(self, inbox: Counter) -> None:
        self.real_round += 1
        self._acc.update(inbox)
        self._k += 1
        if self._k == self.T:
            box, self._acc, self._k = self._acc, Counter(), 0
            self.inner.deliver(box)


def make_processes(
    n: int,
    mode: str = "basic",
    inputs: list[Hashable] | None = None,
    T: int = 1,
    count_fn=None,
) -> list:
    """Process 0 is the leader.  ``inputs[p]`` is ignored for the leader."""
    if n < 1:
        raise ValueError("n must be at least 1")
    procs = []
    for p in range(n):
        value = inputs[p] if inputs is not None and p > 0 else None
        proc = Process(p == 0, mode=mode, input_value=value, count_fn=count_fn)
        procs.append(TUnionProcess(proc, T) if T > 1 else proc)
    return procs
