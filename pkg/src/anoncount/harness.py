"""Experiment runner, invariant monitor, and ideal-VHT reconstruction.

The monitor is an engine observer.  It only reads process state; nothing it
computes flows back into the processes.
"""

from __future__ import annotations

import csv
import io
import math
import random
from dataclasses import dataclass, field
from typing import Hashable, Iterator, Sequence

from .counting import Malformed, cut_certificate, infer_anonymities
from .engine import (
    BudgetExhausted,
    RoundTopology,
    RunMetrics,
    make_scheduler,
    path,
    run_processes,
    scheduler_random_connected,
)
from .history_tree import (
    ROOT_ID,
    GroundTruthBuilder,
    HistoryTree,
    embed,
    extract_view,
    is_isomorphic,
)
from .messages import Label
from .protocol import LEADER_LABEL, MODES, NON_LEADER_LABEL, Phase, make_processes

CSV_COLUMNS = (
    "n",
    "seed",
    "scheduler",
    "mode",
    "rounds",
    "resets",
    "max_diam_estimate",
    "distinct_red_edges",
    "max_msg_bits",
    "max_param",
    "output",
    "correct",
)

LOCKSTEP_PHASES = (Phase.BEGIN_ROUND, Phase.VHT_BROADCAST, Phase.ACK_BROADCAST, Phase.RESET)


def round_bound(n: int) -> float:
    return 64 * n**3 * (math.log2(n) + 2)


def reset_bound(n: int) -> float:
    return math.log2(n) + 3


def red_edge_bound(n: int, m: int) -> int:
    return 2 * n * (m + n)


# --- virtual network --------------------------------------------------------


@dataclass
class IdealVhtRecord:
    """One finalized level: the begin round, the ID partition, S, and N_t."""

    level: int
    round: int
    ids: dict[int, int]  # process -> Begin ID (participants only)
    spanning_tree: list[tuple[int, int]]  # over ideal classes of level - 1
    network: RoundTopology


def class_cycles(members: Sequence[int]) -> list[tuple[int, int]]:
    """Links of C_v: a ring, a double link for two processes, a double
    self-loop for one."""
    ps = sorted(members)
    if len(ps) == 1:
        return [(ps[0], ps[0])] * 2
    if len(ps) == 2:
        return [(ps[0], ps[1])] * 2
    return [(ps[k], ps[(k + 1) % len(ps)]) for k in range(len(ps))]


def virtual_network(
    g: RoundTopology,
    classes: Sequence[int],
    s_edges: Sequence[tuple[int, int]],
) -> tuple[RoundTopology, list[tuple[int, int]]]:
    """N_t from the begin-round topology ``g``, the per-process classes and
    the class pairs of S.  S is completed to a spanning tree of the class
    graph (deterministically) when some classes took no part in the level."""
    n = g.n
    cross = sorted(
        {(min(classes[i], classes[j]), max(classes[i], classes[j])) for (i, j) in g.edges if classes[i] != classes[j]}
    )
    parent = {c: c for c in set(classes)}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    tree = []
    for a, b in list(s_edges) + cross:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb
            tree.append((min(a, b), max(a, b)))
    keep = set(tree)
    links = []
    for (i, j), m in g.edges.items():
        ci, cj = classes[i], classes[j]
        if ci != cj and (min(ci, cj), max(ci, cj)) in keep:
            links.append((i, j, m))
    by_class: dict[int, list[int]] = {}
    for p in range(n):
        by_class.setdefault(classes[p], []).append(p)
    for members in by_class.values():
        links.extend(class_cycles(members))
    return RoundTopology.from_pairs(n, links), sorted(tree)


def level0_labels(n: int, mode: str, inputs: Sequence[Hashable] | None) -> list[Hashable]:
    if mode == "generalized":
        return [LEADER_LABEL] + [inputs[p] for p in range(1, n)]
    return [LEADER_LABEL] + [NON_LEADER_LABEL] * (n - 1)


def effective_vht(vht: HistoryTree, ideal_labels) -> HistoryTree:
    """Drop childless L0 nodes whose label no process carries (the
    non-leader node when n = 1)."""
    out = vht.copy()
    for i in list(out.level(0)):
        node = out.nodes[i]
        if not node.children and node.label not in ideal_labels:
            del out.nodes[i]
            out.levels[1].remove(i)
            out.nodes[out.root].children.remove(i)
    return out


def spans(level_graph, ids: set[int]) -> bool:
    """Acyclic, and connecting every ID that took part in the begin round
    (a vestigial L0 node may stay isolated)."""
    if not level_graph.is_forest() or not ids:
        return level_graph.is_forest()
    start = min(ids)
    return all(level_graph.connected(start, x) for x in ids)


# --- monitor -----------------------------------------------------------------


@dataclass
class Violation:
    check: str
    round: int
    detail: str

    def __str__(self) -> str:
        return f"{self.check} at round {self.round}: {self.detail}"


class Monitor:
    """Observer checking the agreement, lockstep and correctness invariants.

    With ``T > 1`` the processes are T-union wrappers; checks then run once
    per block on the union topology, i.e. in virtual rounds.
    """

    def __init__(
        self,
        n: int,
        mode: str = "basic",
        inputs: Sequence[Hashable] | None = None,
        T: int = 1,
        check_counting: bool = True,
    ):
        self.n = n
        self.mode = mode
        self.T = T
        self.check_counting = check_counting
        self.labels = level0_labels(n, mode, inputs)
        self.violations: list[Violation] = []
        self.records: dict[int, IdealVhtRecord] = {}
        self.begin_rounds: dict[int, tuple[RoundTopology, dict[int, int]]] = {}
        self.builder = GroundTruthBuilder(self.labels)
        self._nets: list[RoundTopology] = []
        self._acc = RoundTopology(n)
        self._events_seen = 0
        self.finalizations = 0
        self.views_checked = 0
        self.completion_level: int | None = None
        self._forest_ok: set[int] = set()

    def fail(self, check: str, vround: int, detail: str) -> None:
        self.violations.append(Violation(check, vround, detail))

    @property
    def ok(self) -> bool:
        return not self.violations

    def first_violations(self) -> list[Violation]:
        """First offending round per check."""
        out: dict[str, Violation] = {}
        for v in self.violations:
            out.setdefault(v.check, v)
        return list(out.values())

    # engine observer
    def __call__(self, t, topo, sent, processes) -> None:
        if self.T == 1:
            self.virtual_round(t, topo, sent, processes)
            return
        self._acc = self._acc.union(topo)
        if t % self.T == 0:
            g, self._acc = self._acc, RoundTopology(self.n)
            self.virtual_round(t // self.T, g, sent, processes)

    def virtual_round(self, vt, g, sent, processes) -> None:
        leader = processes[0]
        if sent[0] is not None and sent[0].label == Label.BEGIN:
            ids = {p: m.id for p, m in enumerate(sent) if m is not None and m.label == Label.BEGIN}
            self.begin_rounds[vt] = (g, ids)
        live = [p for p in processes if not p.terminated and p.phase not in (Phase.FINAL, Phase.OUTPUT)]
        ok_procs = [p for p in live if not p.is_error]
        # the wait and reset phases end by overwriting these variables
        settled = [p for p in ok_procs if p.phase not in (Phase.RESET, Phase.WAIT)]
        if len({p.diam for p in settled}) > 1:
            self.fail("l:diam", vt, f"estimates {sorted({p.diam for p in settled})}")
        if len({p.agreement_hash() for p in settled}) > 1:
            self.fail("c:totalagree", vt, "non-error processes disagree on their shared state")
        if leader in live and leader.phase in LOCKSTEP_PHASES:
            lag = sorted({p.phase.value for p in ok_procs if p.phase != leader.phase})
            if lag:
                self.fail("l:phases", vt, f"leader in {leader.phase.value}, others in {lag}")
        for p in processes:
            if p.diam > 4 * self.n:
                self.fail("l:maxdiam", vt, f"DiamEstimate {p.diam} > 4n")
                break
        if leader.resets > reset_bound(self.n):
            self.fail("resets", vt, f"{leader.resets} resets > log2(n)+3")
        for p in ok_procs:
            h = p.agreement_hash()
            if h in self._forest_ok:
                continue
            if not p.level_graph.is_forest():
                self.fail("levelgraph", vt, "LevelGraph has a cycle")
                break
            self._forest_ok.add(h)
        events = leader.events
        for ev in events[self._events_seen :]:
            if ev[0] == "finalize":
                self.on_finalize(ev[1], ev[2], leader)
        self._events_seen = len(events)

    def begin_round_of(self, leader, level: int) -> int:
        for ev in reversed(leader.events):
            if ev[0] == "begin" and ev[1] == level:
                return ev[2]
        raise KeyError(level)

    def on_finalize(self, level: int, vt: int, leader) -> None:
        self.finalizations += 1
        if level >= 1:
            try:
                br = self.begin_round_of(leader, level)
                g, ids = self.begin_rounds[br]
            except KeyError:
                self.fail("l:vhtcorr", vt, f"no begin round recorded for level {level}")
                return
            if not spans(leader.level_graph, set(ids.values())):
                self.fail("levelgraph", vt, f"level {level}: LevelGraph is not a tree over the live IDs")
            self._truncate(level - 1)
            classes = self.builder.classes[level - 1]
            id_class: dict[int, int] = {}
            for p, x in ids.items():
                if id_class.setdefault(x, classes[p]) != classes[p]:
                    self.fail("l:vhtcorr", vt, f"ID {x} spans two ideal classes")
                    return
            if len(set(id_class.values())) != len(id_class):
                self.fail("l:vhtcorr", vt, "two IDs name one ideal class")
                return
            s_edges = []
            for a, b in leader.level_graph.edges():
                if a in id_class and b in id_class:
                    s_edges.append((id_class[a], id_class[b]))
            net, tree = virtual_network(g, classes, s_edges)
            if not net.is_connected():
                self.fail("n_t-connected", vt, f"N_{level} is disconnected")
            self.records[level] = IdealVhtRecord(level, br, dict(ids), tree, net)
            self._nets.append(net)
            self.builder.add_round(net)
        else:
            self._truncate(-1)
        self.check_vht(level, vt, leader)

    def _truncate(self, depth: int) -> None:
        """Keep the first ``depth`` virtual networks (levels 0..depth)."""
        if len(self._nets) > depth:
            self._nets = self._nets[: max(depth, 0)]
            self.builder = GroundTruthBuilder(self.labels)
            for net in self._nets:
                self.builder.add_round(net)

    def ideal_tree(self) -> HistoryTree:
        return self.builder.tree

    def check_vht(self, level: int, vt: int, leader) -> None:
        eff = effective_vht(leader.vht, set(self.labels))
        ideal = self.builder.tree
        phi = embed(eff, ideal)
        if phi is None:
            self.fail("l:vhtcorr", vt, f"level {level}: effective VHT is not a generalized view of the ideal VHT")
            return
        if leader.my_id not in eff:
            return
        mine = extract_view(eff, leader.my_id)
        ideal_leader = self.builder.classes[level][0]
        if not is_isomorphic(mine, extract_view(ideal, ideal_leader), level):
            self.fail("c:vhtcorr", vt, f"level {level}: leader view differs from the ideal one")
        if not self.check_counting:
            return
        self.views_checked += 1
        self.check_view(mine, phi, vt, level)

    def check_view(self, view: HistoryTree, phi: dict[int, int], vt: int, level: int) -> None:
        truth = self.builder.anonymity()
        try:
            st = infer_anonymities(view)
        except Malformed as exc:
            self.fail("counting-soundness", vt, f"level {level}: genuine view rejected ({exc})")
            return
        for v in view.nodes:
            if v == view.root:
                continue
            a = st.a(v)
            if a is not None and a != truth[phi[v]]:
                self.fail("counting-soundness", vt, f"level {level}: a({v}) = {a}, truly {truth[phi[v]]}")
                return
        res = cut_certificate(st, view, self.mode == "generalized")
        if res.n is not None and res.n != self.n:
            self.fail("counting-soundness", vt, f"level {level}: counted {res.n}, truly {self.n}")
        if res.known and self.completion_level is None:
            self.completion_level = level
        if not res.known and level >= 3 * self.n:
            self.fail("completeness-gap", vt, f"Unknown at level {level} >= 3n")

    def red_edges_first_levels(self, m: int) -> int:
        return sum(1 for c, _, _ in self.builder.tree.red_edges() if self.builder.tree.nodes[c].level < m)


# --- experiments -------------------------------------------------------------


@dataclass
class ExperimentConfig:
    n: int | Sequence[int] = 5
    scheduler: str = "random-connected"
    seeds: Sequence[int] = (0,)
    mode: str = "basic"
    T: int = 1
    budget: int | None = None
    check: bool = True
    fault: bool = False
    inputs: Sequence[Hashable] | None = None
    csv_path: str | None = None
    trace_path: str | None = None

    def __post_init__(self):
        ns = [self.n] if isinstance(self.n, int) else list(self.n)
        if not ns or any(k < 1 for k in ns):
            raise ValueError("n must be at least 1")
        if self.budget is not None and self.budget < 1:
            raise ValueError("budget must be at least 1")
        if self.T < 1:
            raise ValueError("T must be at least 1")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")

    @property
    def sizes(self) -> list[int]:
        return [self.n] if isinstance(self.n, int) else list(self.n)


@dataclass
class RunResult:
    n: int
    seed: int
    scheduler: str
    mode: str
    metrics: RunMetrics
    output: object
    correct: bool
    outputs: list = field(default_factory=list)
    output_rounds: list = field(default_factory=list)
    monitor: Monitor | None = None
    trace: object = None
    expected: object = None

    def row(self) -> dict:
        m = self.metrics
        return {
            "n": self.n,
            "seed": self.seed,
            "scheduler": self.scheduler,
            "mode": self.mode,
            "rounds": m.rounds,
            "resets": m.resets,
            "max_diam_estimate": m.max_diam_estimate,
            "distinct_red_edges": m.distinct_red_edges,
            "max_msg_bits": m.max_msg_bits,
            "max_param": m.max_param,
            "output": _fmt_output(self.output),
            "correct": str(self.correct).lower(),
        }

    @property
    def violations(self) -> list[Violation]:
        return self.monitor.violations if self.monitor is not None else []


def _fmt_output(x) -> str:
    if isinstance(x, dict):
        return ";".join(f"{k}:{v}" for k, v in sorted(x.items(), key=lambda kv: repr(kv[0])))
    return str(x)


def scheduler_late_mixing(n: int, seed: int, slow_rounds: int | None = None) -> Iterator[RoundTopology]:
    """Fault injection: a path with the leader at one end for the first
    ``slow_rounds`` rounds (forcing broadcasts that miss processes and
    DiamEstimate doublings), then random connected graphs."""
    slow = slow_rounds if slow_rounds is not None else 4 * n * n
    rng = random.Random(seed)
    rest = scheduler_random_connected(n, seed)
    t = 0
    while True:
        t += 1
        if t <= slow:
            order = [0] + rng.sample(range(1, n), n - 1)
            yield path(n, order)
        else:
            yield next(rest)


def build_scheduler(name: str, n: int, seed: int, T: int = 1) -> Iterator[RoundTopology]:
    if name == "late-mixing":
        return scheduler_late_mixing(n, seed)
    return make_scheduler(name, n, seed, T)


def random_inputs(n: int, seed: int, alphabet: int = 3) -> list:
    rng = random.Random(seed)
    return [None] + [rng.randrange(alphabet) for _ in range(n - 1)]


def expected_output(n: int, mode: str, inputs) -> object:
    if mode == "generalized":
        counts: dict = {}
        for v in inputs[1:]:
            counts[v] = counts.get(v, 0) + 1
        return counts
    return n


def run_one(
    n: int,
    scheduler: str = "random-connected",
    seed: int = 0,
    mode: str = "basic",
    T: int = 1,
    budget: int | None = None,
    check: bool = True,
    inputs: Sequence[Hashable] | None = None,
    record: bool = False,
) -> RunResult:
    """One execution.  ``T > 1`` wraps every process for T-union networks;
    the scheduler then runs in real rounds."""
    if n < 1:
        raise ValueError("n must be at least 1")
    if mode == "generalized" and inputs is None:
        inputs = random_inputs(n, seed)
    if budget is None:
        budget = int(T * round_bound(n)) + 10
    procs = make_processes(n, mode, list(inputs) if inputs is not None else None, T)
    monitor = Monitor(n, mode, inputs, T) if check else None
    if mode == "simultaneous":
        finished = lambda ps: all(p.terminated for p in ps)  # noqa: E731
    else:
        finished = lambda ps: ps[0].output is not None  # noqa: E731
    sched = build_scheduler(scheduler, n, seed, T)
    expected = expected_output(n, mode, inputs)
    try:
        metrics, trace = run_processes(
            procs, sched, budget, finished, record=record, observers=[monitor] if monitor else ()
        )
        output = procs[0].output
        timed_out = False
    except BudgetExhausted as exc:
        metrics, trace, output, timed_out = exc.metrics, None, "timeout", True
    leader = procs[0]
    metrics.resets = leader.resets
    metrics.max_diam_estimate = max(p.max_diam for p in procs)
    metrics.distinct_red_edges = sum(1 for _ in leader.vht.red_edges())
    outputs = [p.output for p in procs]
    out_rounds = [p.output_round for p in procs]
    if mode == "simultaneous" and not timed_out:
        correct = all(o == n for o in outputs) and len(set(out_rounds)) == 1
    else:
        correct = not timed_out and output == expected
    return RunResult(n, seed, scheduler, mode, metrics, output, correct, outputs, out_rounds, monitor, trace, expected)


def run_experiment(config: ExperimentConfig) -> list[RunResult]:
    results = []
    schedulers = [config.scheduler]
    if config.fault:
        schedulers += ["random-path", "late-mixing"]
    for n in config.sizes:
        for sched in schedulers:
            for seed in config.seeds:
                results.append(
                    run_one(
                        n,
                        sched,
                        seed,
                        config.mode,
                        config.T,
                        config.budget,
                        config.check,
                        config.inputs,
                        record=config.trace_path is not None,
                    )
                )
    if config.csv_path:
        with open(config.csv_path, "w", newline="") as fh:
            fh.write(rows_to_csv(results))
    return results


def rows_to_csv(results: Sequence[RunResult]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in results:
        w.writerow(r.row())
    return buf.getvalue()


def final_checks(result: RunResult) -> list[Violation]:
    """End-of-run bounds: resets, DiamEstimate, and red edges of the ideal VHT."""
    n, m = result.n, result.metrics
    out = []
    if m.resets > reset_bound(n):
        out.append(Violation("resets", m.rounds, f"{m.resets} resets > log2(n)+3"))
    if m.max_diam_estimate > 4 * n:
        out.append(Violation("l:maxdiam", m.rounds, f"DiamEstimate {m.max_diam_estimate} > 4n"))
    if result.monitor is not None:
        levels = 3 * n
        red = result.monitor.red_edges_first_levels(levels)
        if red > red_edge_bound(n, levels):
            out.append(Violation("l:vhtsize", m.rounds, f"{red} red edges > 2n(m+n)"))
    return out
