"""Lock-step round engine for dynamic multigraph networks."""

from __future__ import annotations

import itertools
import random
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Sequence

from .messages import Message, bit_size

Inbox = Counter  # Counter[Message]: identical messages aggregated with multiplicity


class TopologyError(ValueError):
    pass


class BudgetExhausted(RuntimeError):
    """Raised when a run hits its round budget before terminating."""

    def __init__(self, rounds, metrics=None):
        super().__init__(f"round budget of {rounds} exhausted")
        self.rounds = rounds
        self.metrics = metrics


def default_link_bound(n: int) -> int:
    return max(2, n**3)


@dataclass
class RoundTopology:
    n: int
    edges: Counter = field(default_factory=Counter)  # (i, j) with i <= j -> multiplicity

    @classmethod
    def from_pairs(cls, n: int, pairs: Iterable) -> "RoundTopology":
        """Build from ``(i, j)`` or ``(i, j, mult)`` tuples; repeated pairs add up."""
        edges = Counter()
        for p in pairs:
            i, j = p[0], p[1]
            m = p[2] if len(p) > 2 else 1
            if not (0 <= i < n and 0 <= j < n):
                raise TopologyError(f"link {i}-{j} outside 0..{n - 1}")
            if m < 1:
                raise TopologyError("multiplicity must be positive")
            edges[(min(i, j), max(i, j))] += m
        return cls(n, edges)

    def link_count(self) -> int:
        return sum(self.edges.values())

    def components(self) -> list[set[int]]:
        parent = list(range(self.n))

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for i, j in self.edges:
            parent[find(i)] = find(j)
        comps: dict[int, set[int]] = {}
        for v in range(self.n):
            comps.setdefault(find(v), set()).add(v)
        return list(comps.values())

    def is_connected(self) -> bool:
        return self.n <= 1 or len(self.components()) == 1

    def union(self, other: "RoundTopology") -> "RoundTopology":
        return RoundTopology(self.n, self.edges + other.edges)

    def neighbors(self) -> list[list[tuple[int, int]]]:
        adj: list[list[tuple[int, int]]] = [[] for _ in range(self.n)]
        for (i, j), m in sorted(self.edges.items()):
            adj[i].append((j, m))
            if i != j:
                adj[j].append((i, m))
        return adj


@dataclass
class Trace:
    n: int
    rounds: list[RoundTopology] = field(default_factory=list)
    T: int = 1

    def is_t_union_connected(self, T: int | None = None) -> bool:
        T = T or self.T
        for t in range(len(self.rounds) - T + 1):
            acc = RoundTopology(self.n)
            for g in self.rounds[t : t + T]:
                acc = acc.union(g)
            if not acc.is_connected():
                return False
        return True


def step_round(topology: RoundTopology, outgoing: Sequence[Message | None]) -> list[Inbox]:
    """Deliver each process's message along all its links.

    ``None`` entries stand for terminated processes, which send nothing.
    """
    if len(outgoing) != topology.n:
        raise TopologyError(f"{len(outgoing)} messages for {topology.n} processes")
    inboxes = [Counter() for _ in range(topology.n)]
    for (i, j), m in topology.edges.items():
        if i == j:
            if outgoing[i] is not None:
                inboxes[i][outgoing[i]] += m
            continue
        if outgoing[j] is not None:
            inboxes[i][outgoing[j]] += m
        if outgoing[i] is not None:
            inboxes[j][outgoing[i]] += m
    return inboxes


# --- graph builders and schedulers -------------------------------------------


def star(n: int, center: int = 0) -> RoundTopology:
    return RoundTopology.from_pairs(n, [(center, v) for v in range(n) if v != center])


def path(n: int, order: Sequence[int] | None = None) -> RoundTopology:
    order = list(order) if order is not None else list(range(n))
    return RoundTopology.from_pairs(n, list(zip(order, order[1:])))


def cycle(n: int) -> RoundTopology:
    if n < 3:
        return path(n)
    return RoundTopology.from_pairs(n, [(i, (i + 1) % n) for i in range(n)])


def complete(n: int) -> RoundTopology:
    return RoundTopology.from_pairs(n, itertools.combinations(range(n), 2))


def random_spanning_tree(n: int, rng: random.Random) -> list[tuple[int, int]]:
    order = list(range(n))
    rng.shuffle(order)
    return [(order[k], order[rng.randrange(k)]) for k in range(1, n)]


def scheduler_static(graph: RoundTopology) -> Iterator[RoundTopology]:
    while True:
        yield graph


def scheduler_alternating(graphs: Sequence[RoundTopology]) -> Iterator[RoundTopology]:
    if not graphs:
        raise ValueError("need at least one graph")
    return itertools.cycle(graphs)


def scheduler_random_connected(n: int, seed: int, extra_p: float = 0.2) -> Iterator[RoundTopology]:
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = random.Random(seed)
    while True:
        tree = random_spanning_tree(n, rng)
        present = {(min(a, b), max(a, b)) for a, b in tree}
        extra = [
            (i, j)
            for i, j in itertools.combinations(range(n), 2)
            if (i, j) not in present and rng.random() < extra_p
        ]
        yield RoundTopology.from_pairs(n, tree + extra)


def scheduler_random_path(n: int, seed: int) -> Iterator[RoundTopology]:
    """A fresh random Hamiltonian path each round: connected, diameter n-1."""
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = random.Random(seed)
    while True:
        order = list(range(n))
        rng.shuffle(order)
        yield path(n, order)


def scheduler_t_union(n: int, T: int, seed: int) -> Iterator[RoundTopology]:
    """Each block of ``T`` rounds spreads a random spanning tree (plus extras)
    over its rounds, one slice per round.  Round ``r`` also repeats slice
    ``r mod T`` of the previous block's tree, so every window of ``T``
    consecutive rounds holds all slices of one tree and is connected, while
    single rounds usually are not."""
    if T < 1:
        raise ValueError("T must be at least 1")
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = random.Random(seed)

    def sliced() -> list[list]:
        links = random_spanning_tree(n, rng)
        links += [(i, j) for i, j in itertools.combinations(range(n), 2) if rng.random() < 0.1]
        rng.shuffle(links)
        out: list[list] = [[] for _ in range(T)]
        for k, e in enumerate(links):
            out[k % T].append(e)
        return out

    prev = sliced()
    while True:
        cur = sliced()
        for k in range(T):
            yield RoundTopology.from_pairs(n, cur[k] + prev[k])
        prev = cur


SCHEDULERS = ("static-star", "static-path", "random-connected", "alternating", "random-path", "t-union")


def make_scheduler(name: str, n: int, seed: int = 0, T: int = 1) -> Iterator[RoundTopology]:
    if name == "static-star":
        return scheduler_static(star(n))
    if name == "static-path":
        return scheduler_static(path(n))
    if name == "random-connected":
        return scheduler_random_connected(n, seed)
    if name == "alternating":
        # leader-centred star, then a path with the leader at one end
        return scheduler_alternating([star(n), path(n)])
    if name == "random-path":
        return scheduler_random_path(n, seed)
    if name == "t-union":
        return scheduler_t_union(n, T, seed)
    raise ValueError(f"unknown scheduler {name!r}; choose from {', '.join(SCHEDULERS)}")


# --- trace files -------------------------------------------------------------


def dump_trace(trace: Trace) -> str:
    lines = [f"n {trace.n} T {trace.T}"]
    for t, g in enumerate(trace.rounds, start=1):
        lines.append(f"round {t}")
        for (i, j), m in sorted(g.edges.items()):
            lines.append(f"{i} {j} {m}")
    return "\n".join(lines) + "\n"


def load_trace(text: str) -> Trace:
    lines = [ln.split() for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0][0] != "n" or lines[0][2] != "T":
        raise ValueError("trace must start with 'n <n> T <T>'")
    n, T = int(lines[0][1]), int(lines[0][3])
    trace = Trace(n, [], T)
    current = None
    for parts in lines[1:]:
        if parts[0] == "round":
            if int(parts[1]) != len(trace.rounds) + 1:
                raise ValueError(f"rounds out of order at {parts[1]}")
            current = RoundTopology(n)
            trace.rounds.append(current)
        else:
            if current is None:
                raise ValueError("link before first round header")
            i, j, m = map(int, parts)
            if not (0 <= i < n and 0 <= j < n) or m < 1:
                raise ValueError(f"bad link line {' '.join(parts)}")
            current.edges[(min(i, j), max(i, j))] += m
    return trace


# --- driver ------------------------------------------------------------------


@dataclass
class RunMetrics:
    rounds: int = 0
    resets: int = 0
    max_diam_estimate: int = 1
    distinct_red_edges: int = 0
    max_msg_bits: int = 0
    max_param: int = 0


def run_processes(
    processes: list,
    scheduler: Iterator[RoundTopology],
    budget: int,
    finished: Callable[[list], bool],
    *,
    record: bool = False,
    link_bound: Callable[[int], int] = default_link_bound,
    observers: Sequence[Callable] = (),
) -> tuple[RunMetrics, Trace | None]:
    """Drive process objects exposing ``outgoing()`` and ``deliver(inbox)``.

    Each round: collect one message per live process, build the round's
    topology, deliver, then call every observer as ``obs(t, topology, sent,
    processes)``.  Stops as soon as ``finished(processes)`` holds.
    """
    n = len(processes)
    metrics = RunMetrics()
    trace = Trace(n) if record else None
    bound = link_bound(n)
    t = 0
    while not finished(processes):
        if t >= budget:
            raise BudgetExhausted(budget, metrics)
        t += 1
        sent = [None if p.terminated else p.outgoing() for p in processes]
        topo = next(scheduler)
        if topo.n != n:
            raise TopologyError(f"scheduler produced {topo.n} processes, expected {n}")
        if topo.link_count() > bound:
            raise TopologyError(f"round {t}: {topo.link_count()} links exceeds bound {bound}")
        if record:
            trace.rounds.append(topo)
        for m in sent:
            if m is not None:
                metrics.max_msg_bits = max(metrics.max_msg_bits, bit_size(m))
                if m.params:
                    metrics.max_param = max(metrics.max_param, max(m.params))
        inboxes = step_round(topo, sent)
        for p, box in zip(processes, inboxes):
            if not p.terminated:
                p.deliver(box)
        metrics.rounds = t
        for obs in observers:
            obs(t, topo, sent, processes)
    return metrics, trace
