"""Leveled history trees: ground-truth construction, views, and isomorphism.

Nodes are addressed by integer IDs.  In trees built by the protocol the IDs
are the temporary process IDs; in ground-truth trees they are just serial
numbers.  Red multiplicities are stored on the deeper endpoint, keyed by the
previous-level node.
"""

from __future__ import annotations

import itertools
from collections import Counter, deque
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Sequence

ROOT_ID = -1


class TreeError(ValueError):
    pass


@dataclass
class Node:
    id: int
    level: int
    parent: int | None
    label: Hashable = None
    red: dict[int, int] = field(default_factory=dict)
    children: list[int] = field(default_factory=list)


class HistoryTree:
    def __init__(self, root_id: int = ROOT_ID):
        self.root = root_id
        self.nodes: dict[int, Node] = {root_id: Node(root_id, -1, None)}
        self.levels: list[list[int]] = [[root_id]]  # index = level + 1
        self.members: dict[int, frozenset] | None = None

    # --- construction ---

    def add_node(self, id_: int, parent: int, label: Hashable = None) -> Node:
        if id_ in self.nodes:
            raise TreeError(f"duplicate node id {id_}")
        if parent not in self.nodes:
            raise TreeError(f"unknown parent {parent}")
        p = self.nodes[parent]
        node = Node(id_, p.level + 1, parent, label)
        self.nodes[id_] = node
        p.children.append(id_)
        while len(self.levels) <= node.level + 1:
            self.levels.append([])
        self.levels[node.level + 1].append(id_)
        return node

    def add_red(self, child: int, source: int, mult: int) -> None:
        c, s = self.nodes[child], self.nodes[source]
        if s.level != c.level - 1:
            raise TreeError(f"red edge {source}->{child} does not join adjacent levels")
        if mult < 1:
            raise TreeError("red multiplicity must be positive")
        c.red[source] = c.red.get(source, 0) + mult

    def delete_from_level(self, level: int) -> None:
        """Remove every node at ``level`` or deeper, with incident edges."""
        if level < 0:
            raise TreeError("cannot delete the root level")
        for lv in self.levels[level + 1 :]:
            for i in lv:
                del self.nodes[i]
        del self.levels[level + 1 :]
        for i in self.levels[level] if level < len(self.levels) else ():
            self.nodes[i].children.clear()

    # --- queries ---

    @property
    def depth(self) -> int:
        """Index of the deepest non-empty level (-1 for a bare root)."""
        d = len(self.levels) - 2
        while d >= 0 and not self.levels[d + 1]:
            d -= 1
        return d

    def level(self, t: int) -> list[int]:
        if t + 1 >= len(self.levels):
            return []
        return self.levels[t + 1]

    def __contains__(self, id_: int) -> bool:
        return id_ in self.nodes

    def __len__(self) -> int:
        return len(self.nodes)

    def ancestor(self, id_: int, level: int) -> int:
        node = self.nodes[id_]
        if level > node.level:
            raise TreeError(f"node {id_} at level {node.level} has no ancestor at level {level}")
        while node.level > level:
            node = self.nodes[node.parent]
        return node.id

    def red_edges(self) -> Iterable[tuple[int, int, int]]:
        """(child, source, multiplicity) triples."""
        for lv in self.levels:
            for i in lv:
                for s, m in self.nodes[i].red.items():
                    yield i, s, m

    def copy(self) -> "HistoryTree":
        out = HistoryTree(self.root)
        out.nodes = {
            i: Node(n.id, n.level, n.parent, n.label, dict(n.red), list(n.children))
            for i, n in self.nodes.items()
        }
        out.levels = [list(lv) for lv in self.levels]
        out.members = dict(self.members) if self.members is not None else None
        return out

    def truncated(self, max_level: int) -> "HistoryTree":
        out = self.copy()
        if max_level + 1 < len(out.levels):
            out.delete_from_level(max_level + 1)
            if out.members is not None:
                out.members = {i: m for i, m in out.members.items() if i in out.nodes}
        return out

    def structure(self) -> tuple:
        """Hashable structural fingerprint including IDs."""
        return tuple(
            (i, n.level, n.parent, repr(n.label), tuple(sorted(n.red.items())))
            for i, n in sorted(self.nodes.items())
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, HistoryTree):
            return NotImplemented
        return self.structure() == other.structure()

    def dump(self) -> str:
        """One line per node: ``level id parent [input] { (neighbor, mult), ... }``."""
        lines = []
        for t, lv in enumerate(self.levels, start=-1):
            for i in sorted(lv):
                n = self.nodes[i]
                lab = f" [{n.label}]" if n.label is not None else ""
                reds = ", ".join(f"({s}, {m})" for s, m in sorted(n.red.items()))
                lines.append(f"{t} {i} {n.parent if n.parent is not None else '-'}{lab} {{ {reds} }}")
        return "\n".join(lines)


# --- ground truth -------------------------------------------------------------


class GroundTruthBuilder:
    """Incremental indistinguishability refinement over a sequence of rounds.

    ``classes[t][p]`` is the node ID representing process ``p`` at level ``t``.
    """

    def __init__(self, inputs: Sequence[Hashable]):
        self.n = len(inputs)
        self.tree = HistoryTree()
        self._next = 0
        by_label: dict = {}
        for p, lab in enumerate(inputs):
            by_label.setdefault(lab, []).append(p)
        level0 = [0] * self.n
        for lab in sorted(by_label, key=repr):
            nid = self._new(ROOT_ID, lab)
            for p in by_label[lab]:
                level0[p] = nid
        self.classes: list[list[int]] = [level0]

    def _new(self, parent, label=None) -> int:
        nid = self._next
        self._next += 1
        self.tree.add_node(nid, parent, label)
        return nid

    @property
    def depth(self) -> int:
        return len(self.classes) - 1

    def add_round(self, topology) -> list[int]:
        if topology.n != self.n:
            raise TreeError("topology size does not match the inputs")
        prev = self.classes[-1]
        received = [Counter() for _ in range(self.n)]
        for (i, j), m in topology.edges.items():
            received[i][prev[j]] += m
            if i != j:
                received[j][prev[i]] += m
        sig = [(prev[p], tuple(sorted(received[p].items()))) for p in range(self.n)]
        ids: dict = {}
        for s in sorted(set(sig)):
            nid = self._new(s[0])
            for src, m in s[1]:
                self.tree.add_red(nid, src, m)
            ids[s] = nid
        level = [ids[s] for s in sig]
        self.classes.append(level)
        return level

    def anonymity(self) -> dict[int, int]:
        a = {ROOT_ID: self.n}
        for level in self.classes:
            for nid in level:
                a[nid] = a.get(nid, 0) + 1
        return a

    def members(self) -> dict[int, frozenset]:
        out: dict[int, set] = {ROOT_ID: set(range(self.n))}
        for level in self.classes:
            for p, nid in enumerate(level):
                out.setdefault(nid, set()).add(p)
        return {k: frozenset(v) for k, v in out.items()}


def build_ground_truth(rounds, inputs: Sequence[Hashable], depth: int | None = None):
    """History tree of ``rounds`` (a Trace or a list of topologies) given inputs.

    Returns ``(tree, anonymity)``; ``tree.members`` maps nodes to process sets.
    """
    topologies = list(getattr(rounds, "rounds", rounds))
    if depth is None:
        depth = len(topologies)
    if depth > len(topologies):
        raise TreeError(f"trace has {len(topologies)} rounds, {depth} requested")
    b = GroundTruthBuilder(inputs)
    for g in topologies[:depth]:
        b.add_round(g)
    b.tree.members = b.members()
    return b.tree, b.anonymity()


# --- views -----------------------------------------------------------------------


def extract_view(ht: HistoryTree, node: int) -> HistoryTree:
    """Subtree spanned by all shortest root paths to ``node``.

    Every root path is level-monotone, so this is the set of nodes that reach
    ``node`` through parent and red-source links, with all their in-edges.
    """
    if node not in ht.nodes:
        raise TreeError(f"node {node} not in tree")
    keep = {node}
    queue = deque([node])
    while queue:
        v = ht.nodes[queue.popleft()]
        preds = list(v.red)
        if v.parent is not None:
            preds.append(v.parent)
        for u in preds:
            if u not in keep:
                keep.add(u)
                queue.append(u)
    out = HistoryTree(ht.root)
    for lv in ht.levels[1:]:
        for i in lv:
            if i in keep:
                n = ht.nodes[i]
                out.add_node(i, n.parent, n.label)
                out.nodes[i].red = dict(n.red)
    if ht.members is not None:
        out.members = {i: m for i, m in ht.members.items() if i in keep}
    return out


# --- canonical form ------------------------------------------------------------


def _level_signature(ht: HistoryTree, nid: int, t: int, index: dict[int, int]) -> tuple:
    n = ht.nodes[nid]
    lab = repr(n.label) if t == 0 else ""
    reds = tuple(sorted((index[s], m) for s, m in n.red.items()))
    return (index[n.parent], lab, reds)


def canonical_form(ht: HistoryTree, depth: int, max_branches: int = 100_000) -> tuple:
    """Canonical label sequence of levels -1..depth, ignoring IDs.

    Nodes are sorted by (parent index, L0 label, red neighbours) within each
    level.  Ties (impossible in genuine history trees) are broken by trying
    every ordering of the tied nodes and keeping the smallest sequence.
    """
    if depth > ht.depth:
        raise TreeError(f"depth {depth} exceeds tree depth {ht.depth}")
    branches = [0]

    def solve(t: int, index: dict[int, int]) -> tuple:
        if t > depth:
            return ()
        sigs: dict[tuple, list[int]] = {}
        for nid in ht.level(t):
            sigs.setdefault(_level_signature(ht, nid, t, index), []).append(nid)
        keys = sorted(sigs)
        head = tuple((k, len(sigs[k])) for k in keys)
        groups = [sigs[k] for k in keys]
        best = None
        for perm in itertools.product(*(itertools.permutations(g) for g in groups)):
            branches[0] += 1
            if branches[0] > max_branches:
                raise TreeError("too many symmetric orderings for canonical form")
            nxt = dict(index)
            k = 0
            for g in perm:
                for nid in g:
                    nxt[nid] = k
                    k += 1
            cand = solve(t + 1, nxt)
            if best is None or cand < best:
                best = cand
            if all(len(g) == 1 for g in groups):
                break
        return (head,) + best

    return solve(0, {ht.root: 0})


def is_isomorphic(a: HistoryTree, b: HistoryTree, depth: int) -> bool:
    return canonical_form(a, depth) == canonical_form(b, depth)


# --- generalized views -----------------------------------------------------------


def is_generalized_view_of(sub: HistoryTree, full: HistoryTree) -> bool:
    """True iff ``sub`` embeds into ``full`` (labels kept, IDs ignored) with
    every embedded node keeping its parent and its full red in-edge multiset."""
    return embed(sub, full) is not None


def embed(sub: HistoryTree, full: HistoryTree) -> dict[int, int] | None:
    """Node map witnessing ``is_generalized_view_of``, or ``None``."""
    # closure inside sub: parents and red sources present
    for n in sub.nodes.values():
        if n.parent is not None and n.parent not in sub.nodes:
            return None
        if any(s not in sub.nodes for s in n.red):
            return None
    if sub.depth > full.depth:
        return None

    order = [i for lv in sub.levels[1:] for i in lv]
    phi: dict[int, int] = {sub.root: full.root}
    used = {full.root}

    def candidates(i: int) -> list[int]:
        n = sub.nodes[i]
        out = []
        for j in full.nodes[phi[n.parent]].children:
            if j in used:
                continue
            f = full.nodes[j]
            if n.level == 0 and f.label != n.label:
                continue
            mapped = {phi[s]: m for s, m in n.red.items()}
            if mapped == f.red:
                out.append(j)
        return out

    def search(k: int) -> bool:
        if k == len(order):
            return True
        i = order[k]
        for j in candidates(i):
            phi[i] = j
            used.add(j)
            if search(k + 1):
                return True
            used.discard(j)
            del phi[i]
        return False

    return dict(phi) if search(0) else None
