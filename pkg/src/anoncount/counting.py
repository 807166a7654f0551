"""Sound anonymity inference on a leader's view and certification of ``n``.

Every node's anonymity is tracked as an integer interval ``[lo, hi]``
(``hi`` may be infinite) together with a ``children_complete`` flag.  The
rules below only ever tighten intervals or set flags, so the fixpoint does
not depend on the order in which they fire.

* leader chain: anonymity 1 and exactly one child per node;
* tree sums: visible children never exceed their parent, and equal it
  when the parent's children are complete;
* completeness: if the upper bound of a parent is reached by the lower bounds
  of its visible children, no child can be missing;
* link counts: for two classes ``u != v`` of one level, the number of links
  between them in the next virtual round is seen from both sides.  Missing
  children of ``v`` can only add to ``v``'s side, so ``cc(u)`` gives
  ``S_v <= S_u`` and ``cc(u) and cc(v)`` gives ``S_u == S_v``;
* influence: in a connected dynamic network a class hidden from the leader's
  view at level ``s`` would reach the leader within ``|K|`` rounds, where
  ``K`` is the visible part.  So ``sum(hi) <= depth - s`` proves level ``s``
  complete, making every node below it children-complete;
* communication cut: a set of exact, children-complete nodes of one level
  whose children hear only from inside the set has no link leaving it, so by
  connectivity it covers every process.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Hashable

from .history_tree import HistoryTree

INF = math.inf


class Malformed(ValueError):
    """The view admits no consistent anonymity assignment."""


@dataclass
class CountResult:
    n: int | None = None
    inputs: dict[Hashable, int] | None = None
    level: int | None = None
    method: str | None = None
    generalized: bool = False

    @property
    def known(self) -> bool:
        return self.n is not None and (not self.generalized or self.inputs is not None)

    @property
    def value(self):
        """``None`` for Unknown; ``n`` in basic mode; the input multiset in generalized mode."""
        if not self.known:
            return None
        return dict(self.inputs) if self.generalized else self.n


@dataclass
class InferenceState:
    view: HistoryTree
    lo: dict[int, int] = field(default_factory=dict)
    hi: dict[int, float] = field(default_factory=dict)
    cc: set[int] = field(default_factory=set)
    complete_levels: set[int] = field(default_factory=set)
    leader_chain: list[int] = field(default_factory=list)
    certificates: list[tuple[str, int]] = field(default_factory=list)

    def known(self, v: int) -> bool:
        return self.lo[v] == self.hi[v]

    def a(self, v: int) -> int | None:
        return self.lo[v] if self.known(v) else None

    def dump(self) -> str:
        """Per-level table ``node a children_complete``."""
        lines = []
        for t in range(0, self.view.depth + 1):
            mark = " complete" if t in self.complete_levels else ""
            lines.append(f"level {t}{mark}")
            for v in sorted(self.view.level(t)):
                rng = str(self.lo[v]) if self.known(v) else f"[{self.lo[v]},{self.hi[v]}]"
                lines.append(f"  {v} {rng} {'yes' if v in self.cc else 'no'}")
        return "\n".join(lines)


class _Propagator:
    def __init__(self, view: HistoryTree, rng: random.Random | None):
        self.view = view
        self.rng = rng
        self.depth = view.depth
        st = InferenceState(view)
        for v, node in view.nodes.items():
            if node.level >= 0:
                st.lo[v] = 1
                st.hi[v] = INF
        if self.depth >= 0:
            x = view.level(self.depth)
            if len(x) != 1:
                raise Malformed("a view has exactly one deepest node")
            chain = []
            v = x[0]
            while view.nodes[v].level >= 0:
                chain.append(v)
                v = view.nodes[v].parent
            st.leader_chain = chain[::-1]
        self.st = st
        self.changed = False
        # pair terms: (u, v) -> [(child of u, mult of red edge child <- v)]
        self.terms: dict[tuple[int, int], list[tuple[int, int]]] = {}
        for t in range(0, self.depth):
            for u in view.level(t):
                for c in view.nodes[u].children:
                    for src, m in view.nodes[c].red.items():
                        if src != u:
                            self.terms.setdefault((u, src), []).append((c, m))
        self.pairs = sorted({(u, v) for (u, v) in self.terms} | {(v, u) for (u, v) in self.terms})

    # --- primitive updates ---

    def set_lo(self, v, x) -> None:
        if x > self.st.lo[v]:
            if x > self.st.hi[v]:
                raise Malformed(f"node {v}: lower bound {x} above upper bound {self.st.hi[v]}")
            self.st.lo[v] = int(x)
            self.changed = True

    def set_hi(self, v, x) -> None:
        if x < self.st.hi[v]:
            if x < self.st.lo[v]:
                raise Malformed(f"node {v}: upper bound {x} below lower bound {self.st.lo[v]}")
            self.st.hi[v] = x
            self.changed = True

    def set_cc(self, v) -> None:
        if v not in self.st.cc:
            self.st.cc.add(v)
            self.changed = True

    def mark_complete(self, s: int, how: str) -> None:
        for t in range(0, s + 1):
            if t not in self.st.complete_levels:
                self.st.complete_levels.add(t)
                self.changed = True
        self.set_cc(self.view.root)
        for t in range(0, s):
            for v in self.view.level(t):
                self.set_cc(v)
        if not any(c[1] == s for c in self.st.certificates):
            self.st.certificates.append((how, s))

    # --- rules ---

    def rule_leader(self) -> None:
        for v in self.st.leader_chain:
            self.set_lo(v, 1)
            self.set_hi(v, 1)
        for v in self.st.leader_chain[:-1]:
            self.set_cc(v)

    def rule_tree(self, p: int) -> None:
        st, view = self.st, self.view
        kids = view.nodes[p].children
        if p == view.root or not kids:
            return
        sum_lo = sum(st.lo[c] for c in kids)
        sum_hi = sum(st.hi[c] for c in kids)
        self.set_lo(p, sum_lo)
        for c in kids:
            if st.hi[p] < INF:
                self.set_hi(c, st.hi[p] - (sum_lo - st.lo[c]))
        if p in st.cc:
            self.set_hi(p, sum_hi)
            for c in kids:
                rest_hi = sum_hi - st.hi[c]
                if rest_hi < INF:
                    self.set_lo(c, st.lo[p] - rest_hi)
        elif st.hi[p] <= sum_lo:
            self.set_cc(p)

    def rule_link(self, u: int, v: int) -> None:
        st = self.st
        if u not in st.cc:
            return
        su = self.terms.get((u, v), [])
        sv = self.terms.get((v, u), [])
        su_lo = sum(st.lo[c] * m for c, m in su)
        su_hi = sum(st.hi[c] * m for c, m in su)
        sv_lo = sum(st.lo[d] * m for d, m in sv)
        # S_v <= S_u
        if sv_lo > su_hi:
            raise Malformed(f"link count between {u} and {v} cannot balance")
        if su_hi < INF:
            for d, m in sv:
                self.set_hi(d, (su_hi - (sv_lo - st.lo[d] * m)) // m)
            for c, m in su:
                rest = su_hi - st.hi[c] * m
                self.set_lo(c, -((rest - sv_lo) // m))
        if v in st.cc:
            # S_u == S_v: the symmetric call handles v's side
            sv_hi = sum(st.hi[d] * m for d, m in sv)
            if su_lo > sv_hi:
                raise Malformed(f"link count between {u} and {v} cannot balance")
            if sv_hi < INF:
                for c, m in su:
                    self.set_hi(c, (sv_hi - (su_lo - st.lo[c] * m)) // m)
            for d, m in sv:
                rest = sv_hi - st.hi[d] * m if sv_hi < INF else INF
                if rest < INF:
                    self.set_lo(d, -((-(su_lo - rest)) // m))

    def rule_influence(self) -> None:
        st = self.st
        for s in range(self.depth, -1, -1):
            if s in st.complete_levels:
                break
            total = sum(st.hi[v] for v in self.view.level(s))
            if total <= self.depth - s:
                self.mark_complete(s, "influence")
                break

    def closed_cut(self, s: int) -> list[int]:
        """Largest set of exact, children-complete level-``s`` nodes whose
        children hear only from inside the set."""
        st, view = self.st, self.view
        cand = {v for v in view.level(s) if v in st.cc and st.known(v)}
        while True:
            bad = {
                u
                for u in cand
                if any(src not in cand for c in view.nodes[u].children for src in view.nodes[c].red)
            }
            if not bad:
                return sorted(cand)
            cand -= bad

    def rule_cut(self) -> None:
        st = self.st
        for s in range(self.depth - 1, -1, -1):
            if s + 1 in st.complete_levels:
                break
            if self.closed_cut(s):
                # the cut covers all processes, so levels s and s+1 are complete
                self.mark_complete(s + 1, "cut")
                break

    def rule_levels(self) -> None:
        """Complete levels all carry exactly ``n`` processes."""
        st, view = self.st, self.view
        done = sorted(st.complete_levels)
        if not done:
            return
        n_lo = max(sum(st.lo[v] for v in view.level(s)) for s in done)
        n_hi = min(sum(st.hi[v] for v in view.level(s)) for s in done)
        if n_lo > n_hi:
            raise Malformed("complete levels disagree on n")
        for s in done:
            nodes = view.level(s)
            lo_sum = sum(st.lo[v] for v in nodes)
            hi_sum = sum(st.hi[v] for v in nodes)
            for v in nodes:
                if n_hi < INF:
                    self.set_hi(v, n_hi - (lo_sum - st.lo[v]))
                if hi_sum < INF:
                    self.set_lo(v, n_lo - (hi_sum - st.hi[v]))

    def run(self) -> InferenceState:
        rules = (
            [("leader", None)]
            + [("tree", p) for p in self.view.nodes]
            + [("link", pair) for pair in self.pairs]
            + [("influence", None), ("cut", None), ("levels", None)]
        )
        while True:
            self.changed = False
            if self.rng is not None:
                self.rng.shuffle(rules)
            for kind, arg in rules:
                if kind == "leader":
                    self.rule_leader()
                elif kind == "tree":
                    self.rule_tree(arg)
                elif kind == "link":
                    self.rule_link(*arg)
                elif kind == "influence":
                    self.rule_influence()
                elif kind == "cut":
                    self.rule_cut()
                else:
                    self.rule_levels()
            if not self.changed:
                return self.st


def infer_anonymities(view: HistoryTree, rng: random.Random | None = None) -> InferenceState:
    """Run every rule to a fixpoint.  ``rng`` shuffles the rule order per sweep."""
    return _Propagator(view, rng).run()


def cut_certificate(state: InferenceState, view: HistoryTree, generalized: bool = False) -> CountResult:
    """Read ``n`` (and the L0 multiset) off a complete, fully determined level."""
    res = CountResult(generalized=generalized)
    for s in sorted(state.complete_levels, reverse=True):
        nodes = view.level(s)
        if nodes and all(state.known(v) for v in nodes):
            res.n = sum(state.lo[v] for v in nodes)
            res.level = s
            res.method = next((c[0] for c in state.certificates if c[1] >= s), "levels")
            break
    if res.n is None:
        return res
    if generalized:
        level0 = view.level(0)
        if 0 in state.complete_levels and all(state.known(v) for v in level0):
            from .protocol import LEADER_LABEL

            counts: dict = {}
            for v in level0:
                lab = view.nodes[v].label
                if lab == LEADER_LABEL:
                    continue
                counts[lab] = counts.get(lab, 0) + state.lo[v]
            res.inputs = counts
    return res


def count_from_view(view: HistoryTree, generalized: bool = False, rng: random.Random | None = None) -> CountResult:
    """Unknown, or the exact process count (input multiset when ``generalized``)."""
    if view.depth < 0:
        return CountResult(generalized=generalized)
    state = infer_anonymities(view, rng)
    return cut_certificate(state, view, generalized)
