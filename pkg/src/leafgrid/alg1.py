"""Topology selection from leaf voltage moments and a permissible line set.

Given voltage second moments and injection statistics at the leaves plus
an over-complete list of candidate lines with known impedances, the
operational lines are picked in three passes:

1. sibling leaves and their common parent, via the closed form of the
   voltage-difference variance of two leaves below one junction;
2. junction-to-junction lines, bottom-up, via the difference of two such
   variances against a third leaf that branches off higher up;
3. leaves without leaf siblings, attached by scanning the discovered
   junctions in post-order.

A final top junction is joined to the substation when that line is
permissible.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .grid import Line, natural_key, sorted_ids
from .moments import MomentSet, phi_matrix
from .result import EstimationResult, edge_key

RESIDUAL_FLOOR = 1e-15


class InapplicableTest(LookupError):
    """A line needed by a test is not in the permissible set."""


@dataclass
class Alg1Config:
    tau1: float = 1e-6
    tau2: float = 1e-6
    permissible: Sequence[Line] = field(default_factory=list)
    root: str | None = None

    def __post_init__(self):
        if not (self.tau1 > 0 and self.tau2 > 0):
            raise ValueError("tau1 and tau2 must be positive")
        seen = set()
        for ln in self.permissible:
            if ln.key in seen:
                raise ValueError(f"duplicate permissible line {ln.key}")
            seen.add(ln.key)


class _Lines:
    def __init__(self, lines: Iterable[Line]):
        self.by_key = {}
        self.adj: dict[str, list[str]] = {}
        for ln in lines:
            self.by_key[frozenset((ln.a, ln.b))] = ln
            self.adj.setdefault(ln.a, []).append(ln.b)
            self.adj.setdefault(ln.b, []).append(ln.a)
        for k in self.adj:
            self.adj[k] = sorted_ids(self.adj[k])

    def get(self, a, b) -> Line:
        try:
            return self.by_key[frozenset((a, b))]
        except KeyError:
            raise InapplicableTest(f"line ({a}, {b}) is not permissible") from None

    def neighbors(self, a):
        return self.adj.get(a, [])


def _rel(lhs, rhs):
    return abs(lhs - rhs) / max(abs(rhs), RESIDUAL_FLOOR)


def _quad(stats, r, x):
    pp, qq, pq = stats
    return r * r * pp + x * x * qq + 2.0 * r * x * pq


def sibling_parent_test(phi_ab: float, stats_a, stats_b, line_a: Line, line_b: Line,
                        tau1: float) -> tuple[bool, float]:
    """Check two leaves against a candidate common parent.

    ``stats_*`` are ``(E[p^2], E[q^2], E[pq])`` of each leaf and ``line_*``
    the permissible line from that leaf to the candidate parent.  Returns
    (pass, relative residual).
    """
    rhs = _quad(stats_a, line_a.r, line_a.x) + _quad(stats_b, line_b.r, line_b.x)
    res = _rel(phi_ab, rhs)
    return res <= tau1, res


def intermediate_edge_test(phi_ac: float, phi_bc: float, stats_a, stats_b,
                           path_a, path_b, path_k1, tau2: float) -> tuple[bool, float]:
    """Check the difference of two leaf-variance terms against a hypothesised branch point.

    ``path_a``, ``path_b`` and ``path_k1`` are ``(r, x)`` path sums from
    leaf ``a``, leaf ``b`` and their parent up to the branch point, with any
    hypothesised line already included.
    """
    ra, xa = path_a
    rb, xb = path_b
    rk, xk = path_k1
    pa, qa, ca = stats_a
    pb, qb, cb = stats_b
    rhs = (pa * (ra * ra - rk * rk) + qa * (xa * xa - xk * xk) + 2.0 * ca * (ra * xa - rk * xk)
           - pb * (rb * rb - rk * rk) - qb * (xb * xb - xk * xk) - 2.0 * cb * (rb * xb - rk * xk))
    res = _rel(phi_ac - phi_bc, rhs)
    return res <= tau2, res


class _State:
    def __init__(self, leaves, hidden):
        self.par: dict[str, str] = {}
        self.des: dict[str, set] = {k: set() for k in hidden}
        self.pair: dict[str, tuple[str, str]] = {}
        self.edges: dict[tuple[str, str], Line] = {}

    def link(self, child, parent, line):
        self.par[child] = parent
        self.edges[edge_key(child, parent)] = line

    def path_sum(self, node, top, lines: _Lines) -> tuple[float, float]:
        r = x = 0.0
        while node != top:
            up = self.par[node]
            ln = lines.get(node, up)
            r += ln.r
            x += ln.x
            node = up
        return r, x

    def discovered(self, k):
        return bool(self.des.get(k))


def run_alg1(moments: MomentSet, config: Alg1Config) -> EstimationResult:
    """Select the operational lines among ``config.permissible``.

    ``moments`` must cover the leaves only; every other endpoint of a
    permissible line is a candidate junction.  Nodes that cannot be placed
    are listed under ``diagnostics["unresolved"]``.
    """
    leaves = sorted_ids(moments.nodes)
    lines = _Lines(config.permissible)
    leaf_set = set(leaves)
    hidden = sorted_ids({b for ln in config.permissible for b in (ln.a, ln.b)} - leaf_set)
    if config.root is not None and config.root in leaf_set:
        raise ValueError("the substation cannot be one of the leaves")
    pos = {b: moments.pos(b) for b in leaves}
    phim = phi_matrix(moments)

    def phi(a, b):
        return float(phim[pos[a], pos[b]])

    stats = {b: moments.injection_stats(b) for b in leaves}
    st = _State(leaves, hidden)
    tests = {"sibling": 0, "intermediate": 0, "inapplicable": 0}

    # sibling leaves and their parent
    for a in leaves:
        if a in st.par:
            continue
        best = None
        for k1 in lines.neighbors(a):
            if k1 in leaf_set:
                continue
            la = lines.get(a, k1)
            for b in leaves:
                if b == a or (b in st.par and st.par[b] != k1):
                    continue
                try:
                    lb = lines.get(b, k1)
                except InapplicableTest:
                    tests["inapplicable"] += 1
                    continue
                tests["sibling"] += 1
                ok, res = sibling_parent_test(phi(a, b), stats[a], stats[b], la, lb, config.tau1)
                if ok:
                    cand = (res, natural_key(b), natural_key(k1), b, k1)
                    if best is None or cand[:3] < best[:3]:
                        best = cand
        if best is None:
            continue
        _, _, _, b, k1 = best
        st.link(a, k1, lines.get(a, k1))
        if b not in st.par:
            st.link(b, k1, lines.get(b, k1))
        st.des[k1] |= {a, b}
        st.pair.setdefault(k1, (a, b))

    lone = [c for c in leaves if c not in st.par]
    root = config.root

    def eq8(k, k2, c, hyp: Line | None):
        """Residual of the branch test with k2 as the branch point above k."""
        a, b = st.pair[k]
        k1 = st.par[a]
        ra, xa = st.path_sum(a, k, lines)
        rb, xb = st.path_sum(b, k, lines)
        rk, xk = st.path_sum(k1, k, lines)
        if hyp is not None:
            ra, xa = ra + hyp.r, xa + hyp.x
            rb, xb = rb + hyp.r, xb + hyp.x
            rk, xk = rk + hyp.r, xk + hyp.x
        tests["intermediate"] += 1
        return intermediate_edge_test(phi(a, c), phi(b, c), stats[a], stats[b],
                                      (ra, xa), (rb, xb), (rk, xk), config.tau2)

    # junction-to-junction lines, bottom-up
    while True:
        tops = [k for k in hidden if k != root and k not in st.par and st.discovered(k)]
        progressed = 0
        for k in tops:
            if k in st.par:
                continue
            below = st.des[k]
            found = None
            for branch in (1, 2):
                best = None
                for k2 in lines.neighbors(k):
                    if k2 in leaf_set or k2 == k:
                        continue
                    known = st.discovered(k2)
                    if (branch == 1) != known:
                        continue
                    if known and st.des[k2] & below:
                        continue
                    hyp = lines.get(k, k2)
                    pool = sorted_ids(st.des[k2]) if branch == 1 else [c for c in leaves if c not in below]
                    for c in pool:
                        ok, res = eq8(k, k2, c, hyp)
                        if ok:
                            cand = (res, natural_key(k2), k2)
                            if best is None or cand[:2] < best[:2]:
                                best = cand
                            break
                if best is not None:
                    found = best[2]
                    break
            if found is None:
                continue
            st.link(k, found, lines.get(k, found))
            st.des[found] |= below
            st.pair.setdefault(found, st.pair[k])
            progressed += 1
        if not progressed:
            break

    # leaves without leaf siblings, scanning junctions children-first
    order = _post_order([k for k in hidden if st.discovered(k)], st.par)
    for c in lone:
        for k2 in list(order):
            try:
                lines.get(c, k2)
            except InapplicableTest:
                tests["inapplicable"] += 1
                continue
            if c in st.des[k2]:
                continue
            ok, _ = eq8(k2, k2, c, None)
            if ok:
                st.link(c, k2, lines.get(c, k2))
                node = k2
                while node is not None:
                    st.des[node].add(c)
                    node = st.par.get(node)
                order.remove(k2)
                break

    tops = [k for k in hidden if k != root and k not in st.par and st.discovered(k)]
    unresolved = [c for c in leaves if c not in st.par]
    if root is not None and not st.discovered(root) and len(tops) == 1:
        try:
            st.link(tops[0], root, lines.get(tops[0], root))
            tops = []
        except InapplicableTest:
            pass
    if root is None and len(tops) == 1:
        tops = []
    unresolved += tops

    nodes = sorted_ids(set(leaves) | {b for e in st.edges for b in e})
    edges = {k: (ln.r, ln.x) for k, ln in st.edges.items()}
    diag = {"unresolved": unresolved, "tests": tests, "tau1": config.tau1, "tau2": config.tau2,
            "status": "ok" if not unresolved else "unresolved nodes"}
    has_root = root is not None and root in nodes
    return EstimationResult(nodes=nodes, observed=set(leaves), edges=edges,
                            root=root if has_root else None, diagnostics=diag)


def _post_order(nodes, par) -> list[str]:
    kids: dict[str, list[str]] = {k: [] for k in nodes}
    tops = []
    for k in nodes:
        p = par.get(k)
        if p in kids:
            kids[p].append(k)
        else:
            tops.append(k)
    out = []

    def visit(k):
        for ch in sorted_ids(kids[k]):
            visit(ch)
        out.append(k)

    for k in sorted_ids(tops):
        visit(k)
    return out
