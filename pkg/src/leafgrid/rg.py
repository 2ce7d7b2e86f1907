"""Recursive grouping over an additive tree distance.

Starting from the observed nodes, each round classifies every active pair as
parent/child, siblings or unrelated from the distance differences
``Phi_abc = d(a, c) - d(b, c)``, groups the active set into families,
attaches children to an observed parent or to a freshly created hidden
node, extends the distance table to the new nodes and recurses on the
family heads.

Three modes are supported:

* ``exact``: every other active node is a witness; a float slack of
  ``exact_rtol`` times the largest distance absorbs rounding.
* ``finite``: witnesses are restricted to nodes within ``tau`` (resistance
  distance) of both ends, relations hold up to ``epsilon`` and new-node
  distances are averaged over all children and witnesses.
* ``adaptive``: finite rules, but a round that finds no relation retries on
  the reactance distances and then with ``epsilon`` multiplied by ``alpha``;
  any success resets ``epsilon``.  Escalating past ``eps_cap_factor`` times
  the initial value stops with a partial result.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .grid import natural_key, sorted_ids
from .result import EstimationResult, edge_key

EXACT = "exact"
FINITE = "finite"
ADAPTIVE = "adaptive"
MODES = (EXACT, FINITE, ADAPTIVE)


class Relation(Enum):
    A_PARENT_OF_B = "a_parent_of_b"
    B_PARENT_OF_A = "b_parent_of_a"
    SIBLINGS = "siblings"
    NONE = "none"


class InsufficientWitnesses(ValueError):
    pass


@dataclass
class RGConfig:
    epsilon: float = 0.0
    tau: float = math.inf
    alpha: float = 2.0
    mode: str = EXACT
    eps_cap_factor: float = 100.0
    exact_rtol: float = 1e-9
    hidden_prefix: str = "h"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if not self.tau > 0:
            raise ValueError("tau must be > 0")
        if not self.alpha > 1:
            raise ValueError("alpha must be > 1")
        if self.mode == ADAPTIVE and self.epsilon <= 0:
            raise ValueError("adaptive mode needs a positive initial epsilon")


class DistanceTable:
    """Symmetric distances over a growing vertex set."""

    def __init__(self, nodes: Sequence[str], matrix, capacity: int | None = None):
        nodes = list(nodes)
        matrix = np.asarray(matrix, dtype=float)
        if matrix.shape != (len(nodes), len(nodes)):
            raise ValueError("distance matrix shape does not match node list")
        if not np.allclose(matrix, matrix.T, rtol=1e-12, atol=1e-15):
            raise ValueError("distance matrix is not symmetric")
        if np.any(np.diag(matrix) != 0):
            raise ValueError("distance matrix must have a zero diagonal")
        cap = capacity or max(2 * len(nodes), 4)
        self._m = np.full((cap, cap), np.nan)
        self._m[: len(nodes), : len(nodes)] = matrix
        self.index = {b: i for i, b in enumerate(nodes)}

    def _grow(self):
        cap = self._m.shape[0]
        bigger = np.full((2 * cap, 2 * cap), np.nan)
        bigger[:cap, :cap] = self._m
        self._m = bigger

    def add(self, node: str) -> None:
        if node in self.index:
            raise ValueError(f"node {node} already present")
        if len(self.index) >= self._m.shape[0]:
            self._grow()
        i = len(self.index)
        self.index[node] = i
        self._m[i, i] = 0.0

    def __call__(self, a: str, b: str) -> float:
        return float(self._m[self.index[a], self.index[b]])

    def set(self, a: str, b: str, value: float) -> None:
        i, j = self.index[a], self.index[b]
        self._m[i, j] = self._m[j, i] = value

    def block(self, nodes: Sequence[str]) -> np.ndarray:
        idx = [self.index[b] for b in nodes]
        return self._m[np.ix_(idx, idx)]


# ---------------------------------------------------------------------------
# pair tests

def phi_stat(d: DistanceTable, a: str, b: str, c: str) -> float:
    if len({a, b, c}) != 3:
        raise ValueError("phi_stat needs three distinct nodes")
    return d(a, c) - d(b, c)


def _decide(d_ab, phis, tol) -> tuple[Relation, float]:
    phis = np.asarray(phis, dtype=float)
    if phis.size == 0:
        raise InsufficientWitnesses("insufficient witnesses")
    res_b_parent = float(np.max(np.abs(d_ab - phis)))
    res_a_parent = float(np.max(np.abs(d_ab + phis)))
    if min(res_a_parent, res_b_parent) <= tol:
        if res_a_parent <= res_b_parent:
            return Relation.A_PARENT_OF_B, res_a_parent
        return Relation.B_PARENT_OF_A, res_b_parent
    spread = float(phis.max() - phis.min())
    if spread <= tol:
        return Relation.SIBLINGS, spread
    return Relation.NONE, min(res_a_parent, res_b_parent, spread)


def classify_pair(d: DistanceTable, a: str, b: str, witnesses: Iterable[str],
                  epsilon: float) -> Relation:
    """Relation between ``a`` and ``b`` judged on ``witnesses``.

    A parent/child reading wins over siblings when both pass, since a
    parent and its leaf child also have a constant ``Phi``.
    """
    phis = [phi_stat(d, a, b, c) for c in witnesses]
    return _decide(d(a, b), phis, epsilon)[0]


def witness_set(d: DistanceTable, a: str, b: str, active: Iterable[str], tau: float) -> list[str]:
    return [c for c in active if c != a and c != b and d(a, c) < tau and d(b, c) < tau]


def new_parent_distances(d: DistanceTable, h: str, children: Sequence[str],
                         others: Sequence[str], witnesses, averaged: bool) -> None:
    """Add hidden parent ``h`` of ``children`` to ``d``.

    ``witnesses(a, b)`` lists the witness nodes for a child pair.  With
    ``averaged`` false a single child pair and witness is used; otherwise
    every child pair and witness contributes.  Distances from ``h`` to
    ``others`` (active nodes outside the family) are derived from the
    children.
    """
    if len(children) < 2:
        raise ValueError("a new parent needs at least two children")
    d.add(h)
    for a in children:
        terms = []
        for b in children:
            if b == a:
                continue
            wit = list(witnesses(a, b))
            if not wit:
                continue
            if averaged:
                phi_mean = float(np.mean([d(a, c) - d(b, c) for c in wit]))
                terms.append(d(a, b) + phi_mean)
            else:
                c = wit[0]
                terms.append(d(a, b) + d(a, c) - d(b, c))
                break
        if not terms:
            raise InsufficientWitnesses(f"child {a} of {h} has no witnesses")
        d.set(a, h, 0.5 * float(np.mean(terms)))
    for c in others:
        if c in children:
            continue
        use = children if averaged else children[:1]
        d.set(c, h, float(np.mean([d(a, c) - d(a, h) for a in use])))


def _link_hidden(d: DistanceTable, h: str, hc: Sequence[str], g: str, gc: Sequence[str],
                 averaged: bool) -> None:
    use = hc if averaged else hc[:1]
    d.set(h, g, float(np.mean([d(a, g) - d(a, h) for a in use])))


# ---------------------------------------------------------------------------
# the grouping loop

@dataclass
class _Round:
    rel: dict[tuple[str, str], tuple[Relation, float]]
    witnesses: dict[tuple[str, str], list[str]]
    insufficient: int = 0


def _classify_all(table: DistanceTable, rtable: DistanceTable, active: list[str],
                  tol: float, tau: float) -> _Round:
    m = len(active)
    dm = table.block(active)
    near = rtable.block(active) < tau
    np.fill_diagonal(near, True)
    rel: dict[tuple[str, str], tuple[Relation, float]] = {}
    wits: dict[tuple[str, str], list[str]] = {}
    insufficient = 0
    for i, j in itertools.combinations(range(m), 2):
        mask = near[i] & near[j]
        mask[i] = mask[j] = False
        cols = np.flatnonzero(mask)
        a, b = active[i], active[j]
        wits[(a, b)] = [active[k] for k in cols]
        if cols.size == 0:
            insufficient += 1
            rel[(a, b)] = (Relation.NONE, math.inf)
            continue
        phis = dm[i, cols] - dm[j, cols]
        rel[(a, b)] = _decide(dm[i, j], phis, tol)
    return _Round(rel, wits, insufficient)


def _pair(rel, a, b):
    if (a, b) in rel:
        return rel[(a, b)][0]
    r = rel[(b, a)][0]
    if r is Relation.A_PARENT_OF_B:
        return Relation.B_PARENT_OF_A
    if r is Relation.B_PARENT_OF_A:
        return Relation.A_PARENT_OF_B
    return r


def _cell_parent(cell: list[str], rel) -> tuple[bool, str | None]:
    """Whether ``cell`` is a consistent family, and its observed parent if any."""
    parents = set()
    for a, b in itertools.combinations(cell, 2):
        r = _pair(rel, a, b)
        if r is Relation.NONE:
            return False, None
        if r is Relation.A_PARENT_OF_B:
            parents.add(a)
        elif r is Relation.B_PARENT_OF_A:
            parents.add(b)
    if len(parents) > 1:
        return False, None
    parent = next(iter(parents), None)
    return True, parent


def _components(nodes: list[str], edges: set[tuple[str, str]]) -> list[list[str]]:
    adj = {b: [] for b in nodes}
    for a, b in edges:
        adj[a].append(b)
        adj[b].append(a)
    seen = set()
    out = []
    for s in nodes:
        if s in seen:
            continue
        comp = []
        stack = [s]
        seen.add(s)
        while stack:
            u = stack.pop()
            comp.append(u)
            for w in adj[u]:
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        out.append(sorted_ids(comp))
    return out


def coarsest_partition(active: list[str], rel) -> list[tuple[list[str], str | None]]:
    """Families of ``active``: connected components of passing pairs, split until consistent.

    Splitting removes the passing pair with the largest residual inside an
    inconsistent component.
    """
    edges = {k for k, (r, _) in rel.items() if r is not Relation.NONE}
    out = []
    pending = _components(active, edges)
    while pending:
        cell = pending.pop(0)
        ok, parent = _cell_parent(cell, rel)
        if ok:
            out.append((cell, parent))
            continue
        inner = [k for k in edges if k[0] in cell and k[1] in cell]
        worst = max(inner, key=lambda k: (rel[k][1], natural_key(k[0]), natural_key(k[1])))
        edges.discard(worst)
        pending = _components(cell, {k for k in edges if k[0] in cell and k[1] in cell}) + pending
    out.sort(key=lambda item: natural_key(item[0][0]))
    return out


def _fresh_label(prefix: str, taken, counter):
    while True:
        label = f"{prefix}{counter[0]}"
        counter[0] += 1
        if label not in taken:
            return label


def run_rg(nodes: Sequence[str], dr, dx=None, config: RGConfig | None = None) -> EstimationResult:
    """Recover a tree over ``nodes`` plus hidden junctions from additive distances.

    ``dr`` (and optionally ``dx``) are square matrices ordered like
    ``nodes``.  The returned result is unrooted; each edge carries its
    resistance length and, when ``dx`` is given, its reactance length
    computed on the same topology.
    """
    config = config or RGConfig()
    nodes = list(nodes)
    if len(set(nodes)) != len(nodes):
        raise ValueError("duplicate node labels")
    rtab = DistanceTable(nodes, dr)
    xtab = DistanceTable(nodes, dx) if dx is not None else None
    tables = [rtab] + ([xtab] if xtab is not None else [])

    exact = config.mode == EXACT
    averaged = not exact
    tau = math.inf if exact else config.tau
    eps0 = config.epsilon
    eps_cap = eps0 * config.eps_cap_factor

    active = sorted_ids(nodes)
    all_nodes = list(active)
    edges: dict[tuple[str, str], list] = {}
    counter = [0]
    diag = {"mode": config.mode, "iterations": 0, "epsilon_used": [], "metric_used": [],
            "escalations": 0, "insufficient_witness_pairs": 0, "unresolved": [],
            "status": "ok"}

    eps = eps0
    metric = 0
    while len(active) > 2:
        table = tables[metric]
        if exact:
            scale = float(np.max(np.abs(rtab.block(active)))) if active else 0.0
            tol = eps + config.exact_rtol * max(scale, 1.0e-300)
        else:
            tol = eps
        rnd = _classify_all(table, rtab, active, tol, tau)
        diag["insufficient_witness_pairs"] += rnd.insufficient
        families = coarsest_partition(active, rnd.rel)
        if all(len(cell) == 1 for cell, _ in families):
            if config.mode == ADAPTIVE:
                if metric == 0 and xtab is not None:
                    metric = 1
                    continue
                metric = 0
                eps *= config.alpha
                diag["escalations"] += 1
                if eps <= eps_cap * (1 + 1e-12):
                    continue
                diag["status"] = "epsilon cap reached"
            else:
                diag["status"] = "no relation found"
            diag["unresolved"] = list(active)
            break

        diag["iterations"] += 1
        diag["epsilon_used"].append(eps)
        diag["metric_used"].append("resistance" if metric == 0 else "reactance")
        new_active: list[str] = []
        hidden_fams: list[tuple[str, list[str]]] = []
        for cell, parent in families:
            if len(cell) == 1:
                new_active.append(cell[0])
            elif parent is not None:
                for a in cell:
                    if a != parent:
                        edges[edge_key(parent, a)] = [t(parent, a) for t in tables]
                new_active.append(parent)
            else:
                h = _fresh_label(config.hidden_prefix, set(all_nodes), counter)
                all_nodes.append(h)
                hidden_fams.append((h, cell))
                new_active.append(h)

        def wit(a, b, _w=rnd.witnesses):
            return _w[(a, b)] if (a, b) in _w else _w[(b, a)]

        old_active = list(active)
        for t in tables:
            for h, kids in hidden_fams:
                new_parent_distances(t, h, kids, old_active, wit, averaged)
            for (h, hk), (g, gk) in itertools.combinations(hidden_fams, 2):
                _link_hidden(t, h, hk, g, gk, averaged)
        for h, kids in hidden_fams:
            for a in kids:
                edges[edge_key(h, a)] = [t(a, h) for t in tables]
        active = sorted_ids(new_active)
        eps = eps0
        metric = 0
    else:
        if len(active) == 2:
            a, b = active
            edges[edge_key(a, b)] = [t(a, b) for t in tables]

    out_edges = {}
    for k, vals in edges.items():
        r = vals[0]
        x = vals[1] if xtab is not None else None
        out_edges[k] = (r, x)
    quarantined = [k for k, (r, x) in out_edges.items()
                   if not (r > 0) or (x is not None and not (x > 0))]
    if quarantined:
        diag["nonpositive_edges"] = [list(k) for k in quarantined]
    return EstimationResult(nodes=sorted_ids(all_nodes), observed=set(nodes), edges=out_edges,
                            root=None, quarantined=quarantined, diagnostics=diag)
