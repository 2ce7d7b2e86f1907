"""Radial grid representation and tree algebra.

A grid is an undirected tree of buses joined by lines with positive
resistance ``r`` and reactance ``x`` (per-unit).  One bus may be marked as
the substation (root); estimated grids returned by the learners are often
unrooted, so ``root`` is optional here and checked by :func:`validate`.
"""
from __future__ import annotations

import json
import math
import re
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

SUBSTATION = "substation"
INTERNAL = "internal"
LEAF = "leaf"
BUS_KINDS = (SUBSTATION, INTERNAL, LEAF)

RESISTANCE = "resistance"
REACTANCE = "reactance"
WEIGHT_KINDS = (RESISTANCE, REACTANCE)


class GridError(ValueError):
    """Structural or lookup problem with a grid."""


def natural_key(label: str):
    """Sort key that orders ``b2`` before ``b10``."""
    return [(0, int(tok), "") if tok.isdigit() else (1, 0, tok)
            for tok in re.split(r"(\d+)", str(label)) if tok != ""]


def sorted_ids(ids: Iterable[str]) -> list[str]:
    return sorted(ids, key=natural_key)


def _check_kind(kind: str) -> str:
    if kind not in WEIGHT_KINDS:
        raise ValueError(f"weight kind must be one of {WEIGHT_KINDS}, got {kind!r}")
    return kind


@dataclass(frozen=True)
class Bus:
    id: str
    kind: str
    observed: bool = False

    def __post_init__(self):
        if self.kind not in BUS_KINDS:
            raise GridError(f"bus {self.id}: unknown kind {self.kind!r}")


@dataclass(frozen=True)
class Line:
    """A line between buses ``a`` and ``b``; the pair is unordered."""

    a: str
    b: str
    r: float
    x: float

    def __post_init__(self):
        if self.a == self.b:
            raise GridError(f"line {self.a}-{self.b} is a self loop")
        for name in ("r", "x"):
            val = getattr(self, name)
            if not (math.isfinite(val) and val > 0):
                raise GridError(
                    f"line {self.a}-{self.b}: {name} must be finite and > 0, got {val!r}")

    @property
    def key(self) -> frozenset:
        return frozenset((self.a, self.b))

    @property
    def g(self) -> float:
        return self.r / (self.r ** 2 + self.x ** 2)

    @property
    def beta(self) -> float:
        return self.x / (self.r ** 2 + self.x ** 2)

    def weight(self, kind: str) -> float:
        return self.r if _check_kind(kind) == RESISTANCE else self.x

    def other(self, bus: str) -> str:
        if bus == self.a:
            return self.b
        if bus == self.b:
            return self.a
        raise GridError(f"bus {bus} is not an endpoint of line {self.a}-{self.b}")


class RadialGrid:
    """Buses and lines of a (nominally) radial grid.

    Construction only enforces per-line validity and that line endpoints
    exist; cycles, disconnection and root problems are reported by
    :func:`validate` so that broken inputs can still be inspected.
    """

    def __init__(self, buses: Iterable[Bus], lines: Iterable[Line], root: str | None = None):
        self._buses: dict[str, Bus] = {}
        for bus in buses:
            if bus.id in self._buses:
                raise GridError(f"duplicate bus id {bus.id}")
            self._buses[bus.id] = bus
        self._lines: dict[frozenset, Line] = {}
        self._adj: dict[str, list[str]] = {b: [] for b in self._buses}
        self._parallel: list[Line] = []
        for line in lines:
            for end in (line.a, line.b):
                if end not in self._buses:
                    raise GridError(f"line {line.a}-{line.b} references unknown bus {end}")
            if line.key in self._lines:
                self._parallel.append(line)
            else:
                self._lines[line.key] = line
            self._adj[line.a].append(line.b)
            self._adj[line.b].append(line.a)
        for nbrs in self._adj.values():
            nbrs.sort(key=natural_key)
        if root is not None and root not in self._buses:
            raise GridError(f"root {root} is not a bus")
        self.root = root
        self._parent_cache: dict[str, str | None] | None = None

    # construction helpers -------------------------------------------------
    @classmethod
    def from_lines(cls, lines: Iterable[Line], root: str | None = None,
                   observed: Iterable[str] | None = None,
                   extra_buses: Iterable[str] = ()) -> "RadialGrid":
        """Build a grid inferring bus kinds from degrees.

        Leaves (degree 1, not the root) are observed unless ``observed`` is
        given explicitly.
        """
        lines = list(lines)
        degree: dict[str, int] = {b: 0 for b in extra_buses}
        for ln in lines:
            degree[ln.a] = degree.get(ln.a, 0) + 1
            degree[ln.b] = degree.get(ln.b, 0) + 1
        if root is not None:
            degree.setdefault(root, 0)
        obs = None if observed is None else set(observed)
        buses = []
        for bid in sorted_ids(degree):
            if bid == root:
                kind = SUBSTATION
            elif degree[bid] == 1:
                kind = LEAF
            else:
                kind = INTERNAL
            is_obs = (kind == LEAF) if obs is None else (bid in obs)
            buses.append(Bus(bid, kind, is_obs))
        return cls(buses, lines, root)

    def replace(self, lines: Iterable[Line] | None = None, root: str | None = "__keep__",
                observed: Iterable[str] | None = None) -> "RadialGrid":
        lines = self.lines if lines is None else list(lines)
        root = self.root if root == "__keep__" else root
        obs = self.observed if observed is None else set(observed)
        return RadialGrid.from_lines(lines, root=root, observed=obs)

    # accessors -------------------------------------------------------------
    @property
    def bus_ids(self) -> list[str]:
        return sorted_ids(self._buses)

    @property
    def buses(self) -> list[Bus]:
        return [self._buses[b] for b in self.bus_ids]

    @property
    def lines(self) -> list[Line]:
        return list(self._lines.values()) + list(self._parallel)

    def bus(self, bid: str) -> Bus:
        try:
            return self._buses[bid]
        except KeyError:
            raise GridError(f"unknown bus id {bid!r}") from None

    def __contains__(self, bid) -> bool:
        return bid in self._buses

    def __len__(self) -> int:
        return len(self._buses)

    def line(self, a: str, b: str) -> Line:
        try:
            return self._lines[frozenset((a, b))]
        except KeyError:
            raise GridError(f"no line between {a} and {b}") from None

    def has_line(self, a: str, b: str) -> bool:
        return frozenset((a, b)) in self._lines

    def neighbors(self, bid: str) -> list[str]:
        self.bus(bid)
        return list(self._adj[bid])

    def degree(self, bid: str) -> int:
        return len(self.neighbors(bid))

    @property
    def observed(self) -> set[str]:
        return {b.id for b in self._buses.values() if b.observed}

    @property
    def leaves(self) -> list[str]:
        return [b for b in self.bus_ids if self._buses[b].kind == LEAF]

    @property
    def hidden(self) -> list[str]:
        """Unobserved buses other than the root."""
        return [b for b in self.bus_ids if not self._buses[b].observed and b != self.root]

    @property
    def non_root(self) -> list[str]:
        """Bus ordering used for every reduced-Laplacian quantity."""
        return [b for b in self.bus_ids if b != self.root]

    def edge_set(self) -> set[frozenset]:
        return set(self._lines)

    # tree walks ------------------------------------------------------------
    def _require_root(self) -> str:
        if self.root is None:
            raise GridError("operation needs a rooted grid")
        return self.root

    def parents(self) -> dict[str, str | None]:
        """Parent of every bus reachable from the root (root maps to None)."""
        if self._parent_cache is None:
            root = self._require_root()
            par: dict[str, str | None] = {root: None}
            queue = deque([root])
            while queue:
                u = queue.popleft()
                for w in self._adj[u]:
                    if w not in par:
                        par[w] = u
                        queue.append(w)
            self._parent_cache = par
        return self._parent_cache

    def children(self, bid: str) -> list[str]:
        par = self.parents()
        return [w for w in self._adj[bid] if par.get(w) == bid]

    def descendants(self, bid: str) -> set[str]:
        out: set[str] = set()
        stack = [bid]
        while stack:
            u = stack.pop()
            for w in self.children(u):
                out.add(w)
                stack.append(w)
        return out

    def root_path(self, bid: str) -> list[str]:
        """Buses from ``bid`` up to and including the root."""
        par = self.parents()
        if bid not in par:
            self.bus(bid)
            raise GridError(f"bus {bid} is not connected to the root")
        out = [bid]
        while par[out[-1]] is not None:
            out.append(par[out[-1]])
        return out

    def __repr__(self) -> str:
        return f"RadialGrid({len(self._buses)} buses, {len(self.lines)} lines, root={self.root!r})"


# ---------------------------------------------------------------------------
# validation

def components(grid: RadialGrid) -> list[set[str]]:
    seen: set[str] = set()
    comps = []
    for start in grid.bus_ids:
        if start in seen:
            continue
        comp = {start}
        stack = [start]
        while stack:
            u = stack.pop()
            for w in grid.neighbors(u):
                if w not in comp:
                    comp.add(w)
                    stack.append(w)
        seen |= comp
        comps.append(comp)
    return comps


def validate(grid: RadialGrid, require_hidden_degree3: bool = False,
             require_root: bool = True) -> list[str]:
    """Return a list of human readable violations; empty means valid."""
    problems: list[str] = []
    if len(grid) == 0:
        return ["grid has no buses"]
    n_lines = len(grid.lines)
    comps = components(grid)
    if len(comps) > 1:
        problems.append(f"not connected ({len(comps)} components)")
    if n_lines != len(grid) - len(comps):
        problems.append(f"not a tree (|lines|={n_lines}, |buses|={len(grid)})")
    subs = [b.id for b in grid.buses if b.kind == SUBSTATION]
    if require_root and grid.root is None:
        problems.append("no substation root")
    if len(subs) > 1:
        problems.append(f"multiple substations: {', '.join(subs)}")
    if grid.root is not None and grid.bus(grid.root).kind != SUBSTATION:
        problems.append(f"root {grid.root} is not marked as substation")
    for ln in grid.lines:
        if not (ln.r > 0 and ln.x > 0):
            problems.append(f"line {ln.a}-{ln.b} has nonpositive impedance")
    for b in grid.buses:
        deg = grid.degree(b.id)
        if b.kind == LEAF and deg != 1:
            problems.append(f"leaf {b.id} has degree {deg}")
        if b.kind == INTERNAL and deg == 1:
            problems.append(f"bus {b.id} has degree 1 but is marked internal")
    if require_hidden_degree3:
        for bid in grid.hidden:
            deg = grid.degree(bid)
            if deg < 3:
                problems.append(f"hidden bus {bid} has degree {deg}")
    return problems


def check_grid(grid: RadialGrid, require_hidden_degree3: bool = False) -> RadialGrid:
    problems = validate(grid, require_hidden_degree3)
    if problems:
        raise GridError("; ".join(problems))
    return grid


# ---------------------------------------------------------------------------
# paths, Laplacians and distances

def path(grid: RadialGrid, a: str, b: str) -> list[tuple[str, str]]:
    """Ordered lines ``[(a, u), (u, v), ..., (w, b)]`` on the unique a-b path."""
    grid.bus(a)
    grid.bus(b)
    if a == b:
        return []
    prev: dict[str, str | None] = {a: None}
    queue = deque([a])
    while queue:
        u = queue.popleft()
        if u == b:
            break
        for w in grid.neighbors(u):
            if w not in prev:
                prev[w] = u
                queue.append(w)
    if b not in prev:
        raise GridError(f"no path between {a} and {b}")
    nodes = [b]
    while prev[nodes[-1]] is not None:
        nodes.append(prev[nodes[-1]])
    nodes.reverse()
    return list(zip(nodes[:-1], nodes[1:]))


@dataclass(frozen=True)
class LaplacianInverse:
    """Inverse of a reduced weighted Laplacian, indexed by ``index``."""

    kind: str
    index: tuple[str, ...]
    matrix: np.ndarray = field(repr=False)

    def pos(self, bus: str) -> int:
        try:
            return self.index.index(bus)
        except ValueError:
            raise GridError(f"bus {bus!r} not in reduced index") from None

    def entry(self, a: str, b: str) -> float:
        return float(self.matrix[self.pos(a), self.pos(b)])


def root_path_incidence(grid: RadialGrid, kind: str) -> tuple[list[str], np.ndarray, np.ndarray]:
    """Incidence of non-root buses (rows) on root-path lines (cols) plus line weights.

    Column ``j`` stands for the line between bus ``index[j]`` and its parent.
    """
    _check_kind(kind)
    index = grid.non_root
    pos = {b: i for i, b in enumerate(index)}
    par = grid.parents()
    n = len(index)
    inc = np.zeros((n, n))
    w = np.empty(n)
    for j, b in enumerate(index):
        if b not in par:
            raise GridError(f"bus {b} is not connected to the root")
        w[j] = grid.line(b, par[b]).weight(kind)
    for i, b in enumerate(index):
        for u in grid.root_path(b)[:-1]:
            inc[i, pos[u]] = 1.0
    return index, inc, w


def laplacian_inverse(grid: RadialGrid, kind: str = RESISTANCE) -> LaplacianInverse:
    """Entry (a, b) is the summed weight of lines shared by the a-root and b-root paths."""
    index, inc, w = root_path_incidence(grid, kind)
    mat = (inc * w) @ inc.T
    return LaplacianInverse(kind, tuple(index), mat)


def reduced_laplacian(grid: RadialGrid, kind: str = RESISTANCE) -> np.ndarray:
    """Laplacian with ``1/weight`` edge weights, root row and column removed."""
    _check_kind(kind)
    grid._require_root()
    index = grid.non_root
    pos = {b: i for i, b in enumerate(index)}
    lap = np.zeros((len(index), len(index)))
    for ln in grid.lines:
        y = 1.0 / ln.weight(kind)
        ends = [pos.get(ln.a), pos.get(ln.b)]
        for e in ends:
            if e is not None:
                lap[e, e] += y
        if None not in ends:
            lap[ends[0], ends[1]] -= y
            lap[ends[1], ends[0]] -= y
    return lap


def effective_distance(grid: RadialGrid, a: str, b: str, kind: str = RESISTANCE) -> float:
    """Summed line weight along the a-b path (effective resistance on a tree)."""
    _check_kind(kind)
    return float(sum(grid.line(u, v).weight(kind) for u, v in path(grid, a, b)))


def distance_table(grid: RadialGrid, nodes: Sequence[str], kind: str = RESISTANCE) -> np.ndarray:
    """Pairwise path-sum distances between ``nodes`` (one BFS per node)."""
    _check_kind(kind)
    nodes = list(nodes)
    out = np.zeros((len(nodes), len(nodes)))
    want = {b: i for i, b in enumerate(nodes)}
    for i, src in enumerate(nodes):
        dist = {src: 0.0}
        queue = deque([src])
        while queue:
            u = queue.popleft()
            for w in grid.neighbors(u):
                if w not in dist:
                    dist[w] = dist[u] + grid.line(u, w).weight(kind)
                    queue.append(w)
        for b, j in want.items():
            if b not in dist:
                raise GridError(f"no path between {src} and {b}")
            out[i, j] = dist[b]
    return out


# ---------------------------------------------------------------------------
# reductions

def kron_reduce_degree2(grid: RadialGrid) -> RadialGrid:
    """Remove every hidden degree-2 bus, merging its two lines by summing r and x."""
    adj: dict[str, dict[str, tuple[float, float]]] = {b: {} for b in grid.bus_ids}
    for ln in grid.lines:
        adj[ln.a][ln.b] = (ln.r, ln.x)
        adj[ln.b][ln.a] = (ln.r, ln.x)
    removable = [b for b in grid.hidden if grid.degree(b) == 2]
    for b in removable:
        (u, (r1, x1)), (w, (r2, x2)) = sorted(adj[b].items(), key=lambda kv: natural_key(kv[0]))
        del adj[u][b], adj[w][b], adj[b]
        adj[u][w] = (r1 + r2, x1 + x2)
        adj[w][u] = (r1 + r2, x1 + x2)
    lines = []
    for u in sorted_ids(adj):
        for w, (r, x) in adj[u].items():
            if natural_key(u) < natural_key(w):
                lines.append(Line(u, w, r, x))
    keep = [b for b in grid.bus_ids if b in adj]
    obs = grid.observed & set(keep)
    return RadialGrid.from_lines(lines, root=grid.root, observed=obs,
                                 extra_buses=keep)


def observable_tree(grid: RadialGrid) -> RadialGrid:
    """The part of ``grid`` that leaf-only measurements can identify.

    Unobserved dangling buses (including an unobserved substation of degree 1)
    are pruned, then hidden degree-2 buses are merged.  The result is
    unrooted unless the root is observed.
    """
    obs = grid.observed
    adj = {b: set(grid.neighbors(b)) for b in grid.bus_ids}
    changed = True
    while changed:
        changed = False
        for b in list(adj):
            if b not in obs and len(adj[b]) <= 1:
                for w in adj[b]:
                    adj[w].discard(b)
                del adj[b]
                changed = True
    lines = [ln for ln in grid.lines if ln.a in adj and ln.b in adj]
    root = grid.root if grid.root in obs else None
    pruned = RadialGrid.from_lines(lines, root=root, observed=obs & set(adj),
                                   extra_buses=adj.keys())
    # the former substation is now an ordinary hidden bus
    return kron_reduce_degree2(pruned)


# ---------------------------------------------------------------------------
# comparison

def _observed_below(grid: RadialGrid, ref_for: Mapping[str, str]) -> dict[str, frozenset]:
    """Observed-descendant set of each bus, with each component rooted at ``ref_for[bus]``."""
    obs = grid.observed
    out: dict[str, frozenset] = {}
    for comp in components(grid):
        start = min(comp, key=natural_key)
        ref = ref_for.get(start, start)
        order = []
        par = {ref: None}
        stack = [ref]
        while stack:
            u = stack.pop()
            order.append(u)
            for w in grid.neighbors(u):
                if w not in par:
                    par[w] = u
                    stack.append(w)
        below: dict[str, set[str]] = {u: ({u} & obs) for u in order}
        for u in reversed(order):
            if par[u] is not None:
                below[par[u]] |= below[u]
        for u in order:
            out[u] = frozenset(below[u] - {u})
    return out


def _component_refs(grid: RadialGrid) -> dict[str, str]:
    refs = {}
    obs = grid.observed
    for comp in components(grid):
        start = min(comp, key=natural_key)
        seen_obs = [b for b in comp if b in obs]
        refs[start] = min(seen_obs, key=natural_key) if seen_obs else start
    return refs


def match_hidden(est: RadialGrid, truth: RadialGrid) -> dict[str, str]:
    """Map buses of ``est`` onto buses of ``truth``.

    Buses sharing an id are matched directly; remaining hidden buses are
    paired greedily (sorted id order) when their observed-descendant sets
    coincide.  Descendant sets are taken with every component rooted at its
    smallest observed bus.
    """
    if est.observed != truth.observed:
        raise GridError("observed bus sets differ: "
                        f"{sorted_ids(est.observed ^ truth.observed)}")
    mapping = {b: b for b in est.bus_ids if b in truth}
    free_truth = [b for b in truth.bus_ids if b not in mapping.values()]
    free_est = [b for b in est.bus_ids if b not in mapping]
    if not free_est or not free_truth:
        return mapping
    sets_est = _observed_below(est, _component_refs(est))
    sets_truth = _observed_below(truth, _component_refs(truth))
    by_set: dict[frozenset, list[str]] = {}
    for b in free_truth:
        if sets_truth[b]:
            by_set.setdefault(sets_truth[b], []).append(b)
    for b in free_est:
        cands = by_set.get(sets_est[b])
        if cands:
            mapping[b] = cands.pop(0)
    return mapping


def tree_edit_distance(est: RadialGrid, truth: RadialGrid) -> int:
    """Number of edges present in exactly one of the two trees after matching."""
    mapping = match_hidden(est, truth)
    rename = {b: mapping.get(b, f"\0unmatched:{b}") for b in est.bus_ids}
    est_edges = {frozenset((rename[ln.a], rename[ln.b])) for ln in est.lines}
    return len(est_edges ^ truth.edge_set())


# ---------------------------------------------------------------------------
# JSON i/o

def grid_to_dict(grid: RadialGrid) -> dict:
    return {
        "root": grid.root,
        "buses": [{"id": b.id, "kind": b.kind, "observed": b.observed} for b in grid.buses],
        "lines": [{"a": ln.a, "b": ln.b, "r": ln.r, "x": ln.x}
                  for ln in sorted(grid.lines, key=lambda l: (natural_key(l.a), natural_key(l.b)))],
    }


def grid_from_dict(doc: Mapping) -> RadialGrid:
    buses = []
    for item in doc["buses"]:
        kind = item["kind"]
        observed = item.get("observed", kind == LEAF)
        buses.append(Bus(str(item["id"]), kind, bool(observed)))
    lines = [Line(str(item["a"]), str(item["b"]), float(item["r"]), float(item["x"]))
             for item in doc["lines"]]
    root = doc.get("root")
    return RadialGrid(buses, lines, None if root is None else str(root))


def save_grid(grid: RadialGrid, dest, extra: Mapping | None = None) -> None:
    doc = grid_to_dict(grid)
    if extra:
        doc.update(extra)
    # json writes floats with repr, which round-trips exactly
    Path(dest).write_text(json.dumps(doc, indent=2) + "\n")


def load_grid(src) -> RadialGrid:
    return grid_from_dict(json.loads(Path(src).read_text()))


def load_lines(src) -> list[Line]:
    """Read a line list (e.g. a permissible edge set) from the grid JSON schema."""
    doc = json.loads(Path(src).read_text())
    return [Line(str(item["a"]), str(item["b"]), float(item["r"]), float(item["x"]))
            for item in doc["lines"]]
