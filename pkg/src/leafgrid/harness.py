"""Random grids, repeated-trial experiments and metrics."""
from __future__ import annotations

import csv
import heapq
import io
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import fixtures
from .alg1 import Alg1Config, run_alg1
from .grid import (GridError, Line, RadialGrid, load_grid, match_hidden, observable_tree,
                   tree_edit_distance)
from .moments import D_MIN, analytic_moments, empirical_moments
from .pipeline import run_alg3
from .result import EstimationResult
from .rg import RGConfig
from .sampling import InjectionModel, derive_seed, generate_samples, rng_for


# ---------------------------------------------------------------------------
# random grids

def _prufer_decode(seq: Sequence[int], n: int) -> list[tuple[int, int]]:
    degree = np.ones(n, dtype=int)
    for s in seq:
        degree[s] += 1
    edges = []
    heap = [i for i in range(n) if degree[i] == 1]
    heapq.heapify(heap)
    for s in seq:
        leaf = heapq.heappop(heap)
        edges.append((leaf, s))
        degree[s] -= 1
        if degree[s] == 1:
            heapq.heappush(heap, s)
    u, w = heapq.heappop(heap), heapq.heappop(heap)
    edges.append((u, w))
    return edges


def _constrained_degrees(n, max_degree, rng):
    """Internal-node degrees, each in [3, max_degree], for a tree on ``n`` nodes."""
    lo = math.ceil((n - 2) / (max_degree - 1))
    hi = (n - 2) // 2
    if lo > hi or hi < 1:
        raise GridError(f"no tree on {n} nodes has every internal degree in [3, {max_degree}]")
    k = int(rng.integers(lo, hi + 1))
    deg = np.full(k, 3)
    spare = n - 2 + k - 3 * k
    while spare:
        j = int(rng.integers(k))
        if deg[j] < max_degree:
            deg[j] += 1
            spare -= 1
    return deg


def _bounded_depth_edges(deg, n, max_depth, rng):
    """Tree with the given internal degrees and every bus within ``max_depth`` hops of node 0.

    Internal nodes are placed one by one into a random open child slot that
    is shallow enough to leave room below them; leaves fill the remaining
    slots.
    """
    k = len(deg)
    order = [0] + list(1 + rng.permutation(k - 1))
    slots = [(0, 1)] * int(deg[0])
    edges = []
    for node in order[1:]:
        ok = [i for i, (_, d) in enumerate(slots) if d < max_depth]
        if not ok:
            raise GridError(f"cannot fit {k} junctions within depth {max_depth}")
        parent, d = slots.pop(ok[int(rng.integers(len(ok)))])
        edges.append((parent, node))
        slots.extend([(node, d + 1)] * int(deg[node] - 1))
    leaves = list(range(k, n))
    for (parent, _), leaf in zip(slots, rng.permutation(leaves)):
        edges.append((parent, int(leaf)))
    return edges


def gen_random_grid(n: int, max_degree: int = 5, impedance=(0.1, 0.2), seed=0,
                    enforce_hidden_degree3: bool = True,
                    max_depth: int | None = None) -> RadialGrid:
    """Random radial grid on ``n`` buses with leaves observed.

    The tree comes from a Prüfer sequence.  With
    ``enforce_hidden_degree3`` the sequence is built from a random degree
    sequence that keeps every internal bus at degree 3..``max_degree``, which
    makes the tree uniform among labelled trees with those degrees.  Without
    it, uniform sequences are redrawn until the maximum degree holds.  The
    substation is a random internal bus and is relabelled ``b0``; line ``r``
    and ``x`` are drawn independently and uniformly from ``impedance``.

    ``max_depth`` caps the hop count from the substation.  Such trees are
    rare among Prüfer draws once ``n`` grows, so they are built directly:
    a degree sequence as above (redrawn until it fits), junctions placed into
    random open slots above the cap, leaves filling what is left.  The
    substation is then the first junction.
    """
    if n < 3:
        raise GridError("need at least 3 buses")
    if max_degree < 2:
        raise GridError("max_degree must be at least 2")
    if enforce_hidden_degree3 and max_degree < 3:
        raise GridError("hidden degree 3 needs max_degree >= 3")
    rng = rng_for(seed)
    if max_depth is not None:
        if not enforce_hidden_degree3:
            raise GridError("max_depth is only supported with hidden degree >= 3")
        if max_depth < 1:
            raise GridError("max_depth must be at least 1")
        for _ in range(2000):
            deg = _constrained_degrees(n, max_degree, rng)
            try:
                edges = _bounded_depth_edges(deg, n, max_depth, rng)
                break
            except GridError:
                continue
        else:
            raise GridError(f"could not fit {n} buses within depth {max_depth}")
        return _label(edges, n, 0, impedance, rng)
    if enforce_hidden_degree3:
        deg = _constrained_degrees(n, max_degree, rng)
        seq = np.repeat(np.arange(len(deg)), deg - 1)
        rng.shuffle(seq)
        edges = _prufer_decode(seq, n)
    else:
        for _ in range(10000):
            seq = rng.integers(0, n, size=n - 2)
            counts = np.bincount(seq, minlength=n) + 1
            if counts.max() <= max_degree:
                break
        else:
            raise GridError(f"could not draw a tree with max degree {max_degree}")
        edges = _prufer_decode(seq, n)
    degree = np.zeros(n, dtype=int)
    for u, w in edges:
        degree[u] += 1
        degree[w] += 1
    internal = np.flatnonzero(degree > 1)
    root = int(rng.choice(internal))
    return _label(edges, n, root, impedance, rng)


def _label(edges, n, root, impedance, rng) -> RadialGrid:
    """Random bus labels with the substation as ``b0``, plus random impedances."""
    perm = rng.permutation(n)
    perm[perm == 0] = perm[root]
    perm[root] = 0
    lo, hi = impedance
    rx = rng.uniform(lo, hi, size=(len(edges), 2))
    lines = [Line(f"b{perm[u]}", f"b{perm[w]}", float(r), float(x))
             for (u, w), (r, x) in zip(edges, rx)]
    return RadialGrid.from_lines(lines, root="b0")


def random_decoys(grid: RadialGrid, count: int, impedance=(0.1, 0.2), seed=0) -> list[Line]:
    """Extra candidate lines between distinct buses that are not grid lines."""
    rng = rng_for(seed)
    ids = grid.bus_ids
    have = set(grid.edge_set())
    possible = len(ids) * (len(ids) - 1) // 2 - len(have)
    count = min(count, possible)
    out = []
    while len(out) < count:
        i, j = rng.choice(len(ids), 2, replace=False)
        key = frozenset((ids[i], ids[j]))
        if key in have:
            continue
        have.add(key)
        r, x = rng.uniform(*impedance, size=2)
        out.append(Line(ids[i], ids[j], float(r), float(x)))
    return out


# ---------------------------------------------------------------------------
# metrics

def edge_difference(result: EstimationResult, truth: RadialGrid) -> int:
    """Edges present in one tree but not the other, after matching hidden buses."""
    return tree_edit_distance(result.grid, truth)


def impedance_error(result: EstimationResult, truth: RadialGrid) -> float:
    """Mean relative r and x error over the lines of a correctly recovered tree."""
    est = result.grid
    back = {t: e for e, t in match_hidden(est, truth).items()}
    total = 0.0
    for ln in truth.lines:
        a, b = back.get(ln.a, ln.a), back.get(ln.b, ln.b)
        e = est.line(a, b)
        total += abs(ln.r - e.r) / abs(ln.r) + abs(ln.x - e.x) / abs(ln.x)
    return total / (2 * len(truth.lines))


# ---------------------------------------------------------------------------
# experiments

ALG1 = "alg1"
ALG3 = "alg3"


@dataclass
class ExperimentSpec:
    """One repeated-trial experiment.

    ``grid`` is ``{"kind": "random", "n", "max_degree", "impedance"}``,
    ``{"kind": "fixture", "name"}`` or ``{"kind": "file", "path"}``.
    ``injection`` holds ``std`` and ``corr``.  ``sample_counts`` empty means
    analytic moments.  ``tolerances`` are RG epsilons for ``alg3`` and
    shared tau1/tau2 values for ``alg1``.
    """

    grid: dict = field(default_factory=lambda: {"kind": "random", "n": 10, "max_degree": 5,
                                                "impedance": [0.1, 0.2]})
    injection: dict = field(default_factory=lambda: {"std": 1.0, "corr": 0.0})
    solver: str = "lcpf"
    algorithm: str = ALG3
    sample_counts: list = field(default_factory=list)
    tolerances: list = field(default_factory=lambda: [0.0])
    mode: str = "finite"
    tau: float = 1.0
    alpha: float = 2.0
    decoys: int = 50
    trials: int = 10
    base_seed: int = 0
    workers: int = 1
    d_min: float = D_MIN

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        counts = list(self.sample_counts)
        if any(b <= a for a, b in zip(counts, counts[1:])):
            raise ValueError("sample_counts must be strictly increasing")
        if counts and counts[0] < 2:
            raise ValueError("sample counts must be >= 2")
        if self.algorithm not in (ALG1, ALG3):
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if not self.tolerances:
            raise ValueError("need at least one tolerance")

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentSpec":
        known = set(cls.__dataclass_fields__)
        extra = set(doc) - known
        if extra:
            raise ValueError(f"unknown experiment keys {sorted(extra)}")
        return cls(**doc)

    def to_dict(self) -> dict:
        return asdict(self)


def build_grid(spec: ExperimentSpec, trial: int) -> RadialGrid:
    g = spec.grid
    kind = g.get("kind", "random")
    if kind == "random":
        depth = g.get("max_depth")
        return gen_random_grid(int(g["n"]), int(g.get("max_degree", 5)),
                               tuple(g.get("impedance", (0.1, 0.2))),
                               seed=derive_seed(spec.base_seed, trial, 0),
                               max_depth=None if depth is None else int(depth))
    if kind == "fixture":
        return fixtures.load(g["name"])
    if kind == "file":
        return load_grid(g["path"])
    raise ValueError(f"unknown grid kind {kind!r}")


def _model(spec, grid):
    inj = spec.injection
    return InjectionModel.isotropic(grid.non_root, float(inj.get("std", 1.0)),
                                    float(inj.get("corr", 0.0)))


def _estimate(spec, grid, moments, tol, trial) -> EstimationResult:
    if spec.algorithm == ALG3:
        cfg = RGConfig(epsilon=tol, tau=spec.tau if spec.mode != "exact" else math.inf,
                       alpha=spec.alpha, mode=spec.mode)
        return run_alg3(moments, cfg, d_min=spec.d_min, root=grid.root)
    perm = list(grid.lines) + random_decoys(grid, spec.decoys,
                                            seed=derive_seed(spec.base_seed, trial, 2))
    cfg = Alg1Config(tau1=tol if tol > 0 else 1e-6, tau2=tol if tol > 0 else 1e-6,
                     permissible=perm, root=grid.root)
    return run_alg1(moments.subset(grid.leaves), cfg)


ROW_FIELDS = ("trial", "n_samples", "tolerance", "n_buses", "edge_difference", "exact",
              "impedance_error", "status", "seconds")


def _run_trial(spec: ExperimentSpec, trial: int) -> list[dict]:
    rows = []
    try:
        grid = build_grid(spec, trial)
        truth = observable_tree(grid) if spec.algorithm == ALG3 else grid
        model = _model(spec, grid)
        if spec.sample_counts:
            full = generate_samples(grid, model, max(spec.sample_counts), solver=spec.solver,
                                    seed=derive_seed(spec.base_seed, trial, 1))
            sources = [(n, empirical_moments(full.head(n))) for n in spec.sample_counts]
        else:
            sources = [(0, analytic_moments(grid, model))]
    except Exception as err:  # trial failures are recorded, not fatal
        return [dict(trial=trial, n_samples=n, tolerance=t, n_buses=-1, edge_difference=-1,
                     exact=0, impedance_error=math.nan, status=f"error: {err}", seconds=0.0)
                for n in (spec.sample_counts or [0]) for t in spec.tolerances]
    for n, m in sources:
        for tol in spec.tolerances:
            t0 = time.perf_counter()
            try:
                res = _estimate(spec, grid, m, tol, trial)
                diff = edge_difference(res, truth)
                exact = int(diff == 0 and res.complete)
                err = impedance_error(res, truth) if exact and spec.algorithm == ALG3 else math.nan
                status = res.diagnostics.get("status", "ok")
            except Exception as e:
                diff, exact, err, status = -1, 0, math.nan, f"error: {e}"
            rows.append(dict(trial=trial, n_samples=n, tolerance=tol, n_buses=len(grid),
                             edge_difference=diff, exact=exact, impedance_error=err,
                             status=status, seconds=time.perf_counter() - t0))
    return rows


def run_experiment(spec: ExperimentSpec) -> list[dict]:
    """Per (trial, sample count, tolerance) metric rows, sorted by key."""
    if spec.workers > 1:
        with ProcessPoolExecutor(spec.workers) as pool:
            chunks = list(pool.map(_run_trial, [spec] * spec.trials, range(spec.trials)))
    else:
        chunks = [_run_trial(spec, t) for t in range(spec.trials)]
    rows = [r for c in chunks for r in c]
    rows.sort(key=lambda r: (r["n_samples"], r["tolerance"], r["trial"]))
    return rows


def _mean_se(vals):
    vals = np.asarray([v for v in vals if not (isinstance(v, float) and math.isnan(v))], float)
    if vals.size == 0:
        return math.nan, math.nan
    se = float(vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else 0.0
    return float(vals.mean()), se


SUMMARY_FIELDS = ("n_samples", "tolerance", "trials", "accuracy", "accuracy_se",
                  "edge_difference", "edge_difference_se", "impedance_error",
                  "impedance_error_se", "failures")


def summarize(rows: list[dict]) -> list[dict]:
    """Mean and standard error per (sample count, tolerance)."""
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        groups.setdefault((r["n_samples"], r["tolerance"]), []).append(r)
    out = []
    for (n, tol), grp in sorted(groups.items()):
        ok = [r for r in grp if r["edge_difference"] >= 0]
        acc, acc_se = _mean_se([r["exact"] for r in grp])
        ed, ed_se = _mean_se([r["edge_difference"] for r in ok])
        ie, ie_se = _mean_se([r["impedance_error"] for r in grp if r["exact"]])
        out.append(dict(n_samples=n, tolerance=tol, trials=len(grp), accuracy=acc,
                        accuracy_se=acc_se, edge_difference=ed, edge_difference_se=ed_se,
                        impedance_error=ie, impedance_error_se=ie_se,
                        failures=len(grp) - len(ok)))
    return out


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def rows_to_csv(rows: list[dict], fields: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fields)
    for r in rows:
        w.writerow([_fmt(r[f]) for f in fields])
    return buf.getvalue()


def long_form(summary: list[dict]) -> list[dict]:
    """One ``(n_samples, tolerance, metric, mean, se)`` row per metric, for external plotting."""
    out = []
    for s in summary:
        for metric in ("accuracy", "edge_difference", "impedance_error"):
            out.append(dict(n_samples=s["n_samples"], tolerance=s["tolerance"], metric=metric,
                            mean=s[metric], se=s[f"{metric}_se"]))
    return out


LONG_FIELDS = ("n_samples", "tolerance", "metric", "mean", "se")


def without_timing(rows: list[dict]) -> list[dict]:
    return [{k: v for k, v in r.items() if k != "seconds"} for r in rows]


# ---------------------------------------------------------------------------
# sample complexity

class TargetUnreachable(RuntimeError):
    pass


def recovery_rate(spec: ExperimentSpec, n: int) -> float:
    s = ExperimentSpec(**{**spec.to_dict(), "sample_counts": [n]})
    rows = run_experiment(s)
    return float(np.mean([r["exact"] for r in rows]))


def min_samples(spec: ExperimentSpec, target: float = 0.9, n_start: int = 100,
                n_cap: int = 10 ** 7, rel_precision: float = 0.1,
                analytic: bool = False) -> tuple[int, list]:
    """Smallest sample count reaching ``target`` exact-recovery rate, by doubling then bisection.

    Trials reuse the same grids and sample streams at every ``n``, so the
    rate is close to monotone in ``n``.  Returns ``(n_star, probes)``.  With
    ``analytic`` the noiseless moments are checked instead and ``n_star`` is
    0 when they reach the target.
    """
    if analytic:
        rows = run_experiment(ExperimentSpec(**{**spec.to_dict(), "sample_counts": []}))
        rate = float(np.mean([r["exact"] for r in rows]))
        if rate < target:
            raise TargetUnreachable(f"analytic moments reach only {rate:.2f}")
        return 0, [(0, rate)]
    probes = []
    lo, hi = None, n_start
    while True:
        rate = recovery_rate(spec, hi)
        probes.append((hi, rate))
        if rate >= target:
            break
        lo = hi
        hi *= 2
        if hi > n_cap:
            raise TargetUnreachable(f"target {target} not reached with {lo} samples")
    if lo is None:
        return hi, probes
    while hi - lo > rel_precision * lo:
        mid = int(round(math.sqrt(lo * hi)))
        if mid in (lo, hi):
            break
        rate = recovery_rate(spec, mid)
        probes.append((mid, rate))
        if rate >= target:
            hi = mid
        else:
            lo = mid
    return hi, probes


def sample_complexity_sweep(sizes: Sequence[int], template: ExperimentSpec, target: float = 0.9,
                            n_start: int = 100, n_cap: int = 10 ** 7,
                            analytic: bool = False) -> dict:
    """``n*`` per grid size and the fitted log-log growth exponent."""
    if len(sizes) < 2:
        raise ValueError("need at least two sizes")
    table = []
    for size in sizes:
        grid = {**template.grid, "kind": "random", "n": int(size)}
        spec = ExperimentSpec(**{**template.to_dict(), "grid": grid})
        n_star, probes = min_samples(spec, target, n_start, n_cap, analytic=analytic)
        table.append(dict(n_buses=int(size), n_star=n_star, probes=probes))
    if analytic:
        return {"table": table, "slope": 0.0, "exact": True}
    xs = np.log([r["n_buses"] for r in table])
    ys = np.log([max(r["n_star"], 1) for r in table])
    slope = float(np.polyfit(xs, ys, 1)[0])
    return {"table": table, "slope": slope}
