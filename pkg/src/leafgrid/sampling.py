"""Injection models, sample generation and the sample CSV formats.

Random streams come from numpy's Philox counter-based generator keyed by a
:class:`numpy.random.SeedSequence`; ``derive_seed(base, i)`` gives the
per-trial entropy so every trial can be regenerated in isolation.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .grid import RadialGrid, sorted_ids
from .powerflow import acpf_solve, lcpf_solve

GAUSSIAN = "gaussian"
UNIFORM = "uniform"
REPLAY = "replay"


class MaskError(KeyError):
    """Attempt to read a bus that is not in the observation mask."""


class ReplayError(ValueError):
    pass


class AssumptionWarning(UserWarning):
    """Injection statistics violate the non-degeneracy condition at some bus."""


def rng_for(seed) -> np.random.Generator:
    if isinstance(seed, np.random.SeedSequence):
        ss = seed
    else:
        ss = np.random.SeedSequence(seed)
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(base: int, *keys: int) -> int:
    """Stable 63-bit seed for ``(base, *keys)``."""
    ss = np.random.SeedSequence([int(base), *map(int, keys)])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


@dataclass
class InjectionModel:
    """Zero-mean per-bus injection statistics over ``buses``.

    ``corr`` mixes in a common factor so that the joint covariance of
    ``(p, q)`` becomes ``(1 - c) * base + c * s s^T`` where ``s`` holds the
    standard deviations; with unit variances this is ``(1-c) I + c 1``.
    """

    buses: tuple[str, ...]
    var_p: np.ndarray
    var_q: np.ndarray
    cov_pq: np.ndarray
    kind: str = GAUSSIAN
    corr: float = 0.0
    replay_p: dict[str, np.ndarray] | None = field(default=None, repr=False)
    power_factor: float = 0.95
    q_jitter: float = 0.0
    d_min: float = 0.0

    def __post_init__(self):
        self.buses = tuple(self.buses)
        n = len(self.buses)
        self.var_p = np.broadcast_to(np.asarray(self.var_p, float), (n,)).copy()
        self.var_q = np.broadcast_to(np.asarray(self.var_q, float), (n,)).copy()
        self.cov_pq = np.broadcast_to(np.asarray(self.cov_pq, float), (n,)).copy()
        if self.kind not in (GAUSSIAN, UNIFORM, REPLAY):
            raise ValueError(f"unknown injection kind {self.kind!r}")
        if not 0.0 <= self.corr < 1.0:
            raise ValueError("corr must lie in [0, 1)")
        if np.any(self.var_p < 0) or np.any(self.var_q < 0):
            raise ValueError("injection variances must be nonnegative")
        det = self.var_p * self.var_q - self.cov_pq ** 2
        if np.any(det < -1e-15 * np.maximum(self.var_p * self.var_q, 1e-300)):
            raise ValueError("per-bus injection moment matrix is not PSD")
        low = [b for b, d in zip(self.buses, det) if d <= self.d_min]
        if low:
            warnings.warn(f"injection moments nearly degenerate at {', '.join(low)}",
                          AssumptionWarning, stacklevel=2)

    @classmethod
    def isotropic(cls, buses: Sequence[str], std: float = 1.0, corr: float = 0.0,
                  kind: str = GAUSSIAN) -> "InjectionModel":
        n = len(buses)
        return cls(tuple(buses), np.full(n, std ** 2), np.full(n, std ** 2), np.zeros(n),
                   kind=kind, corr=corr)

    def covariances(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Full (Σpp, Σqq, Σpq) implied by the model (replay leaves excluded)."""
        s_p = np.sqrt(self.var_p)
        s_q = np.sqrt(self.var_q)
        c = self.corr
        s_pp = (1 - c) * np.diag(self.var_p) + c * np.outer(s_p, s_p)
        s_qq = (1 - c) * np.diag(self.var_q) + c * np.outer(s_q, s_q)
        s_pq = (1 - c) * np.diag(self.cov_pq) + c * np.outer(s_p, s_q)
        return s_pp, s_qq, s_pq


def _unit_noise(rng, kind, shape):
    if kind == UNIFORM:
        return rng.uniform(-math.sqrt(3.0), math.sqrt(3.0), size=shape)
    return rng.standard_normal(shape)


def draw_injections(model: InjectionModel, n: int, seed) -> tuple[np.ndarray, np.ndarray]:
    """``n`` rows of (P, Q) over ``model.buses``; deterministic in ``seed``."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    rng = rng_for(seed)
    m = len(model.buses)
    base_kind = UNIFORM if model.kind == UNIFORM else GAUSSIAN
    z1 = _unit_noise(rng, base_kind, (n, m))
    z2 = _unit_noise(rng, base_kind, (n, m))
    # per-bus 2x2 Cholesky of [[vp, c], [c, vq]]
    l11 = np.sqrt(model.var_p)
    with np.errstate(divide="ignore", invalid="ignore"):
        l21 = np.where(l11 > 0, model.cov_pq / np.where(l11 > 0, l11, 1.0), 0.0)
    l22 = np.sqrt(np.maximum(model.var_q - l21 ** 2, 0.0))
    p = z1 * l11
    q = z1 * l21 + z2 * l22
    if model.corr > 0:
        common = _unit_noise(rng, base_kind, (n, 1))
        keep = math.sqrt(1.0 - model.corr)
        mix = math.sqrt(model.corr)
        p = keep * p + mix * common * np.sqrt(model.var_p)
        q = keep * q + mix * common * np.sqrt(model.var_q)
    if model.kind == REPLAY:
        if model.replay_p is None:
            raise ReplayError("replay model has no load data")
        tan_phi = _tan_phi(model.power_factor)
        for bus, series in model.replay_p.items():
            if len(series) < n:
                raise ReplayError(f"replay exhausted: {len(series)} rows available, {n} requested")
            j = model.buses.index(bus)
            p[:, j] = series[:n]
            q[:, j] = series[:n] * tan_phi
        if model.q_jitter > 0:
            # drawn after the Gaussian block so the non-leaf stream is unchanged
            jit = rng.standard_normal((n, len(model.replay_p)))
            for k, (bus, series) in enumerate(model.replay_p.items()):
                j = model.buses.index(bus)
                q[:, j] += model.q_jitter * float(np.std(series)) * jit[:, k]
    return p, q


def _tan_phi(power_factor: float) -> float:
    if not 0.0 < power_factor <= 1.0:
        raise ValueError("power factor must lie in (0, 1]")
    return math.tan(math.acos(power_factor))


# ---------------------------------------------------------------------------
# real-load replay

def read_load_csv(src) -> dict[str, np.ndarray]:
    """Parse a wide real-load CSV: header of bus ids, one row per timestamp."""
    with open(src, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ReplayError(f"{src}: empty file")
    header = [h.strip() for h in rows[0]]
    data = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ReplayError(f"{src}:{lineno}: expected {len(header)} cells, got {len(row)}")
        try:
            data.append([float(cell) for cell in row])
        except ValueError as err:
            raise ReplayError(f"{src}:{lineno}: non-numeric cell ({err})") from None
    arr = np.asarray(data, dtype=float).reshape(-1, len(header))
    return {h: arr[:, j].copy() for j, h in enumerate(header)}


def replay_real_loads(src, leaves: Sequence[str], power_factor: float = 0.95,
                      n: int | None = None, q_jitter: float = 0.0,
                      seed=None) -> tuple[np.ndarray, np.ndarray]:
    """Mean-centred active loads for ``leaves`` and reactive power at fixed power factor.

    With ``q_jitter == 0`` the reactive series is proportional to the active
    one, so every leaf has a singular injection moment matrix; a warning is
    emitted.  ``q_jitter`` adds independent Gaussian reactive noise with
    that fraction of each leaf's active-power standard deviation.
    """
    table = read_load_csv(src) if not isinstance(src, dict) else src
    missing = [b for b in leaves if b not in table]
    if missing:
        raise ReplayError(f"load file has no column for leaf {', '.join(missing)}")
    rows = len(next(iter(table.values()))) if table else 0
    n = rows if n is None else n
    if rows < n:
        raise ReplayError(f"replay exhausted: {rows} rows available, {n} requested")
    p = np.column_stack([table[b][:n] for b in leaves]) if leaves else np.zeros((n, 0))
    if n:
        p = p - p.mean(axis=0)
    q = p * _tan_phi(power_factor)
    if q_jitter > 0:
        noise = rng_for(seed).standard_normal(p.shape)
        q = q + q_jitter * p.std(axis=0) * noise
    else:
        what = "q == 0" if power_factor == 1.0 else "q proportional to p"
        warnings.warn(f"constant power factor gives {what}: leaf injection moments are degenerate",
                      AssumptionWarning, stacklevel=2)
    return p, q


def replay_model(grid: RadialGrid, src, power_factor: float = 0.95, std: float = 1.0,
                 q_jitter: float = 0.0) -> InjectionModel:
    """Leaves replay ``src``; every other bus draws independent Gaussian injections of ``std``."""
    leaves = grid.leaves
    table = read_load_csv(src) if not isinstance(src, dict) else src
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", AssumptionWarning)
        p, _ = replay_real_loads(table, leaves, power_factor)
    series = {b: p[:, j] for j, b in enumerate(leaves)}
    buses = grid.non_root
    tan_phi = _tan_phi(power_factor)
    var_p = np.full(len(buses), std ** 2)
    var_q = np.full(len(buses), std ** 2)
    cov = np.zeros(len(buses))
    for b, s in series.items():
        j = buses.index(b)
        var_p[j] = float(np.mean(s ** 2)) if len(s) else 0.0
        var_q[j] = var_p[j] * (tan_phi ** 2 + q_jitter ** 2)
        cov[j] = var_p[j] * tan_phi
    if q_jitter == 0:
        warnings.warn("constant power factor replay: leaf injection moments are degenerate",
                      AssumptionWarning, stacklevel=2)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", AssumptionWarning)
        return InjectionModel(tuple(buses), var_p, var_q, cov, kind=REPLAY,
                              replay_p=series, power_factor=power_factor, q_jitter=q_jitter)


# ---------------------------------------------------------------------------
# sample sets

FIELDS = ("v", "theta", "p", "q")


@dataclass
class SampleSet:
    """Per-sample node states over ``buses`` with an observation mask.

    Estimation code reads through :meth:`observed` / :meth:`column`, which
    refuse hidden buses; :attr:`data` keeps the full state for evaluation.
    """

    buses: tuple[str, ...]
    data: dict[str, np.ndarray]
    mask: frozenset[str]

    def __post_init__(self):
        self.buses = tuple(self.buses)
        self.mask = frozenset(self.mask)
        unknown = self.mask - set(self.buses)
        if unknown:
            raise MaskError(f"mask names unknown buses {sorted_ids(unknown)}")
        for f in FIELDS:
            arr = np.asarray(self.data[f], dtype=float)
            if arr.ndim != 2 or arr.shape[1] != len(self.buses):
                raise ValueError(f"field {f} must be (n, {len(self.buses)}), got {arr.shape}")
            self.data[f] = arr

    @property
    def n(self) -> int:
        return self.data["v"].shape[0]

    @property
    def observed_buses(self) -> list[str]:
        return [b for b in self.buses if b in self.mask]

    def column(self, fld: str, bus: str) -> np.ndarray:
        if bus not in self.mask:
            raise MaskError(f"bus {bus} is not observed")
        return self.data[fld][:, self.buses.index(bus)]

    def observed(self, fld: str, buses: Iterable[str] | None = None) -> np.ndarray:
        buses = self.observed_buses if buses is None else list(buses)
        hidden = [b for b in buses if b not in self.mask]
        if hidden:
            raise MaskError(f"buses {hidden} are not observed")
        idx = [self.buses.index(b) for b in buses]
        return self.data[fld][:, idx]

    def head(self, n: int) -> "SampleSet":
        return SampleSet(self.buses, {f: a[:n] for f, a in self.data.items()}, self.mask)

    def with_mask(self, mask: Iterable[str]) -> "SampleSet":
        return SampleSet(self.buses, dict(self.data), frozenset(mask))


def generate_samples(grid: RadialGrid, model: InjectionModel, n: int,
                     solver: str = "lcpf", seed=0, mask: Iterable[str] | None = None,
                     **solver_kw) -> SampleSet:
    """Draw injections and push them through ``solver`` ("lcpf" or "acpf")."""
    buses = tuple(grid.non_root)
    if tuple(model.buses) != buses:
        raise ValueError("injection model buses must match grid.non_root")
    mask = frozenset(set(grid.observed) - {grid.root} if mask is None else mask)
    if n == 0:
        empty = np.zeros((0, len(buses)))
        return SampleSet(buses, {f: empty.copy() for f in FIELDS}, mask)
    p, q = draw_injections(model, n, seed)
    if solver == "lcpf":
        st = lcpf_solve(grid, p, q)
    elif solver == "acpf":
        st = acpf_solve(grid, p, q, **solver_kw)
    else:
        raise ValueError(f"unknown solver {solver!r}")
    return SampleSet(buses, {"v": st.v, "theta": st.theta, "p": p, "q": q}, mask)


def save_samples_csv(samples: SampleSet, dest, observed_only: bool = True) -> None:
    """Long-form CSV ``t,bus,v,theta,p,q``."""
    buses = samples.observed_buses if observed_only else list(samples.buses)
    cols = [samples.buses.index(b) for b in buses]
    with open(dest, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "bus", *FIELDS])
        arrays = [samples.data[f] for f in FIELDS]
        for t in range(samples.n):
            for b, j in zip(buses, cols):
                w.writerow([t, b, *(repr(float(a[t, j])) for a in arrays)])


def load_samples_csv(src, mask: Iterable[str] | None = None) -> SampleSet:
    """Read a long-form sample CSV; the mask defaults to every bus present."""
    values: dict[str, dict[int, tuple[float, ...]]] = {}
    with open(src, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"t", "bus", *FIELDS}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise ValueError(f"{src}: header must contain {sorted(need)}")
        for row in reader:
            values.setdefault(row["bus"], {})[int(row["t"])] = tuple(float(row[f]) for f in FIELDS)
    buses = tuple(sorted_ids(values))
    if not buses:
        empty = np.zeros((0, 0))
        return SampleSet((), {f: empty for f in FIELDS}, frozenset())
    times = sorted(next(iter(values.values())))
    for b in buses:
        if sorted(values[b]) != times:
            raise ValueError(f"{src}: bus {b} has a different set of timestamps")
    arr = np.array([[values[b][t] for b in buses] for t in times])
    data = {f: arr[:, :, k] for k, f in enumerate(FIELDS)}
    return SampleSet(buses, data, frozenset(buses if mask is None else mask))
