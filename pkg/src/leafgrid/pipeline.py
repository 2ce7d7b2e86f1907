"""End-to-end estimation from observed-bus data.

Moments give Laplacian-inverse entries, those give resistance and
reactance distances, and recursive grouping turns the distances into a
tree with per-line impedances.  Also here: grouping observed buses by
substation and reconstructing hidden-bus states once a grid is known.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import RESISTANCE, REACTANCE, RadialGrid, laplacian_inverse, natural_key, sorted_ids
from .moments import D_MIN, MomentSet, distance_matrix, empirical_moments
from .result import EstimationResult
from .rg import RGConfig, run_rg
from .sampling import SampleSet


def _as_moments(source) -> MomentSet:
    if isinstance(source, MomentSet):
        return source
    if isinstance(source, SampleSet):
        return empirical_moments(source)
    raise TypeError(f"expected MomentSet or SampleSet, got {type(source).__name__}")


def run_alg3(source, config: RGConfig | None = None, d_min: float = D_MIN,
             root: str | None = None) -> EstimationResult:
    """Recover topology and line impedances from observed-bus moments or samples.

    The result is rooted at ``root`` only when that bus is among the
    observed nodes; otherwise the tree is left unrooted.
    """
    config = config or RGConfig()
    m = _as_moments(source)
    dm = distance_matrix(m, d_min=d_min)
    res = run_rg([str(b) for b in dm.nodes], dm.dr, dm.dx, config)
    if root is not None and root in res.nodes:
        res.root = root
    res.diagnostics.update(provenance=m.provenance, n_samples=m.n_samples, d_min=d_min,
                           epsilon=config.epsilon, tau=config.tau)
    return res


def voltage_correlation(source) -> tuple[list[str], np.ndarray]:
    """Absolute correlation of voltage deviations between observed buses."""
    if isinstance(source, SampleSet):
        if source.n < 2:
            raise ValueError("need at least 2 samples")
        nodes = source.observed_buses
        v = source.observed("v", nodes)
        v = v - v.mean(axis=0)
        cov = v.T @ v / source.n
    else:
        m = _as_moments(source)
        nodes = list(m.nodes)
        cov = m.vv
    sd = np.sqrt(np.diag(cov))
    with np.errstate(divide="ignore", invalid="ignore"):
        corr = np.abs(cov) / np.outer(sd, sd)
    corr = np.nan_to_num(corr)
    np.fill_diagonal(corr, 1.0)
    return nodes, corr


def split_by_substation(source, threshold: float = 0.1) -> list[list[str]]:
    """Group observed buses whose voltages are linked by |corr| above ``threshold``.

    Buses fed by different substations have uncorrelated voltages, so the
    connected components of the thresholded correlation graph separate
    them.  Singleton groups are kept.
    """
    nodes, corr = voltage_correlation(source)
    link = corr > threshold
    seen = np.zeros(len(nodes), dtype=bool)
    groups = []
    for s in range(len(nodes)):
        if seen[s]:
            continue
        comp = [s]
        seen[s] = True
        i = 0
        while i < len(comp):
            for j in np.flatnonzero(link[comp[i]] & ~seen):
                seen[j] = True
                comp.append(int(j))
            i += 1
        groups.append(sorted_ids(nodes[k] for k in comp))
    groups.sort(key=lambda g: natural_key(g[0]))
    return groups


def run_alg3_grouped(source, config: RGConfig | None = None, threshold: float = 0.1,
                     d_min: float = D_MIN) -> list[EstimationResult]:
    """Split by substation, then estimate each group separately."""
    m = _as_moments(source)
    out = []
    for grp in split_by_substation(source if isinstance(source, SampleSet) else m, threshold):
        out.append(run_alg3(m.subset(grp), config, d_min))
    return out


# ---------------------------------------------------------------------------
# hidden-state reconstruction

class UnderdeterminedError(ValueError):
    def __init__(self, rank: int, unknowns: int, equations: int, buses=()):
        msg = (f"hidden-state system is underdetermined: rank {rank} < {unknowns} "
               f"unknowns ({equations} equations)")
        if buses:
            msg += f"; hidden buses without an observed child: {', '.join(buses)}"
        super().__init__(msg)
        self.rank = rank
        self.unknowns = unknowns
        self.equations = equations
        self.buses = list(buses)


def unidentifiable_hidden(grid: RadialGrid, observed) -> list[str]:
    """Hidden buses none of whose children is observed.

    Observed voltages see a hidden injection only through the hidden
    ancestors they share with it, so a hidden bus whose children are all
    hidden is indistinguishable from them.  Hidden states are recoverable
    exactly when this list is empty.
    """
    observed = set(observed)
    return [b for b in grid.non_root if b not in observed
            and not any(c in observed for c in grid.children(b))]


@dataclass
class HiddenStates:
    buses: list[str]
    v: np.ndarray
    theta: np.ndarray
    p: np.ndarray
    q: np.ndarray
    rank: int
    equations: int
    residual: np.ndarray = field(repr=False)

    @property
    def unknowns(self) -> int:
        return 2 * len(self.buses)

    def injection_moments(self) -> dict[str, tuple[float, float, float]]:
        """Per hidden bus ``(E[p^2], E[q^2], E[pq])`` of the recovered series."""
        n = max(self.p.shape[0], 1)
        pp = np.sum(self.p ** 2, axis=0) / n
        qq = np.sum(self.q ** 2, axis=0) / n
        pq = np.sum(self.p * self.q, axis=0) / n
        return {b: (float(pp[j]), float(qq[j]), float(pq[j])) for j, b in enumerate(self.buses)}


def recover_hidden_states(grid: RadialGrid, samples: SampleSet, use_phase: bool = True,
                          rcond: float = 1e-10) -> HiddenStates:
    """Solve the linear power-flow equations for hidden injections, then hidden voltages.

    Known: ``v``, ``p``, ``q`` (and ``theta`` when ``use_phase``) at the
    observed buses.  Unknown: ``p``, ``q`` at hidden buses.  Each sample is
    solved in the least-squares sense; ``residual`` is the per-sample max
    equation mismatch, which is zero up to rounding on linear-model data.
    Phase angles are needed: voltage magnitudes alone give one equation
    per hidden bus with observed children, against two unknowns.
    """
    index = grid.non_root
    hr = laplacian_inverse(grid, RESISTANCE).matrix
    hx = laplacian_inverse(grid, REACTANCE).matrix
    obs = [b for b in index if b in samples.mask]
    hid = [b for b in index if b not in samples.mask]
    io = [index.index(b) for b in obs]
    ih = [index.index(b) for b in hid]
    n = samples.n

    v_o = samples.observed("v", obs)
    p_o = samples.observed("p", obs)
    q_o = samples.observed("q", obs)
    # v_o = Hr[o,o] p_o + Hx[o,o] q_o + [Hr[o,h] Hx[o,h]] [p_h; q_h]
    rows = [np.hstack([hr[np.ix_(io, ih)], hx[np.ix_(io, ih)]])]
    rhs = [v_o - p_o @ hr[np.ix_(io, io)].T - q_o @ hx[np.ix_(io, io)].T]
    if use_phase:
        th_o = samples.observed("theta", obs)
        # theta_o = Hx p - Hr q
        rows.append(np.hstack([hx[np.ix_(io, ih)], -hr[np.ix_(io, ih)]]))
        rhs.append(th_o - p_o @ hx[np.ix_(io, io)].T + q_o @ hr[np.ix_(io, io)].T)
    a = np.vstack(rows)
    b = np.hstack(rhs)
    m = len(hid)
    if m == 0:
        empty = np.zeros((n, 0))
        return HiddenStates([], empty, empty.copy(), empty.copy(), empty.copy(), 0,
                            a.shape[0], np.zeros(n))
    rank = int(np.linalg.matrix_rank(a, tol=rcond * max(1.0, np.abs(a).max())))
    if rank < 2 * m:
        raise UnderdeterminedError(rank, 2 * m, a.shape[0],
                                   unidentifiable_hidden(grid, samples.mask))
    sol, *_ = np.linalg.lstsq(a, b.T, rcond=None)
    sol = sol.T
    p_h, q_h = sol[:, :m], sol[:, m:]
    residual = np.max(np.abs(sol @ a.T - b), axis=1) if n else np.zeros(0)

    p_all = np.zeros((n, len(index)))
    q_all = np.zeros((n, len(index)))
    p_all[:, io], p_all[:, ih] = p_o, p_h
    q_all[:, io], q_all[:, ih] = q_o, q_h
    v_h = p_all @ hr[:, ih] + q_all @ hx[:, ih]
    th_h = p_all @ hx[:, ih] - q_all @ hr[:, ih]
    return HiddenStates(hid, v_h, th_h, p_h, q_h, rank, a.shape[0], residual)
