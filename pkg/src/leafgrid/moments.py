"""Second moments at observed buses and the impedance distances built from them."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .grid import RadialGrid
from .powerflow import joint_covariances
from .sampling import InjectionModel, MaskError, SampleSet

D_MIN = 1e-12


class IllConditionedError(ValueError):
    """Injection moment matrix at ``node`` is (nearly) singular."""

    def __init__(self, node, det):
        super().__init__(f"ill-conditioned injection moments at {node} (det={det:.3e})")
        self.node = node
        self.det = det


@dataclass(frozen=True)
class MomentSet:
    """Second moments over ``nodes``.

    ``vp[i, j]`` is E[v_i p_j] (likewise ``vq``, ``vv``); ``pp``, ``qq`` and
    ``pq`` are per-node E[p^2], E[q^2], E[p q].
    """

    nodes: tuple[str, ...]
    vv: np.ndarray = field(repr=False)
    vp: np.ndarray = field(repr=False)
    vq: np.ndarray = field(repr=False)
    pp: np.ndarray = field(repr=False)
    qq: np.ndarray = field(repr=False)
    pq: np.ndarray = field(repr=False)
    provenance: str = "analytic"
    n_samples: int | None = None

    def pos(self, node: str) -> int:
        try:
            return self.nodes.index(node)
        except ValueError:
            raise MaskError(f"node {node} is not observed") from None

    def subset(self, nodes: Sequence[str]) -> "MomentSet":
        idx = [self.pos(b) for b in nodes]
        ix = np.ix_(idx, idx)
        return MomentSet(tuple(nodes), self.vv[ix], self.vp[ix], self.vq[ix],
                         self.pp[idx], self.qq[idx], self.pq[idx],
                         self.provenance, self.n_samples)

    def injection_stats(self, node: str) -> tuple[float, float, float]:
        i = self.pos(node)
        return float(self.pp[i]), float(self.qq[i]), float(self.pq[i])


def analytic_moments(grid: RadialGrid, model: InjectionModel,
                     nodes: Sequence[str] | None = None) -> MomentSet:
    """Exact moments from the linear model and injection covariances."""
    index = grid.non_root
    if tuple(model.buses) != tuple(index):
        raise ValueError("injection model buses must match grid.non_root")
    cov = joint_covariances(grid, *model.covariances())
    nodes = [b for b in index if b in grid.observed] if nodes is None else list(nodes)
    idx = [index.index(b) for b in nodes]
    ix = np.ix_(idx, idx)
    return MomentSet(tuple(nodes), cov["vv"][ix], cov["vp"][ix], cov["vq"][ix],
                     np.diag(cov["pp"])[idx].copy(), np.diag(cov["qq"])[idx].copy(),
                     np.diag(cov["pq"])[idx].copy(), "analytic", None)


def empirical_moments(samples: SampleSet, nodes: Sequence[str] | None = None) -> MomentSet:
    """Plain 1/n averages of products; no mean is removed."""
    n = samples.n
    if n < 2:
        raise ValueError(f"need at least 2 samples, got {n}")
    nodes = samples.observed_buses if nodes is None else list(nodes)
    v = samples.observed("v", nodes)
    p = samples.observed("p", nodes)
    q = samples.observed("q", nodes)
    return MomentSet(tuple(nodes), v.T @ v / n, v.T @ p / n, v.T @ q / n,
                     np.mean(p * p, axis=0), np.mean(q * q, axis=0), np.mean(p * q, axis=0),
                     "empirical", n)


def phi(m: MomentSet, a: str, b: str) -> float:
    """Variance of the voltage-magnitude difference between ``a`` and ``b``."""
    i, j = m.pos(a), m.pos(b)
    return float(m.vv[i, i] + m.vv[j, j] - 2.0 * m.vv[i, j])


def phi_matrix(m: MomentSet) -> np.ndarray:
    d = np.diag(m.vv)
    out = d[:, None] + d[None, :] - 2.0 * m.vv
    np.fill_diagonal(out, 0.0)
    return out


def _dets(m: MomentSet) -> np.ndarray:
    return m.pp * m.qq - m.pq ** 2


def _guard(m: MomentSet, cols, d_min):
    det = _dets(m)
    for j in cols:
        if abs(det[j]) < d_min:
            raise IllConditionedError(m.nodes[j], float(det[j]))
    return det


def estimate_h_inverse_entry(m: MomentSet, a: str, b: str,
                             d_min: float = D_MIN) -> tuple[float, float]:
    """Solve the 2x2 system at ``b`` for the (a, b) entries of both Laplacian inverses."""
    i, j = m.pos(a), m.pos(b)
    _guard(m, [j], d_min)
    lhs = np.array([[m.pp[j], m.pq[j]], [m.pq[j], m.qq[j]]])
    rhs = np.array([m.vp[i, j], m.vq[i, j]])
    hr, hx = np.linalg.solve(lhs, rhs)
    return float(hr), float(hx)


def h_inverse_estimates(m: MomentSet, d_min: float = D_MIN) -> tuple[np.ndarray, np.ndarray]:
    """All directed estimates at once; column ``j`` uses the injection moments at node ``j``."""
    det = _guard(m, range(len(m.nodes)), d_min)
    hr = (m.qq * m.vp - m.pq * m.vq) / det
    hx = (m.pp * m.vq - m.pq * m.vp) / det
    return hr, hx


@dataclass(frozen=True)
class DistanceMatrix:
    nodes: tuple[str, ...]
    dr: np.ndarray = field(repr=False)
    dx: np.ndarray = field(repr=False)

    def pos(self, node: str) -> int:
        return self.nodes.index(node)

    def get(self, a: str, b: str, kind: str = "resistance") -> float:
        mat = self.dr if kind == "resistance" else self.dx
        return float(mat[self.pos(a), self.pos(b)])

    def to_csv(self, dest) -> None:
        with open(dest, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["a", "b", "d_r", "d_x"])
            for i, a in enumerate(self.nodes):
                for j, b in enumerate(self.nodes):
                    if i < j:
                        w.writerow([a, b, repr(float(self.dr[i, j])), repr(float(self.dx[i, j]))])


def _to_distance(h: np.ndarray) -> np.ndarray:
    d = np.diag(h)
    out = d[:, None] + d[None, :] - (h + h.T)
    np.fill_diagonal(out, 0.0)
    return out


def distance_matrix(m: MomentSet, nodes: Sequence[str] | None = None,
                    d_min: float = D_MIN) -> DistanceMatrix:
    """Resistance and reactance distances, averaging the two directed estimates of each pair."""
    if nodes is not None:
        m = m.subset(nodes)
    hr, hx = h_inverse_estimates(m, d_min)
    return DistanceMatrix(m.nodes, _to_distance(hr), _to_distance(hx))
