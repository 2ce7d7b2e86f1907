"""Forward power-flow models on a radial grid.

All vectors are indexed by ``grid.non_root`` (sorted non-substation buses)
and hold deviations from the operating point: ``v`` voltage magnitude
(p.u.), ``theta`` phase (rad), ``p``/``q`` net injections (p.u., positive
into the grid).  Arrays may carry a leading sample axis.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import REACTANCE, RESISTANCE, RadialGrid, laplacian_inverse


class PowerFlowError(RuntimeError):
    """Raised when the AC solver fails to converge or hits a singular Jacobian."""

    def __init__(self, message, mismatch=None, sample=None):
        super().__init__(message)
        self.mismatch = mismatch
        self.sample = sample


@dataclass(frozen=True)
class NodeState:
    index: tuple[str, ...]
    v: np.ndarray
    theta: np.ndarray
    p: np.ndarray
    q: np.ndarray
    iterations: int = 0
    mismatch: float = 0.0


def _sensitivities(grid: RadialGrid) -> tuple[tuple[str, ...], np.ndarray, np.ndarray]:
    hr = laplacian_inverse(grid, RESISTANCE)
    hx = laplacian_inverse(grid, REACTANCE)
    return hr.index, hr.matrix, hx.matrix


def _as_injections(index, p, q):
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape or p.shape[-1] != len(index):
        raise ValueError(f"injections must have trailing size {len(index)}; "
                         f"got p{p.shape}, q{q.shape}")
    return p, q


def lcpf_solve(grid: RadialGrid, p, q) -> NodeState:
    """Linear coupled power flow: ``v = Hr p + Hx q``, ``theta = Hx p - Hr q``."""
    index, hr, hx = _sensitivities(grid)
    p, q = _as_injections(index, p, q)
    # H matrices are symmetric, so right-multiplication handles sample rows
    v = p @ hr + q @ hx
    theta = p @ hx - q @ hr
    return NodeState(index, v, theta, p, q)


def root_injection(p, q) -> tuple[np.ndarray, np.ndarray]:
    """Substation injection balancing a lossless network."""
    return -np.sum(p, axis=-1), -np.sum(q, axis=-1)


def _as_cov(mat, n, name, symmetric=True):
    mat = np.asarray(mat, dtype=float)
    if mat.ndim == 1:
        mat = np.diag(mat)
    if mat.shape != (n, n):
        raise ValueError(f"{name} must be {n}x{n} or length-{n} diagonal, got {mat.shape}")
    if symmetric and not np.allclose(mat, mat.T, rtol=1e-12, atol=1e-15):
        raise ValueError(f"{name} is not symmetric")
    return mat


def analytic_voltage_covariance(grid: RadialGrid, s_pp, s_qq, s_pq) -> np.ndarray:
    """E[v v^T] implied by injection covariances under the linear model.

    ``s_pq`` is E[p q^T] and need not be symmetric.  1-D arguments are read
    as diagonals.
    """
    index, hr, hx = _sensitivities(grid)
    n = len(index)
    s_pp = _as_cov(s_pp, n, "s_pp")
    s_qq = _as_cov(s_qq, n, "s_qq")
    s_pq = _as_cov(s_pq, n, "s_pq", symmetric=False)
    cov = hr @ s_pp @ hr + hx @ s_qq @ hx + hr @ s_pq @ hx + hx @ s_pq.T @ hr
    return 0.5 * (cov + cov.T)


def joint_covariances(grid: RadialGrid, s_pp, s_qq, s_pq) -> dict[str, np.ndarray]:
    """Second moments between voltages and injections, all over ``grid.non_root``."""
    index, hr, hx = _sensitivities(grid)
    n = len(index)
    s_pp = _as_cov(s_pp, n, "s_pp")
    s_qq = _as_cov(s_qq, n, "s_qq")
    s_pq = _as_cov(s_pq, n, "s_pq", symmetric=False)
    return {
        "vv": analytic_voltage_covariance(grid, s_pp, s_qq, s_pq),
        "vp": hr @ s_pp + hx @ s_pq.T,
        "vq": hr @ s_pq + hx @ s_qq,
        "pp": s_pp,
        "qq": s_qq,
        "pq": s_pq,
    }


# ---------------------------------------------------------------------------
# AC power flow

def admittance_matrix(grid: RadialGrid) -> tuple[list[str], np.ndarray]:
    """Bus admittance matrix over ``[root] + grid.non_root``."""
    order = [grid.root] + grid.non_root
    pos = {b: i for i, b in enumerate(order)}
    ybus = np.zeros((len(order), len(order)), dtype=complex)
    for ln in grid.lines:
        y = 1.0 / complex(ln.r, ln.x)
        i, j = pos[ln.a], pos[ln.b]
        ybus[i, i] += y
        ybus[j, j] += y
        ybus[i, j] -= y
        ybus[j, i] -= y
    return order, ybus


def ac_injections(ybus: np.ndarray, vm: np.ndarray, va: np.ndarray) -> np.ndarray:
    """Complex injections ``V * conj(Y V)`` for batched magnitudes/angles."""
    volt = vm * np.exp(1j * va)
    return volt * np.conj(volt @ ybus.T)


def _newton_batch(ybus, s_target, tol, max_iter):
    """Polar Newton-Raphson with bus 0 as slack at 1.0 p.u., 0 rad.

    ``s_target`` has shape (batch, n_bus - 1).  Returns magnitudes, angles
    (including the slack column), iteration count and final mismatch norms.
    """
    batch, m = s_target.shape
    n = m + 1
    vm = np.ones((batch, n))
    va = np.zeros((batch, n))
    y_nn = ybus
    iters = 0
    while True:
        iters += 1
        s_calc = ac_injections(y_nn, vm, va)[:, 1:]
        mis = s_calc - s_target
        f = np.concatenate([mis.real, mis.imag], axis=1)
        norm = np.max(np.abs(f), axis=1)
        if np.all(norm <= tol):
            return vm, va, iters, norm
        if iters > max_iter:
            return vm, va, iters, norm
        volt = vm * np.exp(1j * va)
        cur = volt @ y_nn.T
        # dS/dVa = j diag(V) conj(diag(I) - Y diag(V))
        # dS/dVm = diag(V) conj(Y diag(V/|V|)) + conj(diag(I)) diag(V/|V|)
        vnorm = volt / vm
        ydv = y_nn[None, :, :] * volt[:, None, :]
        ds_dva = 1j * volt[:, :, None] * np.conj(-ydv)
        idx = np.arange(n)
        ds_dva[:, idx, idx] += 1j * volt * np.conj(cur)
        ds_dvm = volt[:, :, None] * np.conj(y_nn[None, :, :] * vnorm[:, None, :])
        ds_dvm[:, idx, idx] += np.conj(cur) * vnorm
        sub_a = ds_dva[:, 1:, 1:]
        sub_m = ds_dvm[:, 1:, 1:]
        jac = np.block([[sub_a.real, sub_m.real], [sub_a.imag, sub_m.imag]])
        try:
            step = np.linalg.solve(jac, -f[..., None])[..., 0]
        except np.linalg.LinAlgError as err:
            raise PowerFlowError("singular Jacobian", mismatch=float(norm.max())) from err
        va[:, 1:] += step[:, :m]
        vm[:, 1:] += step[:, m:]


def acpf_solve(grid: RadialGrid, p, q, tol: float = 1e-8, max_iter: int = 50,
               chunk: int = 1024) -> NodeState:
    """Full AC power flow from a flat start with the substation as slack.

    Returns deviations from the zero-injection solution (which is the flat
    profile, as no base load is applied).  Accepts a single injection vector
    or a (samples, buses) batch.
    """
    order, ybus = admittance_matrix(grid)
    index = tuple(order[1:])
    p, q = _as_injections(index, p, q)
    single = p.ndim == 1
    p2 = np.atleast_2d(p)
    q2 = np.atleast_2d(q)
    v_out = np.empty_like(p2)
    th_out = np.empty_like(p2)
    worst = 0.0
    max_iters = 0
    for start in range(0, p2.shape[0], chunk):
        sl = slice(start, start + chunk)
        s_target = p2[sl] + 1j * q2[sl]
        vm, va, iters, norm = _newton_batch(ybus, s_target, tol, max_iter)
        bad = np.flatnonzero(~(norm <= tol))
        if bad.size:
            k = int(bad[0])
            raise PowerFlowError(
                f"AC power flow did not converge for sample {start + k} after {max_iter} "
                f"iterations (mismatch {norm[k]:.3e})", mismatch=float(norm[k]), sample=start + k)
        v_out[sl] = vm[:, 1:] - 1.0
        th_out[sl] = va[:, 1:]
        worst = max(worst, float(norm.max()))
        max_iters = max(max_iters, iters)
    if single:
        return NodeState(index, v_out[0], th_out[0], p, q, max_iters, worst)
    return NodeState(index, v_out, th_out, p2, q2, max_iters, worst)


def ac_residual(grid: RadialGrid, state: NodeState) -> np.ndarray:
    """Max absolute power mismatch per sample when ``state`` is plugged into the AC balance."""
    order, ybus = admittance_matrix(grid)
    vm = 1.0 + np.atleast_2d(state.v)
    va = np.atleast_2d(state.theta)
    ones = np.ones((vm.shape[0], 1))
    zeros = np.zeros((vm.shape[0], 1))
    s = ac_injections(ybus, np.hstack([ones, vm]), np.hstack([zeros, va]))[:, 1:]
    mis = s - (np.atleast_2d(state.p) + 1j * np.atleast_2d(state.q))
    return np.max(np.abs(np.concatenate([mis.real, mis.imag], axis=1)), axis=1)
