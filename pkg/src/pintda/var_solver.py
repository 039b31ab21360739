"""Direct (oracle) evaluation and minimization of the variational cost functions.

Both cost functions weight misfits by inverse covariances.  The space-time
variant treats the control as the stacked states at every time point, with the
background term applied blockwise against the initial state; the single-time
variant assimilates one observation batch against the background.  The direct
solver factorizes the normal equations densely and is the reference every
iterative solver in this package is tested against.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg


class VarSolverError(ValueError):
    """Inconsistent shapes or a singular stationarity system."""


VARIANTS = ("threeD", "fourD")


@dataclass(frozen=True)
class VarProblemConfig:
    """Everything needed to evaluate and minimize the variational costs.

    For the single-time variant, `time_index` selects which observation batch
    is assimilated and `u0` doubles as the background state.
    """

    instance: object
    covpair: object
    observations: object
    G: object
    u0: np.ndarray
    alpha: float = 1.0
    lam: float = 1.0
    time_index: int = 0

    def __post_init__(self):
        if self.alpha < 0 or self.lam < 0:
            raise VarSolverError("regularization weights must be nonnegative")
        u0 = np.asarray(self.u0, dtype=float)
        if u0.shape != (self.instance.np,):
            raise VarSolverError(f"u0 must have shape ({self.instance.np},)")
        object.__setattr__(self, "u0", u0)


@dataclass(frozen=True)
class AnalysisState:
    u_da: np.ndarray
    cost: float
    grad_norm: float


@dataclass(frozen=True)
class HessianReport:
    A: np.ndarray
    mu: float               # infinity-norm condition number


def _check_variant(variant):
    if variant not in VARIANTS:
        raise VarSolverError(f"variant must be one of {VARIANTS}, got {variant!r}")


def _three_d_pieces(config):
    k = config.time_index
    H = config.observations.H[k]
    v = config.observations.v[k]
    Rk = config.covpair.R_block(k, config.observations.nobs)
    return H, v, Rk


def _stacked_v(config):
    return np.concatenate(config.observations.v)


def eval_cost(u, config, variant="threeD"):
    """Quadratic data-assimilation cost of a state vector.

    threeD:  (H u - v)^T R^-1 (H u - v) + lam (u - u0)^T B^-1 (u - u0)
    fourD:   sum_k alpha (u_k - u0)^T B^-1 (u_k - u0) + (G u - v)^T R^-1 (G u - v)
    """
    _check_variant(variant)
    u = np.asarray(u, dtype=float)
    n_grid = config.instance.np
    B = config.covpair.B

    if variant == "threeD":
        if u.shape != (n_grid,):
            raise VarSolverError(f"threeD state must have shape ({n_grid},)")
        H, v, Rk = _three_d_pieces(config)
        r = H @ u - v
        db = u - config.u0
        return float(r @ np.linalg.solve(Rk, r) if r.size else 0.0) \
            + config.lam * float(db @ np.linalg.solve(B, db))

    n_steps = config.instance.n_steps
    if u.shape != (n_grid * n_steps,):
        raise VarSolverError(f"fourD state must have shape ({n_grid * n_steps},)")
    r = config.G.G @ u - _stacked_v(config)
    obs = float(r @ np.linalg.solve(config.covpair.R, r)) if r.size else 0.0
    bg = 0.0
    for k in range(n_steps):
        db = u[k * n_grid:(k + 1) * n_grid] - config.u0
        bg += float(db @ np.linalg.solve(B, db))
    return config.alpha * bg + obs


def eval_grad(u, config, variant="threeD"):
    """Analytic gradient of eval_cost at u."""
    _check_variant(variant)
    u = np.asarray(u, dtype=float)
    n_grid = config.instance.np
    B = config.covpair.B

    if variant == "threeD":
        H, v, Rk = _three_d_pieces(config)
        g = 2.0 * config.lam * np.linalg.solve(B, u - config.u0)
        if v.size:
            g = g + 2.0 * H.T @ np.linalg.solve(Rk, H @ u - v)
        return g

    n_steps = config.instance.n_steps
    G = config.G.G
    g = 2.0 * G.T @ np.linalg.solve(config.covpair.R, G @ u - _stacked_v(config))
    for k in range(n_steps):
        sl = slice(k * n_grid, (k + 1) * n_grid)
        g[sl] += 2.0 * config.alpha * np.linalg.solve(B, u[sl] - config.u0)
    return g


def _normal_system(config, variant):
    """Matrix and right-hand side of the stationarity equations."""
    n_grid = config.instance.np
    Binv = scipy.linalg.inv(config.covpair.B)
    Binv = 0.5 * (Binv + Binv.T)

    if variant == "threeD":
        H, v, Rk = _three_d_pieces(config)
        A = config.lam * Binv
        rhs = config.lam * Binv @ config.u0
        if v.size:
            Rinv = scipy.linalg.inv(Rk)
            A = A + H.T @ Rinv @ H
            rhs = rhs + H.T @ Rinv @ v
        return 0.5 * (A + A.T), rhs

    n_steps = config.instance.n_steps
    G = config.G.G
    Rinv = scipy.linalg.inv(config.covpair.R)
    A = config.alpha * np.kron(np.eye(n_steps), Binv) + G.T @ Rinv @ G
    rhs = config.alpha * np.kron(np.eye(n_steps), Binv) @ np.tile(config.u0, n_steps) \
        + G.T @ Rinv @ _stacked_v(config)
    return 0.5 * (A + A.T), rhs


def solve_var_direct(config, variant="threeD"):
    """Minimize the cost by a dense solve of its normal equations.

    One step of iterative refinement keeps the returned gradient residual at
    round-off level; a singular system is reported as a fault.
    """
    _check_variant(variant)
    A, rhs = _normal_system(config, variant)
    try:
        u = scipy.linalg.solve(A, rhs, assume_a="pos")
        u = u + scipy.linalg.solve(A, rhs - A @ u, assume_a="pos")
    except scipy.linalg.LinAlgError as err:
        raise VarSolverError(f"stationarity system is singular: {err}") from err

    grad_norm = float(np.max(np.abs(2.0 * (A @ u - rhs))))
    tol = 1e-10 * (1.0 + float(np.max(np.abs(rhs))))
    if grad_norm > tol:
        raise VarSolverError(
            f"direct solve left gradient residual {grad_norm:.3e} > {tol:.3e}")
    return AnalysisState(u_da=u, cost=eval_cost(u, config, variant), grad_norm=grad_norm)


def hessian_condition(config, variant="threeD"):
    """Constant Hessian of the quadratic cost and its infinity-norm condition number."""
    _check_variant(variant)
    A, _ = _normal_system(config, variant)
    A = 2.0 * A
    try:
        Ainv = scipy.linalg.inv(A)
    except scipy.linalg.LinAlgError as err:
        raise VarSolverError(f"Hessian is singular: {err}") from err
    mu = float(np.abs(A).sum(axis=1).max() * np.abs(Ainv).sum(axis=1).max())
    return HessianReport(A=A, mu=mu)
