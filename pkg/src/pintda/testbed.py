"""Synthetic twin-experiment construction: forecast model, covariances, observations.

Everything built here is deterministic given its inputs; observation noise is
drawn from an explicitly seeded generator so whole experiments can be replayed
bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg


class TestbedError(ValueError):
    """Unusable testbed inputs: bad dimensions or a failed factorization."""


@dataclass(frozen=True)
class ModelInstance:
    """One-step linear forecast model on a periodic 1-D grid."""

    np: int                 # number of spatial grid points
    n_steps: int            # number of time points on [0, T]
    T: float
    h: float                # time step, T / (n_steps - 1)
    time_grid: np.ndarray   # t_k = k * h
    M: np.ndarray           # one-step propagator, np x np
    p: int                  # formal order of the time discretization

    def propagate(self, u, steps=1):
        """Apply the one-step propagator `steps` times."""
        for _ in range(steps):
            u = self.M @ u
        return u


@dataclass(frozen=True)
class CovarianceFactorPair:
    """Background covariance B with lower-triangular factor V (B = V V^T),
    plus the block-diagonal observation covariance R."""

    B: np.ndarray
    V: np.ndarray
    R: np.ndarray           # (n_steps * nobs) square, diagonal
    sigma_b: float
    sigma_r: float
    L: float                # correlation length in grid units

    def R_block(self, k, nobs):
        """Observation covariance block for time index k."""
        sl = slice(k * nobs, (k + 1) * nobs)
        return self.R[sl, sl]


@dataclass(frozen=True)
class ObservationSet:
    """Pointwise observations of a known truth, one batch per time."""

    nobs: int
    obs_indices: tuple      # per-time integer index arrays
    H: tuple                # per-time selection matrices, nobs x np
    v: tuple                # per-time observation vectors
    seed: int
    u_truth: np.ndarray


@dataclass(frozen=True)
class BlockObservationOperator:
    """Space-time observation operator assembled block-diagonally."""

    G: np.ndarray           # (n_steps * nobs) x (np * n_steps)
    blocks: tuple           # per-time blocks; blocks[0] = H_0, blocks[k] = H_k M


def _freeze(a, dtype=float):
    a = np.asarray(a, dtype=dtype)
    a.flags.writeable = False
    return a


def build_model_instance(n_grid, n_steps, T, velocity, diffusivity):
    """Implicit upwind advection-diffusion propagator on a periodic grid.

    The semi-discrete operator combines first-order upwinding for the
    advection term (direction follows the sign of the velocity) with a
    centred second difference for diffusion.  One implicit Euler step gives
    M = (I + h A)^-1, which is unconditionally stable and dissipative:
    I + h A has unit row sums and is an M-matrix, so ||M||_inf = 1.
    """
    if n_grid < 2:
        raise TestbedError(f"need at least 2 grid points, got {n_grid}")
    if n_steps < 2:
        raise TestbedError(f"need at least 2 time points, got {n_steps}")
    if T <= 0:
        raise TestbedError(f"time horizon must be positive, got {T}")
    if diffusivity < 0:
        raise TestbedError(f"diffusivity must be nonnegative, got {diffusivity}")

    h = T / (n_steps - 1)
    dx = 1.0 / n_grid
    idx = np.arange(n_grid)
    left = (idx - 1) % n_grid
    right = (idx + 1) % n_grid

    A = np.zeros((n_grid, n_grid))
    a, nu = float(velocity), float(diffusivity)
    if a >= 0:
        A[idx, idx] += a / dx
        A[idx, left] -= a / dx
    else:
        A[idx, idx] -= a / dx
        A[idx, right] += a / dx
    A[idx, idx] += 2.0 * nu / dx**2
    A[idx, left] -= nu / dx**2
    A[idx, right] -= nu / dx**2

    M = np.linalg.inv(np.eye(n_grid) + h * A)
    time_grid = np.linspace(0.0, T, n_steps)
    return ModelInstance(np=n_grid, n_steps=n_steps, T=float(T), h=h,
                         time_grid=_freeze(time_grid), M=_freeze(M), p=1)


def build_covariance(n_grid, n_steps, nobs, sigma_b, sigma_r, L):
    """Squared-exponential background covariance and diagonal observation covariance.

    B_jl = sigma_b^2 exp(-|j - l|^2 / (2 L^2)) plus a diagonal jitter of
    1e-10 sigma_b^2 that keeps the Cholesky factorization safe; L = 0 is the
    uncorrelated limit.  V is the lower Cholesky factor, R = sigma_r^2 I.
    """
    if sigma_b <= 0 or sigma_r <= 0:
        raise TestbedError("sigma_b and sigma_r must be positive")
    if L < 0:
        raise TestbedError(f"correlation length must be nonnegative, got {L}")

    idx = np.arange(n_grid)
    if L == 0:
        B = sigma_b**2 * np.eye(n_grid)
    else:
        d2 = (idx[:, None] - idx[None, :]).astype(float) ** 2
        B = sigma_b**2 * np.exp(-d2 / (2.0 * L**2))
    B = B + 1e-10 * sigma_b**2 * np.eye(n_grid)

    try:
        V = np.linalg.cholesky(B)
    except np.linalg.LinAlgError as err:
        raise TestbedError(f"background covariance is not SPD: {err}") from err

    R = sigma_r**2 * np.eye(n_steps * nobs)
    return CovarianceFactorPair(B=_freeze(B), V=_freeze(V), R=_freeze(R),
                                sigma_b=float(sigma_b), sigma_r=float(sigma_r),
                                L=float(L))


def _normalize_obs_indices(obs_indices, n_steps):
    """Accept one index list (reused at every time) or one list per time."""
    first = obs_indices[0] if len(obs_indices) else None
    if first is None or np.isscalar(first):
        per_time = [np.asarray(obs_indices, dtype=int)] * n_steps
    else:
        if len(obs_indices) != n_steps:
            raise TestbedError(
                f"need one index list per time point ({n_steps}), got {len(obs_indices)}")
        per_time = [np.asarray(ix, dtype=int) for ix in obs_indices]
    return per_time


def selection_matrix(indices, n_grid):
    """Rows of the identity picked out by `indices`."""
    H = np.zeros((len(indices), n_grid))
    H[np.arange(len(indices)), indices] = 1.0
    return H


def build_observations(instance, covpair, obs_indices, u_truth, seed, noise=True):
    """Observe the propagated truth at the given grid indices.

    v_k = H_k M^k u_truth + eta_k with eta_k ~ N(0, sigma_r^2 I) drawn from a
    generator seeded with `seed`; pass noise=False for exact-recovery tests.
    """
    n_grid, n_steps = instance.np, instance.n_steps
    per_time = _normalize_obs_indices(obs_indices, n_steps)

    nobs = len(per_time[0])
    for ix in per_time:
        if len(ix) != nobs:
            raise TestbedError("all time points must carry the same number of observations")
        if len(ix) and (ix.min() < 0 or ix.max() >= n_grid):
            raise TestbedError(f"observation index out of range [0, {n_grid})")
    if nobs >= n_grid:
        raise TestbedError(f"nobs must be < np ({n_grid}), got {nobs}")

    u_truth = np.asarray(u_truth, dtype=float)
    if u_truth.shape != (n_grid,):
        raise TestbedError(f"u_truth must have shape ({n_grid},)")

    rng = np.random.default_rng(seed)
    H, v = [], []
    x = u_truth
    for k in range(n_steps):
        if k > 0:
            x = instance.M @ x
        Hk = selection_matrix(per_time[k], n_grid)
        vk = Hk @ x
        if noise:
            vk = vk + covpair.sigma_r * rng.standard_normal(nobs)
        H.append(_freeze(Hk))
        v.append(_freeze(vk))

    return ObservationSet(nobs=nobs,
                          obs_indices=tuple(_freeze(ix, dtype=int) for ix in per_time),
                          H=tuple(H), v=tuple(v), seed=int(seed),
                          u_truth=_freeze(u_truth))


def assemble_G(observations, instance):
    """Block-diagonal space-time observation operator.

    The leading block observes the initial state directly; every later block
    composes the one-step propagator with that time's selection operator.
    """
    n_steps = instance.n_steps
    if len(observations.H) != n_steps:
        raise TestbedError(
            f"observation set has {len(observations.H)} times, model has {n_steps}")
    for Hk in observations.H:
        if Hk.shape[1] != instance.np:
            raise TestbedError("observation operator width does not match the grid")

    blocks = [observations.H[0]]
    blocks += [observations.H[k] @ instance.M for k in range(1, n_steps)]
    G = scipy.linalg.block_diag(*blocks)
    return BlockObservationOperator(G=_freeze(G), blocks=tuple(_freeze(b) for b in blocks))
