"""Numerical error-bound machinery evaluated against measured solver histories.

All norms here are max norms.  The central objects are the discrete Gronwall
bound, the Lipschitz constant of the propagator expressed against the cost
Hessian's condition number, the geometric recurrence that bounds the outer
iteration error, and the three-term round-off bound; each is evaluated with
measured inputs rather than asserted symbolically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class BoundParameters:
    """Measured ingredients of the convergence and round-off bounds."""

    C: float                # Lipschitz constant against mu_A
    mu_A: float             # condition number of the cost Hessian
    eps_mps: float          # measured inner-solver accuracy
    N: int                  # slab count
    h: float                # time step
    p: int                  # formal order of the time scheme
    C_h: float              # measured one-slab assimilation gap, seeds c_1

    @property
    def R_mu(self):
        return (self.C - self.mu_A) / self.mu_A


@dataclass(frozen=True)
class LipschitzEstimate:
    """Tightest constant C with ||Mu - Mv|| <= (C / mu_A) ||u - v|| on the probes."""

    C: float
    L: float                # ||M||_inf^2
    max_ratio: float        # tightest empirical ||M(u-v)|| / ||u-v||
    n_probes: int


@dataclass(frozen=True)
class RoundoffBound:
    total: float
    term_initial: float     # propagation of the initial-value round-off
    term_iteration: float   # propagation of the previous iteration's round-off
    term_rho: float         # local round-off contribution


@dataclass(frozen=True)
class ErrorHistory:
    """Measured errors next to the recurrence bound that should dominate them."""

    E: np.ndarray           # E[n, k] = ||u_k^DA - u_k^n||_inf
    c_bound: np.ndarray     # c_bound[n] valid for n >= 1 (nan at 0)
    R_round: np.ndarray     # observed recombination round-off, same layout as E
    rho_local: float        # max per-slab local round-off proxy


def gronwall_bound(M0, R, H, N):
    """Discrete Gronwall bound e^{NR} M0 + (e^{NR} - 1)/R * H.

    Dominates any sequence with |M_k| <= (1 + R) |M_{k-1}| + H; the
    hypothesis requires R > 0.
    """
    if R <= 0:
        raise ValueError(f"the Gronwall hypothesis needs R > 0, got {R}")
    if H < 0 or M0 < 0:
        raise ValueError("M0 and H must be nonnegative")
    if N < 1:
        raise ValueError(f"N must be a positive integer, got {N}")
    return math.exp(N * R) * M0 + math.expm1(N * R) / R * H


def gronwall_prefactor(N, R):
    """(e^{NR} - 1) / R, extended by its limit N at R = 0.

    Well defined for negative R as well, which is how the convergence and
    round-off bounds consume it.
    """
    if R == 0:
        return float(N)
    return math.expm1(N * R) / R


def prefactor_sequence(n_max, R=-1.0):
    """Prefactor over N = 1..n_max; at R = -1 it climbs monotonically to 1."""
    return np.array([gronwall_prefactor(n, R) for n in range(1, n_max + 1)])


def lipschitz_estimate(M, mu_A, probe_pairs):
    """Derive the constant of ||Mu - Mv|| <= (C / mu_A) ||u - v|| empirically.

    C is chosen as mu_A times the tightest probe ratio, which makes the
    inequality hold (with equality at the worst probe) on everything fed in;
    the caller should include the difference vectors it actually cares about.
    L = ||M||_inf^2 is reported alongside for the error-magnitude form.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("M must be square")
    probe_pairs = list(probe_pairs)
    if not probe_pairs:
        raise ValueError("need at least one probe pair")

    max_ratio = 0.0
    used = 0
    for u, v in probe_pairs:
        d = np.asarray(u, dtype=float) - np.asarray(v, dtype=float)
        nd = float(np.max(np.abs(d)))
        if nd == 0.0:
            continue
        max_ratio = max(max_ratio, float(np.max(np.abs(M @ d))) / nd)
        used += 1
    if used == 0:
        raise ValueError("all probe pairs coincide")

    L = float(np.abs(M).sum(axis=1).max()) ** 2
    return LipschitzEstimate(C=mu_A * max_ratio, L=L, max_ratio=max_ratio,
                             n_probes=used)


def error_scale_constant(L, delta_err, xi):
    """The constant assembled from error magnitudes, L * ||delta|| / ||xi||."""
    if xi == 0:
        raise ValueError("xi must be nonzero")
    return L * delta_err / xi


def twin_error_scales(u0, u_truth, reference, M):
    """Computable stand-ins for the abstract error magnitudes.

    xi is the background error at the initial time, sigma its propagation to
    the final time, delta_err the assimilation error of the reference states
    against the truth trajectory (a max over the window).
    """
    u0 = np.asarray(u0, dtype=float)
    u_truth = np.asarray(u_truth, dtype=float)
    xi = float(np.max(np.abs(u0 - u_truth)))
    err = u0 - u_truth
    for _ in range(len(reference) - 1):
        err = M @ err
    sigma = float(np.max(np.abs(err)))
    truth_k = u_truth
    delta_err = float(np.max(np.abs(reference[0] - truth_k)))
    for k in range(1, len(reference)):
        truth_k = M @ truth_k
        delta_err = max(delta_err, float(np.max(np.abs(reference[k] - truth_k))))
    return xi, sigma, delta_err


def chain_discrepancy(M, mu_A, xi, delta_err):
    """Both sides of the imported identity mu(M) = (||delta|| / ||xi||) / mu(A).

    The identity leans on assumptions we cannot verify, so both sides are
    computed and reported rather than asserted.
    """
    M = np.asarray(M, dtype=float)
    mu_M = float(np.abs(M).sum(axis=1).max()
                 * np.abs(np.linalg.inv(M)).sum(axis=1).max())
    chained = (delta_err / xi) / mu_A if xi else np.inf
    return {"mu_M_direct": mu_M, "mu_M_chained": chained,
            "discrepancy": abs(mu_M - chained)}


def resolution_ratio_report(h_coarse, gap_coarse, h_fine, gap_fine):
    """Two-resolution ratio of the measured one-slab gap.

    Reports gap_coarse / gap_fine and the order it implies,
    log(gap_coarse / gap_fine) / log(h_coarse / h_fine).  A diagnostic, not a
    test: in twin experiments the truth is generated by the model itself, so
    the gap is dominated by the background error and need not shrink with h.
    """
    if h_coarse <= 0 or h_fine <= 0 or h_coarse == h_fine:
        raise ValueError("need two distinct positive step sizes")
    if gap_coarse <= 0 or gap_fine <= 0:
        raise ValueError("gaps must be positive")
    ratio = gap_coarse / gap_fine
    implied_order = math.log(ratio) / math.log(h_coarse / h_fine)
    return {"ratio": ratio, "implied_order": implied_order}


def recurrence_step(c_n, params):
    """One step of the error recurrence c_{n+1} = P (C c_n / mu_A + eps)."""
    P = gronwall_prefactor(params.N, params.R_mu)
    return P * (params.C * c_n / params.mu_A + params.eps_mps)


def recurrence_fixed_point(C, mu_A, eps, N):
    """Fixed point P eps / (1 - P C / mu_A) of the recurrence, inf if divergent.

    As mu_A grows with C fixed, P tends to 1 - e^{-N} and the fixed point
    collapses to the inner-solver accuracy scale.
    """
    R = (C - mu_A) / mu_A
    P = gronwall_prefactor(N, R)
    denom = 1.0 - P * C / mu_A
    if denom <= 0:
        return math.inf
    return P * eps / denom


def error_and_bound_history(trajectory, reference, params, roundoff=None):
    """Tabulate measured iteration errors next to the recurrence bound.

    `reference` is the per-time-point analysis the run is converging to
    (the serial fine chain, or a direct space-time solve split per time).
    The recurrence is seeded with the measured gap c_1 = C_h.
    """
    if reference is None:
        raise ValueError("a reference trajectory is required")
    n_levels = trajectory.n + 1
    n_points = trajectory.n_points
    E = np.zeros((n_levels, n_points))
    for n in range(n_levels):
        for k in range(n_points):
            E[n, k] = float(np.max(np.abs(reference[k] - trajectory.u[n][k])))

    c_bound = np.full(n_levels, np.nan)
    if n_levels > 1:
        c_bound[1] = params.C_h
        for n in range(1, n_levels - 1):
            c_bound[n + 1] = recurrence_step(c_bound[n], params)

    if roundoff is None:
        R_round = np.zeros_like(E)
        rho_local = 0.0
    else:
        R_round, rho_local = roundoff
    return ErrorHistory(E=E, c_bound=c_bound, R_round=np.asarray(R_round),
                        rho_local=float(rho_local))


def roundoff_proxies(trajectory, M):
    """Observed recombination round-off via an extended-precision shadow.

    The shadow replays the coarse sweep and the corrector recombination in
    long-double arithmetic, reusing the stored double-precision correction
    factors as exact data, so it isolates the rounding of the update formula
    itself.  Returns the per-(n, k) global proxies and the largest one-update
    local proxy.
    """
    ld = np.longdouble
    M_ld = np.asarray(M, dtype=ld)
    n_levels = trajectory.n + 1
    n_points = trajectory.n_points
    R_obs = np.zeros((n_levels, n_points))

    shadow = [np.asarray(trajectory.u[0][0], dtype=ld)]
    for k in range(1, n_points):
        shadow.append(M_ld @ shadow[-1])
    for k in range(n_points):
        R_obs[0, k] = float(np.max(np.abs(
            np.asarray(trajectory.u[0][k], dtype=ld) - shadow[k])))

    for n in range(1, n_levels):
        delta = trajectory.delta[n - 1]
        shadow = [np.asarray(trajectory.u[n][0], dtype=ld)]
        for k in range(1, n_points):
            shadow.append(M_ld @ shadow[-1] + np.asarray(delta[k], dtype=ld))
        for k in range(n_points):
            R_obs[n, k] = float(np.max(np.abs(
                np.asarray(trajectory.u[n][k], dtype=ld) - shadow[k])))

    rho_local = 0.0
    if n_levels > 1:
        n = n_levels - 1
        delta = trajectory.delta[n - 1]
        for k in range(1, n_points):
            exact = M_ld @ np.asarray(trajectory.u[n][k - 1], dtype=ld) \
                + np.asarray(delta[k], dtype=ld)
            rho_k = float(np.max(np.abs(
                np.asarray(trajectory.u[n][k], dtype=ld) - exact)))
            rho_local = max(rho_local, rho_k)
    return R_obs, rho_local


def roundoff_bound(params, R_prev, R0, rho):
    """Three-term bound on the global round-off of one corrector update.

    total = e^{N R} R0 + P (C / mu_A + 1) R_prev + P 2 rho with
    P = (e^{N R} - 1) / R; the terms are returned separately for reporting
    (initial-value propagation, iteration propagation, local term).
    """
    if rho < 0:
        raise ValueError(f"rho must be nonnegative, got {rho}")
    R = params.R_mu
    P = gronwall_prefactor(params.N, R)
    t1 = math.exp(params.N * R) * R0
    t2 = P * (params.C / params.mu_A + 1.0) * R_prev
    t3 = P * 2.0 * rho
    return RoundoffBound(total=t1 + t2 + t3, term_initial=t1,
                         term_iteration=t2, term_rho=t3)
