"""Feeding measured quantities into the convergence and round-off bounds.

Nothing here is proved symbolically: the Lipschitz constant, the Hessian
condition number, the inner-solver accuracy and the one-slab assimilation gap
are all measured on the benchmark run and fed into the geometric recurrence
that is supposed to dominate the outer-iteration error.  The same goes for
the three-term round-off bound, checked against an extended-precision shadow
of the recombination.
"""

import dataclasses
import math

import numpy as np

from pintda import analysis, harness

cfg = harness.ExperimentConfig()
result = harness.run_experiment(cfg)
params = result.params
errhist = result.error_history

print("=== measured bound ingredients ===")
s = result.summary
print(f"mu(A)      = {s['mu_A']:.4f}   (condition number of the space-time Hessian)")
print(f"C          = {s['C_const']:.4f}   (tightest Lipschitz constant on probes)")
print(f"R_mu       = {s['R_mu']:.4f}   ((C - mu) / mu, drives the Gronwall factor)")
print(f"C_h        = {s['C_h']:.4e} (one-slab assimilation gap, seeds c_1)")
print(f"eps_mps    = {s['eps_mps']:.4e} (inner-solver accuracy)")
print(f"error-magnitude form of C = {s['C_error_scale']:.4f}")
print(f"imported-identity check: mu(M) direct {s['chain']['mu_M_direct']:.4f} "
      f"vs chained {s['chain']['mu_M_chained']:.6f}")

print()
print("=== measured errors under the recurrence bound ===")
print("   n    max_k E_k^n        c_n   dominated?")
for n in range(1, errhist.E.shape[0]):
    emax = errhist.E[n].max()
    cn = errhist.c_bound[n]
    print(f"  {n:2d}    {emax:10.3e}  {cn:9.3e}   {emax <= cn}")

print()
print("=== the vanishing-error limit ===")
print("holding C fixed while mu(A) grows, the recurrence fixed point drops to")
print("the inner-solver accuracy scale:")
for mu in (1e3, 1e5, 1e7):
    fp = analysis.recurrence_fixed_point(C=s['C_const'], mu_A=mu,
                                         eps=s['eps_mps'], N=params.N)
    print(f"  mu(A) = {mu:8.0e}: fixed point {fp:.3e}")
print(f"  limit value eps * (1 - e^-N) = "
      f"{s['eps_mps'] * (1 - math.exp(-params.N)):.3e}")

print()
print("=== two-resolution check of the one-slab gap ===")
cfg_fine = dataclasses.replace(cfg, n_steps=2 * cfg.n_steps - 1,
                               max_outer=2 * cfg.n_steps)
result_fine = harness.run_experiment(cfg_fine)
report = analysis.resolution_ratio_report(
    result.params.h, result.params.C_h,
    result_fine.params.h, result_fine.params.C_h)
print(f"halving h changes C_h from {result.params.C_h:.4f} to "
      f"{result_fine.params.C_h:.4f} (ratio {report['ratio']:.3f}, implied "
      f"order {report['implied_order']:.2f})")
print("twin experiments generate the truth with the model itself, so the gap")
print("tracks the background error rather than a discretization error and")
print("does not shrink with h; the recurrence consumes the measured value")

print()
print("=== round-off ===")
print(f"largest observed recombination round-off: {errhist.R_round.max():.2e}")
print(f"local one-update round-off proxy:         {errhist.rho_local:.2e}")
rb = analysis.roundoff_bound(params, R_prev=errhist.R_round[-2:].max(),
                             R0=0.0, rho=errhist.rho_local)
print(f"three-term bound: initial {rb.term_initial:.2e} + iteration "
      f"{rb.term_iteration:.2e} + local {rb.term_rho:.2e} = {rb.total:.2e}")

seq = analysis.prefactor_sequence(50, R=-1.0)
print()
print("the Gronwall prefactor in the ill-conditioned regime (R = -1) climbs")
print("monotonically toward 1, so round-off is not amplified as slabs grow:")
print("  N = 1, 2, 5, 10, 50 ->",
      ", ".join(f"{seq[n - 1]:.6f}" for n in (1, 2, 5, 10, 50)))
