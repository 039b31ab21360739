"""The overlapping-Schwarz inner solver against the direct oracle.

The spatial grid is cut into overlapping blocks; each block solves its own
small preconditioned system and talks to its neighbors only through interface
penalties.  With an uncorrelated background covariance the patched fixed
point IS the global analysis; with correlated covariances the decomposition
leaves a fixed-point bias that grows with the correlation length, measurable
here because the direct oracle is cheap at this scale.
"""

import dataclasses

import numpy as np

from pintda import dd_mps, harness, var_solver

cfg = harness.ExperimentConfig()
vconfig, _ = harness.build_problem(cfg)

print("=== the decomposition ===")
partition = dd_mps.partition_domain(cfg.np, n_sub=4, overlap=2)
for i, idx in enumerate(partition.index_sets):
    print(f"block {i}: indices {idx[0]}..{idx[-1]} "
          f"(interfaces toward {partition.neighbors(i)})")

print()
print("=== Jacobi sweeps to the fixed point (uncorrelated B) ===")
direct = var_solver.solve_var_direct(vconfig, "threeD")
iterate, hist = dd_mps.run_mps(vconfig, partition, tol=1e-10, max_iters=50)
rel = np.abs(iterate.patched - direct.u_da).max() / np.abs(direct.u_da).max()
print(f"sweeps: {hist.n_sweeps}, converged: {hist.converged}")
print(f"relative error vs direct solve: {rel:.2e}")
for n, (res, eq, cost) in enumerate(zip(hist.residuals, hist.eq_residuals,
                                        hist.costs), start=1):
    print(f"  sweep {n}: iterate diff {res:.2e}, stationarity {eq:.2e}, "
          f"cost {cost:.6f}")

print()
print("=== correlated background covariance ===")
print("correlations leak across block boundaries, so the patched fixed point")
print("is only an approximation of the global analysis:")
for L in (0.5, 1.0, 2.0):
    cfg_L = dataclasses.replace(cfg, L=L)
    vc, _ = harness.build_problem(cfg_L)
    d = var_solver.solve_var_direct(vc, "threeD")
    it, h = dd_mps.run_mps(vc, dd_mps.partition_domain(cfg.np, 2, 2),
                           tol=1e-12, max_iters=200)
    bias = np.abs(it.patched - d.u_da).max() / np.abs(d.u_da).max()
    print(f"  L = {L}: sweeps {h.n_sweeps:3d}, fixed-point bias {bias:.2e}, "
          f"measured inner accuracy {h.eps_mps:.2e}")

print()
print("=== patch rules on the overlap ===")
it, _ = dd_mps.run_mps(vconfig, partition, tol=1e-10, max_iters=50)
owner = dd_mps.recover_and_patch(it, partition, vconfig, rule="owner")
average = dd_mps.recover_and_patch(it, partition, vconfig, rule="average")
print(f"owner vs average patching differ by {np.abs(owner - average).max():.2e} "
      "(they agree at a consistent fixed point)")
