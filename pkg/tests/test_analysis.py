import math

import numpy as np
import pytest

from pintda import analysis, harness, parareal
from pintda.analysis import (BoundParameters, chain_discrepancy,
                             error_and_bound_history, error_scale_constant,
                             gronwall_bound, gronwall_prefactor,
                             lipschitz_estimate, prefactor_sequence,
                             recurrence_fixed_point, roundoff_bound,
                             roundoff_proxies, twin_error_scales)


class TestGronwall:
    def test_closed_form_doubling(self):
        assert gronwall_bound(1.0, math.log(2.0), 0.0, 1) == pytest.approx(2.0)

    def test_zero_data_zero_bound(self):
        assert gronwall_bound(0.0, 0.5, 0.0, 10) == 0.0

    def test_rejects_nonpositive_rate(self):
        with pytest.raises(ValueError):
            gronwall_bound(1.0, 0.0, 1.0, 3)
        with pytest.raises(ValueError):
            gronwall_bound(1.0, -0.5, 1.0, 3)

    def test_dominates_randomized_recurrences(self):
        # sequences obeying |M_k| <= (1+R)|M_{k-1}| + H never cross the bound
        rng = np.random.default_rng(1234)
        for _ in range(1000):
            N = int(rng.integers(1, 12))
            R = float(rng.uniform(0.01, 1.5))
            H = float(rng.uniform(0.0, 2.0))
            m = float(rng.uniform(0.0, 3.0))
            bound = gronwall_bound(m, R, H, N)
            for _ in range(N):
                m = float(rng.uniform(0.0, 1.0)) * ((1.0 + R) * m + H)
                assert m <= bound + 1e-12

    def test_prefactor_limits(self):
        assert gronwall_prefactor(5, 0.0) == 5.0
        assert gronwall_prefactor(3, -1.0) == pytest.approx(1 - math.exp(-3), rel=1e-14)
        near = gronwall_prefactor(3, -1.0 + 1e-6)
        assert abs(near - (1 - math.exp(-3))) <= 1e-4
        near = gronwall_prefactor(3, -1.0 - 1e-6)
        assert abs(near - (1 - math.exp(-3))) <= 1e-4


class TestLipschitz:
    def test_identity_has_unit_ratios(self):
        rng = np.random.default_rng(0)
        probes = [(rng.standard_normal(6), rng.standard_normal(6))
                  for _ in range(10)]
        est = lipschitz_estimate(np.eye(6), mu_A=3.0, probe_pairs=probes)
        assert est.max_ratio == pytest.approx(1.0, rel=1e-12)
        assert est.L == pytest.approx(1.0)
        assert est.C == pytest.approx(3.0, rel=1e-12)

    def test_inequality_holds_on_probes(self):
        rng = np.random.default_rng(7)
        M = rng.standard_normal((16, 16)) / 4.0
        probes = [(rng.standard_normal(16), rng.standard_normal(16))
                  for _ in range(100)]
        mu_A = 37.0
        est = lipschitz_estimate(M, mu_A, probes)
        for u, v in probes:
            lhs = np.abs(M @ (u - v)).max()
            rhs = est.C / mu_A * np.abs(u - v).max()
            assert lhs <= rhs * (1 + 1e-12)

    def test_L_is_squared_row_sum_norm(self):
        M = np.array([[0.5, -0.25], [0.1, 0.3]])
        est = lipschitz_estimate(M, 2.0, [(np.ones(2), np.zeros(2))])
        assert est.L == pytest.approx(0.75**2)

    def test_degenerate_probes_rejected(self):
        with pytest.raises(ValueError):
            lipschitz_estimate(np.eye(2), 1.0, [])
        with pytest.raises(ValueError):
            lipschitz_estimate(np.eye(2), 1.0, [(np.ones(2), np.ones(2))])


def make_params(C=2.0, mu_A=8.0, eps=1e-8, N=3, C_h=0.1):
    return BoundParameters(C=C, mu_A=mu_A, eps_mps=eps, N=N, h=0.125, p=1,
                           C_h=C_h)


class TestBoundParameters:
    def test_R_mu_identity(self):
        params = make_params(C=2.0, mu_A=8.0)
        assert params.R_mu == (2.0 - 8.0) / 8.0

    def test_error_scale_constant(self):
        assert error_scale_constant(1.0, 0.02, 0.1) == pytest.approx(0.2)
        with pytest.raises(ValueError):
            error_scale_constant(1.0, 0.02, 0.0)


@pytest.fixture(scope="module")
def run(bench_problem):
    vconfig, partition = bench_problem
    reference, _ = parareal.serial_fine_chain(vconfig, partition)
    trajectory, _ = parareal.run_parareal(vconfig, partition, tol=1e-9,
                                          max_outer=8)
    return vconfig, trajectory, reference


class TestErrorAndBoundHistory:

    def test_reference_iterate_has_zero_error(self, run):
        vconfig, trajectory, reference = run
        errhist = error_and_bound_history(trajectory, reference, make_params())
        # exact slabs show zero measured error
        assert errhist.E[trajectory.n, :trajectory.n + 1].max() <= 1e-12

    def test_recurrence_seeded_with_measured_gap(self, run):
        _, trajectory, reference = run
        params = make_params(C_h=0.25)
        errhist = error_and_bound_history(trajectory, reference, params)
        assert errhist.c_bound[1] == 0.25
        P = gronwall_prefactor(params.N, params.R_mu)
        expected = P * (params.C * 0.25 / params.mu_A + params.eps_mps)
        assert errhist.c_bound[2] == pytest.approx(expected, rel=1e-12)

    def test_requires_reference(self, run):
        _, trajectory, _ = run
        with pytest.raises(ValueError):
            error_and_bound_history(trajectory, None, make_params())

    def test_fixed_point_collapses_to_inner_accuracy(self):
        # with C held fixed the fixed point tends to eps * (1 - e^-N)
        eps, N, C = 1e-8, 3, 5.0
        values = [recurrence_fixed_point(C, mu, eps, N)
                  for mu in (1e2, 1e4, 1e6, 1e8)]
        target = eps * (1 - math.exp(-N))
        assert values[-1] == pytest.approx(target, rel=1e-6)
        assert all(abs(a - target) >= abs(b - target) * (1 - 1e-12)
                   for a, b in zip(values, values[1:]))
        assert values[-1] <= 2 * eps


class TestRoundoff:
    def test_term_isolation(self):
        params = make_params()
        rb = roundoff_bound(params, R_prev=1e-15, R0=0.0, rho=0.0)
        assert rb.term_initial == 0.0
        assert rb.term_rho == 0.0
        assert rb.total == rb.term_iteration

    def test_terms_sum_to_total(self):
        params = make_params()
        rb = roundoff_bound(params, R_prev=3e-16, R0=1e-16, rho=2e-16)
        assert rb.total == rb.term_initial + rb.term_iteration + rb.term_rho

    def test_rejects_negative_rho(self):
        with pytest.raises(ValueError):
            roundoff_bound(make_params(), 0.0, 0.0, -1e-16)

    def test_prefactor_sequence_monotone_to_one(self):
        seq = prefactor_sequence(50, R=-1.0)
        assert seq.shape == (50,)
        assert np.all(np.diff(seq) >= 0)
        assert seq[0] == pytest.approx(1 - math.exp(-1), rel=1e-12)
        assert seq[-1] == pytest.approx(1.0, abs=1e-12)

    def test_observed_proxies_on_benchmark(self, bench_problem):
        vconfig, partition = bench_problem
        trajectory, _ = parareal.run_parareal(vconfig, partition, tol=1e-9,
                                              max_outer=8)
        R_obs, rho = roundoff_proxies(trajectory, vconfig.instance.M)
        assert R_obs.shape == (trajectory.n + 1, vconfig.instance.n_steps)
        assert np.all(R_obs >= 0)
        assert 0 <= rho < 1e-12
        # recombination round-off stays at the scale of machine epsilon
        assert R_obs.max() < 1e-12


class TestResolutionRatio:
    def test_recovers_known_order(self):
        # gaps manufactured as 3 h^2: the implied order must come back as 2
        report = analysis.resolution_ratio_report(0.2, 3 * 0.2**2, 0.1, 3 * 0.1**2)
        assert report["ratio"] == pytest.approx(4.0)
        assert report["implied_order"] == pytest.approx(2.0)

    def test_flat_gaps_imply_zero_order(self):
        report = analysis.resolution_ratio_report(0.2, 0.15, 0.1, 0.15)
        assert report["implied_order"] == pytest.approx(0.0)

    def test_degenerate_inputs_rejected(self):
        with pytest.raises(ValueError):
            analysis.resolution_ratio_report(0.1, 1.0, 0.1, 1.0)
        with pytest.raises(ValueError):
            analysis.resolution_ratio_report(0.2, 0.0, 0.1, 1.0)


class TestTwinScales:
    def test_scales_and_chain_report(self, bench_problem):
        vconfig, partition = bench_problem
        reference, _ = parareal.serial_fine_chain(vconfig, partition)
        M = vconfig.instance.M
        xi, sigma, delta_err = twin_error_scales(
            vconfig.u0, vconfig.observations.u_truth, reference, M)
        assert xi > 0 and sigma > 0 and delta_err > 0
        assert xi == np.abs(vconfig.u0 - vconfig.observations.u_truth).max()
        # dissipative propagation cannot grow the background error
        assert sigma <= xi * (1 + 1e-12)
        report = chain_discrepancy(M, mu_A=100.0, xi=xi, delta_err=delta_err)
        assert report["mu_M_direct"] >= 1.0
        assert report["discrepancy"] >= 0.0
