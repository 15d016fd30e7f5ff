from itertools import permutations

import numpy as np
import pytest

from spintransport.ground_cost import GroundCostSpec, cost_matrix
from spintransport.rigid_body import make_body
from spintransport.transport import (Coupling, DiscreteMeasure,
                                     EpsilonTooSmallError,
                                     MarginalMismatchError, coupling_summary,
                                     coupling_to_csv, ensemble_steer,
                                     gaussian_spec, make_measure,
                                     measure_to_csv, product_coupling,
                                     pushforward_inertia, sample_gaussian,
                                     second_moment, solve_exact, solve_sinkhorn)

BODY = make_body([1.0, 2.0, 3.0])
CLASSICAL = GroundCostSpec(kind="classical", t_f=1.0)


def brute_force_assignment_cost(entries: np.ndarray, weights: np.ndarray) -> float:
    m = entries.shape[0]
    return min(float(np.dot(entries[np.arange(m), list(p)], weights))
               for p in permutations(range(m)))


class TestDiscreteMeasure:
    def test_weights_must_sum_to_one(self):
        with pytest.raises(ValueError):
            DiscreteMeasure(support=np.zeros((2, 3)), weights=np.array([0.6, 0.6]))

    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError):
            DiscreteMeasure(support=np.zeros((2, 3)),
                            weights=np.array([1.2, -0.2]))

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            DiscreteMeasure(support=np.zeros((3, 3)), weights=np.array([0.5, 0.5]))

    def test_nonfinite_support_rejected(self):
        with pytest.raises(ValueError):
            DiscreteMeasure(support=np.array([[np.inf, 0.0, 0.0]]),
                            weights=np.array([1.0]))

    def test_make_measure_equal_weights(self):
        m = make_measure(np.arange(12.0).reshape(4, 3))
        np.testing.assert_array_equal(m.weights, np.full(4, 0.25))


class TestPushforward:
    def test_unit_moments_are_identity(self):
        m = make_measure(np.random.default_rng(0).normal(size=(5, 3)))
        out = pushforward_inertia(m, make_body([1.0, 1.0, 1.0]))
        np.testing.assert_array_equal(out.support, m.support)

    def test_reference_point(self):
        m = make_measure(np.array([[1.0, 1.0, 1.0]]))
        out = pushforward_inertia(m, BODY)
        np.testing.assert_array_equal(out.support, [[1.0, 2.0, 3.0]])
        np.testing.assert_array_equal(out.weights, [1.0])

    def test_round_trip_with_reciprocal_moments(self):
        m = make_measure(np.random.default_rng(1).normal(size=(20, 3)))
        inverse_body = make_body(1.0 / BODY.J)
        back = pushforward_inertia(pushforward_inertia(m, BODY), inverse_body)
        np.testing.assert_allclose(back.support, m.support, atol=1e-15)


class TestSampling:
    def test_reproducible(self):
        spec = gaussian_spec([1.0, 2.0, 3.0], 0.5 * np.eye(3))
        a = sample_gaussian(spec, 100, seed=42)
        b = sample_gaussian(spec, 100, seed=42)
        np.testing.assert_array_equal(a.support, b.support)

    def test_degenerate_covariance_concentrates(self):
        spec = gaussian_spec([0.5, -0.5, 1.0], 1e-18 * np.eye(3))
        m = sample_gaussian(spec, 50, seed=0)
        assert np.abs(m.support - spec.mean).max() <= 1e-8

    def test_sample_mean_near_spec_mean(self):
        spec = gaussian_spec([1.0, -2.0, 0.5], np.eye(3))
        m = sample_gaussian(spec, 10000, seed=7)
        np.testing.assert_allclose(m.support.mean(axis=0), spec.mean, atol=0.05)

    def test_non_spd_covariance_rejected(self):
        with pytest.raises(ValueError):
            gaussian_spec([0.0, 0.0, 0.0], -np.eye(3))
        with pytest.raises(ValueError):
            gaussian_spec([0.0, 0.0, 0.0], np.diag([1.0, 1.0, 0.0]))

    def test_sample_count_validated(self):
        spec = gaussian_spec(np.zeros(3), np.eye(3))
        with pytest.raises(ValueError):
            sample_gaussian(spec, 0, seed=0)


class TestSecondMoment:
    def test_point_mass_at_origin(self):
        assert second_moment(make_measure(np.zeros((1, 3)))) == 0.0

    def test_two_point_example(self):
        m = make_measure(np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]))
        assert second_moment(m) == pytest.approx(1.0, rel=1e-15)

    def test_pushforward_consistency(self):
        m = make_measure(np.random.default_rng(2).normal(size=(30, 3)))
        out = pushforward_inertia(m, BODY)
        direct = float(out.weights @ np.sum(out.support ** 2, axis=1))
        assert second_moment(out) == direct


class TestSolveExact:
    def test_identity_instance_costs_nothing(self):
        pts = np.random.default_rng(3).normal(size=(4, 3))
        m = make_measure(pts)
        matrix = cost_matrix(CLASSICAL, pts, pts)
        coupling = solve_exact(matrix, m, m)
        assert coupling.transport_cost == 0.0

    def test_two_point_swap(self):
        m = make_measure(np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]))
        coupling = solve_exact(np.array([[0.0, 1.0], [1.0, 0.0]]), m, m)
        np.testing.assert_array_equal(coupling.plan, [[0.5, 0.0], [0.0, 0.5]])
        assert coupling.transport_cost == 0.0

    def test_matches_brute_force_on_equal_weight_clouds(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            a = make_measure(rng.normal(size=(5, 3)))
            b = make_measure(rng.normal(size=(5, 3)))
            matrix = cost_matrix(CLASSICAL, a.support, b.support)
            coupling = solve_exact(matrix, a, b)
            brute = brute_force_assignment_cost(matrix.entries, a.weights)
            assert coupling.transport_cost == brute

    def test_forced_plan_with_single_source(self):
        source = DiscreteMeasure(support=np.zeros((1, 3)), weights=np.array([1.0]))
        target = DiscreteMeasure(support=np.random.default_rng(5).normal(size=(4, 3)),
                                 weights=np.array([0.1, 0.2, 0.3, 0.4]))
        entries = np.array([[1.0, 2.0, 3.0, 4.0]])
        coupling = solve_exact(entries, source, target)
        np.testing.assert_allclose(coupling.plan, [[0.1, 0.2, 0.3, 0.4]], atol=1e-12)
        assert coupling.transport_cost == pytest.approx(3.0, abs=1e-9)

    def test_hand_solved_unbalanced_weights(self):
        # rows (0.7, 0.3), cols (0.3, 0.7), cost [[0,1],[1,0]]:
        # objective 1 - 2 pi_11 is minimized at pi_11 = 0.3, value 0.4
        source = DiscreteMeasure(support=np.zeros((2, 3)),
                                 weights=np.array([0.7, 0.3]))
        target = DiscreteMeasure(support=np.zeros((2, 3)),
                                 weights=np.array([0.3, 0.7]))
        coupling = solve_exact(np.array([[0.0, 1.0], [1.0, 0.0]]), source, target)
        assert coupling.transport_cost == pytest.approx(0.4, abs=1e-9)
        row, col = coupling.marginal_residuals()
        assert max(row, col) <= 1e-9

    def test_mass_mismatch_rejected(self):
        m = make_measure(np.zeros((2, 3)))
        bad = make_measure(np.zeros((2, 3)))
        object.__setattr__(bad, "weights", np.array([0.6, 0.6]))
        with pytest.raises(MarginalMismatchError):
            solve_exact(np.zeros((2, 2)), m, bad)


class TestSolveSinkhorn:
    def test_large_epsilon_tends_to_product_coupling(self):
        rng = np.random.default_rng(6)
        a = make_measure(rng.normal(size=(4, 3)))
        b = make_measure(rng.normal(size=(5, 3)))
        matrix = cost_matrix(CLASSICAL, a.support, b.support)
        coupling = solve_sinkhorn(matrix, a, b,
                                  epsilon=10.0 * float(matrix.entries.max()))
        outer = np.outer(a.weights, b.weights)
        assert np.abs(coupling.plan - outer).max() <= 1e-2

    def test_small_epsilon_matches_exact(self):
        rng = np.random.default_rng(7)
        a = make_measure(rng.normal(size=(5, 3)))
        b = make_measure(rng.normal(size=(5, 3)))
        matrix = cost_matrix(CLASSICAL, a.support, b.support)
        exact = solve_exact(matrix, a, b)
        eps = 1e-3 * float(np.median(matrix.entries))
        entropic = solve_sinkhorn(matrix, a, b, epsilon=eps)
        gap = abs(entropic.transport_cost - exact.transport_cost)
        assert gap <= 0.01 * exact.transport_cost
        assert entropic.solver_info["target_residual"] <= 1e-9

    def test_residual_monotone_at_fixed_epsilon(self):
        rng = np.random.default_rng(8)
        a = make_measure(rng.normal(size=(6, 3)))
        b = make_measure(rng.normal(size=(6, 3)))
        matrix = cost_matrix(CLASSICAL, a.support, b.support)
        coupling = solve_sinkhorn(matrix, a, b,
                                  epsilon=0.3 * float(np.median(matrix.entries)),
                                  log_domain=True, epsilon_scaling=False)
        history = coupling.solver_info["residual_history"]
        assert len(history) >= 3
        for before, after in zip(history, history[1:]):
            assert after <= before + 1e-12

    def test_cost_decreases_toward_exact_over_epsilon_schedule(self):
        rng = np.random.default_rng(9)
        a = make_measure(rng.normal(size=(5, 3)))
        b = make_measure(rng.normal(size=(5, 3)))
        matrix = cost_matrix(CLASSICAL, a.support, b.support)
        exact = solve_exact(matrix, a, b).transport_cost
        med = float(np.median(matrix.entries))
        costs = [solve_sinkhorn(matrix, a, b, epsilon=e * med).transport_cost
                 for e in (0.5, 0.1, 0.02, 0.004)]
        for before, after in zip(costs, costs[1:]):
            assert after <= before + 1e-6
        assert costs[-1] >= exact - 1e-9

    def test_dense_kernel_underflow_raises(self):
        rng = np.random.default_rng(10)
        a = make_measure(rng.normal(size=(4, 3)))
        b = make_measure(rng.normal(size=(4, 3)) + 50.0)
        matrix = cost_matrix(CLASSICAL, a.support, b.support)
        with pytest.raises(EpsilonTooSmallError):
            solve_sinkhorn(matrix, a, b, epsilon=1.0, log_domain=False)

    def test_epsilon_validated(self):
        m = make_measure(np.zeros((2, 3)))
        with pytest.raises(ValueError):
            solve_sinkhorn(np.zeros((2, 2)), m, m, epsilon=0.0)


class TestCouplingInvariants:
    def test_negative_entries_rejected(self):
        m = make_measure(np.zeros((2, 3)))
        with pytest.raises(ValueError):
            Coupling(plan=np.array([[0.6, -0.1], [0.2, 0.3]]), source=m,
                     target=m, transport_cost=0.0)

    def test_marginal_violation_rejected(self):
        m = make_measure(np.zeros((2, 3)))
        with pytest.raises(MarginalMismatchError):
            Coupling(plan=np.array([[0.5, 0.0], [0.0, 0.2]]), source=m,
                     target=m, transport_cost=0.0)


class TestProductCoupling:
    def test_finite_cost_witness_under_two_phase_bound(self):
        rng = np.random.default_rng(11)
        a = make_measure(rng.normal(size=(6, 3)))
        b = make_measure(rng.normal(size=(6, 3)))
        spec = GroundCostSpec(kind="euler-bounded", t_f=2.0, body=BODY)
        matrix = cost_matrix(spec, a.support, b.support)
        coupling = product_coupling(a, b, matrix)
        witness = sum(wi * wj * ((xi @ xi) + (yj @ yj)) / 2.0
                      for xi, wi in zip(a.support, a.weights)
                      for yj, wj in zip(b.support, b.weights))
        assert np.isfinite(coupling.transport_cost)
        assert coupling.transport_cost == pytest.approx(witness, rel=1e-12)

    def test_numeric_spec_product_cost_below_witness(self):
        rng = np.random.default_rng(12)
        a = make_measure(rng.normal(size=(3, 3)) * 0.6)
        b = make_measure(rng.normal(size=(3, 3)) * 0.6)
        spec = GroundCostSpec(kind="euler-numeric", t_f=2.0, body=BODY,
                              numeric_options={"n_intervals": 30})
        matrix = cost_matrix(spec, a.support, b.support)
        coupling = product_coupling(a, b, matrix)
        witness = sum(wi * wj * ((xi @ xi) + (yj @ yj)) / 2.0
                      for xi, wi in zip(a.support, a.weights)
                      for yj, wj in zip(b.support, b.weights))
        assert coupling.transport_cost <= witness + 1e-6


class TestEnsembleSteer:
    def test_identity_coupling_is_free(self):
        pts = np.random.default_rng(12).normal(size=(5, 3))
        m = make_measure(pts)
        matrix = cost_matrix(CLASSICAL, pts, pts)
        coupling = solve_exact(matrix, m, m)
        terminal, cost, failures = ensemble_steer(
            coupling, CLASSICAL, policy_kind="norminv-ustarstar", step=1e-2)
        assert cost == 0.0
        assert failures == ()
        np.testing.assert_allclose(np.sort(terminal.support, axis=0),
                                   np.sort(pts, axis=0), atol=1e-12)

    def test_norm_invariant_realized_cost_matches_transport_cost(self):
        source = sample_gaussian(gaussian_spec([1.0, 0.0, 0.5], 0.01 * np.eye(3)),
                                 30, seed=1)
        target = sample_gaussian(gaussian_spec([0.0, 0.0, 0.0], 1e-8 * np.eye(3)),
                                 30, seed=2)
        spec = GroundCostSpec(kind="norm-invariant", t_f=2.0, body=BODY)
        matrix = cost_matrix(spec, source.support, target.support)
        coupling = solve_exact(matrix, source, target)
        terminal, realized, _ = ensemble_steer(coupling, spec,
                                               policy_kind="norminv-ustarstar",
                                               step=2e-3)
        assert realized == pytest.approx(coupling.transport_cost, rel=1e-2)
        assert second_moment(terminal) <= 1e-4

    def test_feasible_policy_costs_at_least_the_numeric_optimum(self):
        rng = np.random.default_rng(13)
        source = make_measure(rng.normal(size=(3, 3)) * 0.5)
        target = make_measure(rng.normal(size=(3, 3)) * 0.5)
        spec = GroundCostSpec(kind="euler-numeric", t_f=2.0, body=BODY,
                              numeric_options={"n_intervals": 40})
        matrix = cost_matrix(spec, source.support, target.support)
        coupling = solve_exact(matrix, source, target)
        _, realized, _ = ensemble_steer(coupling, spec,
                                        policy_kind="feasible-ustar", step=1e-3)
        assert realized >= coupling.transport_cost - 1e-6

    def test_empty_plan_rejected(self):
        m = make_measure(np.zeros((2, 3)))
        coupling = solve_exact(np.zeros((2, 2)), m, m)
        with pytest.raises(ValueError):
            ensemble_steer(coupling, CLASSICAL, mass_floor=1.0)


class TestSerialization:
    def test_measure_csv(self, tmp_path):
        m = make_measure(np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]))
        path = tmp_path / "measure.csv"
        measure_to_csv(m, path)
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "x1,x2,x3,weight"
        assert lines[1] == "1.0,2.0,3.0,0.5"

    def test_coupling_csv_and_summary(self, tmp_path):
        m = make_measure(np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]))
        entries = np.array([[0.0, 1.0], [1.0, 0.0]])
        coupling = solve_exact(entries, m, m)
        path = tmp_path / "coupling.csv"
        coupling_to_csv(coupling, entries, path)
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "i,j,mass,cost"
        assert lines[1] == "0,0,0.5,0.0"
        assert lines[2] == "1,1,0.5,0.0"
        summary = coupling_summary(coupling)
        assert summary["transport_cost"] == 0.0
        assert summary["solver"] == "assignment"
