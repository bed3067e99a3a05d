import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from otmpc.errors import ConfigError, DomainError, SolverFailureError
from otmpc.transport import (
    Coupling,
    SinkhornConfig,
    as_simplex,
    build_cost_matrix,
    eot_objective,
    marginal_errors,
    sinkhorn,
    uniform_simplex,
)

from .oracles import eot_objective_loop, half_sqdist, pairwise_cost_loop, sinkhorn_dual_oracle


def random_simplex(rng, n):
    return rng.dirichlet(np.ones(n))


class TestSimplex:
    def test_valid(self):
        w = as_simplex([0.25, 0.75])
        assert w.sum() == pytest.approx(1.0)

    def test_negative_rejected(self):
        with pytest.raises(DomainError):
            as_simplex([-0.1, 1.1])

    def test_bad_sum_rejected(self):
        with pytest.raises(DomainError):
            as_simplex([0.5, 0.4])

    def test_uniform(self):
        assert np.allclose(uniform_simplex(4), 0.25)


class TestCostMatrix:
    def test_quadratic_hand_case(self):
        pts = [(0.0, 0.0), (1.0, 0.0)]
        C = build_cost_matrix(pts, pts, "quadratic")
        assert np.allclose(C, [[0.0, 0.5], [0.5, 0.0]])

    def test_circular_identity(self):
        C = build_cost_matrix([np.pi / 3], [np.pi / 3], "circular")
        assert C[0, 0] == pytest.approx(0.0, abs=1e-15)

    def test_quadratic_matches_double_loop(self):
        rng = np.random.default_rng(7)
        z = rng.normal(size=(5, 4))
        y = rng.normal(size=(7, 4))
        C = build_cost_matrix(z, y, "quadratic")
        assert np.abs(C - pairwise_cost_loop(z, y, half_sqdist)).max() < 1e-12

    def test_symmetric_when_shared_points(self):
        rng = np.random.default_rng(3)
        z = rng.normal(size=(6, 3))
        C = build_cost_matrix(z, z, "quadratic")
        assert np.abs(C - C.T).max() < 1e-12

    def test_dimension_mismatch(self):
        with pytest.raises(DomainError):
            build_cost_matrix(np.zeros((2, 3)), np.zeros((2, 4)), "quadratic")

    def test_unknown_metric(self):
        with pytest.raises(DomainError, match="quadratic"):
            build_cost_matrix(np.zeros((2, 2)), np.zeros((2, 2)), "nope")

    def test_spd_metric_rejects_non_spd(self):
        bad = np.array([[1.0, 2.0], [2.0, 1.0]])  # indefinite
        with pytest.raises(DomainError):
            build_cost_matrix([np.eye(2)], [bad], "spd")

    def test_kl_requires_positive(self):
        with pytest.raises(DomainError):
            build_cost_matrix([[1.0, -1.0]], [[1.0, 1.0]], "kl")


class TestSinkhorn:
    def test_zero_cost_gives_independent_coupling(self):
        c = sinkhorn(np.zeros((2, 2)), [0.5, 0.5], [0.5, 0.5], SinkhornConfig(epsilon=0.3))
        assert np.allclose(c.matrix, 0.25)
        assert c.converged

    def test_single_row_pins_column_marginal(self):
        rng = np.random.default_rng(0)
        p = random_simplex(rng, 6)
        c = sinkhorn(rng.random((1, 6)), [1.0], p, SinkhornConfig(epsilon=0.1))
        assert np.allclose(c.matrix[0], p, rtol=1e-12, atol=1e-15)

    def test_objective_matches_dual_oracle(self):
        rng = np.random.default_rng(42)
        C = rng.random((3, 3))
        q = uniform_simplex(3)
        p = uniform_simplex(3)
        cfg = SinkhornConfig(epsilon=0.05, tolerance=1e-12, max_iterations=50_000)
        ours = eot_objective(C, sinkhorn(C, q, p, cfg), 0.05)
        gamma_star, _, _ = sinkhorn_dual_oracle(C, q, p, 0.05)
        assert ours == pytest.approx(eot_objective_loop(C, gamma_star, 0.05), abs=1e-8)

    def test_iteration_cap_flags_not_raises(self):
        rng = np.random.default_rng(1)
        c = sinkhorn(rng.random((4, 5)), random_simplex(rng, 4), random_simplex(rng, 5),
                     SinkhornConfig(epsilon=0.01, tolerance=1e-14, max_iterations=2))
        assert not c.converged
        assert c.iterations_used == 2

    def test_denormal_epsilon_fails_loudly(self):
        with pytest.raises(SolverFailureError, match="1e-310"):
            sinkhorn(np.ones((2, 2)), [0.5, 0.5], [0.5, 0.5], SinkhornConfig(epsilon=1e-310))

    def test_log_domain_path_converges(self):
        # every kernel entry underflows in the scaling domain at this epsilon
        rng = np.random.default_rng(5)
        C = 1.0 + rng.random((4, 6))
        q = random_simplex(rng, 4)
        p = random_simplex(rng, 6)
        eps = 1e-3
        assert np.exp(-C / eps).max() == 0.0
        c = sinkhorn(C, q, p, SinkhornConfig(epsilon=eps, tolerance=1e-9, max_iterations=50_000))
        assert c.converged
        row, col = marginal_errors(c, q, p)
        assert row < 1e-9 and col < 1e-9

    def test_warm_start_same_fixed_point_fewer_iterations(self):
        rng = np.random.default_rng(11)
        C = rng.random((5, 8))
        q = random_simplex(rng, 5)
        p = random_simplex(rng, 8)
        cfg = SinkhornConfig(epsilon=0.05, tolerance=1e-10, max_iterations=50_000)
        cold = sinkhorn(C, q, p, cfg)
        warm_cfg = SinkhornConfig(epsilon=0.05, tolerance=1e-10, max_iterations=50_000,
                                  warm_start_scalings=cold.scalings())
        warm = sinkhorn(C, q, p, warm_cfg)
        assert warm.iterations_used < cold.iterations_used
        assert np.abs(warm.matrix - cold.matrix).max() < 1e-8

    def test_scaling_form_reconstruction(self):
        rng = np.random.default_rng(13)
        C = rng.random((4, 7))
        q = random_simplex(rng, 4)
        p = random_simplex(rng, 7)
        c = sinkhorn(C, q, p, SinkhornConfig(epsilon=0.2, tolerance=1e-10, max_iterations=10_000))
        K = np.exp(-C / 0.2)
        rebuilt = c.u[:, None] * K * c.v[None, :]
        assert np.abs(rebuilt - c.matrix).max() < 1e-10

    def test_independence_limit(self):
        rng = np.random.default_rng(17)
        C = rng.random((5, 8))
        q = random_simplex(rng, 5)
        p = random_simplex(rng, 8)
        eps = 1e6 * C.max()
        c = sinkhorn(C, q, p, SinkhornConfig(epsilon=eps, tolerance=1e-10, max_iterations=1000))
        assert np.abs(c.matrix - np.outer(q, p)).max() < 1e-6

    def test_sharpness_limit(self):
        C = np.array([[0.0, 1.0], [1.0, 0.0]])
        eps = 1e-4 * np.median(C)
        c = sinkhorn(C, [0.5, 0.5], [0.5, 0.5],
                     SinkhornConfig(epsilon=eps, tolerance=1e-9, max_iterations=10_000))
        assert c.matrix[0, 0] + c.matrix[1, 1] > 0.99

    def test_shape_mismatch(self):
        with pytest.raises(DomainError):
            sinkhorn(np.zeros((2, 2)), [1.0], [0.5, 0.5], SinkhornConfig(epsilon=1.0))

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            SinkhornConfig(epsilon=0.0)
        with pytest.raises(ConfigError):
            SinkhornConfig(epsilon=1.0, tolerance=0.0)
        with pytest.raises(ConfigError):
            SinkhornConfig(epsilon=1.0, max_iterations=0)
        with pytest.raises(ConfigError):
            SinkhornConfig(epsilon=1.0, warm_start_scalings=(np.array([0.0]), np.array([1.0])))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000))
    def test_invariants_random_instances(self, seed):
        rng = np.random.default_rng(seed)
        n, m = int(rng.integers(1, 7)), int(rng.integers(1, 7))
        C = rng.random((n, m))
        q = random_simplex(rng, n)
        p = random_simplex(rng, m)
        cfg = SinkhornConfig(epsilon=0.1, tolerance=1e-8, max_iterations=20_000)
        c = sinkhorn(C, q, p, cfg)
        assert c.matrix.min() >= 0
        assert c.matrix.sum() == pytest.approx(1.0, abs=1e-8)
        if c.converged:
            assert c.row_marginal_error < cfg.tolerance


class TestObjectiveAndMarginals:
    def test_uniform_two_by_two_entropy(self):
        gamma = np.full((2, 2), 0.25)
        assert eot_objective(np.zeros((2, 2)), gamma, 1.0) == pytest.approx(-(np.log(4) + 1))

    def test_zero_epsilon_is_plain_transport_cost(self):
        rng = np.random.default_rng(2)
        C = rng.random((3, 4))
        gamma = rng.random((3, 4))
        assert eot_objective(C, gamma, 0.0) == pytest.approx((C * gamma).sum(), abs=1e-14)

    def test_matches_double_loop(self):
        rng = np.random.default_rng(9)
        C = rng.random((3, 4))
        gamma = rng.random((3, 4))
        gamma[0, 1] = 0.0  # exercise the zero-entry convention
        assert eot_objective(C, gamma, 0.7) == pytest.approx(
            eot_objective_loop(C, gamma, 0.7), abs=1e-12)

    def test_marginals_of_independent_coupling(self):
        rng = np.random.default_rng(21)
        q = random_simplex(rng, 4)
        p = random_simplex(rng, 6)
        row, col = marginal_errors(np.outer(q, p), q, p)
        assert row < 1e-12 and col < 1e-12

    def test_single_row_case(self):
        p = np.array([0.2, 0.3, 0.5])
        row, col = marginal_errors(p[None, :], np.array([1.0]), p)
        assert row < 1e-15 and col < 1e-15

    def test_perturbed_entry_moves_both_errors(self):
        q = np.array([0.5, 0.5])
        p = np.array([0.5, 0.5])
        gamma = np.outer(q, p)
        gamma[0, 1] += 1e-3
        row, col = marginal_errors(gamma, q, p)
        assert row == pytest.approx(1e-3)
        assert col == pytest.approx(1e-3)

    def test_negative_coupling_rejected(self):
        with pytest.raises(DomainError):
            eot_objective(np.zeros((1, 1)), np.array([[-0.1]]), 1.0)


def test_coupling_dataclass_shape():
    c = Coupling(matrix=np.ones((2, 3)) / 6, row_marginal_error=0.0, col_marginal_error=0.0,
                 iterations_used=1, log_u=np.zeros(2), log_v=np.zeros(3))
    assert c.shape == (2, 3)
    assert np.allclose(c.u, 1.0)
