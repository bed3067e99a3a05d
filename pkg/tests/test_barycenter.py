import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm, logm

from otmpc.barycenter import (
    barycentric_update,
    barycentric_weights,
    generalized_update,
    matrix_exp_so3,
    matrix_exp_spd,
    matrix_log_so3,
    matrix_log_spd,
    rotation_angle,
    validate_rotation3,
    validate_spd,
)
from otmpc.errors import (
    BranchAmbiguityError,
    DegenerateCouplingError,
    DomainError,
    NearSingularError,
    UndefinedMeanError,
)

from .oracles import barycenter_gradient_descent


def skew(w):
    return np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])


def random_rotation(rng, max_angle=3.0):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(0.0, max_angle)
    return expm(skew(axis * angle))


def random_spd(rng, n, scale=1.0):
    A = rng.normal(size=(n, n)) * scale
    return A @ A.T + 0.5 * np.eye(n)


class TestBarycentricUpdate:
    def test_permutation_coupling_assigns_exactly(self):
        rng = np.random.default_rng(0)
        y = rng.normal(size=(4, 3))
        perm = np.array([2, 0, 3, 1])
        gamma = np.zeros((4, 4))
        gamma[np.arange(4), perm] = 0.25
        out = barycentric_update(gamma, y)
        assert np.array_equal(out, y[perm])

    def test_independent_coupling_collapses_to_global_mean(self):
        rng = np.random.default_rng(1)
        q = rng.dirichlet(np.ones(3))
        p = rng.dirichlet(np.ones(5))
        y = rng.normal(size=(5, 2))
        out = barycentric_update(np.outer(q, p), y)
        assert np.allclose(out, (p @ y)[None, :], atol=1e-12)

    def test_matches_gradient_descent_oracle(self):
        rng = np.random.default_rng(2)
        gamma = rng.random((4, 6))
        gamma /= gamma.sum()
        y = rng.normal(size=(6, 2))
        ours = barycentric_update(gamma, y)
        oracle = barycenter_gradient_descent(gamma, y, step=1e-2, iterations=100_000)
        assert np.abs(ours - oracle).max() < 1e-6

    def test_zero_mass_row_raises_with_index(self):
        gamma = np.array([[0.5, 0.5], [0.0, 0.0]])
        with pytest.raises(DegenerateCouplingError) as info:
            barycentric_update(gamma, np.zeros((2, 2)))
        assert info.value.row == 1

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000))
    def test_hull_confinement_exact(self, seed):
        rng = np.random.default_rng(seed)
        n, m, d = int(rng.integers(1, 6)), int(rng.integers(1, 8)), int(rng.integers(1, 4))
        gamma = rng.random((n, m)) + 1e-12
        y = rng.normal(size=(m, d)) * 10
        out = barycentric_update(gamma, y)
        assert np.all(out <= y.max(axis=0))
        assert np.all(out >= y.min(axis=0))

    def test_scalar_proposals(self):
        out = barycentric_update(np.array([[0.5, 0.5]]), np.array([0.0, 2.0]))
        assert out.shape == (1,)
        assert out[0] == pytest.approx(1.0)


class TestBarycentricWeights:
    def test_rows_normalize(self):
        rng = np.random.default_rng(3)
        gamma = rng.random((3, 4))
        w = barycentric_weights(gamma)
        assert np.allclose(w.sum(axis=1), 1.0)

    def test_negative_entries_rejected(self):
        with pytest.raises(DomainError):
            barycentric_weights(np.array([[0.5, -0.1]]))


class TestGeneralizedFamilies:
    def test_circular_symmetric_pair_averages_to_zero(self):
        theta = np.pi / 3
        out = generalized_update(np.array([[0.5, 0.5]]), np.array([-theta, theta]), "circular")
        assert out[0] == pytest.approx(0.0, abs=1e-15)

    def test_kl_geometric_mean(self):
        out = generalized_update(np.array([[0.5, 0.5]]), np.array([1.0, 4.0]), "kl")
        assert out[0] == pytest.approx(2.0)

    def test_spd_log_midpoint(self):
        proposals = [np.eye(2), np.diag([np.e ** 2, np.e ** 2])]
        out = generalized_update(np.array([[0.5, 0.5]]), proposals, "spd")
        assert np.allclose(out[0], np.diag([np.e, np.e]), atol=1e-12)

    def test_weight_matrix_cancels(self):
        rng = np.random.default_rng(4)
        w = rng.dirichlet(np.ones(5), size=3)
        y = rng.normal(size=(5, 2))
        plain = generalized_update(w, y, "weighted_quadratic")
        weighted = generalized_update(w, y, "weighted_quadratic", weight_matrix=np.diag([2.0, 1.0]))
        assert np.array_equal(plain, weighted)
        assert np.allclose(plain, w @ y)

    def test_regularized_quadratic_shrinks(self):
        w = np.array([[0.25, 0.75]])
        y = np.array([[2.0], [4.0]])
        out = generalized_update(w, y, "regularized_quadratic", lam=1.0)
        assert out[0, 0] == pytest.approx(0.5 * (0.25 * 2 + 0.75 * 4))

    def test_spd_first_order_condition(self):
        rng = np.random.default_rng(5)
        proposals = [random_spd(rng, 3) for _ in range(3)]
        w = rng.dirichlet(np.ones(3), size=2)
        out = generalized_update(w, proposals, "spd")
        logs = np.stack([logm(Q).real for Q in proposals])
        for i in range(2):
            residual = logm(out[i]).real - np.tensordot(w[i], logs, axes=1)
            assert np.linalg.norm(residual) < 1e-8

    def test_one_hot_returns_proposal_exactly_every_family(self):
        rng = np.random.default_rng(6)
        hot = np.zeros((2, 3))
        hot[0, 1] = 1.0
        hot[1, 0] = 1.0
        vec = rng.normal(size=(3, 2))
        pos = np.abs(vec) + 0.5
        angles = rng.uniform(-3, 3, size=(3, 2))
        rots = [random_rotation(rng) for _ in range(3)]
        spds = [random_spd(rng, 2) for _ in range(3)]
        assert np.array_equal(generalized_update(hot, vec, "quadratic"), vec[[1, 0]])
        assert np.array_equal(generalized_update(hot, angles, "circular"), angles[[1, 0]])
        assert np.array_equal(generalized_update(hot, pos, "kl"), pos[[1, 0]])
        assert np.array_equal(generalized_update(hot, rots, "so3"),
                              np.stack([rots[1], rots[0]]))
        assert np.array_equal(generalized_update(hot, spds, "spd"),
                              np.stack([spds[1], spds[0]]))

    def test_uniform_weights_identical_proposals_fixed_point(self):
        rng = np.random.default_rng(7)
        y = rng.normal(size=2)
        w = np.full((1, 4), 0.25)
        vec = np.tile(y, (4, 1))
        assert np.allclose(generalized_update(w, vec, "quadratic")[0], y, rtol=1e-12)
        angle = np.tile([0.7], (4, 1))
        assert np.allclose(generalized_update(w, angle, "circular")[0], 0.7, rtol=1e-12)
        R = random_rotation(rng)
        assert np.allclose(generalized_update(w, [R] * 4, "so3")[0], R, atol=1e-12)

    def test_circular_zero_resultant_errors(self):
        with pytest.raises(UndefinedMeanError):
            generalized_update(np.array([[0.5, 0.5]]), np.array([0.0, np.pi]), "circular")

    def test_kl_rejects_nonpositive(self):
        with pytest.raises(DomainError):
            generalized_update(np.array([[1.0]]), np.array([0.0]), "kl")

    def test_so3_branch_ambiguity(self):
        R_pi = np.diag([1.0, -1.0, -1.0])  # rotation by pi about x
        with pytest.raises(BranchAmbiguityError):
            generalized_update(np.array([[1.0]]), [R_pi], "so3")

    def test_unknown_family(self):
        with pytest.raises(DomainError, match="so3"):
            generalized_update(np.array([[1.0]]), np.array([[1.0]]), "nope")

    def test_weight_rows_validated(self):
        with pytest.raises(DomainError):
            generalized_update(np.array([[0.6, 0.6]]), np.array([[1.0], [2.0]]), "quadratic")


class TestSo3:
    def test_identity_log_is_zero(self):
        assert np.array_equal(matrix_log_so3(np.eye(3)), np.zeros((3, 3)))

    def test_quarter_turn_about_z(self):
        R = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        L = matrix_log_so3(R)
        assert L[0, 1] == pytest.approx(-np.pi / 2)
        assert L[1, 0] == pytest.approx(np.pi / 2)
        assert abs(L).max() == pytest.approx(np.pi / 2)

    def test_round_trip_hundred_random_rotations(self):
        rng = np.random.default_rng(8)
        for _ in range(100):
            R = random_rotation(rng, max_angle=3.0)
            assert np.linalg.norm(matrix_exp_so3(matrix_log_so3(R)) - R) < 1e-8

    def test_log_matches_scipy(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            R = random_rotation(rng, max_angle=2.5)
            assert np.linalg.norm(matrix_log_so3(R) - logm(R).real) < 1e-8

    def test_small_angle_taylor_branch(self):
        w = np.array([1e-6, -2e-6, 5e-7])
        R = expm(skew(w))
        L = matrix_log_so3(R)
        assert np.linalg.norm(L - skew(w)) < 1e-12

    def test_output_skew_symmetric(self):
        rng = np.random.default_rng(10)
        R = random_rotation(rng)
        L = matrix_log_so3(R)
        assert np.abs(L + L.T).max() < 1e-10

    def test_angle_near_pi_rejected(self):
        axis = np.array([0.0, 0.0, 1.0])
        R = expm(skew(axis * (np.pi - 1e-9)))
        with pytest.raises(BranchAmbiguityError):
            matrix_log_so3(R)

    def test_rejects_non_rotation(self):
        with pytest.raises(DomainError):
            matrix_log_so3(np.eye(3) * 2.0)
        with pytest.raises(DomainError):
            validate_rotation3(-np.eye(3))  # det -1

    def test_rotation_angle(self):
        assert rotation_angle(np.eye(3)) == pytest.approx(0.0)


class TestSpd:
    def test_identity_log_zero(self):
        assert np.allclose(matrix_log_spd(np.eye(3)), 0.0)

    def test_diagonal_log(self):
        P = np.diag([np.e, np.e ** 3])
        assert np.allclose(matrix_log_spd(P), np.diag([1.0, 3.0]), atol=1e-12)

    def test_round_trip_random(self):
        rng = np.random.default_rng(11)
        for _ in range(30):
            P = random_spd(rng, 4)
            back = matrix_exp_spd(matrix_log_spd(P))
            assert np.linalg.norm(back - P) / np.linalg.norm(P) < 1e-9

    def test_log_matches_scipy(self):
        rng = np.random.default_rng(12)
        P = random_spd(rng, 3)
        assert np.allclose(matrix_log_spd(P), logm(P).real, atol=1e-9)

    def test_near_singular_rejected(self):
        P = np.diag([1.0, 1e-13])
        with pytest.raises(NearSingularError):
            matrix_log_spd(P)

    def test_validate_rejects_asymmetric_and_indefinite(self):
        with pytest.raises(DomainError):
            validate_spd(np.array([[1.0, 0.5], [0.0, 1.0]]))
        with pytest.raises(DomainError):
            validate_spd(np.diag([1.0, -1.0]))

    def test_spd_outputs_stay_positive_definite(self):
        rng = np.random.default_rng(13)
        proposals = [random_spd(rng, 3, scale=2.0) for _ in range(5)]
        w = rng.dirichlet(np.ones(5), size=4)
        for P in generalized_update(w, proposals, "spd"):
            assert np.linalg.eigvalsh(P).min() > 0
