import numpy as np
import pytest

from sparsecode.core import (
    CodeBatch,
    Dictionary,
    DimensionMismatch,
    SignalBatch,
    SparseCodingProblem,
    lipschitz_constant,
    mean_reconstruction_error,
    objective,
    reconstruction_error,
)


def make_problem(n=4, k=8, m=3, lam=0.1, seed=0, non_negative=False):
    rng = np.random.default_rng(seed)
    return SparseCodingProblem(rng.standard_normal((n, k)),
                               rng.standard_normal((n, m)),
                               lam, non_negative)


class TestContainers:
    def test_signal_batch_rejects_non_finite(self):
        with pytest.raises(ValueError):
            SignalBatch(np.array([[1.0, np.nan]]))

    def test_signal_batch_promotes_vectors(self):
        b = SignalBatch(np.ones(3))
        assert b.data.shape == (3, 1)

    def test_unit_norm_flag_checked(self):
        w = np.eye(3) * 2.0
        with pytest.raises(ValueError):
            Dictionary(w, unit_norm=True)
        Dictionary(np.eye(3), unit_norm=True)  # exact unit columns pass

    def test_problem_shape_mismatch(self):
        rng = np.random.default_rng(0)
        with pytest.raises(DimensionMismatch):
            SparseCodingProblem(rng.standard_normal((4, 8)),
                                rng.standard_normal((5, 3)), 0.1)

    def test_negative_lambda_rejected(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ValueError):
            SparseCodingProblem(rng.standard_normal((4, 8)),
                                rng.standard_normal((4, 3)), -0.1)


class TestObjective:
    def test_exact_reconstruction_no_penalty(self):
        p = SparseCodingProblem(np.eye(2), np.array([1.0, 0.0]), 0.0)
        z = CodeBatch(np.array([1.0, 0.0]))
        assert objective(p, z)[0] == 0.0

    def test_zero_code_half_norm(self):
        p = SparseCodingProblem(np.eye(2), np.array([1.0, 0.0]), 0.5)
        assert objective(p, CodeBatch(np.zeros(2)))[0] == pytest.approx(0.5)

    def test_nonneg_violation_is_infinite(self):
        p = SparseCodingProblem(np.eye(2), np.array([1.0, 0.0]), 0.1,
                                non_negative=True)
        vals = objective(p, CodeBatch(np.array([-0.1, 0.0])))
        assert np.isposinf(vals[0])

    def test_shape_mismatch_raises(self):
        p = make_problem()
        with pytest.raises(DimensionMismatch):
            objective(p, CodeBatch(np.zeros((p.k + 1, p.m))))

    def test_objective_dominates_half_squared_error(self):
        p = make_problem(lam=0.3, seed=1)
        z = CodeBatch(np.random.default_rng(2).standard_normal((p.k, p.m)))
        err = reconstruction_error(p.dictionary, z, p.signals)
        assert np.all(objective(p, z) >= 0.5 * err ** 2 - 1e-12)

    def test_non_negative_for_feasible_codes(self):
        p = make_problem(lam=0.2, seed=3, non_negative=True)
        z = CodeBatch(np.abs(np.random.default_rng(4).standard_normal(
            (p.k, p.m))))
        assert np.all(objective(p, z) >= 0.0)


class TestReconstructionError:
    def test_zero_codes_give_signal_norm(self):
        p = make_problem(seed=5)
        err = reconstruction_error(p.dictionary, CodeBatch.zeros(p.k, p.m),
                                   p.signals)
        np.testing.assert_allclose(err, np.linalg.norm(p.signals.data, axis=0),
                                   rtol=1e-12)

    def test_exact_solve_square_invertible(self):
        rng = np.random.default_rng(6)
        w = rng.standard_normal((5, 5)) + 5 * np.eye(5)
        x = rng.standard_normal((5, 2))
        z = np.linalg.solve(w, x)
        err = reconstruction_error(Dictionary(w), CodeBatch(z), SignalBatch(x))
        assert np.all(err <= 1e-10)

    def test_matches_independent_recomputation(self):
        rng = np.random.default_rng(7)
        w = rng.standard_normal((4, 8))
        z = rng.standard_normal((8, 5))
        x = rng.standard_normal((4, 5))
        err = reconstruction_error(Dictionary(w), CodeBatch(z), SignalBatch(x))
        # second, index-level code path
        expected = np.array([
            np.sqrt(sum((sum(w[i, a] * z[a, j] for a in range(8)) - x[i, j]) ** 2
                        for i in range(4)))
            for j in range(5)])
        np.testing.assert_allclose(err, expected, atol=1e-12)

    def test_mean_reduction(self):
        p = make_problem(seed=8)
        z = CodeBatch.zeros(p.k, p.m)
        per_col = reconstruction_error(p.dictionary, z, p.signals)
        assert mean_reconstruction_error(p.dictionary, z, p.signals) == \
            pytest.approx(per_col.mean())


class TestLipschitz:
    def test_scaled_identity(self):
        assert lipschitz_constant(Dictionary(2.0 * np.eye(3))) == \
            pytest.approx(4.0, rel=1e-9)

    def test_diagonal(self):
        assert lipschitz_constant(Dictionary(np.diag([1.0, 3.0]))) == \
            pytest.approx(9.0, rel=1e-9)

    def test_against_dense_eigensolver(self):
        rng = np.random.default_rng(9)
        w = rng.standard_normal((10, 30))
        expected = np.linalg.eigvalsh(w.T @ w).max()
        assert lipschitz_constant(Dictionary(w)) == \
            pytest.approx(expected, rel=1e-6)

    def test_zero_matrix_degenerate(self):
        d = Dictionary(np.zeros((4, 6)))
        assert lipschitz_constant(d) == 0.0
        assert d.lipschitz_degenerate

    def test_bounds_random_probes(self):
        rng = np.random.default_rng(10)
        w = rng.standard_normal((8, 20))
        lip = lipschitz_constant(Dictionary(w))
        for _ in range(50):
            v = rng.standard_normal(20)
            quotient = np.sum((w @ v) ** 2) / np.sum(v ** 2)
            assert lip >= quotient * (1 - 1e-6)

    def test_column_permutation_invariant(self):
        rng = np.random.default_rng(11)
        w = rng.standard_normal((7, 15))
        perm = rng.permutation(15)
        a = lipschitz_constant(Dictionary(w))
        b = lipschitz_constant(Dictionary(w[:, perm]))
        assert a == pytest.approx(b, abs=1e-8)

    def test_cached_value_reused(self):
        d = Dictionary(np.eye(3))
        assert lipschitz_constant(d) is lipschitz_constant(d) or \
            lipschitz_constant(d) == lipschitz_constant(d)
        assert d._lipschitz is not None


class TestRidgeSolver:
    def test_matches_dense_solve_both_shapes(self):
        rng = np.random.default_rng(12)
        for n, k in [(10, 6), (6, 10)]:  # tall and overcomplete
            w = rng.standard_normal((n, k))
            d = Dictionary(w)
            b = rng.standard_normal((k, 3))
            expected = np.linalg.solve(w.T @ w + 2.5 * np.eye(k), b)
            np.testing.assert_allclose(d.ridge_solver(2.5)(b), expected,
                                       atol=1e-10)

    def test_rejects_nonpositive_rho(self):
        d = Dictionary(np.eye(3))
        with pytest.raises(ValueError):
            d.ridge_solver(0.0)
