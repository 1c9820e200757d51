import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gated_xtfc import numkit
from gated_xtfc.errors import DimensionMismatch, NonFiniteObjective, NonPositiveDefinite


def _spd(n, seed):
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(n, n))
    return M @ M.T + n * np.eye(n)


class TestCholeskySolve:
    def test_identity(self):
        np.testing.assert_allclose(numkit.cholesky_solve_jittered(np.eye(3), [1, 2, 3]), [1, 2, 3])

    def test_diagonal(self):
        x = numkit.cholesky_solve_jittered(np.diag([4.0, 9.0]), [8.0, 27.0])
        np.testing.assert_allclose(x, [2.0, 3.0])

    def test_hand_solved_2x2(self):
        # 2a + b = 3, a + 2b = 3  ->  a = b = 1
        x = numkit.cholesky_solve_jittered([[2.0, 1.0], [1.0, 2.0]], [3.0, 3.0])
        np.testing.assert_allclose(x, [1.0, 1.0], rtol=1e-14)

    def test_singular_psd_gets_jitter(self):
        v = np.array([1.0, 2.0, 3.0])
        A = np.outer(v, v)  # rank one
        L, jitter = numkit.jittered_cholesky(A)
        assert jitter > 0
        assert jitter <= 1e-4 * np.trace(A) / 3
        np.testing.assert_allclose(L @ L.T, A + jitter * np.eye(3), atol=1e-12)

    def test_indefinite_raises(self):
        with pytest.raises(NonPositiveDefinite):
            numkit.cholesky_solve_jittered(np.diag([1.0, -1.0]), [1.0, 1.0])

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            numkit.cholesky_solve_jittered(np.eye(3), [1.0, 2.0])
        with pytest.raises(DimensionMismatch):
            numkit.cholesky_solve_jittered(np.ones((2, 3)), [1.0, 2.0])

    def test_asymmetric_rejected(self):
        with pytest.raises(DimensionMismatch):
            numkit.cholesky_solve_jittered([[2.0, 1.0], [0.0, 2.0]], [1.0, 1.0])

    def test_agrees_with_qr(self):
        A = _spd(12, 3)
        b = np.random.default_rng(4).normal(size=12)
        x1 = numkit.cholesky_solve_jittered(A, b)
        x2 = numkit.qr_lstsq(A, b)
        np.testing.assert_allclose(x1, x2, rtol=1e-8)


class TestQRLstsq:
    def test_identity(self):
        np.testing.assert_allclose(numkit.qr_lstsq(np.eye(2), [5.0, 7.0]), [5.0, 7.0])

    def test_mean_of_observations(self):
        np.testing.assert_allclose(numkit.qr_lstsq([[1.0], [1.0]], [0.0, 2.0]), [1.0])

    def test_vs_normal_equations(self):
        rng = np.random.default_rng(0)
        A = rng.normal(size=(10, 3))
        b = rng.normal(size=10)
        x = numkit.qr_lstsq(A, b)
        x_ne = np.linalg.solve(A.T @ A, A.T @ b)
        np.testing.assert_allclose(x, x_ne, rtol=1e-8)
        # residual orthogonal to the column space
        r = b - A @ x
        assert np.linalg.norm(A.T @ r) <= 1e-8 * np.linalg.norm(A) * np.linalg.norm(b)

    def test_min_norm_for_rank_deficient(self):
        A = np.array([[1.0, 1.0], [1.0, 1.0], [1.0, 1.0]])
        x = numkit.qr_lstsq(A, [2.0, 2.0, 2.0])
        np.testing.assert_allclose(x, [1.0, 1.0], rtol=1e-10)

    def test_underdetermined_rejected(self):
        with pytest.raises(DimensionMismatch):
            numkit.qr_lstsq(np.ones((2, 3)), [1.0, 1.0])


class TestEigvals:
    def test_diagonal(self):
        np.testing.assert_allclose(numkit.sym_eigvals(np.diag([9.0, 1.0, 4.0])), [1, 4, 9])

    def test_characteristic_polynomial(self):
        # (2-l)^2 - 1 = 0  ->  l = 1, 3
        np.testing.assert_allclose(numkit.sym_eigvals([[2.0, 1.0], [1.0, 2.0]]), [1.0, 3.0])

    def test_trace_identity(self):
        rng = np.random.default_rng(8)
        M = rng.normal(size=(8, 8))
        A = M + M.T
        ev = numkit.sym_eigvals(A)
        assert np.all(np.diff(ev) >= 0)
        assert ev.sum() == pytest.approx(np.trace(A), rel=1e-8, abs=1e-12)

    def test_shift(self):
        rng = np.random.default_rng(9)
        M = rng.normal(size=(6, 6))
        A = M + M.T
        np.testing.assert_allclose(
            numkit.sym_eigvals(A + 2.5 * np.eye(6)), numkit.sym_eigvals(A) + 2.5, rtol=1e-8, atol=1e-12
        )


class TestLogdet:
    def test_identity(self):
        assert numkit.logdet_psd(np.eye(5)) == 0.0

    def test_diag(self):
        assert numkit.logdet_psd(np.diag([math.e, math.e**2])) == pytest.approx(3.0, rel=1e-14)

    @pytest.mark.parametrize("seed", range(3))
    def test_vs_eigenvalues(self, seed):
        A = _spd(6, seed)
        expected = np.sum(np.log(numkit.sym_eigvals(A)))
        assert numkit.logdet_psd(A) == pytest.approx(expected, rel=1e-8)


class TestBoundedScalarMin:
    def test_quadratic(self):
        res = numkit.bounded_scalar_min(lambda x: (x - 0.3) ** 2, 0.0, 1.0, tol_x=1e-6)
        assert abs(res.x - 0.3) < 1e-5

    def test_abs_kink(self):
        res = numkit.bounded_scalar_min(lambda x: abs(x - 0.9), 0.8, 0.999, tol_x=1e-4)
        assert abs(res.x - 0.9) < 1e-3

    def test_boundary_minimum(self):
        res = numkit.bounded_scalar_min(lambda x: x, 0.0, 1.0, tol_x=1e-4)
        assert res.x < 2e-4

    def test_eval_budget(self):
        calls = []
        res = numkit.bounded_scalar_min(lambda x: calls.append(x) or math.sin(5 * x), 0.0, 3.0, 1e-12, 7)
        assert res.evals == len(calls) == 7

    def test_non_finite(self):
        with pytest.raises(NonFiniteObjective):
            numkit.bounded_scalar_min(lambda x: float("nan"), 0.0, 1.0)

    def test_returns_best_seen(self):
        seen = []

        def f(x):
            v = math.cos(7 * x) + 0.1 * x
            seen.append(v)
            return v

        res = numkit.bounded_scalar_min(f, 0.0, 2.0, 1e-6)
        assert res.fun == min(seen)

    @settings(max_examples=60, deadline=None)
    @given(
        lo=st.floats(-10, 10),
        width=st.floats(1e-3, 10),
        c=st.floats(-20, 20),
        p=st.sampled_from([1, 2, 3]),
    )
    def test_never_leaves_interval(self, lo, width, c, p):
        hi = lo + width
        xs = []

        def f(x):
            xs.append(x)
            return abs(x - c) ** p

        numkit.bounded_scalar_min(f, lo, hi, tol_x=1e-6)
        assert all(lo <= x <= hi for x in xs)
