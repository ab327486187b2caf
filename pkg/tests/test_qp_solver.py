import unittest

import numpy as np

from app.errors import InvalidArgument
from services.qp_solver import QP_ELASTIC, QP_INFEASIBLE, QP_NUMERICAL, QP_OPTIMAL, solve_qp


class QpSolverTest(unittest.TestCase):
    def _assert_stationary(self, H, g, result, A_eq=None, A_in=None) -> None:
        residual = np.asarray(H) @ result.x + np.asarray(g) - result.lower + result.upper
        if A_eq is not None:
            residual = residual + np.asarray(A_eq).T @ result.eq
        if A_in is not None:
            residual = residual + np.asarray(A_in).T @ result.ineq
        np.testing.assert_allclose(residual, 0.0, atol=1e-8)

    def test_unconstrained(self) -> None:
        result = solve_qp(np.eye(2), [-1.0, -1.0])
        self.assertEqual(result.status, QP_OPTIMAL)
        self.assertTrue(result.ok)
        np.testing.assert_allclose(result.x, [1.0, 1.0], atol=1e-9)
        self.assertAlmostEqual(result.objective, -1.0)

    def test_active_inequality(self) -> None:
        A_in = [[-1.0, 0.0]]
        result = solve_qp(np.eye(2), np.zeros(2), A_in=A_in, b_in=[-1.0])
        self.assertEqual(result.status, QP_OPTIMAL)
        np.testing.assert_allclose(result.x, [1.0, 0.0], atol=1e-9)
        self.assertAlmostEqual(float(result.ineq[0]), 1.0, places=9)
        self._assert_stationary(np.eye(2), np.zeros(2), result, A_in=A_in)

    def test_equality(self) -> None:
        A_eq = [[1.0, 1.0]]
        result = solve_qp(np.eye(2), np.zeros(2), A_eq=A_eq, b_eq=[2.0])
        self.assertEqual(result.status, QP_OPTIMAL)
        np.testing.assert_allclose(result.x, [1.0, 1.0], atol=1e-9)
        self._assert_stationary(np.eye(2), np.zeros(2), result, A_eq=A_eq)

    def test_bounds_and_multipliers(self) -> None:
        result = solve_qp(np.eye(2), [-3.0, 3.0], lower=[-1.0, -1.0], upper=[1.0, 1.0])
        self.assertEqual(result.status, QP_OPTIMAL)
        np.testing.assert_allclose(result.x, [1.0, -1.0], atol=1e-9)
        np.testing.assert_allclose(result.upper, [2.0, 0.0], atol=1e-9)
        np.testing.assert_allclose(result.lower, [0.0, 2.0], atol=1e-9)
        self._assert_stationary(np.eye(2), [-3.0, 3.0], result)

    def test_inactive_constraints_have_zero_multipliers(self) -> None:
        result = solve_qp(np.eye(2), [-1.0, -1.0], A_in=[[1.0, 1.0]], b_in=[10.0])
        np.testing.assert_allclose(result.x, [1.0, 1.0], atol=1e-9)
        self.assertAlmostEqual(float(result.ineq[0]), 0.0, places=12)

    def test_contradictory_constraints_are_relaxed(self) -> None:
        # x >= 1 and x <= 0
        result = solve_qp([[1.0]], [0.0], A_in=[[-1.0], [1.0]], b_in=[-1.0, 0.0])
        self.assertEqual(result.status, QP_ELASTIC)
        self.assertAlmostEqual(result.elastic_violation, 1.0, places=6)
        self.assertGreaterEqual(float(result.x[0]), -1e-9)
        self.assertLessEqual(float(result.x[0]), 1.0 + 1e-9)

    def test_crossed_bounds_are_infeasible(self) -> None:
        result = solve_qp(np.eye(2), np.zeros(2), lower=[1.0, 0.0], upper=[0.0, 1.0])
        self.assertEqual(result.status, QP_INFEASIBLE)

    def test_unbounded_direction_is_numerical_failure(self) -> None:
        result = solve_qp([[0.0]], [1.0])
        self.assertEqual(result.status, QP_NUMERICAL)

    def test_bounded_flat_direction_is_solved(self) -> None:
        result = solve_qp(np.zeros((2, 2)), [1.0, -1.0], lower=[-2.0, -2.0], upper=[2.0, 2.0])
        self.assertEqual(result.status, QP_OPTIMAL)
        np.testing.assert_allclose(result.x, [-2.0, 2.0], atol=1e-6)

    def test_non_finite_data(self) -> None:
        self.assertEqual(solve_qp(np.eye(2), [np.nan, 0.0]).status, QP_NUMERICAL)

    def test_shape_mismatch(self) -> None:
        with self.assertRaises(InvalidArgument):
            solve_qp(np.eye(3), [0.0, 0.0])

    def test_variable_permutation_invariance(self) -> None:
        rng = np.random.default_rng(4)
        M = rng.normal(size=(4, 4))
        H = M @ M.T + np.eye(4)
        g = rng.normal(size=4)
        A_in = rng.normal(size=(3, 4))
        b_in = rng.uniform(-0.5, 0.5, 3)
        perm = np.array([2, 0, 3, 1])
        base = solve_qp(H, g, A_in=A_in, b_in=b_in)
        permuted = solve_qp(H[np.ix_(perm, perm)], g[perm], A_in=A_in[:, perm], b_in=b_in)
        self.assertEqual(base.status, QP_OPTIMAL)
        self.assertEqual(permuted.status, QP_OPTIMAL)
        np.testing.assert_allclose(permuted.x, base.x[perm], atol=1e-8)
        self.assertTrue(np.all(A_in @ base.x <= b_in + 1e-9))


if __name__ == "__main__":
    unittest.main()
