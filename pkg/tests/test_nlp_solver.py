import math
import unittest

import numpy as np

from app.errors import InvalidArgument
from services.check_service import rosenbrock, rosenbrock_disk_oracle
from services.nlp_solver import (
    STATUS_INFEASIBLE,
    STATUS_NUMERICAL,
    STATUS_OPTIMAL,
    NlpProblem,
    SqpOptions,
    check_derivatives,
    damped_bfgs_update,
    solve_sqp,
)


def _shifted_square(x):
    return (x[0] - 3.0) ** 2, np.array([2.0 * (x[0] - 3.0)])


def _disk(x):
    return np.array([x @ x - 1.5]), 2.0 * x[None, :]


class SqpTest(unittest.TestCase):
    def test_unconstrained_quadratic(self) -> None:
        result = solve_sqp(NlpProblem(n=1, objective=_shifted_square), [0.0])
        self.assertEqual(result.status, STATUS_OPTIMAL)
        self.assertAlmostEqual(float(result.x[0]), 3.0, places=6)
        self.assertLessEqual(result.iterations, 30)

    def test_gauss_newton_hessian(self) -> None:
        problem = NlpProblem(n=1, objective=_shifted_square, hessian=lambda x: np.array([[2.0]]))
        result = solve_sqp(problem, [0.0])
        self.assertEqual(result.status, STATUS_OPTIMAL)
        self.assertAlmostEqual(float(result.x[0]), 3.0, places=8)
        self.assertLessEqual(result.iterations, 3)

    def test_equality_constrained(self) -> None:
        problem = NlpProblem(
            n=2,
            objective=lambda x: (float(x @ x), 2.0 * x),
            equalities=lambda x: (np.array([x[0] + x[1] - 1.0]), np.array([[1.0, 1.0]])),
        )
        result = solve_sqp(problem, [0.0, 0.0])
        self.assertEqual(result.status, STATUS_OPTIMAL)
        np.testing.assert_allclose(result.x, [0.5, 0.5], atol=1e-6)
        self.assertAlmostEqual(float(result.eq_multipliers[0]), -1.0, places=5)

    def test_known_constraint_curvature(self) -> None:
        seen = []

        def curvature(x, multipliers):
            seen.append(float(multipliers[0]))
            return max(float(multipliers[0]), 0.0) * 2.0 * np.eye(2)

        problem = NlpProblem(
            n=2,
            objective=lambda x: (float(-x[0] - x[1]), np.array([-1.0, -1.0])),
            equalities=lambda x: (np.array([x @ x - 2.0]), 2.0 * x[None, :]),
            curvature=curvature,
        )
        result = solve_sqp(problem, [2.0, 0.5])
        self.assertEqual(result.status, STATUS_OPTIMAL)
        np.testing.assert_allclose(result.x, [1.0, 1.0], atol=1e-5)
        self.assertAlmostEqual(seen[-1], 0.5, places=3)

    def test_bounds_are_respected(self) -> None:
        problem = NlpProblem(n=1, objective=_shifted_square, lower=np.array([-1.0]), upper=np.array([2.0]))
        result = solve_sqp(problem, [0.0])
        self.assertEqual(result.status, STATUS_OPTIMAL)
        self.assertAlmostEqual(float(result.x[0]), 2.0, places=8)

    def test_rosenbrock_on_disk(self) -> None:
        problem = NlpProblem(n=2, objective=rosenbrock, inequalities=_disk)
        result = solve_sqp(problem, [0.0, 0.0])
        self.assertEqual(result.status, STATUS_OPTIMAL)
        self.assertLessEqual(result.kkt_residual, 1e-6)
        self.assertAlmostEqual(result.objective, rosenbrock_disk_oracle(), delta=1e-4)
        self.assertLessEqual(float(result.x @ result.x), 1.5 + 1e-8)

    def test_contradictory_constraints_report_infeasible(self) -> None:
        problem = NlpProblem(
            n=1,
            objective=lambda x: (float(x[0] ** 2), np.array([2.0 * x[0]])),
            inequalities=lambda x: (np.array([1.0 - x[0], x[0] + 1.0]), np.array([[-1.0], [1.0]])),
        )
        self.assertEqual(solve_sqp(problem, [0.0]).status, STATUS_INFEASIBLE)

    def test_nan_objective_is_numerical_failure(self) -> None:
        problem = NlpProblem(n=1, objective=lambda x: (math.nan, np.array([0.0])))
        self.assertEqual(solve_sqp(problem, [0.0]).status, STATUS_NUMERICAL)

    def test_initial_guess_shape(self) -> None:
        with self.assertRaises(InvalidArgument):
            solve_sqp(NlpProblem(n=1, objective=_shifted_square), [0.0, 1.0])

    def test_deterministic_iterates(self) -> None:
        problem = NlpProblem(n=2, objective=rosenbrock, inequalities=_disk)
        options = SqpOptions(trace=True)
        first = solve_sqp(problem, [0.2, -0.1], options)
        second = solve_sqp(problem, [0.2, -0.1], options)
        self.assertTrue(np.array_equal(first.x, second.x))
        self.assertEqual(first.iterations, second.iterations)
        self.assertEqual(first.trace, second.trace)
        self.assertTrue(first.trace)
        self.assertIn("kkt", first.trace[0])


class BfgsTest(unittest.TestCase):
    def test_secant_condition_with_positive_curvature(self) -> None:
        s = np.array([1.0, 0.5])
        y = np.array([2.0, 1.5])
        updated = damped_bfgs_update(np.eye(2), s, y)
        np.testing.assert_allclose(updated @ s, y, atol=1e-12)

    def test_damping_keeps_positive_definite(self) -> None:
        updated = damped_bfgs_update(np.eye(2), np.array([1.0, 0.0]), np.array([-1.0, 0.2]))
        np.testing.assert_allclose(updated, updated.T, atol=1e-12)
        self.assertGreater(float(np.min(np.linalg.eigvalsh(updated))), 0.0)

    def test_zero_step_leaves_matrix(self) -> None:
        B = np.diag([2.0, 3.0])
        np.testing.assert_array_equal(damped_bfgs_update(B, np.zeros(2), np.ones(2)), B)


class DerivativeCheckTest(unittest.TestCase):
    def test_exact_callbacks_are_clean(self) -> None:
        problem = NlpProblem(n=2, objective=rosenbrock, inequalities=_disk)
        report = check_derivatives(problem, [0.3, -0.2])
        self.assertTrue(report.ok)
        self.assertEqual(report.checked, 4)

    def test_corrupted_gradient_is_flagged(self) -> None:
        def corrupted(x):
            value, grad = rosenbrock(x)
            grad = grad.copy()
            grad[1] += 1.0
            return value, grad

        report = check_derivatives(NlpProblem(n=2, objective=corrupted), [0.3, -0.2])
        self.assertFalse(report.ok)
        self.assertEqual([(flag.block, flag.col) for flag in report.flags], [("objective", 1)])

    def test_solver_can_verify_before_iterating(self) -> None:
        problem = NlpProblem(n=1, objective=lambda x: ((x[0] - 3.0) ** 2, np.array([x[0] - 3.0])))
        result = solve_sqp(problem, [0.0], SqpOptions(verify_derivatives=True, max_iter=5))
        self.assertEqual(len(result.derivative_flags), 1)


if __name__ == "__main__":
    unittest.main()
