import unittest

from app.constants import EXIT_INFEASIBLE, EXIT_NUMERICAL, EXIT_OK, EXIT_USAGE
from app.errors import (
    AssumptionViolation,
    ConfigError,
    InfeasibleTightening,
    NumericalFailure,
    RmpcInfeasible,
)
from utils.error_classifier import classify_error, classify_exception, error_summary, exit_code_for_kind


class ErrorClassifierTest(unittest.TestCase):
    def test_tightening_message(self) -> None:
        cls = classify_error("tightened state set at stage 12 is empty; horizon too long for W")
        self.assertEqual(cls.category, "infeasible")
        self.assertEqual(cls.exit_code, EXIT_INFEASIBLE)
        self.assertIn("tightening", cls.message)

    def test_rci_message(self) -> None:
        self.assertEqual(classify_error("robust invariant set is empty").message, "No robust invariant terminal set exists")

    def test_dare_divergence(self) -> None:
        cls = classify_error("DARE did not converge within 10000 iterations")
        self.assertEqual(cls.category, "numerical")
        self.assertEqual(cls.exit_code, EXIT_NUMERICAL)

    def test_factorization(self) -> None:
        self.assertIn("jitter", classify_error("posterior factorization failed").suggestion)

    def test_config_line(self) -> None:
        cls = classify_error("line 4: unknown key mass2")
        self.assertEqual(cls.category, "usage")
        self.assertEqual(cls.exit_code, EXIT_USAGE)

    def test_unknown_and_empty(self) -> None:
        self.assertEqual(classify_error("").category, "unknown")
        cls = classify_error("something odd happened")
        self.assertEqual(cls.category, "unknown")
        self.assertEqual(cls.raw_line, "something odd happened")


class ExceptionClassifierTest(unittest.TestCase):
    def test_none_is_ok(self) -> None:
        self.assertEqual(classify_exception(None).exit_code, EXIT_OK)

    def test_domain_exceptions(self) -> None:
        cases = [
            (ConfigError("bad value", key_path="mpc.horizon"), "usage", EXIT_USAGE),
            (InfeasibleTightening("tightened input set at stage 3 is empty"), "infeasible", EXIT_INFEASIBLE),
            (RmpcInfeasible("rmpc problem is infeasible"), "infeasible", EXIT_INFEASIBLE),
            (AssumptionViolation("baseline infeasible"), "infeasible", EXIT_INFEASIBLE),
            (NumericalFailure("solver diverged"), "numerical", EXIT_NUMERICAL),
            (PermissionError("denied"), "io", EXIT_USAGE),
        ]
        for exc, category, code in cases:
            with self.subTest(exc=type(exc).__name__):
                cls = classify_exception(exc)
                self.assertEqual(cls.category, category)
                self.assertEqual(cls.exit_code, code)

    def test_config_error_keeps_key_path(self) -> None:
        cls = classify_exception(ConfigError("must be positive", key_path="plant.mass"))
        self.assertIn("plant.mass: must be positive", cls.message)

    def test_generic_exception_falls_back_to_text(self) -> None:
        self.assertEqual(classify_exception(RuntimeError("status max_iter")).category, "numerical")
        cls = classify_exception(KeyError("x"))
        self.assertEqual(cls.category, "unknown")
        self.assertIn("KeyError", cls.message)

    def test_exit_code_for_kind(self) -> None:
        self.assertEqual(exit_code_for_kind(""), EXIT_OK)
        self.assertEqual(exit_code_for_kind("usage"), EXIT_USAGE)
        self.assertEqual(exit_code_for_kind("infeasible"), EXIT_INFEASIBLE)
        self.assertEqual(exit_code_for_kind("numerical"), EXIT_NUMERICAL)
        self.assertEqual(exit_code_for_kind("stopped"), EXIT_NUMERICAL)

    def test_error_summary_prefers_known_line(self) -> None:
        block = "solving step 12\nQP returned numerical_failure\n"
        self.assertEqual(error_summary(block), "Solver hit a numerical failure. Run with --trace and inspect the iteration log.")
        self.assertEqual(error_summary("\n\n"), "")


if __name__ == "__main__":
    unittest.main()
