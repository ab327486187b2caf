import math
import unittest
from types import SimpleNamespace

from app.models import LearningSettings
from services.learning_ledger import (
    LearningLedger,
    advance_storage,
    deterioration_bounds,
    excess_cost,
    update_ledger,
)


class _Plan(SimpleNamespace):
    def performance_cost(self, weights) -> float:
        return self.cost * weights


class LearningLedgerTest(unittest.TestCase):
    def test_from_settings(self) -> None:
        ledger = LearningLedger.from_settings(LearningSettings(beta_bar=0.5, gamma_bar=0.1, beta_max=2.0, gamma_max=3.0))
        self.assertEqual((ledger.beta_bar, ledger.gamma_bar, ledger.beta_max, ledger.gamma_max), (0.5, 0.1, 2.0, 3.0))
        self.assertEqual(ledger.Y, 0.0)

    def test_storage_spends_exploration(self) -> None:
        self.assertEqual(advance_storage(LearningLedger(), 5.0, 2.0).Y, 3.0)

    def test_storage_unchanged_without_gain(self) -> None:
        ledger = LearningLedger(Y=1.25)
        self.assertEqual(advance_storage(ledger, -0.7, 0.0).Y, 1.25)

    def test_constant_allowance_accumulates(self) -> None:
        ledger = LearningLedger(gamma_bar=0.1)
        for _ in range(10):
            ledger = advance_storage(ledger, 0.0, 0.0)
        self.assertAlmostEqual(ledger.Y, 1.0, places=12)
        self.assertEqual(ledger.steps, 10)

    def test_bounds_with_benchmark_parameters(self) -> None:
        cumulative, per_step = deterioration_bounds(LearningLedger(Y=0.5), 2.0)
        self.assertEqual(cumulative, 2.5)
        self.assertTrue(math.isinf(per_step))

    def test_negative_excess_earns_nothing(self) -> None:
        cumulative, per_step = deterioration_bounds(LearningLedger(Y=0.5, beta_max=1.0, gamma_max=0.2), -3.0)
        self.assertEqual(cumulative, 0.5)
        self.assertEqual(per_step, 0.2)

    def test_excess_cost(self) -> None:
        self.assertEqual(excess_cost(None, 1.0, 4.0), 0.0)
        self.assertEqual(excess_cost(_Plan(cost=6.0), 1.0, 4.0), 2.0)

    def test_update_ledger_records_previous_cost(self) -> None:
        ledger = update_ledger(LearningLedger(), _Plan(cost=6.0), 4.0, 1.0, 0.5)
        self.assertEqual(ledger.j_plus, 2.0)
        self.assertEqual(ledger.Y, 1.5)
        self.assertEqual(ledger.previous_cost, 6.0)
        first = update_ledger(LearningLedger(), None, 4.0, 1.0, 0.0)
        self.assertIsNone(first.previous_cost)
        self.assertEqual(first.Y, 0.0)


if __name__ == "__main__":
    unittest.main()
