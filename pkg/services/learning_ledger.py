"""Deterioration bookkeeping for active learning.

The storage Y accumulates the cost decrease the closed loop has earned and
is spent by exploration:

    Y_k = Y_{k-1} + beta_bar * max(J+_k, 0) + gamma_bar - Delta_k
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import TYPE_CHECKING

from app.models import LearningSettings

if TYPE_CHECKING:
    from services.ocp_service import CostWeights, OcpSolution


@dataclass(frozen=True)
class LearningLedger:
    Y: float = 0.0
    j_plus: float = 0.0
    previous_cost: float | None = None
    beta_bar: float = 1.0
    gamma_bar: float = 0.0
    beta_max: float = 0.0
    gamma_max: float = float("inf")
    steps: int = 0

    @classmethod
    def from_settings(cls, settings: LearningSettings) -> LearningLedger:
        return cls(
            beta_bar=settings.beta_bar,
            gamma_bar=settings.gamma_bar,
            beta_max=settings.beta_max,
            gamma_max=settings.gamma_max,
        )


def excess_cost(previous: OcpSolution | None, weights: CostWeights, j_baseline: float) -> float:
    """J+ = J of the previous plan under the current weights minus J_B; zero on the first step."""
    if previous is None:
        return 0.0
    return previous.performance_cost(weights) - j_baseline


def deterioration_bounds(ledger: LearningLedger, j_plus: float) -> tuple[float, float]:
    earned = max(j_plus, 0.0)
    cumulative = ledger.beta_bar * earned + ledger.gamma_bar + ledger.Y
    per_step = ledger.beta_max * earned + ledger.gamma_max
    return cumulative, per_step


def advance_storage(ledger: LearningLedger, j_plus: float, delta: float) -> LearningLedger:
    storage = ledger.Y + ledger.beta_bar * max(j_plus, 0.0) + ledger.gamma_bar - delta
    return dataclasses.replace(ledger, Y=storage, j_plus=j_plus, steps=ledger.steps + 1)


def update_ledger(
    ledger: LearningLedger,
    previous: OcpSolution | None,
    j_baseline: float,
    weights: CostWeights,
    delta: float,
) -> LearningLedger:
    j_plus = excess_cost(previous, weights, j_baseline)
    updated = advance_storage(ledger, j_plus, delta)
    return dataclasses.replace(updated, previous_cost=None if previous is None else previous.performance_cost(weights))
