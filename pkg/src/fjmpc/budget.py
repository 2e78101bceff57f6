"""Budget accounting for incentive policies.

Spend at a step is ``sum_v alpha*u_s_v + (1-alpha)*u_l_v``. ``U(t)`` is the
budget left before choosing the input applied at ``t``, i.e. it subtracts
spends of steps ``0..t-1`` only.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import BudgetViolation

DEPLETION_TOL = 1e-9


def step_spend(alpha: float, u_s, u_l) -> float:
    return float(alpha * np.sum(u_s) + (1.0 - alpha) * np.sum(u_l))


@dataclass
class BudgetLedger:
    beta: float
    alpha: float
    spend_history: list[float] = field(default_factory=list)
    depletion_time: Optional[int] = None
    _prefix: list[float] = field(default_factory=lambda: [0.0], repr=False, compare=False)

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("budget beta must be nonnegative")
        if not 0 <= self.alpha <= 1:
            raise ValueError("conversion factor alpha must lie in [0, 1]")

    @property
    def t(self) -> int:
        """Number of steps charged so far."""
        return len(self.spend_history)

    @property
    def total_spend(self) -> float:
        return self.spend_before(self.t)

    def spend_before(self, t: int) -> float:
        """Cumulative spend ``u_$(t)`` of steps ``0..t-1``."""
        while len(self._prefix) <= len(self.spend_history):
            self._prefix.append(self._prefix[-1] + self.spend_history[len(self._prefix) - 1])
        return self._prefix[t]

    @property
    def remaining(self) -> float:
        return remaining_budget(self, self.t)

    def charge(self, u_s, u_l) -> float:
        """Record the spend of the input applied at step ``self.t``.

        Raises :class:`BudgetViolation` (leaving the ledger untouched) if
        the spend would overdraw the budget.
        """
        if np.any(np.asarray(u_s) < 0) or np.any(np.asarray(u_l) < 0):
            raise BudgetViolation(f"negative incentive at step {self.t}", step=self.t)
        spend = step_spend(self.alpha, u_s, u_l)
        left = self.beta - (self.total_spend + spend)
        if left < -DEPLETION_TOL:
            raise BudgetViolation(
                f"step {self.t} spends {spend:.6g} with only {self.remaining:.6g} left",
                step=self.t)
        self.spend_history.append(spend)
        remaining_budget(self, self.t)
        return spend


def cumulative_spend(ledger: BudgetLedger, inputs: Sequence) -> float:
    """Spend accumulated by ``inputs`` (applied at steps ``0..t-1``)."""
    return float(sum(step_spend(ledger.alpha, i.u_s, i.u_l) for i in inputs))


def remaining_budget(ledger: BudgetLedger, t: int) -> float:
    """``U(t) = beta - spend(0..t-1)``; records the first depletion time."""
    if t > ledger.t:
        raise ValueError(f"spend history only covers steps before {ledger.t}")
    left = ledger.beta - ledger.spend_before(t)
    if left < -DEPLETION_TOL:
        raise BudgetViolation(f"budget overdrawn by {-left:.6g} at step {t}", step=t)
    if left <= DEPLETION_TOL and (ledger.depletion_time is None or t < ledger.depletion_time):
        ledger.depletion_time = t
    return left
