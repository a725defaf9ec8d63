"""Per-round noise variance schedules.

The dynamic schedule minimizes ``sum_t q_t xi_t^2`` with
``q_t = decay_rate^(T - t)`` subject to the total zCDP budget, which gives
``xi_t^2 = sqrt(pi / q_t)``: variances shrink geometrically by
``sqrt(decay_rate)`` per round, so early (heavily contracted) rounds absorb
most of the noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .errors import DomainError
from .privacy import PrivacyBudget, SensitivityContext

Mode = Literal["dynamic", "static", "custom"]

# Closed-form geometric sums lose nothing near r = 1 thanks to expm1, but the
# direct sum is exact enough (and cheaper to reason about) in that regime.
_DIRECT_SUM_THRESHOLD = 1.0 - 1e-12
_LOG_FLOAT_MAX = math.log(np.finfo(float).max)


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    variances: np.ndarray
    mode: Mode = "custom"
    decay_rate: float = 1.0

    def __post_init__(self):
        v = np.array(self.variances, dtype=float)
        v.setflags(write=False)
        object.__setattr__(self, "variances", v)
        if v.ndim != 1 or v.size < 1:
            raise DomainError("a schedule needs at least one round")
        if not np.all(v > 0):
            raise DomainError("every noise variance must be positive")
        if self.mode not in ("dynamic", "static", "custom"):
            raise DomainError(f"unknown schedule mode {self.mode!r}")
        if not 0.0 < self.decay_rate <= 1.0:
            raise DomainError(f"decay_rate must lie in (0, 1], got {self.decay_rate!r}")

    @property
    def T(self) -> int:
        return int(self.variances.size)

    def __len__(self) -> int:
        return self.T

    def to_json(self) -> dict:
        return {
            "mode": self.mode,
            "decay_rate": self.decay_rate,
            "variances": [float(v) for v in self.variances],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "NoiseSchedule":
        return cls(np.asarray(obj["variances"], dtype=float), obj.get("mode", "custom"),
                   float(obj.get("decay_rate", 1.0)))


def contraction_decay(gamma: float, mu_f: float) -> float:
    """Per-round Lyapunov contraction factor ``1 - gamma * min(mu_f, 1)``."""
    if not (gamma > 0 and mu_f > 0):
        raise DomainError("gamma and mu_f must be positive")
    rate = gamma * min(mu_f, 1.0)
    if rate >= 1.0:
        raise DomainError(f"gamma * min(mu_f, 1) = {rate!r} must be < 1")
    return 1.0 - rate


def _geometric_sum(log_r: float, T: int) -> float:
    """sum_{p=0}^{T-1} r^p for r = exp(log_r) <= 1."""
    if log_r == 0.0:
        return float(T)
    if math.exp(log_r) > _DIRECT_SUM_THRESHOLD:
        return math.fsum(np.exp(log_r * np.arange(T)))
    return math.expm1(T * log_r) / math.expm1(log_r)


def _check_T(T) -> int:
    if isinstance(T, bool) or int(T) != T or T < 1:
        raise DomainError(f"T must be a positive integer, got {T!r}")
    return int(T)


def _budget_scale(rho_tgt: float, ctx: SensitivityContext) -> float:
    """2 B^2 / (rho_tgt n^2 m^2): the variance that spends the whole budget in one round."""
    if not (math.isfinite(rho_tgt) and rho_tgt > 0):
        raise DomainError(f"rho_tgt must be positive, got {rho_tgt!r}")
    return 2.0 * ctx.grad_bound_B**2 / (rho_tgt * float(ctx.n) ** 2 * float(ctx.m) ** 2)


def dynamic_schedule(T: int, gamma: float, mu_f: float, rho_tgt: float,
                     ctx: SensitivityContext) -> NoiseSchedule:
    T = _check_T(T)
    decay = contraction_decay(gamma, mu_f)
    # r = sqrt(decay); log1p keeps log r accurate when gamma * mu_f is tiny.
    log_r = 0.5 * math.log1p(-gamma * min(mu_f, 1.0))
    sqrt_pi = _budget_scale(rho_tgt, ctx) * _geometric_sum(log_r, T)
    # xi_t^2 = sqrt(pi) * r^-(T - t), evaluated in log space so large T cannot
    # underflow q_t on the way.
    steps_left = np.arange(T - 1, -1, -1, dtype=float)
    if math.log(sqrt_pi) - log_r * (T - 1) > _LOG_FLOAT_MAX:
        raise DomainError(f"early variances overflow float64 for T={T} at decay {decay!r}; "
                          "shorten T or lower gamma * min(mu_f, 1)")
    variances = np.exp(math.log(sqrt_pi) - log_r * steps_left)
    return NoiseSchedule(variances, "dynamic", decay)


def static_schedule(T: int, rho_tgt: float, ctx: SensitivityContext,
                    decay_rate: float = 1.0) -> NoiseSchedule:
    """Equal variances ``2 B^2 T / (rho_tgt n^2 m^2)`` every round.

    ``decay_rate`` only matters for :func:`weighted_cost` comparisons.
    """
    T = _check_T(T)
    v = _budget_scale(rho_tgt, ctx) * T
    return NoiseSchedule(np.full(T, v), "static", decay_rate)


def weighted_cost(schedule: NoiseSchedule) -> float:
    """Noise term ``sum_t q_t xi_t^2`` of the telescoped utility bound."""
    T = schedule.T
    steps_left = np.arange(T - 1, -1, -1, dtype=float)
    log_q = steps_left * math.log(schedule.decay_rate)
    return math.fsum(schedule.variances * np.exp(log_q))


def min_rounds(budget: PrivacyBudget, ctx: SensitivityContext, mu_f: float, gamma: float,
               d: int, phi1: float) -> int:
    """Smallest T after which the initial error has decayed below the noise floor."""
    c = min(mu_f, 1.0)
    lg = -math.log(budget.delta)
    arg = (budget.epsilon**2 * ctx.n * ctx.m**2 * min(mu_f**2, 1.0) * phi1
           / (ctx.grad_bound_B**2 * d * lg))
    if not arg > 1.0:
        return 1
    return max(1, math.ceil(math.log(arg) / (gamma * c)))
