"""zCDP accounting for the Gaussian mechanism used by the federated solver.

Each worker releases ``x_i - gamma * (grad_i / n + zeta + Lambda_i)`` once per
round.  Changing one of its ``m`` samples moves the released vector by at most
``2 * gamma * B / (n * m)``, and rounds compose additively in rho.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DomainError


def _check_delta(delta: float) -> float:
    delta = float(delta)
    if not 0.0 < delta < 1.0:
        raise DomainError(f"delta must lie in (0, 1), got {delta!r}")
    return delta


def _log_inv_delta(delta: float) -> float:
    return -math.log(delta)


@dataclass(frozen=True)
class PrivacyBudget:
    """An (epsilon, delta) guarantee together with its zCDP parameter."""

    epsilon: float
    delta: float
    rho_tgt: float

    def __post_init__(self):
        if not self.epsilon > 0:
            raise DomainError(f"epsilon must be positive, got {self.epsilon!r}")
        _check_delta(self.delta)
        if not self.rho_tgt >= 0:
            raise DomainError(f"rho_tgt must be nonnegative, got {self.rho_tgt!r}")
        implied = eps_from_rho(self.rho_tgt, self.delta)
        if abs(implied - self.epsilon) > 1e-12 * self.epsilon:
            raise DomainError(
                f"inconsistent budget: epsilon={self.epsilon!r} but rho_tgt implies {implied!r}"
            )

    @classmethod
    def from_eps_delta(cls, epsilon: float, delta: float) -> "PrivacyBudget":
        return cls(float(epsilon), float(delta), rho_from_eps_delta(epsilon, delta))

    @classmethod
    def from_rho(cls, rho: float, delta: float) -> "PrivacyBudget":
        return cls(eps_from_rho(rho, delta), float(delta), float(rho))


@dataclass(frozen=True)
class SensitivityContext:
    """Quantities that fix the per-round sensitivity of a worker's message."""

    gamma: float
    grad_bound_B: float
    n: int
    m: int

    def __post_init__(self):
        for name in ("gamma", "grad_bound_B"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise DomainError(f"{name} must be a positive finite real, got {v!r}")
        for name in ("n", "m"):
            v = getattr(self, name)
            if isinstance(v, bool) or int(v) != v or v < 1:
                raise DomainError(f"{name} must be an integer >= 1, got {v!r}")


def rho_from_eps_delta(epsilon: float, delta: float) -> float:
    """Largest rho whose zCDP-to-DP conversion stays within ``epsilon``.

    Solves ``epsilon = rho + 2 sqrt(rho ln(1/delta))`` for rho.  The difference
    of square roots is rewritten as a quotient to avoid cancellation for small
    epsilon.
    """
    epsilon = float(epsilon)
    if not (math.isfinite(epsilon) and epsilon > 0):
        raise DomainError(f"epsilon must be positive, got {epsilon!r}")
    lg = _log_inv_delta(_check_delta(delta))
    root = epsilon / (math.sqrt(epsilon + lg) + math.sqrt(lg))
    return root * root


def eps_from_rho(rho: float, delta: float) -> float:
    """Convert rho-zCDP to the epsilon of an (epsilon, delta)-DP guarantee."""
    rho = float(rho)
    if not rho >= 0:
        raise DomainError(f"rho must be nonnegative, got {rho!r}")
    lg = _log_inv_delta(_check_delta(delta))
    return rho + 2.0 * math.sqrt(rho * lg)


def gaussian_mechanism_rho(sensitivity: float, variance: float) -> float:
    """zCDP parameter of adding N(0, variance I) to a query of given L2 sensitivity."""
    if not variance > 0:
        raise DomainError(f"variance must be positive, got {variance!r}")
    if not sensitivity >= 0:
        raise DomainError(f"sensitivity must be nonnegative, got {sensitivity!r}")
    return sensitivity * sensitivity / (2.0 * variance)


def per_step_sensitivity(ctx: SensitivityContext) -> float:
    return 2.0 * ctx.gamma * ctx.grad_bound_B / (ctx.n * ctx.m)


def per_round_rho(variances: Sequence[float] | np.ndarray, ctx: SensitivityContext) -> np.ndarray:
    """Per-round zCDP ``2 B^2 / (n^2 m^2 xi_t^2)`` for each noise variance."""
    v = np.asarray(getattr(variances, "variances", variances), dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise DomainError("schedule must be a nonempty 1-d sequence of variances")
    if not np.all(v > 0):
        raise DomainError("every noise variance must be positive")
    scale = 2.0 * ctx.grad_bound_B**2 / (float(ctx.n) ** 2 * float(ctx.m) ** 2)
    return scale / v


def audit_schedule(schedule, ctx: SensitivityContext, delta: float) -> PrivacyBudget:
    """Realized privacy of running the solver with ``schedule``.

    ``schedule`` is a NoiseSchedule or a plain sequence of variances.
    """
    rho = math.fsum(per_round_rho(schedule, ctx))
    return PrivacyBudget.from_rho(rho, delta)
