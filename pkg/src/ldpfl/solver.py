"""Centralized reference solution by plain proximal gradient descent."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, DomainError
from .problem import ProblemSpec, prox


@dataclass
class SolveReport:
    x_star: np.ndarray
    residual: float
    iterations: int

    def to_json(self) -> dict:
        return {"x_star": [float(v) for v in self.x_star], "residual": self.residual,
                "iterations": self.iterations}


def _step(problem: ProblemSpec, x: np.ndarray, eta: float) -> np.ndarray:
    return prox(problem.regularizer, x - eta * problem.average_gradient(x), eta)


def kkt_residual(problem: ProblemSpec, x, eta: float | None = None) -> float:
    """Norm of the prox-gradient mapping ``||x - prox_{eta g}(x - eta grad F(x))|| / eta``.

    Zero exactly at the (unique) minimizer.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (problem.d,):
        raise DomainError(f"x has shape {x.shape}, expected ({problem.d},)")
    if eta is None:
        eta = 1.0 / problem.centralized_smoothness
    return float(np.linalg.norm(x - _step(problem, x, eta))) / eta


def solve(problem: ProblemSpec, tol: float = 1e-10, max_iter: int = 1_000_000,
          x0=None) -> SolveReport:
    """Minimize ``(1/n) sum_i f_i(x) + g(x)`` to a prox-gradient residual below ``tol``.

    Raises ConvergenceError (carrying the best SolveReport) if ``max_iter``
    steps do not suffice.
    """
    if not tol > 0:
        raise DomainError("tol must be positive")
    eta = 1.0 / problem.centralized_smoothness
    x = np.zeros(problem.d) if x0 is None else np.array(x0, dtype=float)
    x = prox(problem.regularizer, x, eta)
    best = SolveReport(x.copy(), math.inf, 0)
    for it in range(max_iter + 1):
        nxt = _step(problem, x, eta)
        res = float(np.linalg.norm(x - nxt)) / eta
        if res < best.residual:
            best = SolveReport(x.copy(), res, it)
        if res <= tol:
            return best
        x = nxt
    raise ConvergenceError(f"no convergence to {tol:g} within {max_iter} iterations "
                           f"(best residual {best.residual:.3g})", best)
