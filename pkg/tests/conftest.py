import numpy as np
import pytest

from ldpfl.data import synthesize
from ldpfl.problem import ProblemSpec, Regularizer


def quadratic_problem(n=5, d=4, seed=0, l2=0.0, centers=None):
    workers, x_star = synthesize("quadratic_means", n, 3, d, seed, centers=centers)
    return ProblemSpec.build(workers, l2, Regularizer.none(), "quadratic", grad_bound=1.0), x_star


def logistic_problem(n=4, m=12, d=5, seed=0, l2=0.1, reg=None, grad_bound=None, **kw):
    workers, _ = synthesize("logistic_separable", n, m, d, seed, **kw)
    return ProblemSpec.build(workers, l2, reg or Regularizer.box(5.0), "logistic", grad_bound)


@pytest.fixture
def quad():
    return quadratic_problem()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# Acceptance tests append (label, passed, detail) here; echoed after the run.
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for label, ok, detail in ACCEPTANCE_LINES:
            terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {label}: {detail}")
