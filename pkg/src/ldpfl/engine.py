"""Simulation of the locally private primal-dual federated solver.

Per round every worker releases an obfuscated model

    x~_i = x_i - gamma * (grad f_i(x_i) / n + zeta_i + Lambda_i),  zeta_i ~ N(0, xi_t^2 I),

the server broadcasts the mean of the x~_i, and each worker updates its dual
``Lambda_i += x~_i - mean``, takes ``z_i = x~_i - gamma (x~_i - mean)`` and sets
``x_i = prox_{(gamma/n) g}(z_i)``.  ``run`` follows exactly this message flow;
``run_compact`` keeps the stacked dual y and applies the consensus projector
``L = (I - 11^T/n) (x) I`` explicitly, with ``Lambda = L y``.

Both accept a leading batch of independent seeds through :func:`run_batch`,
which is how repeated experiments are simulated efficiently.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Literal, Sequence

import numpy as np

from .errors import ConfigError, DivergenceError, DomainError
from .privacy import SensitivityContext, per_round_rho
from .problem import ProblemSpec, prox
from .schedule import NoiseSchedule

Form = Literal["lambda_form", "y_form"]

DIVERGENCE_NORM = 1e12
_NOISE_CHUNK = 256
_MAX_SEED = 2**64


@dataclass(eq=False)
class FederationState:
    """Worker iterates after ``round`` completed rounds.

    Arrays have shape (n, d), or (R, n, d) for batched runs.  ``y`` is only
    tracked by the compact form; ``x_tilde`` holds the last released models.
    """

    x: np.ndarray
    lam: np.ndarray
    round: int = 0
    y: np.ndarray | None = None
    x_tilde: np.ndarray | None = None

    @property
    def x_bar(self) -> np.ndarray:
        return self.x.mean(axis=-2)

    def select(self, r: int) -> "FederationState":
        """Member ``r`` of a batched state."""
        pick = (lambda a: None if a is None else a[r])
        return FederationState(self.x[r], self.lam[r], self.round, pick(self.y), pick(self.x_tilde))


@dataclass
class RunConfig:
    problem: ProblemSpec
    schedule: NoiseSchedule | None
    gamma: float
    T: int
    seed: int = 0
    form: Form = "lambda_form"
    init: np.ndarray | None = None
    metric_ref: np.ndarray | None = None
    gamma_policy: Literal["warn", "reject"] = "warn"
    metric_stride: int = 1

    def __post_init__(self):
        if isinstance(self.T, bool) or int(self.T) != self.T or self.T < 0:
            raise ConfigError(f"T must be a nonnegative integer, got {self.T!r}")
        if self.schedule is not None and self.schedule.T != self.T:
            raise ConfigError(f"schedule has {self.schedule.T} rounds but T = {self.T}")
        if not (0 <= int(self.seed) < _MAX_SEED):
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if self.form not in ("lambda_form", "y_form"):
            raise ConfigError(f"unknown form {self.form!r}")
        if self.metric_stride < 1:
            raise ConfigError("metric_stride must be >= 1")
        if not (math.isfinite(self.gamma) and self.gamma > 0):
            raise ConfigError(f"gamma must be positive, got {self.gamma!r}")
        bound = max_step_size(self.problem)
        if self.gamma > bound * (1 + 1e-12):
            msg = f"gamma={self.gamma:g} exceeds min(1/4, 1/L_f)={bound:g}; convergence is not guaranteed"
            if self.gamma_policy == "reject":
                raise ConfigError(msg)
            warnings.warn(msg, RuntimeWarning, stacklevel=3)
        if self.metric_ref is not None:
            ref = np.asarray(self.metric_ref, dtype=float)
            if ref.shape != (self.problem.d,):
                raise ConfigError(f"metric_ref has shape {ref.shape}, expected ({self.problem.d},)")
            if not np.linalg.norm(ref) > 0:
                raise ConfigError("metric_ref must be nonzero (the metric divides by ||x*||^2)")
            self.metric_ref = ref

    def initial_x(self) -> np.ndarray:
        n, d = self.problem.n, self.problem.d
        if self.init is None:
            return np.zeros((n, d))
        x0 = np.asarray(self.init, dtype=float)
        if x0.shape not in ((d,), (n, d)):
            raise ConfigError(f"init must have shape ({d},) or ({n}, {d})")
        return np.broadcast_to(x0, (n, d)).copy()


def max_step_size(problem: ProblemSpec) -> float:
    return min(0.25, 1.0 / problem.L_f)


@dataclass(eq=False)
class MetricSeries:
    """Per-round metrics; one row per logged round."""

    t: np.ndarray
    optimality: np.ndarray
    consensus: np.ndarray
    mean_error: np.ndarray
    cumulative_rho: np.ndarray

    COLUMNS = ("t", "optimality", "consensus", "mean_error", "cumulative_rho")

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=np.int64)
        for name in self.COLUMNS[1:]:
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        if np.any(np.diff(self.t) <= 0):
            raise DomainError("metric rounds must be strictly increasing")
        if np.any(self.cumulative_rho[1:] < self.cumulative_rho[:-1]):
            raise DomainError("cumulative rho must be nondecreasing")

    def __len__(self) -> int:
        return int(self.t.size)

    def rows(self) -> list[tuple]:
        return list(zip(self.t.tolist(), *(getattr(self, c).tolist() for c in self.COLUMNS[1:])))

    def final(self) -> dict:
        return dict(zip(self.COLUMNS, self.rows()[-1])) if len(self) else {}

    def to_csv(self, target: str | Path | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.COLUMNS)
        for row in self.rows():
            w.writerow([row[0], *(repr(float(v)) for v in row[1:])])
        text = buf.getvalue()
        if target is not None:
            Path(target).write_text(text)
        return text

    @classmethod
    def empty(cls) -> "MetricSeries":
        e = np.empty(0)
        return cls(np.empty(0, dtype=np.int64), e, e, e, e)


class NoiseStream:
    """Standard normal noise, one Philox stream per (seed, worker).

    Round t of worker i always receives the t-th block of d variates from
    stream (seed, i), whatever order or batching the simulation uses.
    """

    def __init__(self, seed: int, n: int, d: int, chunk: int = _NOISE_CHUNK):
        self.n, self.d, self.chunk = n, d, chunk
        self._gens = [np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), i])))
                      for i in range(n)]
        self._buf = np.empty((0, n, d))
        self._pos = 0

    def next_round(self) -> np.ndarray:
        if self._pos == len(self._buf):
            self._buf = np.stack([g.standard_normal((self.chunk, self.d)) for g in self._gens], axis=1)
            self._pos = 0
        out = self._buf[self._pos]
        self._pos += 1
        return out


def optimality_metric(state: FederationState, x_star) -> tuple:
    """(optimality, consensus, mean_error).

    consensus = (1/n) sum_i ||x_bar - x_i||^2 and mean_error =
    ||x_bar - x*||^2 / ||x*||^2; optimality is their sum.  Batched states give
    arrays.
    """
    x_star = np.asarray(x_star, dtype=float)
    ref = float(x_star @ x_star)
    if not ref > 0:
        raise DomainError("x* must be nonzero")
    return _metrics(state.x, x_star, ref)


def _metrics(X: np.ndarray, x_star, ref):
    xbar = X.mean(axis=-2)
    dev = X - xbar[..., None, :]
    consensus = np.einsum("...nd,...nd->...", dev, dev) / X.shape[-2]
    if x_star is None:
        mean_error = np.full_like(consensus, np.nan)
    else:
        e = xbar - x_star
        mean_error = np.einsum("...d,...d->...", e, e) / ref
    return consensus + mean_error, consensus, mean_error


def dual_optimum(problem: ProblemSpec, x_star) -> np.ndarray:
    """Stacked dual solution y* for the optimum x*.

    ``y*_i = -(grad f_i(x*) - mean_j grad f_j(x*)) / n`` is mean-centered, so
    ``L y* = y*``, and it satisfies the fixed-point relation
    ``z* = x* - gamma grad f(x*) - gamma L y*`` with ``x* = prox(z*)`` whenever
    x* solves the problem.  Without a regularizer the mean gradient vanishes
    and this is just ``-grad f(x*)`` blockwise.
    """
    x_star = np.asarray(x_star, dtype=float)
    G = problem.gradients(np.broadcast_to(x_star, (problem.n, problem.d)))
    return -(G - G.mean(axis=0)) / problem.n


def lyapunov(state: FederationState, x_star, y_star, gamma: float):
    """``||x - x*||^2 + gamma ||y - y*||^2`` over all worker blocks (compact form only)."""
    if state.y is None:
        raise DomainError("the Lyapunov function needs the dual y, which only run_compact tracks")
    ex = state.x - np.asarray(x_star, dtype=float)
    ey = state.y - np.asarray(y_star, dtype=float)
    return (np.einsum("...nd,...nd->...", ex, ex)
            + gamma * np.einsum("...nd,...nd->...", ey, ey))


Observer = Callable[[FederationState], None]


def _simulate(config: RunConfig, seeds: Sequence[int], form: Form,
              observer: Observer | None) -> tuple[FederationState, list[MetricSeries]]:
    prob = config.problem
    n, d, T, gamma = prob.n, prob.d, int(config.T), float(config.gamma)
    R = len(seeds)
    for s in seeds:
        if not 0 <= int(s) < _MAX_SEED:
            raise ConfigError("seed must be a 64-bit unsigned integer")

    X = np.broadcast_to(config.initial_x(), (R, n, d)).copy()
    lam = np.zeros((R, n, d))
    y = np.zeros((R, n, d)) if form == "y_form" else None
    x_tilde = None

    if config.schedule is None:
        sigmas = np.zeros(T)
        cum_rho = np.full(T, math.inf)
    else:
        sigmas = np.sqrt(config.schedule.variances)
        ctx = SensitivityContext(gamma, prob.grad_bound_B, n, prob.m)
        cum_rho = np.cumsum(per_round_rho(config.schedule, ctx))
    streams = [NoiseStream(s, n, d) for s in seeds] if config.schedule is not None else None

    x_ref = config.metric_ref
    ref = None if x_ref is None else float(x_ref @ x_ref)
    logged = [t for t in range(1, T + 1) if t % config.metric_stride == 0 or t == T]
    cols = np.empty((3, len(logged), R))
    k = 0

    def snapshot(t):
        return FederationState(X, lam if form == "lambda_form" else _center(y), t, y, x_tilde)

    if observer is not None:
        observer(snapshot(0))

    for t in range(1, T + 1):
        G = prob.gradients(X)
        if form == "lambda_form":
            dual = lam
        else:
            dual = _center(y)
        step = G / n + dual
        if streams is not None:
            step += sigmas[t - 1] * np.stack([s.next_round() for s in streams])
        x_tilde = X - gamma * step
        dev = x_tilde - x_tilde.mean(axis=1, keepdims=True)
        if form == "lambda_form":
            lam = lam + dev
        else:
            y = y + dev
        Z = x_tilde - gamma * dev
        X = prox(prob.regularizer, Z, gamma / n)

        sq = np.einsum("rnd,rnd->rn", x_tilde, x_tilde)
        if not (np.all(np.isfinite(sq)) and sq.max() <= DIVERGENCE_NORM**2):
            raise DivergenceError("iterate norm exceeded the divergence guard or became non-finite", t)

        if k < len(logged) and logged[k] == t:
            cols[:, k, :] = _metrics(X, x_ref, ref)
            k += 1
        if observer is not None:
            observer(snapshot(t))

    t_arr = np.asarray(logged, dtype=np.int64)
    rho_logged = cum_rho[t_arr - 1] if T else np.empty(0)
    series = [MetricSeries(t_arr, cols[0, :, r], cols[1, :, r], cols[2, :, r], rho_logged)
              for r in range(R)]
    if form == "lambda_form":
        final = FederationState(X, lam, T, None, x_tilde)
    else:
        final = FederationState(X, _center(y), T, y, x_tilde)
    return final, series


def _center(a: np.ndarray) -> np.ndarray:
    """Apply L: subtract the worker mean from every block."""
    return a - a.mean(axis=-2, keepdims=True)


def run_batch(config: RunConfig, seeds: Sequence[int], form: Form | None = None,
              observer: Observer | None = None) -> tuple[FederationState, list[MetricSeries]]:
    """Simulate one independent run per seed; the returned state is batched (R, n, d)."""
    return _simulate(config, list(seeds), form or config.form, observer)


def _single(config: RunConfig, form: Form, observer):
    wrapped = None if observer is None else (lambda st: observer(st.select(0)))
    state, series = _simulate(config, [config.seed], form, wrapped)
    return state.select(0), series[0]


def run(config: RunConfig, observer: Observer | None = None) -> tuple[FederationState, MetricSeries]:
    """Simulate the worker/server message flow with duals Lambda_i."""
    return _single(config, "lambda_form", observer)


def run_compact(config: RunConfig, observer: Observer | None = None
                ) -> tuple[FederationState, MetricSeries]:
    """Simulate the stacked primal-dual iteration that tracks y (Lambda = L y)."""
    return _single(config, "y_form", observer)


def run_configured(config: RunConfig, observer: Observer | None = None):
    return _single(config, config.form, observer)
