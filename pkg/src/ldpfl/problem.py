"""Composite objective: smooth per-sample losses plus a prox-friendly regularizer.

The federated objective is ``(1/n) sum_i f_i(x) + g(x)`` with
``f_i = (1/m) sum_l f_il``.  Two smooth families are supported:

``logistic``   f_il(x) = log(1 + exp(-b a^T x)) + (l2/2) ||x||^2
``quadratic``  f_il(x) = (1/2) ||x - a||^2      + (l2/2) ||x||^2

The quadratic family reuses the sample features as centers and ignores labels;
it exists for tests with closed-form optima.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Literal, Sequence

import numpy as np
from scipy.special import expit

from .errors import DomainError

Loss = Literal["logistic", "quadratic"]
LOSSES = ("logistic", "quadratic")


@dataclass(frozen=True, eq=False)
class Sample:
    """One sparse feature vector (0-based, strictly increasing indices) and a +-1 label."""

    indices: np.ndarray
    values: np.ndarray
    label: int

    def __post_init__(self):
        idx = np.array(self.indices, dtype=np.int64).reshape(-1)
        val = np.array(self.values, dtype=float).reshape(-1)
        if idx.shape != val.shape:
            raise DomainError("indices and values must have equal length")
        if idx.size and (idx[0] < 0 or np.any(np.diff(idx) <= 0)):
            raise DomainError("feature indices must be nonnegative and strictly increasing")
        if not np.all(np.isfinite(val)):
            raise DomainError("feature values must be finite")
        if self.label not in (-1, 1):
            raise DomainError(f"label must be -1 or +1, got {self.label!r}")
        idx.setflags(write=False)
        val.setflags(write=False)
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", val)
        object.__setattr__(self, "label", int(self.label))

    @classmethod
    def from_dense(cls, a, label: int) -> "Sample":
        a = np.asarray(a, dtype=float)
        nz = np.flatnonzero(a)
        return cls(nz, a[nz], label)

    @property
    def min_dim(self) -> int:
        """Smallest dimension that can hold this sample."""
        return int(self.indices[-1]) + 1 if self.indices.size else 0

    def dense(self, d: int) -> np.ndarray:
        if self.min_dim > d:
            raise DomainError(f"sample needs dimension >= {self.min_dim}, got {d}")
        out = np.zeros(d)
        out[self.indices] = self.values
        return out

    def __eq__(self, other):
        if not isinstance(other, Sample):
            return NotImplemented
        return (self.label == other.label and np.array_equal(self.indices, other.indices)
                and np.array_equal(self.values, other.values))

    def __hash__(self):
        return hash((self.label, self.indices.tobytes(), self.values.tobytes()))


@dataclass(frozen=True, eq=False)
class WorkerDataset:
    samples: tuple[Sample, ...]
    worker_id: int
    d: int

    def __post_init__(self):
        samples = tuple(self.samples)
        object.__setattr__(self, "samples", samples)
        if not samples:
            raise DomainError("a worker needs at least one sample")
        if self.d < 1:
            raise DomainError("dimension must be positive")
        if max(s.min_dim for s in samples) > self.d:
            raise DomainError(f"worker {self.worker_id}: feature index beyond dimension {self.d}")

    @property
    def m(self) -> int:
        return len(self.samples)

    @cached_property
    def features(self) -> np.ndarray:
        """Dense (m, d) feature matrix."""
        A = np.zeros((self.m, self.d))
        for row, s in enumerate(self.samples):
            A[row, s.indices] = s.values
        A.setflags(write=False)
        return A

    @cached_property
    def labels(self) -> np.ndarray:
        b = np.array([s.label for s in self.samples], dtype=float)
        b.setflags(write=False)
        return b


@dataclass(frozen=True, eq=False)
class Regularizer:
    """``none``, the indicator of the box [-alpha, alpha]^d, or weighted l1 over that box."""

    kind: Literal["none", "box", "weighted_l1_box"] = "none"
    alpha: float = math.inf
    weights: np.ndarray | float = 0.0

    def __post_init__(self):
        if self.kind not in ("none", "box", "weighted_l1_box"):
            raise DomainError(f"unknown regularizer kind {self.kind!r}")
        if self.kind != "none" and not (math.isfinite(self.alpha) and self.alpha > 0):
            raise DomainError(f"alpha must be positive and finite, got {self.alpha!r}")
        w = np.array(self.weights, dtype=float)
        if self.kind == "weighted_l1_box" and not np.all(w > 0):
            raise DomainError("l1 weights must be positive")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @classmethod
    def none(cls) -> "Regularizer":
        return cls("none")

    @classmethod
    def box(cls, alpha: float) -> "Regularizer":
        return cls("box", float(alpha))

    @classmethod
    def weighted_l1_box(cls, weights, alpha: float) -> "Regularizer":
        return cls("weighted_l1_box", float(alpha), weights)

    @property
    def bounded(self) -> bool:
        return self.kind != "none"

    def check_dim(self, d: int):
        if self.weights.ndim and self.weights.shape != (d,):
            raise DomainError(f"weights have shape {self.weights.shape}, expected ({d},)")

    def value(self, x) -> float:
        x = np.asarray(x, dtype=float)
        if self.kind == "none":
            return 0.0
        if np.any(np.abs(x) > self.alpha):
            return math.inf
        if self.kind == "box":
            return 0.0
        return float(np.sum(np.broadcast_to(self.weights, x.shape) * np.abs(x)))

    def to_json(self) -> dict:
        w = self.weights
        return {"kind": self.kind, "alpha": self.alpha if self.bounded else None,
                "weights": w.tolist() if w.ndim else float(w)}


def prox(regularizer: Regularizer, z, scale: float) -> np.ndarray:
    """``argmin_u scale * g(u) + 0.5 ||z - u||^2``, applied along the last axis."""
    if not scale > 0:
        raise DomainError(f"prox scale must be positive, got {scale!r}")
    z = np.asarray(z, dtype=float)
    regularizer.check_dim(z.shape[-1] if z.ndim else 1)
    if regularizer.kind == "none":
        return z.copy()
    a = regularizer.alpha
    if regularizer.kind == "box":
        return np.clip(z, -a, a)
    shrunk = np.maximum(np.abs(z) - scale * regularizer.weights, 0.0)
    return np.sign(z) * np.minimum(shrunk, a)


def _check_loss(loss: str):
    if loss not in LOSSES:
        raise DomainError(f"unknown loss {loss!r}")


def sample_gradient(sample: Sample, x, l2_coeff: float = 0.0, loss: Loss = "logistic") -> np.ndarray:
    _check_loss(loss)
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise DomainError("x must be a vector")
    a = sample.dense(x.size)
    if loss == "quadratic":
        return x - a + l2_coeff * x
    b = sample.label
    return -b * expit(-b * (a @ x)) * a + l2_coeff * x


def worker_gradient(dataset: WorkerDataset, x, l2_coeff: float = 0.0,
                    loss: Loss = "logistic") -> np.ndarray:
    """Gradient of ``f_i``: the mean of the per-sample gradients."""
    _check_loss(loss)
    x = np.asarray(x, dtype=float)
    if x.shape != (dataset.d,):
        raise DomainError(f"x has shape {x.shape}, dataset dimension is {dataset.d}")
    A, b = dataset.features, dataset.labels
    if loss == "quadratic":
        return x - A.mean(axis=0) + l2_coeff * x
    coef = -b * expit(-b * (A @ x))
    return A.T @ coef / dataset.m + l2_coeff * x


def worker_smoothness(dataset: WorkerDataset, l2_coeff: float, loss: Loss = "logistic") -> float:
    """Upper bound on the Lipschitz constant of the gradient of ``f_i``."""
    if loss == "quadratic":
        return 1.0 + l2_coeff
    sq = np.einsum("ij,ij->i", dataset.features, dataset.features)
    return l2_coeff + float(sq.sum()) / (4.0 * dataset.m)


def derive_constants(datasets: Sequence[WorkerDataset], l2_coeff: float, regularizer: Regularizer,
                     loss: Loss = "logistic", grad_bound: float | None = None
                     ) -> tuple[float, float, float]:
    """(mu_f, L_f, B) for the stacked objective ``f(x_1..x_n) = (1/n) sum_i f_i(x_i)``.

    The block Hessian of the stacked objective is ``(1/n) Hess f_i``, hence the
    division by n.  B bounds every per-sample gradient norm while the iterates
    stay in the regularizer's box; pass ``grad_bound`` to override it.
    """
    _check_loss(loss)
    if not datasets:
        raise DomainError("need at least one worker")
    if l2_coeff < 0:
        raise DomainError("l2 coefficient must be nonnegative")
    n = len(datasets)
    d = datasets[0].d
    curvature = 1.0 + l2_coeff if loss == "quadratic" else l2_coeff
    mu_f = curvature / n
    if not mu_f > 0:
        raise DomainError("objective is not strongly convex (mu_f = 0); use a positive l2 coefficient")
    L_f = max(worker_smoothness(ds, l2_coeff, loss) for ds in datasets) / n

    if grad_bound is not None:
        if not grad_bound > 0:
            raise DomainError("grad_bound must be positive")
        return mu_f, L_f, float(grad_bound)
    if not regularizer.bounded:
        raise DomainError("gradient bound B is unbounded without a box regularizer; pass grad_bound")
    max_norm = max(float(np.sqrt(np.einsum("ij,ij->i", ds.features, ds.features).max()))
                   for ds in datasets)
    B = max_norm + curvature * regularizer.alpha * math.sqrt(d)
    return mu_f, L_f, B


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    datasets: tuple[WorkerDataset, ...]
    l2_coeff: float
    regularizer: Regularizer
    mu_f: float
    L_f: float
    grad_bound_B: float
    loss: Loss = "logistic"

    def __post_init__(self):
        ds = tuple(self.datasets)
        object.__setattr__(self, "datasets", ds)
        _check_loss(self.loss)
        if not ds:
            raise DomainError("need at least one worker")
        if len({w.d for w in ds}) != 1:
            raise DomainError("all workers must share the dimension d")
        if len({w.m for w in ds}) != 1:
            raise DomainError("all workers must hold the same number of samples m")
        if not (0 < self.mu_f <= self.L_f):
            raise DomainError(f"need 0 < mu_f <= L_f, got mu_f={self.mu_f!r}, L_f={self.L_f!r}")
        if not self.grad_bound_B > 0:
            raise DomainError("grad_bound_B must be positive")
        self.regularizer.check_dim(self.d)

    @classmethod
    def build(cls, datasets: Sequence[WorkerDataset], l2_coeff: float,
              regularizer: Regularizer | None = None, loss: Loss = "logistic",
              grad_bound: float | None = None) -> "ProblemSpec":
        reg = regularizer or Regularizer.none()
        mu_f, L_f, B = derive_constants(datasets, l2_coeff, reg, loss, grad_bound)
        return cls(tuple(datasets), float(l2_coeff), reg, mu_f, L_f, B, loss)

    @property
    def n(self) -> int:
        return len(self.datasets)

    @property
    def m(self) -> int:
        return self.datasets[0].m

    @property
    def d(self) -> int:
        return self.datasets[0].d

    @cached_property
    def features(self) -> np.ndarray:
        """(n, m, d) stack of worker feature matrices."""
        return np.stack([w.features for w in self.datasets])

    @cached_property
    def labels(self) -> np.ndarray:
        return np.stack([w.labels for w in self.datasets])

    @cached_property
    def _centers(self) -> np.ndarray:
        return self.features.mean(axis=1)

    @property
    def centralized_smoothness(self) -> float:
        """Smoothness of the averaged loss ``(1/n) sum_i f_i``."""
        if self.loss == "quadratic":
            return 1.0 + self.l2_coeff
        A = self.features
        return self.l2_coeff + float(np.einsum("ijk,ijk->", A, A)) / (4.0 * self.n * self.m)

    def gradients(self, X) -> np.ndarray:
        """``grad f_i(x_i)`` for every worker; X has shape (n, d) or (R, n, d)."""
        X = np.asarray(X, dtype=float)
        single = X.ndim == 2
        if single:
            X = X[None]
        if X.shape[1:] != (self.n, self.d):
            raise DomainError(f"iterates have shape {X.shape[1:]}, expected {(self.n, self.d)}")
        if self.loss == "quadratic":
            G = (1.0 + self.l2_coeff) * X - self._centers
        else:
            A, b = self.features, self.labels[:, :, None]
            margins = np.matmul(A, X.transpose(1, 2, 0))           # (n, m, R)
            coef = -b * expit(-b * margins)
            G = np.matmul(A.transpose(0, 2, 1), coef).transpose(2, 0, 1) / self.m
            G += self.l2_coeff * X
        return G[0] if single else G

    def average_gradient(self, x) -> np.ndarray:
        """Gradient of ``(1/n) sum_i f_i`` at a single point."""
        x = np.asarray(x, dtype=float)
        return self.gradients(np.broadcast_to(x, (self.n, self.d))).mean(axis=0)

    def smooth_value(self, x) -> float:
        x = np.asarray(x, dtype=float)
        if self.loss == "quadratic":
            diff = self.features - x
            val = 0.5 * float(np.einsum("ijk,ijk->", diff, diff)) / (self.n * self.m)
        else:
            margins = self.labels * (self.features @ x)
            val = float(np.logaddexp(0.0, -margins).mean())
        return val + 0.5 * self.l2_coeff * float(x @ x)

    def objective(self, x) -> float:
        return self.smooth_value(x) + self.regularizer.value(x)
