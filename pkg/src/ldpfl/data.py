"""libsvm parsing, worker partitioning and synthetic problem generation."""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Literal, Sequence

import numpy as np

from .errors import DomainError, InsufficientDataError, ParseError
from .problem import Sample, WorkerDataset


_MAX_INDEX = 2**31 - 1


@dataclass(frozen=True, eq=False)
class Dataset:
    samples: tuple[Sample, ...]
    d: int

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        if self.d < 1:
            raise DomainError("dimension must be positive")
        if any(s.min_dim > self.d for s in self.samples):
            raise DomainError(f"feature index beyond dimension {self.d}")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples])


def _lines(source) -> Iterable[tuple[int, str]]:
    if isinstance(source, (bytes, bytearray)):
        source = io.BytesIO(source)
    elif isinstance(source, str):
        source = io.StringIO(source)
    for lineno, raw in enumerate(source, start=1):
        if isinstance(raw, (bytes, bytearray)):
            try:
                raw = raw.decode("utf-8")
            except UnicodeDecodeError as exc:
                raise ParseError(f"invalid UTF-8 ({exc.reason})", lineno) from None
        yield lineno, raw


def _number(token: str, what: str, lineno: int) -> float:
    try:
        v = float(token)
    except ValueError:
        raise ParseError(f"bad {what} {token!r}", lineno) from None
    if not math.isfinite(v):
        raise ParseError(f"non-finite {what} {token!r}", lineno)
    return v


def parse_libsvm(source: str | bytes | IO, d: int | None = None) -> Dataset:
    """Parse ``label idx:val idx:val ...`` lines (1-based, strictly increasing indices).

    Labels are real numbers mapped by sign: ``> 0`` becomes +1, anything else -1.
    Blank lines and ``#`` comments are skipped.  ``d`` overrides the inferred
    dimension (the largest index seen) and must not be smaller than it.
    """
    samples = []
    max_idx = 0
    for lineno, raw in _lines(source):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        label = 1 if _number(tokens[0], "label", lineno) > 0 else -1
        idx = np.empty(len(tokens) - 1, dtype=np.int64)
        val = np.empty(len(tokens) - 1)
        prev = 0
        for k, tok in enumerate(tokens[1:]):
            head, sep, tail = tok.partition(":")
            if not sep or not head.isdigit() or not head.isascii():
                raise ParseError(f"malformed feature {tok!r}", lineno)
            j = int(head)
            if not 1 <= j <= _MAX_INDEX:
                raise ParseError(f"feature index {j} outside [1, {_MAX_INDEX}]", lineno)
            if j <= prev:
                raise ParseError(f"feature indices not strictly increasing at {j}", lineno)
            prev = j
            idx[k] = j - 1
            val[k] = _number(tail, "feature value", lineno)
        max_idx = max(max_idx, prev)
        samples.append(Sample(idx, val, label))
    if not samples:
        raise ParseError("empty input: no samples")
    if d is None:
        d = max(max_idx, 1)
    elif d < max_idx:
        raise ParseError(f"dimension override {d} is smaller than the largest index {max_idx}")
    return Dataset(tuple(samples), int(d))


def load_libsvm(path: str | Path, d: int | None = None) -> Dataset:
    with open(path, "rb") as fh:
        return parse_libsvm(fh, d)


def serialize_libsvm(data: Dataset | Sequence[Sample]) -> str:
    """Canonical libsvm text: ``+1``/``-1`` labels and ``repr`` float values."""
    samples = data.samples if isinstance(data, Dataset) else data
    out = []
    for s in samples:
        parts = ["+1" if s.label > 0 else "-1"]
        parts += [f"{j + 1}:{float(v)!r}" for j, v in zip(s.indices.tolist(), s.values)]
        out.append(" ".join(parts))
    return "\n".join(out) + "\n"


def scale_features(data: Dataset) -> Dataset:
    """Scale every feature column to [-1, 1] by its largest absolute value."""
    peak = np.zeros(data.d)
    for s in data.samples:
        np.maximum.at(peak, s.indices, np.abs(s.values))
    peak[peak == 0] = 1.0
    return Dataset(tuple(Sample(s.indices, s.values / peak[s.indices], s.label)
                         for s in data.samples), data.d)


@dataclass(frozen=True)
class PartitionPlan:
    n: int
    m: int
    strategy: Literal["uniform_random", "label_sorted"] = "uniform_random"
    seed: int = 0

    def __post_init__(self):
        if self.n < 1 or self.m < 1:
            raise DomainError("n and m must be positive")
        if self.strategy not in ("uniform_random", "label_sorted"):
            raise DomainError(f"unknown partition strategy {self.strategy!r}")


def partition(data: Dataset, plan: PartitionPlan) -> list[WorkerDataset]:
    """Deal ``n * m`` samples out to workers.

    Both strategies draw the same seeded random subset; ``label_sorted`` then
    orders it by label (stable) before chunking, which makes the workers as
    heterogeneous as the labels allow.
    """
    need = plan.n * plan.m
    if need > len(data):
        raise InsufficientDataError(f"need {need} samples for {plan.n} x {plan.m}, have {len(data)}")
    rng = np.random.default_rng(plan.seed)
    chosen = rng.permutation(len(data))[:need]
    if plan.strategy == "label_sorted":
        labels = data.labels[chosen]
        chosen = chosen[np.argsort(labels, kind="stable")]
    return [WorkerDataset(tuple(data.samples[k] for k in chosen[i * plan.m:(i + 1) * plan.m]), i, data.d)
            for i in range(plan.n)]


def synthesize(kind: Literal["quadratic_means", "logistic_separable"], n: int, m: int, d: int,
               seed: int, *, centers=None, margin: float = 1.0, noise: float = 1.0,
               flip: float = 0.0) -> tuple[list[WorkerDataset], np.ndarray | None]:
    """Generate per-worker data.

    ``quadratic_means``: worker i holds m points whose mean is exactly its
    center c_i (standard normal unless ``centers`` is given); with the quadratic
    loss and no l2 term the optimum is mean(c_i), which is returned.

    ``logistic_separable``: a unit separator w is planted; each point is
    ``b * margin * w + e`` with ``e ~ N(0, noise^2 I / d)`` and a fair-coin label
    b, so w classifies almost every point correctly.  ``flip`` flips that
    fraction of labels.  No closed-form optimum is returned.
    """
    if min(n, m, d) < 1:
        raise DomainError("n, m and d must be positive")
    rng = np.random.default_rng(seed)
    workers = []
    if kind == "quadratic_means":
        C = rng.standard_normal((n, d)) if centers is None else np.asarray(centers, dtype=float)
        if C.shape != (n, d):
            raise DomainError(f"centers must have shape {(n, d)}")
        for i in range(n):
            pts = rng.standard_normal((m, d))
            pts += C[i] - pts.mean(axis=0)
            workers.append(WorkerDataset(tuple(Sample.from_dense(p, 1) for p in pts), i, d))
        x_star = np.mean([w.features.mean(axis=0) for w in workers], axis=0)
        return workers, x_star
    if kind == "logistic_separable":
        w = rng.standard_normal(d)
        w /= np.linalg.norm(w)
        for i in range(n):
            b = rng.choice([-1, 1], size=m)
            pts = b[:, None] * margin * w + rng.standard_normal((m, d)) * (noise / math.sqrt(d))
            if flip > 0:
                b = np.where(rng.random(m) < flip, -b, b)
            workers.append(WorkerDataset(tuple(Sample.from_dense(p, int(l)) for p, l in zip(pts, b)), i, d))
        return workers, None
    raise DomainError(f"unknown synthetic kind {kind!r}")


def separator_accuracy(workers: Sequence[WorkerDataset], w) -> float:
    hits = sum(int(np.sum(np.sign(ds.features @ w) == ds.labels)) for ds in workers)
    return hits / sum(ds.m for ds in workers)


def save_workers(path: str | Path, workers: Sequence[WorkerDataset], x_star=None):
    """Write a partitioned dataset cache as JSON."""
    obj = {
        "d": workers[0].d,
        "workers": [[{"label": s.label, "indices": s.indices.tolist(),
                      "values": s.values.tolist()} for s in ds.samples] for ds in workers],
        "x_star": None if x_star is None else np.asarray(x_star, dtype=float).tolist(),
    }
    Path(path).write_text(json.dumps(obj))


def load_workers(path: str | Path) -> tuple[list[WorkerDataset], np.ndarray | None]:
    try:
        obj = json.loads(Path(path).read_text())
        d = int(obj["d"])
        workers = [WorkerDataset(tuple(Sample(s["indices"], s["values"], s["label"]) for s in rows), i, d)
                   for i, rows in enumerate(obj["workers"])]
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad dataset cache {path}: {exc}") from None
    x_star = obj.get("x_star")
    return workers, None if x_star is None else np.asarray(x_star, dtype=float)
