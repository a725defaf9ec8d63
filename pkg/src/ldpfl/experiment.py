"""Experiment configuration and orchestration behind the command-line tool."""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np

from .data import (PartitionPlan, load_libsvm, load_workers, partition, save_workers,
                   scale_features, serialize_libsvm, synthesize)
from .engine import RunConfig, dual_optimum, max_step_size, run_batch
from .errors import ConfigError, ParseError
from .privacy import PrivacyBudget, SensitivityContext, audit_schedule, per_round_rho
from .problem import ProblemSpec, Regularizer
from .schedule import NoiseSchedule, dynamic_schedule, min_rounds, static_schedule
from .solver import SolveReport, solve

# Seeds are simulated in fixed-size groups so results never depend on --jobs.
SEED_GROUP = 20


@dataclass
class ExperimentConfig:
    dataset: str | None = None
    synthetic: str | None = None
    n: int = 20
    m: int = 100
    d: int | None = None
    data_seed: int = 0
    synthetic_margin: float = 1.0
    synthetic_noise: float = 1.0
    partition: str = "uniform_random"
    partition_seed: int = 0
    normalize: bool = False
    loss: str | None = None
    l2_coeff: float = 0.1
    regularizer: str = "box"
    alpha: float = 1000.0
    omega: float = 0.01
    grad_bound: float | None = None
    epsilon: float = 1.0
    delta: float = 1e-4
    gamma: float | None = None
    gamma_policy: str = "warn"
    T: list[int] = field(default_factory=lambda: [1000])
    schedule: str = "dynamic"
    repeats: int = 20
    base_seed: int = 0
    output: str = "out"
    x_star: str | None = None
    phi1: float | None = None
    metric_stride: int = 1
    solver_tol: float = 1e-10
    solver_max_iter: int = 1_000_000

    def __post_init__(self):
        if isinstance(self.T, int):
            self.T = [self.T]
        self.T = list(self.T)
        if not self.T or any(isinstance(t, bool) or not isinstance(t, int) or t < 1 for t in self.T):
            raise ConfigError("T must be a positive integer or a nonempty list of them")
        if (self.dataset is None) == (self.synthetic is None):
            raise ConfigError("set exactly one of 'dataset' and 'synthetic'")
        if not (isinstance(self.epsilon, (int, float)) and self.epsilon > 0):
            raise ConfigError("epsilon must be positive")
        if not (isinstance(self.delta, (int, float)) and 0 < self.delta < 1):
            raise ConfigError("delta must lie in (0, 1)")
        if not (isinstance(self.repeats, int) and self.repeats >= 1):
            raise ConfigError("repeats must be an integer >= 1")
        if not (isinstance(self.base_seed, int) and 0 <= self.base_seed
                and self.base_seed + self.repeats <= 2**64):
            raise ConfigError("base_seed must be a 64-bit unsigned integer")
        if self.schedule not in ("dynamic", "static"):
            raise ConfigError("schedule must be 'dynamic' or 'static'")
        if self.regularizer not in ("none", "box", "weighted_l1_box"):
            raise ConfigError("regularizer must be 'none', 'box' or 'weighted_l1_box'")
        if self.partition not in ("uniform_random", "label_sorted"):
            raise ConfigError("partition must be 'uniform_random' or 'label_sorted'")
        if self.synthetic not in (None, "quadratic_means", "logistic_separable"):
            raise ConfigError(f"unknown synthetic kind {self.synthetic!r}")
        if self.synthetic is not None and self.d is None:
            raise ConfigError("synthetic data needs 'd'")
        if self.loss is None:
            self.loss = "quadratic" if self.synthetic == "quadratic_means" else "logistic"
        if self.loss not in ("logistic", "quadratic"):
            raise ConfigError("loss must be 'logistic' or 'quadratic'")
        if self.gamma_policy not in ("warn", "reject"):
            raise ConfigError("gamma_policy must be 'warn' or 'reject'")

    @classmethod
    def from_dict(cls, obj: dict[str, Any]) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(obj) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        try:
            return cls(**obj)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        try:
            obj = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(obj, dict):
            raise ConfigError(f"{path}: expected a JSON object")
        return cls.from_dict(obj)

    @property
    def budget(self) -> PrivacyBudget:
        return PrivacyBudget.from_eps_delta(self.epsilon, self.delta)


def load_workers_for(cfg: ExperimentConfig):
    """Worker datasets and, when known in closed form, the optimum."""
    if cfg.synthetic is not None:
        return synthesize(cfg.synthetic, cfg.n, cfg.m, cfg.d, cfg.data_seed,
                          margin=cfg.synthetic_margin, noise=cfg.synthetic_noise)
    path = Path(cfg.dataset)
    if path.suffix == ".json":
        workers, x_star = load_workers(path)
        return workers, x_star
    data = load_libsvm(path, cfg.d)
    if cfg.normalize:
        data = scale_features(data)
    return partition(data, PartitionPlan(cfg.n, cfg.m, cfg.partition, cfg.partition_seed)), None


def build_regularizer(cfg: ExperimentConfig) -> Regularizer:
    if cfg.regularizer == "none":
        return Regularizer.none()
    if cfg.regularizer == "box":
        return Regularizer.box(cfg.alpha)
    return Regularizer.weighted_l1_box(cfg.omega, cfg.alpha)


def build_problem(cfg: ExperimentConfig) -> tuple[ProblemSpec, np.ndarray | None]:
    workers, x_closed = load_workers_for(cfg)
    problem = ProblemSpec.build(workers, cfg.l2_coeff, build_regularizer(cfg), cfg.loss, cfg.grad_bound)
    # The closed form only holds for the unregularized quadratic family.
    if not (cfg.loss == "quadratic" and cfg.l2_coeff == 0 and cfg.regularizer == "none"):
        x_closed = None
    return problem, x_closed


def reference_point(cfg: ExperimentConfig, problem: ProblemSpec) -> np.ndarray:
    if cfg.x_star is not None:
        try:
            obj = json.loads(Path(cfg.x_star).read_text())
            x = np.asarray(obj["x_star"], dtype=float)
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad x* artifact {cfg.x_star}: {exc}") from None
        if x.shape != (problem.d,):
            raise ConfigError(f"x* artifact has dimension {x.size}, problem has {problem.d}")
        return x
    return solve(problem, cfg.solver_tol, cfg.solver_max_iter).x_star


def step_size(cfg: ExperimentConfig, problem: ProblemSpec) -> float:
    return float(cfg.gamma) if cfg.gamma is not None else max_step_size(problem)


def make_schedule(mode: str, T: int, gamma: float, problem: ProblemSpec,
                  budget: PrivacyBudget) -> NoiseSchedule:
    ctx = SensitivityContext(gamma, problem.grad_bound_B, problem.n, problem.m)
    if mode == "dynamic":
        return dynamic_schedule(T, gamma, problem.mu_f, budget.rho_tgt, ctx)
    decay = 1.0 - gamma * min(problem.mu_f, 1.0)
    return static_schedule(T, budget.rho_tgt, ctx, decay_rate=decay)


@dataclass
class Prepared:
    cfg: ExperimentConfig
    problem: ProblemSpec
    x_star: np.ndarray
    gamma: float

    def run_config(self, T: int, mode: str | None = None) -> RunConfig:
        sched = make_schedule(mode or self.cfg.schedule, T, self.gamma, self.problem, self.cfg.budget)
        return RunConfig(self.problem, sched, self.gamma, T, seed=self.cfg.base_seed,
                         metric_ref=self.x_star, gamma_policy=self.cfg.gamma_policy,
                         metric_stride=self.cfg.metric_stride)

    @property
    def ctx(self) -> SensitivityContext:
        return SensitivityContext(self.gamma, self.problem.grad_bound_B, self.problem.n, self.problem.m)


def prepare(cfg: ExperimentConfig) -> Prepared:
    problem, x_closed = build_problem(cfg)
    x_star = x_closed if (x_closed is not None and cfg.x_star is None) else reference_point(cfg, problem)
    return Prepared(cfg, problem, x_star, step_size(cfg, problem))


def _seed_groups(cfg: ExperimentConfig) -> list[list[int]]:
    seeds = [cfg.base_seed + r for r in range(cfg.repeats)]
    return [seeds[i:i + SEED_GROUP] for i in range(0, len(seeds), SEED_GROUP)]


def _run_group(prep: Prepared, T: int, mode: str, seeds: list[int]):
    _, series = run_batch(prep.run_config(T, mode), seeds)
    return series


def simulate_repeats(prep: Prepared, Ts: list[int], mode: str | None = None, jobs: int = 1):
    """MetricSeries for every (T, repeat), ordered by T then repeat index."""
    mode = mode or prep.cfg.schedule
    units = [(T, g) for T in Ts for g in _seed_groups(prep.cfg)]
    if jobs > 1 and len(units) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_run_group, prep, T, mode, g) for T, g in units]
            results = [f.result() for f in futures]
    else:
        results = [_run_group(prep, T, mode, g) for T, g in units]
    out: dict[int, list] = {T: [] for T in Ts}
    for (T, _), series in zip(units, results):
        out[T].extend(series)
    return out


def _fmt(v) -> str:
    return repr(float(v)) if not isinstance(v, (int, np.integer)) else str(int(v))


def _write_csv(path: Path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    path.write_text(buf.getvalue())


def spread(values: np.ndarray, axis: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Sample standard deviation and variance (nan for a single repeat)."""
    k = values.shape[axis]
    if k < 2:
        nan = np.full(np.delete(values.shape, axis), np.nan)
        return nan, nan
    var = np.var(values, axis=axis, ddof=1)
    return np.sqrt(var), var


def cmd_run(cfg: ExperimentConfig, out_dir: str | Path | None = None, jobs: int = 1) -> list[Path]:
    out = Path(out_dir or cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    prep = prepare(cfg)
    written = []
    results = simulate_repeats(prep, cfg.T, jobs=jobs)
    for T in cfg.T:
        series = results[T]
        for r, s in enumerate(series):
            p = out / f"run_T{T}_r{r:03d}.csv"
            s.to_csv(p)
            written.append(p)
        opt = np.stack([s.optimality for s in series])
        std, var = spread(opt)
        rows = zip(series[0].t, opt.mean(axis=0), std, var,
                   np.mean([s.consensus for s in series], axis=0),
                   np.mean([s.mean_error for s in series], axis=0),
                   series[0].cumulative_rho)
        p = out / f"run_T{T}_aggregate.csv"
        _write_csv(p, ("t", "mean_optimality", "std_optimality", "var_optimality",
                       "mean_consensus", "mean_mean_error", "cumulative_rho"), rows)
        written.append(p)
        sched = make_schedule(cfg.schedule, T, prep.gamma, prep.problem, cfg.budget)
        realized = audit_schedule(sched, prep.ctx, cfg.delta)
        meta = {
            "T": T, "gamma": prep.gamma, "repeats": cfg.repeats,
            "seeds": [cfg.base_seed + r for r in range(cfg.repeats)],
            "schedule": sched.to_json(),
            "constants": {"mu_f": prep.problem.mu_f, "L_f": prep.problem.L_f,
                          "grad_bound_B": prep.problem.grad_bound_B},
            "privacy": {"epsilon": cfg.epsilon, "delta": cfg.delta, "rho_tgt": cfg.budget.rho_tgt,
                        "realized_rho": realized.rho_tgt, "realized_epsilon": realized.epsilon},
        }
        p = out / f"run_T{T}_meta.json"
        p.write_text(json.dumps(meta, indent=2) + "\n")
        written.append(p)
    return written


@dataclass
class SweepRow:
    T: int
    mean_final_optimality: float
    std_final_optimality: float
    var_final_optimality: float
    realized_rho: float
    realized_epsilon: float


@dataclass
class SweepResult:
    rows: list[SweepRow]
    mode: str

    HEADER = ("T", "mean_final_optimality", "std_final_optimality", "var_final_optimality",
              "realized_rho", "realized_epsilon")

    def to_csv(self, path: str | Path):
        _write_csv(Path(path), self.HEADER, [tuple(asdict(r).values()) for r in self.rows])


def sweep(prep: Prepared, Ts: list[int], mode: str | None = None, jobs: int = 1) -> SweepResult:
    """Final optimality after T rounds, for each T, with the full budget spent at every T."""
    cfg = prep.cfg
    mode = mode or cfg.schedule
    results = simulate_repeats(prep, Ts, mode, jobs)
    rows = []
    for T in Ts:
        final = np.array([s.optimality[-1] for s in results[T]])
        std, var = spread(final)
        realized = audit_schedule(make_schedule(mode, T, prep.gamma, prep.problem, cfg.budget),
                                  prep.ctx, cfg.delta)
        if realized.epsilon > cfg.epsilon + 1e-9:
            raise ConfigError(f"T={T}: realized epsilon {realized.epsilon!r} exceeds the budget")
        rows.append(SweepRow(T, float(final.mean()), float(std), float(var),
                             realized.rho_tgt, realized.epsilon))
    return SweepResult(rows, mode)


def cmd_sweep_t(cfg: ExperimentConfig, out_dir: str | Path | None = None, jobs: int = 1) -> Path:
    out = Path(out_dir or cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    result = sweep(prepare(cfg), cfg.T, jobs=jobs)
    path = out / "sweep.csv"
    result.to_csv(path)
    return path


def audit_report(cfg: ExperimentConfig, T: int, prep: Prepared) -> dict:
    sched = make_schedule(cfg.schedule, T, prep.gamma, prep.problem, cfg.budget)
    realized = audit_schedule(sched, prep.ctx, cfg.delta)
    if cfg.phi1 is not None:
        phi1 = float(cfg.phi1)
    else:
        # Lyapunov value at the zero start with zero duals.
        y_star = dual_optimum(prep.problem, prep.x_star)
        phi1 = prep.problem.n * float(prep.x_star @ prep.x_star) + prep.gamma * float(np.sum(y_star**2))
    return {
        "T": T,
        "mode": sched.mode,
        "decay_rate": sched.decay_rate,
        "gamma": prep.gamma,
        "rho": realized.rho_tgt,
        "epsilon": realized.epsilon,
        "delta": cfg.delta,
        "rho_tgt": cfg.budget.rho_tgt,
        "per_round_rho": per_round_rho(sched, prep.ctx).tolist(),
        "schedule": sched.variances.tolist(),
        "phi1": phi1,
        "min_rounds": min_rounds(cfg.budget, prep.ctx, prep.problem.mu_f, prep.gamma,
                                 prep.problem.d, phi1),
    }


def cmd_audit(cfg: ExperimentConfig) -> dict:
    prep = prepare(cfg)
    reports = [audit_report(cfg, T, prep) for T in cfg.T]
    return reports[0] if len(reports) == 1 else {"audits": reports}


def cmd_solve_ref(cfg: ExperimentConfig, out_dir: str | Path | None = None) -> Path:
    out = Path(out_dir or cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    problem, _ = build_problem(cfg)
    report: SolveReport = solve(problem, cfg.solver_tol, cfg.solver_max_iter)
    obj = report.to_json()
    obj["tol"] = cfg.solver_tol
    path = Path(cfg.x_star) if cfg.x_star else out / "x_star.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2) + "\n")
    return path


def cmd_synth(cfg: ExperimentConfig, out_dir: str | Path | None = None) -> list[Path]:
    if cfg.synthetic is None:
        raise ConfigError("synth needs a 'synthetic' kind in the config")
    out = Path(out_dir or cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    workers, x_star = load_workers_for(cfg)
    cache = out / "synthetic.json"
    save_workers(cache, workers, x_star)
    text = out / "synthetic.libsvm"
    text.write_text(serialize_libsvm([s for w in workers for s in w.samples]))
    return [cache, text]
