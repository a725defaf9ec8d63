"""Locally differentially private federated learning for strongly convex composite problems."""

from .engine import (FederationState, MetricSeries, NoiseStream, RunConfig, dual_optimum, lyapunov,
                     max_step_size, optimality_metric, run, run_batch, run_compact)
from .errors import (ConfigError, ConvergenceError, DivergenceError, DomainError,
                     InsufficientDataError, ParseError)
from .privacy import (PrivacyBudget, SensitivityContext, audit_schedule, eps_from_rho,
                      gaussian_mechanism_rho, per_round_rho, per_step_sensitivity, rho_from_eps_delta)
from .problem import (ProblemSpec, Regularizer, Sample, WorkerDataset, derive_constants, prox,
                      sample_gradient, worker_gradient)
from .schedule import NoiseSchedule, dynamic_schedule, min_rounds, static_schedule, weighted_cost
from .solver import SolveReport, kkt_residual, solve

__version__ = "0.1.0"
