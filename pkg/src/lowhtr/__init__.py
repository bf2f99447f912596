"""Low-rank matrix bandits with heavy-tailed rewards.

Robust nuclear-norm Huber trace regression, the truncated UCB exploitation
routine, the batched LOTUS orchestrator, heavy-tailed synthetic environments
and a regret benchmarking harness.
"""

__version__ = "0.1.0"

from .linalg import (
    NumericalDomainError,
    SubspaceSplit,
    SvdFactors,
    full_svd,
    rotate_and_vectorize,
    rotate_parameter,
    svd_soft_threshold,
    sym_inv_sqrt,
)
from .huber import (
    FitResult,
    HuberConfig,
    HuberTraceRegressor,
    estimate_useful_rank,
    huber_grad,
    huber_loss,
    lamm_solve,
    objective_and_grad,
    schedule_params,
)
from .env import Environment, NoiseModel, gen_lower_bound_instance, gen_scenario1, gen_scenario2
from .lotus import BatchRecord, LotusConfig, run_lotus
from .trace import RegretTrace
from .config import ExperimentConfig, figure1_config, load_config
from .runner import run_experiment

__all__ = [
    "NumericalDomainError",
    "SubspaceSplit",
    "SvdFactors",
    "full_svd",
    "rotate_and_vectorize",
    "rotate_parameter",
    "svd_soft_threshold",
    "sym_inv_sqrt",
    "FitResult",
    "HuberConfig",
    "HuberTraceRegressor",
    "estimate_useful_rank",
    "huber_grad",
    "huber_loss",
    "lamm_solve",
    "objective_and_grad",
    "schedule_params",
    "Environment",
    "NoiseModel",
    "gen_lower_bound_instance",
    "gen_scenario1",
    "gen_scenario2",
    "BatchRecord",
    "LotusConfig",
    "run_lotus",
    "RegretTrace",
    "ExperimentConfig",
    "figure1_config",
    "load_config",
    "run_experiment",
]
