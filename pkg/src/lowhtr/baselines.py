"""Sub-Gaussian comparator, labelled ``baseline-subg``.

A horizon-aware explore-then-commit stand-in for low-rank bandit methods
built for sub-Gaussian noise: one exploration phase, a square-loss
nuclear-norm fit (Huber with a huge threshold), then the exploitation
routine with truncation switched off. It is not a reimplementation of any
published algorithm.
"""
import math
from dataclasses import dataclass
from typing import Optional

from .env import exploration_sample
from .huber import HuberConfig, lamm_solve, schedule_params
from .linalg import SubspaceSplit, rotate_and_vectorize
from .lotus import HistoryBuffers, compute_s_perp
from .lowto import LowTOParams, init_state, lambda_perp_schedule, run_lowto
from .trace import RegretTrace

__all__ = ["BASELINE_NAME", "BaselineConfig", "baseline_explore_length", "run_baseline_subgaussian"]

BASELINE_NAME = "baseline-subg"
HUGE = 1e9


@dataclass(frozen=True)
class BaselineConfig:
    rank: int
    D_rr: float
    explore_len: Optional[int] = None
    explore_scale: float = 1.0
    variance: float = 1.0
    eps: float = 0.1
    c_lambda: float = 1.0
    sigma: Optional[float] = None
    c_l: Optional[float] = None
    lambda0: float = 1.0
    c_beta: float = 4.0
    beta_scale: float = 1.0
    c_sperp: float = 1.0
    refresh_every: int = 1


def baseline_explore_length(d, r, T, D_rr, scale=1.0):
    """``ceil(scale sqrt(d^3 r T) / D_rr)``, capped at ``T``."""
    return int(min(T, math.ceil(scale * math.sqrt(d ** 3 * r * T) / D_rr)))


def run_baseline_subgaussian(env, config, total_rounds, rng):
    """Run the comparator for a horizon it must know in advance."""
    trace = RegretTrace(metadata={"algorithm": BASELINE_NAME})
    d1, d2 = env.shape
    d = max(d1, d2)
    sigma = config.sigma if config.sigma is not None else 1 / math.sqrt(d1 * d2)
    c_l = config.c_l if config.c_l is not None else 1 / (d1 * d2)
    n_explore = config.explore_len
    if n_explore is None:
        n_explore = baseline_explore_length(d, config.rank, total_rounds, config.D_rr, config.explore_scale)
    n_explore = max(1, min(n_explore, total_rounds))
    buffers = HistoryBuffers(env.shape)
    for _ in range(n_explore):
        t = len(buffers) + 1
        idx, X = exploration_sample(env, t, rng)
        buffers.add(X, env.reward(X), exploration=True)
        trace.record(1, "explore", idx, env.best_value(t) - env.mean_reward(X))
    T2 = total_rounds - n_explore
    if T2 == 0:
        return trace

    X, y = buffers.H2
    _, lam = schedule_params(len(y), d, 1.0, config.variance, config.eps,
                             c_lambda=config.c_lambda, sigma=sigma)
    fit = lamm_solve(X, y, HuberConfig(tau=HUGE, lambda_nuc=lam))
    split = SubspaceSplit.from_svd(fit.svd, config.rank)
    k, p = split.effective_dim, split.total_dim
    s_perp = compute_s_perp(len(y), d, config.rank, 1.0, config.variance, config.eps, config.D_rr,
                            sigma, c_l, form="known-rank", scale=config.c_sperp)
    X1, y1 = buffers.H1
    lam_perp = lambda_perp_schedule(env.S, T2, k, config.lambda0, H=len(y1)) if k < p else config.lambda0
    state = init_state(rotate_and_vectorize(X1, split), y1, config.lambda0, lam_perp, k,
                       refresh_every=config.refresh_every)
    params = LowTOParams.from_problem(1.0, env.S, config.variance, config.eps, s_perp, T2,
                                      c_beta=config.c_beta, beta_scale=config.beta_scale, b_fixed=HUGE)
    run_lowto(state, params, env, split, T2, n_explore + 1, trace, batch=1)
    trace.metadata["explore_len"] = n_explore
    return trace
