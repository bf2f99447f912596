"""Batched explore/exploit orchestration with estimated subspaces.

Batch ``i`` lasts ``2^i`` rounds: a random exploration phase feeding the
subspace estimate, then truncated-UCB exploitation in the rotated
coordinates. Exploration pulls go to both history buffers; exploitation
pulls only to the full history.
"""
import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .env import exploration_sample
from .huber import HuberConfig, estimate_useful_rank, lamm_solve, schedule_params
from .linalg import SubspaceSplit, rotate_and_vectorize
from .lowto import LowTOParams, init_state, lambda_perp_schedule, run_lowto, update
from .trace import RegretTrace

log = logging.getLogger(__name__)

__all__ = [
    "MODES",
    "LotusConfig",
    "BatchRecord",
    "HistoryBuffers",
    "exploration_length",
    "exploration_length_rank_agnostic",
    "compute_s_perp",
    "run_warmup",
    "run_batch",
    "run_lotus",
    "run_randomized_lotus",
]

MODES = ("known-rank", "rank-agnostic", "randomized")


@dataclass(frozen=True)
class LotusConfig:
    """Orchestrator settings.

    ``rank`` and ``D_rr`` (the ``r``-th singular value of the true parameter)
    are required by the known-rank and randomized modes and ignored by the
    rank-agnostic one. ``sigma`` and ``c_l`` default to ``1/sqrt(d1 d2)`` and
    ``1/(d1 d2)``. ``explore_scale`` multiplies the first term of the
    exploration-length formula. ``s_perp_form`` is ``'auto'`` (rank-agnostic
    surrogate in rank-agnostic mode, the known-rank bound otherwise),
    ``'known-rank'`` or ``'agnostic'``.
    """

    mode: str = "rank-agnostic"
    rank: Optional[int] = None
    D_rr: Optional[float] = None
    T0: int = 100
    delta: float = 1.0
    c_moment: float = 1.0
    eps: float = 0.1
    c_tau: float = 1.0
    c_lambda: float = 1.0
    C1: float = 1.0
    sigma: Optional[float] = None
    c_l: Optional[float] = None
    lambda0: float = 1.0
    c_beta: float = 4.0
    beta_scale: float = 1.0
    c_sperp: float = 1.0
    s_perp_form: str = "auto"
    explore_scale: float = 1.0
    refresh_every: int = 1
    refit_every: int = 25
    lamm_alpha0: float = 1e-3
    lamm_psi: float = 2.0
    lamm_stop_eps: float = 1e-6
    lamm_max_iter: int = 500

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.T0 < 1:
            raise ValueError("T0 must be at least 1")
        if not 0 < self.delta <= 1:
            raise ValueError(f"delta must lie in (0, 1], got {self.delta}")
        if not 0 < self.eps < 1:
            raise ValueError(f"eps must lie in (0, 1), got {self.eps}")
        if self.mode != "rank-agnostic":
            if self.rank is None or self.rank < 1:
                raise ValueError(f"{self.mode} mode needs a rank >= 1")
            if self.D_rr is None or not self.D_rr > 0:
                raise ValueError(f"{self.mode} mode needs D_rr > 0")
        if self.s_perp_form not in ("auto", "known-rank", "agnostic"):
            raise ValueError(f"unknown s_perp_form {self.s_perp_form!r}")
        if self.s_perp_form == "known-rank" and self.D_rr is None:
            raise ValueError("the known-rank S_perp bound needs D_rr")

    def scales(self, shape):
        d1, d2 = shape
        sigma = self.sigma if self.sigma is not None else 1.0 / math.sqrt(d1 * d2)
        c_l = self.c_l if self.c_l is not None else 1.0 / (d1 * d2)
        return sigma, c_l


@dataclass
class BatchRecord:
    index: int
    T1: int
    T2: int
    eps_i: float
    n_h2: int = 0
    theta_hat: Optional[np.ndarray] = None
    r_hat: Optional[int] = None
    k: Optional[int] = None
    S_perp: Optional[float] = None
    lambda_perp: Optional[float] = None
    converged: Optional[bool] = None
    precondition_ok: Optional[bool] = None
    explore_count: int = 0
    exploit_count: int = 0

    def to_dict(self):
        out = {k: v for k, v in self.__dict__.items() if k != "theta_hat"}
        out["theta_hat"] = None if self.theta_hat is None else self.theta_hat.tolist()
        return out


class HistoryBuffers:
    """Full history ``H1`` and the exploration subset ``H2`` (as indices into ``H1``)."""

    def __init__(self, shape):
        self.shape = tuple(shape)
        self._X = np.empty((64,) + self.shape)
        self._y = np.empty(64)
        self.n = 0
        self.h2_index = []

    def add(self, X, y, exploration):
        if self.n == len(self._y):
            X_new = np.empty((2 * self.n,) + self.shape)
            X_new[: self.n] = self._X
            y_new = np.empty(2 * self.n)
            y_new[: self.n] = self._y
            self._X, self._y = X_new, y_new
        self._X[self.n] = X
        self._y[self.n] = y
        if exploration:
            self.h2_index.append(self.n)
        self.n += 1

    @property
    def H1(self):
        return self._X[: self.n], self._y[: self.n]

    @property
    def H2(self):
        idx = np.asarray(self.h2_index, dtype=int)
        return self._X[idx], self._y[idx]

    def __len__(self):
        return self.n

    @property
    def n_h2(self):
        return len(self.h2_index)


def _clamped_length(value, i):
    full = 2 ** i
    if value >= full:
        return full
    # relative slack absorbs pow() roundoff on exact integers
    return int(min(max(math.ceil(value * (1 - 1e-12)), 1), full))


def exploration_length(i, d, r, D_rr, delta, scale=1.0):
    """``min{ceil(scale [d^(2+4delta) r^(1+delta) 2^(i(1+delta)) / D_rr^(2+2delta)]^(1/(1+3delta))), 2^i}``."""
    if i < 1:
        raise ValueError("batch index starts at 1")
    log_inner = ((2 + 4 * delta) * math.log(d) + (1 + delta) * math.log(r)
                 + i * (1 + delta) * math.log(2) - (2 + 2 * delta) * math.log(D_rr))
    if log_inner / (1 + 3 * delta) > 700:
        return 2 ** i
    inner = d ** (2 + 4 * delta) * r ** (1 + delta) * 2.0 ** (i * (1 + delta)) / D_rr ** (2 + 2 * delta)
    return _clamped_length(scale * inner ** (1 / (1 + 3 * delta)), i)


def exploration_length_rank_agnostic(i, d, delta, scale=1.0):
    """``min{ceil(scale d 2^(i(1+delta)/(1+2delta))), 2^i}``."""
    if i < 1:
        raise ValueError("batch index starts at 1")
    expo = i * (1 + delta) / (1 + 2 * delta)
    if expo > 1000:
        return 2 ** i
    return _clamped_length(scale * d * 2.0 ** expo, i)


def compute_s_perp(n_h2, d, r_used, delta, c, eps_i, D_rr, sigma, c_l, form="known-rank", scale=1.0):
    """Bound on the norm of the rotated parameter's complement block.

    ``'known-rank'``: ``r sigma^2 c^(2/(1+delta)) / (c_l^2 D_rr^2) ((d + ln(1/eps)) / n)^(2delta/(1+delta))``.
    ``'agnostic'``: ``r^(3/2) d (d / n)^(delta/(1+delta))``.
    Both are multiplied by ``scale``.
    """
    if n_h2 < 1:
        raise ValueError("need at least one exploration sample")
    if form == "known-rank":
        lead = r_used * sigma ** 2 * c ** (2 / (1 + delta)) / (c_l ** 2 * D_rr ** 2)
        return scale * lead * ((d + math.log(1 / eps_i)) / n_h2) ** (2 * delta / (1 + delta))
    if form == "agnostic":
        return scale * r_used ** 1.5 * d * (d / n_h2) ** (delta / (1 + delta))
    raise ValueError(f"unknown form {form!r}")


def _precondition(T1, d, r, D_rr, delta):
    need = 5 * d ** ((1 + 2 * delta) / delta) * r ** ((1 + delta) / (2 * delta)) / D_rr ** ((1 + delta) / delta)
    return T1 >= need


def _explore_round(env, buffers, trace, rng, batch, phase):
    t = len(buffers) + 1
    idx, X = exploration_sample(env, t, rng)
    y = env.reward(X)
    buffers.add(X, y, exploration=True)
    trace.record(batch, phase, idx, env.best_value(t) - env.mean_reward(X))


def run_warmup(env, config, buffers, rng, trace, rounds=None):
    """Pull ``T0`` exploration arms (or ``rounds`` if given) into both buffers."""
    rounds = config.T0 if rounds is None else rounds
    for _ in range(rounds):
        _explore_round(env, buffers, trace, rng, 0, "warmup")
    return buffers


class _Estimator:
    """Penalized Huber fit on H2 with batch schedules and a warm start."""

    def __init__(self, env, config):
        self.config = config
        self.shape = env.shape
        self.d = max(self.shape)
        self.sigma, self.c_l = config.scales(self.shape)
        self.theta = None

    def fit(self, buffers, eps_i):
        cfg = self.config
        X, y = buffers.H2
        tau, lam = schedule_params(len(y), self.d, cfg.delta, cfg.c_moment, eps_i,
                                   cfg.c_tau, cfg.c_lambda, self.sigma)
        hc = HuberConfig(tau=tau, lambda_nuc=lam, stop_eps=cfg.lamm_stop_eps, alpha0=cfg.lamm_alpha0,
                         psi=cfg.lamm_psi, max_outer_iters=cfg.lamm_max_iter)
        result = lamm_solve(X, y, hc, self.theta)
        if not result.converged:
            log.warning("subspace estimate did not converge after %d iterations", result.outer_iters)
        self.theta = result.theta_hat
        return result

    def split(self, result, n_h2, eps_i):
        cfg = self.config
        if cfg.mode == "rank-agnostic":
            r = estimate_useful_rank(result.svd.singular_values, n_h2, self.d, cfg.delta,
                                     cfg.c_moment, eps_i, self.sigma, self.c_l, cfg.C1)
        else:
            r = cfg.rank
        form = cfg.s_perp_form
        if form == "auto":
            form = "agnostic" if cfg.mode == "rank-agnostic" else "known-rank"
        s_perp = compute_s_perp(n_h2, self.d, r, cfg.delta, cfg.c_moment, eps_i, cfg.D_rr,
                                self.sigma, self.c_l, form=form, scale=cfg.c_sperp)
        return SubspaceSplit.from_svd(result.svd, r), s_perp


def _lowto_setup(env, config, buffers, split, s_perp, T2, eps_i):
    X1, y1 = buffers.H1
    k, p = split.effective_dim, split.total_dim
    lam_perp = lambda_perp_schedule(env.S, T2, k, config.lambda0, H=len(y1)) if k < p else config.lambda0
    state = init_state(rotate_and_vectorize(X1, split), y1, config.lambda0, lam_perp, k,
                       refresh_every=config.refresh_every)
    params = LowTOParams.from_problem(config.delta, env.S, config.c_moment, eps_i, s_perp, T2,
                                      c_beta=config.c_beta, beta_scale=config.beta_scale)
    return state, params


def _exploit(env, state, params, split, buffers, trace, batch, rounds):
    state, pulls = run_lowto(state, params, env, split, rounds, len(buffers) + 1, trace, batch)
    for X, _, y in pulls:
        buffers.add(X, y, exploration=False)


def _batch_T1(i, d, config):
    if config.mode == "rank-agnostic":
        return exploration_length_rank_agnostic(i, d, config.delta, config.explore_scale)
    return exploration_length(i, d, config.rank, config.D_rr, config.delta, config.explore_scale)


def run_batch(i, env, config, buffers, estimator, rng, trace, budget):
    """Run batch ``i`` for at most ``budget`` rounds.

    Returns the :class:`BatchRecord`; observations land in ``buffers`` and
    per-round regret in ``trace``.
    """
    d = max(env.shape)
    T1 = _batch_T1(i, d, config)
    T2 = 2 ** i - T1
    eps_i = config.eps / 2 ** (i + 1)
    rec = BatchRecord(index=i, T1=T1, T2=T2, eps_i=eps_i)
    if config.mode != "rank-agnostic":
        rec.precondition_ok = _precondition(T1, d, config.rank, config.D_rr, config.delta)
    n_explore = min(T1, budget)
    for _ in range(n_explore):
        _explore_round(env, buffers, trace, rng, i, "explore")
    rec.explore_count = n_explore
    rec.n_h2 = buffers.n_h2
    n_exploit = min(T2, budget - n_explore)
    if n_exploit <= 0:
        return rec

    result = estimator.fit(buffers, eps_i)
    split, s_perp = estimator.split(result, buffers.n_h2, eps_i)
    state, params = _lowto_setup(env, config, buffers, split, s_perp, T2, eps_i)
    rec.theta_hat = result.theta_hat
    rec.converged = result.converged
    rec.r_hat = split.effective_rank
    rec.k = split.effective_dim
    rec.S_perp = s_perp
    rec.lambda_perp = state.lambda_perp
    _exploit(env, state, params, split, buffers, trace, i, n_exploit)
    rec.exploit_count = n_exploit
    return rec


def run_lotus(env, config, total_rounds, rng):
    """Warm-up followed by batches ``i = 1, 2, ...`` until ``total_rounds`` pulls.

    The horizon only decides when to stop: a shorter run is an exact prefix
    of a longer one with the same seed.

    Returns
    -------
    trace : RegretTrace
    records : list of BatchRecord
    """
    if config.mode == "randomized":
        return run_randomized_lotus(env, config, total_rounds, rng)
    trace = RegretTrace()
    buffers = HistoryBuffers(env.shape)
    run_warmup(env, config, buffers, rng, trace, rounds=min(config.T0, total_rounds))
    estimator = _Estimator(env, config)
    records = []
    i = 0
    while len(buffers) < total_rounds:
        i += 1
        records.append(run_batch(i, env, config, buffers, estimator, rng, trace,
                                 total_rounds - len(buffers)))
    trace.metadata["n_h2"] = buffers.n_h2
    return trace, records


def run_randomized_lotus(env, config, total_rounds, rng):
    """Batches where each round explores with probability ``T1 / 2^i``.

    Exploit rounds refit the subspace estimate from the exploration buffer
    every ``config.refit_every`` exploit rounds (``1`` refits every time) and
    rebuild the exploitation state from the full history at each refit;
    between refits every new observation is folded into that state.
    """
    if config.rank is None or config.D_rr is None:
        raise ValueError("randomized mode needs rank and D_rr")
    trace = RegretTrace()
    buffers = HistoryBuffers(env.shape)
    run_warmup(env, config, buffers, rng, trace, rounds=min(config.T0, total_rounds))
    estimator = _Estimator(env, config)
    d = max(env.shape)
    records = []
    i = 0
    while len(buffers) < total_rounds:
        i += 1
        T1 = exploration_length(i, d, config.rank, config.D_rr, config.delta, config.explore_scale)
        eps_i = config.eps / 2 ** (i + 1)
        rec = BatchRecord(index=i, T1=T1, T2=2 ** i - T1, eps_i=eps_i,
                          precondition_ok=_precondition(T1, d, config.rank, config.D_rr, config.delta))
        records.append(rec)
        _run_randomized_batch(i, T1, eps_i, env, config, buffers, estimator, rng, trace, rec,
                              min(2 ** i, total_rounds - len(buffers)))
    trace.metadata["n_h2"] = buffers.n_h2
    return trace, records


def explore_coin(rng, T1, i):
    """Bernoulli(T1 / 2^i) draw deciding whether a round explores."""
    p = T1 / 2 ** i
    if p >= 1:
        return True
    if p <= 0:
        return False
    return bool(rng.uniform() < p)


def _run_randomized_batch(i, T1, eps_i, env, config, buffers, estimator, rng, trace, rec, rounds):
    state = split = params = None
    since_fit = 0
    for _ in range(rounds):
        if explore_coin(rng, T1, i):
            _explore_round(env, buffers, trace, rng, i, "explore")
            rec.explore_count += 1
            if state is not None:
                X, y = buffers._X[buffers.n - 1], buffers._y[buffers.n - 1]
                update(state, rotate_and_vectorize(X, split), y)
            continue
        if state is None or since_fit >= config.refit_every:
            result = estimator.fit(buffers, eps_i)
            split, s_perp = estimator.split(result, buffers.n_h2, eps_i)
            state, params = _lowto_setup(env, config, buffers, split, s_perp, rec.T2, eps_i)
            since_fit = 0
            rec.theta_hat, rec.converged = result.theta_hat, result.converged
            rec.r_hat, rec.k, rec.S_perp = split.effective_rank, split.effective_dim, s_perp
            rec.lambda_perp = state.lambda_perp
        _exploit(env, state, params, split, buffers, trace, i, 1)
        rec.exploit_count += 1
        since_fit += 1
    rec.n_h2 = buffers.n_h2
