"""Truncated-UCB exploitation on rotated, almost low-dimensional arms.

Arms arrive as p-vectors whose last ``p - k`` coordinates are expected to
carry almost no signal. The ridge regularizer is ``lambda0`` on the first
``k`` coordinates and a much larger ``lambda_perp`` on the rest; every
whitened response ``u_ij * y_j`` whose magnitude exceeds ``b_t`` is dropped
from the estimate.
"""
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .linalg import rotate_and_vectorize, sym_inv_sqrt

__all__ = [
    "LowTOParams",
    "LowTOState",
    "lambda_perp_schedule",
    "init_state",
    "compute_bt",
    "compute_beta",
    "estimate_theta",
    "arm_widths",
    "select_arm",
    "update",
    "run_lowto",
]


@dataclass(frozen=True)
class LowTOParams:
    """Confidence-width and truncation constants.

    ``b_moment`` bounds ``E|y|^(1+delta)``; :meth:`from_problem` derives it as
    ``2^delta S^2 + 2^delta c``. ``beta_scale`` multiplies the whole
    confidence width and ``c_beta`` its leading term. ``b_fixed`` replaces
    the truncation schedule by a constant level (a huge value disables
    truncation).
    """

    delta: float
    b_moment: float
    eps: float
    S: float
    S_perp: float
    T2: int
    c_beta: float = 4.0
    beta_scale: float = 1.0
    b_fixed: Optional[float] = None

    @classmethod
    def from_problem(cls, delta, S, c, eps, S_perp, T2, **kw):
        b = 2 ** delta * S * S + 2 ** delta * c
        return cls(delta=delta, b_moment=b, eps=eps, S=S, S_perp=S_perp, T2=T2, **kw)


def lambda_perp_schedule(S, T2, k, lambda0, H=0):
    """``S^2 T2 / (k log(1 + S^2 (T2 + H) / (k lambda0)))``, floored at ``lambda0``."""
    if T2 <= 0:
        return lambda0
    val = S * S * T2 / (k * math.log1p(S * S * (T2 + H) / (k * lambda0)))
    return max(val, lambda0)


class LowTOState:
    """Regularized Gram matrix, design history and cached whitening.

    ``refresh_every`` sets how many updates may pass before the inverse
    square root of the Gram matrix is recomputed; between refreshes new rows
    are whitened with the cached one. The default of 1 recomputes it after
    every update.
    """

    def __init__(self, p, k, lambda0, lambda_perp, refresh_every=1):
        if not 0 <= k <= p:
            raise ValueError(f"effective dimension k={k} outside [0, p={p}]")
        if not lambda0 > 0 or lambda_perp < lambda0:
            raise ValueError("need lambda0 > 0 and lambda_perp >= lambda0")
        if refresh_every < 1:
            raise ValueError("refresh_every must be at least 1")
        self.p, self.k = int(p), int(k)
        self.lambda0, self.lambda_perp = float(lambda0), float(lambda_perp)
        self.refresh_every = int(refresh_every)
        self.ridge = np.concatenate([np.full(k, lambda0), np.full(p - k, lambda_perp)])
        self.gram = np.diag(self.ridge)
        self._rows = np.empty((16, p))
        self._rewards = np.empty(16)
        self.n = 0
        self.H = 0
        self.t = 0
        self._chol = None
        self._R = None
        self._stale = 0
        self._synced = 0

    @property
    def design_rows(self):
        return self._rows[: self.n]

    @property
    def rewards(self):
        return self._rewards[: self.n]

    def _append(self, x, y):
        if self.n == len(self._rewards):
            cap = 2 * len(self._rewards)
            rows = np.empty((cap, self.p))
            rows[: self.n] = self._rows[: self.n]
            rew = np.empty(cap)
            rew[: self.n] = self._rewards[: self.n]
            self._rows, self._rewards = rows, rew
        self._rows[self.n] = x
        self._rewards[self.n] = y
        self.n += 1

    def cholesky(self):
        if self._chol is None:
            self._chol = cho_factor(self.gram, lower=True)
        return self._chol

    # truncated sums of whitened responses W_ij = u_ij * y_j:
    # _kept[i] holds the entries with |W_ij| <= _floor, the rest sit in _cand
    def _rebuild(self, b):
        self._R = sym_inv_sqrt(self.gram)
        W = (self.design_rows @ self._R) * self.rewards[:, None]
        self._set_entries(W, b)
        self._stale = 0
        self._synced = self.n

    def _set_entries(self, W, b):
        big = np.abs(W) > b
        self._kept = np.where(big, 0.0, W).sum(axis=0)
        j, i = np.nonzero(big)
        self._cand_i, self._cand_v = i, W[j, i]
        self._floor = b

    def _extend(self):
        if self._synced == self.n:
            return
        W = (self._rows[self._synced: self.n] @ self._R) * self._rewards[self._synced: self.n, None]
        big = np.abs(W) > self._floor
        self._kept += np.where(big, 0.0, W).sum(axis=0)
        j, i = np.nonzero(big)
        self._cand_i = np.concatenate([self._cand_i, i])
        self._cand_v = np.concatenate([self._cand_v, W[j, i]])
        self._synced = self.n

    def truncated_scores(self, b):
        """Return the cached whitener ``R`` and ``z_i = sum_j W_ij 1{|W_ij| <= b}``."""
        if self._R is None or self._stale >= self.refresh_every:
            self._rebuild(b)
        else:
            self._extend()
            if b < self._floor:
                W = (self.design_rows @ self._R) * self.rewards[:, None]
                self._set_entries(W, b)
        if b > self._floor:
            newly = np.abs(self._cand_v) <= b
            if np.any(newly):
                self._kept += np.bincount(self._cand_i[newly], weights=self._cand_v[newly],
                                          minlength=self.p)
                self._cand_i, self._cand_v = self._cand_i[~newly], self._cand_v[~newly]
            self._floor = b
        return self._R, self._kept


def init_state(history_x, history_y, lambda0, lambda_perp, k, refresh_every=1):
    """Build the state from rotated history rows ``(H, p)`` and rewards ``(H,)``."""
    X = np.asarray(history_x, dtype=float)
    y = np.asarray(history_y, dtype=float).ravel()
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError("history must be (H, p) rows with H rewards")
    state = LowTOState(X.shape[1], k, lambda0, lambda_perp, refresh_every)
    state.gram = state.gram + X.T @ X
    for x, v in zip(X, y):
        state._append(x, v)
    state.H = len(y)
    return state


def compute_bt(t, params, H, p):
    """Truncation level ``(b / log(2p/eps))^(1/(1+delta)) (t + H)^((1-delta)/(2+2delta))``."""
    d = params.delta
    return ((params.b_moment / math.log(2 * p / params.eps)) ** (1 / (1 + d))
            * float(t + H) ** ((1 - d) / (2 + 2 * d)))


def compute_beta(t, params, H, p, lambda0, lambda_perp):
    """Confidence width

    ``c_beta sqrt(p) b^(1/(1+delta)) log(2p/eps)^(delta/(1+delta)) (t+H)^((1-delta)/(2+2delta))
    + sqrt(lambda0) S + sqrt(lambda_perp) S_perp``, all times ``beta_scale``.
    """
    d = params.delta
    lead = (params.c_beta * math.sqrt(p) * params.b_moment ** (1 / (1 + d))
            * math.log(2 * p / params.eps) ** (d / (1 + d))
            * float(t + H) ** ((1 - d) / (2 + 2 * d)))
    ridge = math.sqrt(lambda0) * params.S + math.sqrt(lambda_perp) * params.S_perp
    return params.beta_scale * (lead + ridge)


def estimate_theta(state, b_t):
    """Truncated estimate ``R [u_i^T yhat_i]_i`` with ``R = M^(-1/2)``.

    ``u_i`` is row ``i`` of ``R X^T`` and ``yhat_i`` keeps ``y_j`` only where
    ``|u_ij y_j| <= b_t``.
    """
    if b_t < 0:
        raise ValueError("b_t must be non-negative")
    if state.n == 0:
        return np.zeros(state.p)
    R, z = state.truncated_scores(b_t)
    return R @ z


def arm_widths(state, arms):
    """``||x||_{M^-1}`` for every row of ``arms`` via a Cholesky solve."""
    sol = cho_solve(state.cholesky(), arms.T)
    return np.sqrt(np.maximum(np.einsum("kp,pk->k", arms, sol), 0.0))


class _WidthCache:
    # M^-1 A^T for a fixed arm set, kept current by Sherman-Morrison updates
    # and recomputed exactly whenever the state would refresh its whitener
    def __init__(self, state, arms):
        self.arms = arms
        self._reset(state)

    def _reset(self, state):
        self.Q = cho_solve(state.cholesky(), self.arms.T)
        self.sq = np.einsum("kp,pk->k", self.arms, self.Q)
        self.age = 0

    def widths(self):
        return np.sqrt(np.maximum(self.sq, 0.0))

    def pulled(self, state, idx):
        self.age += 1
        if self.age >= state.refresh_every:
            self._reset(state)
            return
        v = self.Q[:, idx].copy()
        proj = self.arms @ v
        denom = 1.0 + self.arms[idx] @ v
        self.Q -= np.outer(v, proj / denom)
        self.sq -= proj * proj / denom


def select_arm(state, theta_hat, arms, beta, widths=None):
    """Optimistic choice ``argmax x^T theta_hat + beta ||x||_{M^-1}``.

    The norm comes from a Cholesky solve with the Gram matrix unless
    precomputed ``widths`` are passed. Ties go to the lowest index.
    """
    arms = np.atleast_2d(np.asarray(arms, dtype=float))
    if arms.shape[0] == 0:
        raise ValueError("empty arm set")
    width = arm_widths(state, arms) if widths is None else widths
    scores = arms @ theta_hat + beta * width
    idx = int(np.argmax(scores))
    return idx, arms[idx]


def update(state, x, y):
    """Add one exploitation pull to the state."""
    x = np.asarray(x, dtype=float)
    state.gram = state.gram + np.outer(x, x)
    state._append(x, float(y))
    state._chol = None
    state._stale += 1
    state.t += 1
    return state


def run_lowto(state, params, env, split, rounds, start_round, trace=None, batch=0):
    """Play ``rounds`` exploitation rounds against ``env``.

    Round ``start_round + s`` (``s = 0, 1, ...``) uses the environment's arm
    set for that round, rotated by ``split``. Returns the state and the list
    of ``(arm_matrix, arm_index, reward)`` pulls in original matrix form.
    """
    pulls = []
    p = state.p
    rotated = rotate_and_vectorize(env.arms(start_round), split) if env.is_fixed else None
    cache = _WidthCache(state, rotated) if rotated is not None and rounds > 0 else None
    for s in range(rounds):
        t_glob = start_round + s
        arms = env.arms(t_glob)
        cand = rotated if rotated is not None else rotate_and_vectorize(arms, split)
        b = params.b_fixed if params.b_fixed is not None else compute_bt(state.t, params, state.H, p)
        beta = compute_beta(state.t, params, state.H, p, state.lambda0, state.lambda_perp)
        theta_hat = estimate_theta(state, b)
        idx, x = select_arm(state, theta_hat, cand, beta,
                            widths=cache.widths() if cache is not None else None)
        X = arms[idx]
        y = env.reward(X)
        if trace is not None:
            trace.record(batch, "exploit", idx, env.regret(t_glob, idx))
        update(state, x, y)
        if cache is not None:
            cache.pulled(state, idx)
        pulls.append((X, idx, y))
    return state, pulls
