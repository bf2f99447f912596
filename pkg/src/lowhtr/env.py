"""Synthetic low-rank bandit environments with heavy-tailed rewards."""
import math
from dataclasses import dataclass, field

import numpy as np

from .linalg import full_svd

__all__ = [
    "NoiseModel",
    "student_t",
    "pareto_centered",
    "laplace",
    "gaussian",
    "sample_noise",
    "sample_unit_ball",
    "FixedArms",
    "ContextualArms",
    "Environment",
    "reward",
    "gen_scenario1",
    "gen_scenario2",
    "exploration_sample",
    "LowerBoundInstance",
    "gen_lower_bound_instance",
]

NOISE_KINDS = ("student_t", "pareto", "laplace", "gaussian", "payoff")


@dataclass(frozen=True)
class NoiseModel:
    """Zero-mean noise law with a declared ``(1 + delta)``-moment bound.

    ``param`` is the degrees of freedom (``student_t``), the shape
    (``pareto``), the scale (``laplace``), the standard deviation
    (``gaussian``) or the payoff level ``gamma`` (``payoff``: the lower-bound
    instance's law paying ``1/gamma`` with probability ``gamma * mean``).
    """

    kind: str
    param: float
    delta: float
    c_bound: float

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}; expected one of {NOISE_KINDS}")
        if not 0 < self.delta <= 1:
            raise ValueError(f"delta must lie in (0, 1], got {self.delta}")
        if not self.c_bound > 0:
            raise ValueError(f"c_bound must be positive, got {self.c_bound}")
        if self.kind in ("student_t", "pareto") and not self.param > 1 + self.delta:
            raise ValueError(
                f"{self.kind} parameter {self.param} must exceed 1 + delta = {1 + self.delta}"
            )
        if self.kind == "laplace" and not self.param > 0:
            raise ValueError("laplace scale must be positive")
        if self.kind == "gaussian" and self.param < 0:
            raise ValueError("gaussian std must be non-negative")
        if self.kind == "payoff" and not 0 < self.param < 1:
            raise ValueError("payoff gamma must lie in (0, 1)")


def student_t(nu=1.7, delta=0.5, c_bound=6.0):
    return NoiseModel("student_t", nu, delta, c_bound)


def pareto_centered(alpha=1.9, delta=0.5, c_bound=5.0):
    return NoiseModel("pareto", alpha, delta, c_bound)


def laplace(scale=1.0, delta=1.0, c_bound=2.0):
    return NoiseModel("laplace", scale, delta, c_bound)


def gaussian(std=1.0, delta=1.0, c_bound=None):
    return NoiseModel("gaussian", std, delta, c_bound if c_bound is not None else max(std * std, 1e-12))


def sample_noise(model, rng, size=None):
    """Zero-mean draws from ``model``.

    Pareto draws have density ``alpha / (x + 1)^(alpha + 1)`` on ``x > 0``
    and are shifted by their mean ``1 / (alpha - 1)``.
    """
    kind, a = model.kind, model.param
    if kind == "student_t":
        return rng.standard_t(a, size=size)
    if kind == "pareto":
        return rng.pareto(a, size=size) - 1.0 / (a - 1.0)
    if kind == "laplace":
        return rng.laplace(0.0, a, size=size)
    if kind == "gaussian":
        if a == 0:
            return 0.0 if size is None else np.zeros(size)
        return rng.normal(0.0, a, size=size)
    raise ValueError("payoff noise depends on the arm; draw it through reward()")


def sample_unit_ball(rng, shape, count=None, radius=1.0):
    """Uniform draws from the Frobenius ball of the given radius.

    Gaussian entries are rescaled by ``u^(1/dim) / ||Z||_F`` with ``u``
    uniform on (0, 1).
    """
    dim = int(np.prod(shape))
    lead = () if count is None else (count,)
    Z = rng.standard_normal(lead + tuple(shape))
    u = rng.uniform(size=lead)
    norms = np.sqrt(np.sum(Z * Z, axis=(-2, -1)))
    scale = radius * u ** (1.0 / dim) / norms
    return Z * np.asarray(scale)[..., None, None]


@dataclass(frozen=True)
class FixedArms:
    arms: np.ndarray  # (K, d1, d2)

    def __post_init__(self):
        if self.arms.ndim != 3 or self.arms.shape[0] == 0:
            raise ValueError("a fixed arm set needs shape (K, d1, d2) with K >= 1")


@dataclass(frozen=True)
class ContextualArms:
    """``m`` fresh arms per round drawn uniformly from a Frobenius ball.

    Round ``t`` uses its own generator derived from ``(seed, t)``, so the arm
    sequence does not depend on how often it is queried.
    """

    m: int
    seed: int
    radius: float = 1.0

    def at(self, t, shape):
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, int(t)]))
        return sample_unit_ball(rng, shape, count=self.m, radius=self.radius)


class Environment:
    """Stochastic low-rank bandit ``y = <X, theta_star> + noise``.

    The noise stream is owned by the environment and derived from
    ``rng_seed``, separately from the arm stream, so an algorithm's choices
    never shift the noise sequence. Clone with :meth:`fresh` for a new run.
    """

    def __init__(self, theta_star, arm_source, noise, S, rng_seed=0, rank=None,
                 exploration="arms", name="custom"):
        theta_star = np.array(theta_star, dtype=float)
        if theta_star.ndim != 2:
            raise ValueError("theta_star must be a matrix")
        if exploration not in ("arms", "ball"):
            raise ValueError("exploration must be 'arms' or 'ball'")
        self.theta_star = theta_star
        self.theta_star.setflags(write=False)
        self.arm_source = arm_source
        self.noise = noise
        self.S = float(S)
        self.rng_seed = int(rng_seed)
        self.exploration = exploration
        self.name = name
        if np.linalg.norm(theta_star) > self.S * (1 + 1e-12):
            raise ValueError(f"||theta_star||_F = {np.linalg.norm(theta_star):.4g} exceeds S = {S}")
        s = full_svd(theta_star).singular_values
        numeric_rank = int(np.sum(s > 1e-10))
        if rank is not None and rank != numeric_rank:
            raise ValueError(f"theta_star has rank {numeric_rank}, expected {rank}")
        self.rank = numeric_rank
        self.singular_values = s
        if isinstance(arm_source, FixedArms):
            self._check_norms(arm_source.arms)
            self._fixed_means = np.einsum("kij,ij->k", arm_source.arms, theta_star)
        self.noise_rng = np.random.default_rng(np.random.SeedSequence([self.rng_seed, 0]))
        self._ctx_cache = (None, None)

    @property
    def shape(self):
        return self.theta_star.shape

    @property
    def is_fixed(self):
        return isinstance(self.arm_source, FixedArms)

    def fresh(self):
        """Copy with the noise stream rewound to its start."""
        return Environment(self.theta_star, self.arm_source, self.noise, self.S, self.rng_seed,
                           exploration=self.exploration, name=self.name)

    def _check_norms(self, arms):
        norms = np.sqrt(np.einsum("kij,kij->k", arms, arms))
        if np.any(norms > self.S * (1 + 1e-12)):
            raise AssertionError(f"emitted arm with norm {norms.max():.4g} > S = {self.S}")

    def arms(self, t):
        """Arm set available at round ``t`` (1-based), shape ``(K, d1, d2)``."""
        if self.is_fixed:
            return self.arm_source.arms
        if self._ctx_cache[0] != t:
            arms = self.arm_source.at(t, self.shape)
            self._check_norms(arms)
            self._ctx_cache = (t, arms)
        return self._ctx_cache[1]

    def mean_rewards(self, t):
        if self.is_fixed:
            return self._fixed_means
        return np.einsum("kij,ij->k", self.arms(t), self.theta_star)

    def mean_reward(self, X):
        return float(np.sum(np.asarray(X) * self.theta_star))

    def best_value(self, t):
        return float(np.max(self.mean_rewards(t)))

    def regret(self, t, index):
        means = self.mean_rewards(t)
        return float(np.max(means) - means[index])

    def reward(self, X, rng=None):
        rng = self.noise_rng if rng is None else rng
        mean = self.mean_reward(X)
        if self.noise.kind == "payoff":
            gamma = self.noise.param
            return float(rng.uniform() < gamma * mean) / gamma
        return mean + float(sample_noise(self.noise, rng))


def reward(env, X, rng=None):
    """Noisy reward ``<X, theta_star> + noise`` for one pull."""
    return env.reward(X, rng)


def exploration_sample(env, t, rng):
    """Draw an exploration arm from the round-``t`` sampling distribution.

    Uniform over the available arms, or in ``'ball'`` mode i.i.d. Gaussian
    entries with variance ``1/(d1 d2)`` projected into the ``S``-ball.

    Returns
    -------
    index : int
        Position in ``env.arms(t)``; ``-1`` for ball draws.
    X : (d1, d2) ndarray
    """
    if env.exploration == "ball":
        d1, d2 = env.shape
        X = rng.normal(0.0, 1.0 / math.sqrt(d1 * d2), size=(d1, d2))
        nrm = np.linalg.norm(X)
        if nrm > env.S:
            X *= env.S / nrm
        return -1, X
    arms = env.arms(t)
    if len(arms) == 0:
        raise ValueError("empty arm set")
    idx = int(rng.integers(len(arms)))
    return idx, arms[idx]


def gen_scenario1(seed=0, noise=None, n_arms=500, d=10):
    """Diagonal ``theta_star = diag(7, 4, 0, ...)`` with a fixed set of arms
    drawn uniformly from the unit Frobenius ball."""
    noise = noise if noise is not None else student_t()
    theta = np.zeros((d, d))
    theta[0, 0], theta[1, 1] = 7.0, 4.0
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 1]))
    arms = sample_unit_ball(rng, (d, d), count=n_arms)
    S = max(float(np.linalg.norm(theta)), 1.0)
    return Environment(theta, FixedArms(arms), noise, S, rng_seed=seed, rank=2, name="scenario1")


def gen_scenario2(seed=0, noise=None, m=10, d=10):
    """Two orthogonal rows of norms 7 and 4 with 10 fresh contextual arms
    per round."""
    noise = noise if noise is not None else student_t()
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 2]))
    a = rng.standard_normal(d)
    a /= np.linalg.norm(a)
    b = rng.standard_normal(d)
    b -= (b @ a) * a
    b /= np.linalg.norm(b)
    theta = np.zeros((d, d))
    theta[0], theta[1] = 7.0 * a, 4.0 * b
    S = max(float(np.linalg.norm(theta)), 1.0)
    source = ContextualArms(m=m, seed=int(np.random.SeedSequence([int(seed), 3]).generate_state(1)[0]))
    return Environment(theta, source, noise, S, rng_seed=seed, rank=2, name="scenario2")


@dataclass
class LowerBoundInstance:
    """Hard instance: ``K = (d-1) r`` fixed arms of unit norm, one of which
    is twice as good as the rest."""

    arms: np.ndarray
    theta_star: np.ndarray
    gamma: float
    starred_arm: int
    delta: float
    horizon: int
    payoff: float = field(init=False)

    def __post_init__(self):
        self.payoff = 1.0 / self.gamma

    @property
    def K(self):
        return len(self.arms)

    def means(self):
        return np.einsum("kij,ij->k", self.arms, self.theta_star)

    def validate(self, tol=1e-12):
        """Check the instance's defining identities; returns a dict of checks."""
        means = self.means()
        g = self.gamma ** self.delta
        others = np.delete(means, self.starred_arm)
        norms = np.sqrt(np.einsum("kij,kij->k", self.arms, self.arms))
        return {
            "starred_mean": abs(means[self.starred_arm] - 2 * g) <= tol,
            "other_means": bool(np.all(np.abs(others - g) <= tol)),
            "arm_norms": bool(np.all(norms <= 1 + tol)),
            "payoff_probability": 2 * self.gamma ** (1 + self.delta) < 1,
        }

    def to_environment(self, seed=0):
        # E|payoff|^(1+delta) = gamma^-(1+delta) * P(pay) <= 2
        noise = NoiseModel("payoff", self.gamma, self.delta, c_bound=2.0)
        S = max(1.0, float(np.linalg.norm(self.theta_star)))
        return Environment(self.theta_star, FixedArms(self.arms), noise, S, rng_seed=seed,
                           name="lower-bound")


def gen_lower_bound_instance(d, r, delta, T, seed=0):
    """Build the ``(d-1) r``-armed hard instance for horizon ``T``.

    Every arm carries ``sqrt(i / (r (r+1)))``, ``i = 1..r``, in the top of
    its first column and ``1/sqrt(2)`` at its own position among the
    ``(d-1) r`` remaining entries of the first ``r`` rows (column-major
    order). ``theta_star`` carries ``sqrt(4 i / (r (r+1))) gamma^delta`` in
    the same first-column slots and ``sqrt(2) gamma^delta`` at the position
    of a uniformly chosen starred arm, with
    ``gamma = (K / (T + 2K))^(1/(1+delta))``.
    """
    if d < 3:
        raise ValueError(f"d must be at least 3, got {d}")
    if not 1 <= r <= d:
        raise ValueError(f"r must lie in [1, d], got {r}")
    K = (d - 1) * r
    if K < 4:
        raise ValueError(f"need (d-1) r >= 4 arms, got {K}")
    if not 0 < delta <= 1:
        raise ValueError(f"delta must lie in (0, 1], got {delta}")
    if T < K:
        raise ValueError(f"horizon T={T} must be at least the number of arms K={K}")
    gamma = (K / (T + 2 * K)) ** (1.0 / (1.0 + delta))
    if not 2 * gamma ** (1 + delta) < 1:
        raise ValueError("payoff probability 2 gamma^(1+delta) must be below 1")
    g = gamma ** delta
    idx = np.arange(1, r + 1)
    # column-major positions of the first r rows, columns 1..d-1
    positions = [(i, j) for j in range(1, d) for i in range(r)]
    arms = np.zeros((K, d, d))
    arms[:, :r, 0] = np.sqrt(idx / (r * (r + 1)))
    for a, (i, j) in enumerate(positions):
        arms[a, i, j] = 1.0 / math.sqrt(2.0)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 4]))
    star = int(rng.integers(K))
    theta = np.zeros((d, d))
    theta[:r, 0] = np.sqrt(4 * idx / (r * (r + 1))) * g
    i, j = positions[star]
    theta[i, j] = math.sqrt(2.0) * g
    return LowerBoundInstance(arms=arms, theta_star=theta, gamma=gamma, starred_arm=star,
                              delta=delta, horizon=int(T))
