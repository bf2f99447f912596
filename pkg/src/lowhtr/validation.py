"""Quick invariant suite behind ``lowhtr validate`` and the estimation sweep."""
import math

import numpy as np

from .env import gen_lower_bound_instance, gen_scenario1, sample_noise, sample_unit_ball, student_t
from .huber import HuberConfig, lamm_solve, objective_and_grad, schedule_params
from .linalg import SubspaceSplit, nuclear_norm, rotate_and_vectorize, rotate_parameter, svd_soft_threshold
from .lotus import LotusConfig, run_lotus
from .lowto import LowTOState, estimate_theta, update

__all__ = ["estimation_errors", "quick_checks"]


def estimation_errors(n_values, seeds, noise=None, d=10, eps=0.1, c_lambda=1.0, c_tau=1.0):
    """Frobenius error of the scheduled Huber fit on ``diag(7, 4, 0, ...)``.

    Covariates are uniform in the unit Frobenius ball and ``tau``, ``lambda``
    follow the sample-size schedules with ``sigma = 1/d``.

    Returns
    -------
    errors : (len(n_values), len(seeds)) ndarray
    """
    noise = noise if noise is not None else student_t()
    theta = np.zeros((d, d))
    theta[0, 0], theta[1, 1] = 7.0, 4.0
    out = np.empty((len(n_values), len(seeds)))
    for a, n in enumerate(n_values):
        for b, seed in enumerate(seeds):
            rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(n)]))
            X = sample_unit_ball(rng, (d, d), count=n)
            y = np.einsum("kij,ij->k", X, theta) + sample_noise(noise, rng, size=n)
            tau, lam = schedule_params(n, d, noise.delta, noise.c_bound, eps, c_tau, c_lambda, 1.0 / d)
            fit = lamm_solve(X, y, HuberConfig(tau=tau, lambda_nuc=lam))
            out[a, b] = np.linalg.norm(fit.theta_hat - theta)
    return out


def _prox_check(rng):
    worst = 0.0
    for _ in range(20):
        theta = rng.standard_normal((int(rng.integers(1, 7)), int(rng.integers(1, 7))))
        k = float(rng.uniform(0, 2))
        P = svd_soft_threshold(theta, k)
        f = lambda Z: 0.5 * np.sum((Z - theta) ** 2) + k * nuclear_norm(Z)
        base = f(P)
        for _ in range(100):
            worst = max(worst, base - f(P + 0.1 * rng.standard_normal(P.shape)))
    return worst <= 1e-12, f"max improvement by perturbation {worst:.3g}"


def _gradient_check(rng):
    worst = 0.0
    for _ in range(5):
        X = rng.standard_normal((30, 4, 3))
        y = rng.standard_normal(30) * 3
        theta = rng.standard_normal((4, 3))
        _, g = objective_and_grad(theta, X, y, 1.5)
        h = 1e-6
        for idx in np.ndindex(theta.shape):
            E = np.zeros_like(theta)
            E[idx] = h
            fd = (objective_and_grad(theta + E, X, y, 1.5)[0] - objective_and_grad(theta - E, X, y, 1.5)[0]) / (2 * h)
            worst = max(worst, abs(fd - g[idx]) / max(abs(g[idx]), 1e-3))
    return worst < 1e-5, f"max relative error {worst:.3g}"


def _lamm_check(rng):
    worst = 0.0
    for _ in range(5):
        X = rng.standard_normal((100, 5, 5))
        y = rng.standard_normal(100) + 3 * X[:, 0, 0]
        hist = lamm_solve(X, y, HuberConfig(tau=1.0, lambda_nuc=0.05)).objective_history
        worst = max(worst, float(np.max(np.diff(hist), initial=-np.inf)))
    return worst <= 1e-10, f"largest objective increase {worst:.3g}"


def _rotation_check(rng):
    worst = 0.0
    for _ in range(200):
        d1, d2 = int(rng.integers(2, 7)), int(rng.integers(2, 7))
        r = int(rng.integers(0, min(d1, d2) + 1))
        Q1 = np.linalg.qr(rng.standard_normal((d1, d1)))[0]
        Q2 = np.linalg.qr(rng.standard_normal((d2, d2)))[0]
        split = SubspaceSplit(Q1[:, :r], Q1[:, r:], Q2[:, :r], Q2[:, r:])
        X, T = rng.standard_normal((d1, d2)), rng.standard_normal((d1, d2))
        gap = abs(np.sum(X * T) - rotate_and_vectorize(X, split) @ rotate_parameter(T, split))
        worst = max(worst, gap / (np.linalg.norm(X) * np.linalg.norm(T)))
    return worst <= 1e-10, f"max relative gap {worst:.3g}"


def _ridge_check(rng):
    worst = 0.0
    for _ in range(10):
        p = int(rng.integers(2, 20))
        state = LowTOState(p, p, 0.7, 0.7)
        X = rng.standard_normal((40, p))
        y = rng.standard_normal(40)
        for x, v in zip(X, y):
            update(state, x, v)
        ridge = np.linalg.solve(X.T @ X + 0.7 * np.eye(p), X.T @ y)
        worst = max(worst, float(np.max(np.abs(estimate_theta(state, math.inf) - ridge))))
    return worst <= 1e-8, f"max deviation {worst:.3g}"


def _lower_bound_check(rng):
    ok = True
    for d, r, delta in ((5, 2, 1.0), (6, 3, 0.5), (10, 2, 1.0)):
        ok &= all(gen_lower_bound_instance(d, r, delta, 1000, seed=int(rng.integers(1000))).validate().values())
    return ok, "instances (5,2,1), (6,3,0.5), (10,2,1)"


def _bookkeeping_check(rng):
    env = gen_scenario1(0, n_arms=50)
    cfg = LotusConfig(T0=10, delta=0.5, c_moment=6.0, explore_scale=0.1, refresh_every=10)
    horizon = int(rng.integers(40, 400))
    trace, records = run_lotus(env, cfg, horizon, np.random.default_rng(0))
    pulls = cfg.T0 + sum(r.explore_count + r.exploit_count for r in records)
    eps_ok = all(math.isclose(r.eps_i, cfg.eps / 2 ** (r.index + 1)) for r in records)
    again, _ = run_lotus(env.fresh(), cfg, horizon, np.random.default_rng(0))
    same = again.inst_regret == trace.inst_regret
    return pulls == horizon == len(trace) and eps_ok and same, f"horizon {horizon}, {len(records)} batches"


CHECKS = (
    ("prox optimality", _prox_check),
    ("gradient vs finite differences", _gradient_check),
    ("LAMM monotone descent", _lamm_check),
    ("rotation isometry", _rotation_check),
    ("ridge limit of truncated estimate", _ridge_check),
    ("lower-bound instance identities", _lower_bound_check),
    ("batch bookkeeping and determinism", _bookkeeping_check),
)


def quick_checks(seed=0):
    """Run the quick suite; yields ``(name, passed, detail)`` per check."""
    for j, (name, fn) in enumerate(CHECKS):
        ok, detail = fn(np.random.default_rng([seed, j]))
        yield name, bool(ok), detail
