"""Nuclear-norm penalized Huber trace regression.

Designs are stacked as an ``(n, d1, d2)`` array and responses as ``(n,)``;
the model is ``y_i = <X_i, Theta> + noise``.
"""
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted, check_X_y, check_array

from .linalg import SvdFactors, full_svd, svd_soft_threshold

__all__ = [
    "huber_loss",
    "huber_grad",
    "objective_and_grad",
    "HuberConfig",
    "FitResult",
    "lamm_solve",
    "schedule_params",
    "useful_rank_threshold",
    "estimate_useful_rank",
    "HuberTraceRegressor",
    "check_design",
]


def _check_tau(tau):
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")


def huber_loss(x, tau):
    """Huber loss: ``x**2 / 2`` for ``|x| <= tau``, ``tau|x| - tau**2 / 2`` beyond."""
    _check_tau(tau)
    x = np.asarray(x, dtype=float)
    a = np.abs(x)
    out = np.where(a <= tau, 0.5 * x * x, tau * a - 0.5 * tau * tau)
    return out if out.ndim else float(out)


def huber_grad(x, tau):
    """Derivative of :func:`huber_loss`, i.e. ``x`` clipped to ``[-tau, tau]``."""
    _check_tau(tau)
    out = np.clip(np.asarray(x, dtype=float), -tau, tau)
    return out if out.ndim else float(out)


def check_design(X, y, S=None):
    """Validate a stacked design and response vector.

    Returns float arrays ``X`` of shape ``(n, d1, d2)`` and ``y`` of shape
    ``(n,)``. With ``S`` given, every design must have Frobenius norm at most
    ``S``.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim != 3:
        raise ValueError(f"designs must have shape (n, d1, d2), got {X.shape}")
    if X.shape[0] == 0:
        raise ValueError("no samples")
    if X.shape[0] != y.shape[0]:
        raise ValueError(f"{X.shape[0]} designs but {y.shape[0]} responses")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("data contains non-finite values")
    if S is not None:
        norms = np.sqrt(np.einsum("nij,nij->n", X, X))
        if np.any(norms > S * (1 + 1e-12)):
            raise ValueError(f"design norm {norms.max():.4g} exceeds bound S={S}")
    return X, y


def _loss_grad_flat(theta_flat, Xf, y, tau, with_grad=True):
    res = y - Xf @ theta_flat
    loss = float(np.mean(huber_loss(res, tau)))
    if not with_grad:
        return loss, None
    grad = -(huber_grad(res, tau) @ Xf) / len(y)
    return loss, grad


def objective_and_grad(theta, X, y, tau):
    """Empirical Huber loss ``(1/n) sum l_tau(y_i - <X_i, theta>)`` and its gradient.

    Returns
    -------
    loss : float
    grad : (d1, d2) ndarray
        ``-(1/n) sum l'_tau(residual_i) X_i``.
    """
    _check_tau(tau)
    X, y = check_design(X, y)
    theta = np.asarray(theta, dtype=float)
    n = X.shape[0]
    loss, grad = _loss_grad_flat(theta.ravel(), X.reshape(n, -1), y, tau)
    return loss, grad.reshape(theta.shape)


@dataclass(frozen=True)
class HuberConfig:
    """Robustification, penalty and LAMM solver settings."""

    tau: float
    lambda_nuc: float
    stop_eps: float = 1e-6
    alpha0: float = 1e-3
    psi: float = 2.0
    max_outer_iters: int = 500

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if not self.lambda_nuc > 0:
            raise ValueError(f"lambda_nuc must be positive, got {self.lambda_nuc}")
        if not self.psi > 1:
            raise ValueError(f"psi must exceed 1, got {self.psi}")
        if not self.stop_eps > 0:
            raise ValueError(f"stop_eps must be positive, got {self.stop_eps}")
        if not self.alpha0 > 0:
            raise ValueError(f"alpha0 must be positive, got {self.alpha0}")
        if self.max_outer_iters < 1:
            raise ValueError("max_outer_iters must be at least 1")


@dataclass
class FitResult:
    theta_hat: np.ndarray
    svd: SvdFactors
    outer_iters: int
    final_objective: float
    converged: bool
    objective_history: list = field(default_factory=list)


_ALPHA_CAP = 1e30


def lamm_solve(X, y, config, theta0=None):
    """Minimize ``L_tau(Theta) + lambda ||Theta||_nuc`` by local adaptive
    majorize-minimization.

    Each outer step minimizes the isotropic quadratic majorizer
    ``L(T) + <grad, Z - T> + alpha/2 ||Z - T||_F^2`` plus the penalty, which
    is one SVD soft-threshold step; ``alpha`` is multiplied by ``psi`` until
    the majorizer dominates the loss at the candidate. The next outer step
    starts from ``max(alpha0, accepted alpha)``.

    Stops when ``||Theta_t - Theta_{t-1}||_F <= stop_eps``; hitting
    ``max_outer_iters`` returns the last iterate with ``converged=False``.
    """
    X, y = check_design(X, y)
    n = X.shape[0]
    shape = X.shape[1:]
    Xf = X.reshape(n, -1)
    tau, lam = config.tau, config.lambda_nuc
    prev = np.zeros(shape) if theta0 is None else np.array(theta0, dtype=float)
    if prev.shape != shape:
        raise ValueError(f"theta0 has shape {prev.shape}, expected {shape}")

    loss_prev, grad_prev = _loss_grad_flat(prev.ravel(), Xf, y, tau)
    history = [loss_prev + lam * float(np.linalg.svd(prev, compute_uv=False).sum())]
    alpha = config.alpha0
    converged = False
    it = 0
    cur = prev
    for it in range(1, config.max_outer_iters + 1):
        alpha = max(config.alpha0, alpha)
        g = grad_prev.reshape(shape)
        while True:
            cur = svd_soft_threshold(prev - g / alpha, lam / alpha)
            diff = cur - prev
            majorizer = loss_prev + float(np.sum(g * diff)) + 0.5 * alpha * float(np.sum(diff * diff))
            loss_cur, _ = _loss_grad_flat(cur.ravel(), Xf, y, tau, with_grad=False)
            if loss_cur <= majorizer + 1e-13 * max(1.0, abs(majorizer)) or alpha > _ALPHA_CAP:
                break
            alpha *= config.psi
        step = float(np.linalg.norm(diff))
        history.append(loss_cur + lam * float(np.linalg.svd(cur, compute_uv=False).sum()))
        prev = cur
        if step <= config.stop_eps:
            converged = True
            break
        loss_prev, grad_prev = _loss_grad_flat(prev.ravel(), Xf, y, tau)

    return FitResult(
        theta_hat=cur,
        svd=full_svd(cur),
        outer_iters=it,
        final_objective=history[-1],
        converged=converged,
        objective_history=history,
    )


def schedule_params(n, d, delta, c, eps, c_tau=1.0, c_lambda=1.0, sigma=1.0):
    """Robustification and penalty levels for ``n`` samples.

    ``tau = c_tau (n / (d + ln(1/eps)))^(1/(1+delta)) c^(1/(1+delta))`` and
    ``lambda = c_lambda sigma ((d + ln(1/eps)) / n)^(delta/(1+delta)) c^(1/(1+delta))``.
    """
    if n < 1 or d < 1:
        raise ValueError("n and d must be at least 1")
    if not 0 < delta <= 1:
        raise ValueError(f"delta must lie in (0, 1], got {delta}")
    if not 0 < eps < 1:
        raise ValueError(f"eps must lie in (0, 1), got {eps}")
    eff = d + math.log(1.0 / eps)
    cpow = c ** (1.0 / (1.0 + delta))
    tau = c_tau * (n / eff) ** (1.0 / (1.0 + delta)) * cpow
    lam = c_lambda * sigma * (eff / n) ** (delta / (1.0 + delta)) * cpow
    return tau, lam


def useful_rank_threshold(i, n_h2, d, delta, c, eps_batch, sigma, c_l, C1=1.0):
    """Singular-value cutoff ``C1 sigma sqrt(i) / c_l ((d + ln(1/eps_batch)) / n)^(delta/(1+delta)) c^(1/(1+delta))``."""
    rate = ((d + math.log(1.0 / eps_batch)) / n_h2) ** (delta / (1.0 + delta))
    return C1 * sigma * math.sqrt(i) / c_l * rate * c ** (1.0 / (1.0 + delta))


def estimate_useful_rank(singular_values, n_h2, d, delta, c, eps_batch, sigma, c_l, C1=1.0):
    """Number of estimated singular values worth keeping.

    Scans ``i = 1, 2, ...`` for the first estimated singular value at or
    below its cutoff (a zero sentinel sits after the last one) and returns
    that index minus one, floored at 1.
    """
    s = np.append(np.asarray(singular_values, dtype=float), 0.0)
    for i, value in enumerate(s, start=1):
        if value <= useful_rank_threshold(i, n_h2, d, delta, c, eps_batch, sigma, c_l, C1):
            return max(i - 1, 1)
    raise AssertionError("unreachable: sentinel is always below a positive cutoff")


class HuberTraceRegressor(RegressorMixin, BaseEstimator):
    """Low-rank trace regression with Huber loss and a nuclear-norm penalty.

    Parameters
    ----------
    tau, lam : float or None
        Robustification and penalty. ``None`` picks each from the sample-size
        schedule of :func:`schedule_params` using ``delta``,
        ``moment_bound``, ``eps``, ``c_tau``, ``c_lambda`` and ``sigma``.
    delta : float
        Moment order of the noise, in (0, 1].
    moment_bound : float
        Bound on ``E|noise|^(1+delta)``; a tuning knob in practice.
    sigma : float or None
        Sub-Gaussian scale of the design; ``None`` means ``1/sqrt(d1 d2)``.
    warm_start : bool
        Start from the previous ``coef_`` when refitting.

    Attributes
    ----------
    coef_ : (d1, d2) ndarray
    svd_ : SvdFactors
    n_iter_ : int
    converged_ : bool
    objective_path_ : list of float
    tau_, lam_ : float
        Values used in the last fit.
    """

    def __init__(self, tau=None, lam=None, delta=1.0, moment_bound=1.0, eps=0.1,
                 c_tau=1.0, c_lambda=1.0, sigma=None, alpha0=1e-3, psi=2.0,
                 stop_eps=1e-6, max_iter=500, warm_start=False):
        self.tau = tau
        self.lam = lam
        self.delta = delta
        self.moment_bound = moment_bound
        self.eps = eps
        self.c_tau = c_tau
        self.c_lambda = c_lambda
        self.sigma = sigma
        self.alpha0 = alpha0
        self.psi = psi
        self.stop_eps = stop_eps
        self.max_iter = max_iter
        self.warm_start = warm_start

    def fit(self, X, y):
        X, y = check_X_y(X, y, allow_nd=True, y_numeric=True)
        X, y = check_design(X, y)
        n, d1, d2 = X.shape
        sigma = self.sigma if self.sigma is not None else 1.0 / math.sqrt(d1 * d2)
        tau_s, lam_s = schedule_params(n, max(d1, d2), self.delta, self.moment_bound,
                                       self.eps, self.c_tau, self.c_lambda, sigma)
        self.tau_ = tau_s if self.tau is None else self.tau
        self.lam_ = lam_s if self.lam is None else self.lam
        config = HuberConfig(tau=self.tau_, lambda_nuc=self.lam_, stop_eps=self.stop_eps,
                             alpha0=self.alpha0, psi=self.psi, max_outer_iters=self.max_iter)
        theta0 = None
        if self.warm_start and getattr(self, "coef_", None) is not None and self.coef_.shape == (d1, d2):
            theta0 = self.coef_
        result = lamm_solve(X, y, config, theta0)
        if not result.converged:
            warnings.warn(f"LAMM did not converge in {self.max_iter} iterations", RuntimeWarning)
        self.coef_ = result.theta_hat
        self.svd_ = result.svd
        self.n_iter_ = result.outer_iters
        self.converged_ = result.converged
        self.objective_path_ = result.objective_history
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, allow_nd=True)
        if X.shape[1:] != self.coef_.shape:
            raise ValueError(f"designs of shape {X.shape[1:]} do not match coef_ {self.coef_.shape}")
        return np.einsum("nij,ij->n", X, self.coef_)
