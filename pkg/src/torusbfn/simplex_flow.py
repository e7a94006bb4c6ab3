"""Discrete Bayesian flow for atom types on the probability simplex.

A sender draw for class ``a`` is ``y ~ N(alpha (K e_a - 1), alpha K I)``
and the belief update multiplies by ``exp(y)``. Everything runs in the
log domain with per-row max subtraction.
"""

from dataclasses import dataclass

import numpy as np

from torusbfn.schedule import discrete_alpha, discrete_beta
from torusbfn.special import DomainError


@dataclass(frozen=True)
class SimplexBelief:
    theta: np.ndarray

    @classmethod
    def prior(cls, shape, K):
        return cls(np.full(tuple(np.atleast_1d(shape)) + (K,), 1.0 / K))


def log_softmax(z, axis=-1):
    z = np.asarray(z, dtype=np.float64)
    z = z - z.max(axis=axis, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=axis, keepdims=True))


def softmax(z, axis=-1):
    return np.exp(log_softmax(z, axis))


def logsumexp(z, axis=-1):
    z = np.asarray(z, dtype=np.float64)
    mx = z.max(axis=axis, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    with np.errstate(divide="ignore"):
        return np.squeeze(mx, axis) + np.log(np.sum(np.exp(z - mx), axis=axis))


def one_hot(A, K):
    A = np.asarray(A, dtype=np.int64)
    if np.any(A < 0) or np.any(A >= K):
        raise DomainError(f"class index outside [0, {K})")
    return np.eye(K)[A]


def sender_draw(A, alpha, K, rng):
    """y ~ N(alpha (K e_A - 1), alpha K I); ``alpha`` broadcasts over leading dims of A."""
    alpha = np.asarray(alpha, dtype=np.float64)
    a = alpha.reshape(alpha.shape + (1,) * (np.ndim(A) + 1 - alpha.ndim))
    mean = a * (K * one_hot(A, K) - 1.0)
    return mean + np.sqrt(a * K) * rng.standard_normal(mean.shape)


def simplex_flow_sample(A, t, params, rng):
    """theta = softmax(y) with y ~ N(beta(t)(K e_A - 1), beta(t) K I); uniform at t = 0."""
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0) or np.any(t > 1):
        raise DomainError("t must lie in [0, 1]")
    y = sender_draw(A, discrete_beta(t, params), params.K, rng)
    return SimplexBelief(softmax(y))


def simplex_update(prev, y):
    """theta_i proportional to exp(y) * theta_{i-1}, row-normalised."""
    with np.errstate(divide="ignore"):
        log_theta = np.log(prev.theta)
    return SimplexBelief(softmax(log_theta + y))


def simplex_loss_from_draw(A, log_p, y):
    """Per-sample loss given a sender draw ``y`` and predicted log-probabilities.

    The Gaussian log-density ratios collapse to differences of ``y`` entries,
    so the loss is ``sum_d (y_{d,A_d} - logsumexp_k(log p_{d,k} + y_{d,k}))``
    before the factor n. It is exactly 0 for a one-hot prediction at A.
    """
    y_true = np.take_along_axis(y, np.asarray(A)[..., None], axis=-1)[..., 0]
    return np.sum(y_true - logsumexp(log_p + y), axis=-1)


def simplex_loss(A, p_out, i, params, rng):
    """Single-draw estimate of n KL(sender || receiver) for atom types.

    ``A`` has shape (..., N); ``p_out`` has shape (..., N, K); ``i`` is a
    scalar or one step per leading row.
    """
    p_out = np.asarray(p_out, dtype=np.float64)
    alpha = discrete_alpha(i, params)
    y = sender_draw(A, alpha, params.K, rng)
    with np.errstate(divide="ignore"):
        log_p = np.log(p_out)
    return params.n * simplex_loss_from_draw(A, log_p, y)
