"""Gaussian Bayesian flow for the lattice vector.

Accuracies add exactly here, which is the contrast to the torus flow.
"""

from dataclasses import dataclass

import numpy as np

from torusbfn.schedule import gaussian_alpha, gaussian_gamma
from torusbfn.special import DomainError


@dataclass(frozen=True)
class GaussBelief:
    mu: np.ndarray
    rho: object

    @classmethod
    def prior(cls, shape):
        return cls(np.zeros(shape), 1.0)


def gauss_flow_sample(L, t, params, rng):
    """Draw mu ~ N(gamma L, gamma (1 - gamma) I); rho is 1/(1 - gamma).

    ``t`` may be a scalar or one value per leading row of ``L``.
    """
    L = np.asarray(L, dtype=np.float64)
    gamma = np.asarray(gaussian_gamma(t, params))
    g = gamma.reshape(gamma.shape + (1,) * (L.ndim - gamma.ndim))
    noise = rng.standard_normal(L.shape)
    mu = g * L + np.sqrt(g * (1.0 - g)) * noise
    rho = 1.0 / (1.0 - gamma)
    return GaussBelief(mu, rho if np.ndim(rho) else float(rho))


def gauss_update(prev, y, alpha):
    """Precision-weighted mean update; precisions add."""
    alpha = np.asarray(alpha, dtype=np.float64)
    if np.any(alpha < 0):
        raise DomainError("alpha must be nonnegative")
    rho = prev.rho + alpha
    mu = (prev.rho * np.asarray(prev.mu) + alpha * np.asarray(y)) / rho
    return GaussBelief(mu, rho if np.ndim(rho) else float(rho))


def gauss_loss(L, L_hat, i, params):
    """(n/2) alpha_i ||L - L_hat||^2 summed over the last axis.

    ``alpha_i = (1 - sigma1^(2/n)) / sigma1^(2i/n)``, so this equals
    n KL(N(L, 1/alpha_i) || N(L_hat, 1/alpha_i)).
    """
    err = np.asarray(L, dtype=np.float64) - np.asarray(L_hat, dtype=np.float64)
    return 0.5 * params.n * gaussian_alpha(i, params) * np.sum(err * err, axis=-1)


def gaussian_kl(mean_p, mean_q, alpha):
    """KL(N(mean_p, 1/alpha I) || N(mean_q, 1/alpha I))."""
    d = np.asarray(mean_p) - np.asarray(mean_q)
    return 0.5 * alpha * np.sum(d * d, axis=-1)
