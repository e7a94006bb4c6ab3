"""Pure numpy implementations of the hot kernels.

Every function here has a twin with the same signature in ``_kernels.pyx``.
Inputs are assumed validated and already converted to contiguous float64
arrays by the callers in :mod:`torusbfn.special` and friends.
"""

import numpy as np

SPLIT = 20.0
_SERIES_TERMS = 64
_ASYMPTOTIC_TERMS = 40
_TWO_PI = 2.0 * np.pi


def _asymptotic_sum(x, mu):
    # sum_k (-1)^k prod_{j<=k} (mu - (2j-1)^2) / (k! (8x)^k)
    term = np.ones_like(x)
    total = np.ones_like(x)
    for k in range(1, _ASYMPTOTIC_TERMS + 1):
        term = term * ((2 * k - 1) ** 2 - mu) / (8.0 * k * x)
        total += term
    return total


def log_i0(x):
    out = np.empty_like(x)
    small = x <= SPLIT
    xs = x[small]
    q = 0.25 * xs * xs
    term = np.ones_like(xs)
    tail = np.zeros_like(xs)
    for k in range(1, _SERIES_TERMS + 1):
        term = term * q / (k * k)
        tail += term
    out[small] = np.log1p(tail)
    xl = x[~small]
    out[~small] = xl - 0.5 * np.log(_TWO_PI * xl) + np.log(_asymptotic_sum(xl, 0.0))
    return out


def ratio_i1_i0(x):
    out = np.empty_like(x)
    small = x <= SPLIT
    xs = x[small]
    q = 0.25 * xs * xs
    t0 = np.ones_like(xs)
    t1 = np.ones_like(xs)
    s0 = np.ones_like(xs)
    s1 = np.ones_like(xs)
    for k in range(1, _SERIES_TERMS + 1):
        t0 = t0 * q / (k * k)
        t1 = t1 * q / (k * (k + 1))
        s0 += t0
        s1 += t1
    out[small] = 0.5 * xs * s1 / s0
    xl = x[~small]
    out[~small] = _asymptotic_sum(xl, 4.0) / _asymptotic_sum(xl, 0.0)
    return out


def _best_fisher_round(kappa, u1, u2, u3):
    """Proposal cosines f, signs and acceptance for the non-flat entries."""
    live = kappa != 0.0
    k = kappa[live]
    with np.errstate(divide="ignore", invalid="ignore"):
        tau = 1.0 + np.sqrt(1.0 + 4.0 * k * k)
        rho = (tau - np.sqrt(2.0 * tau)) / (2.0 * k)
        r = np.where(k < 1e-5, 1.0 / k + k, (1.0 + rho * rho) / (2.0 * rho))
        z = np.cos(np.pi * u1[live])
        f = (1.0 + r * z) / (r + z)
        c = k * (r - f)
        v = u2[live]
        ok = (c * (2.0 - c) - v > 0.0) | (np.log(c / v) + 1.0 - c >= 0.0)
    sign = np.where(u3[live] < 0.5, -1.0, 1.0)
    return live, np.clip(f, -1.0, 1.0), sign, ok


def vm_offsets(kappa, u1, u2, u3):
    """One Best-Fisher proposal round; returns (offset, accepted)."""
    theta = np.pi * (2.0 * u1 - 1.0)
    accepted = np.ones(kappa.shape, dtype=bool)
    live, f, sign, ok = _best_fisher_round(kappa, u1, u2, u3)
    theta[live] = sign * np.arccos(f)
    accepted[live] = ok
    return theta, accepted


def vm_offset_vectors(kappa, u1, u2, u3):
    """As :func:`vm_offsets` but returns (cos offset, sin offset, accepted)."""
    flat = np.pi * (2.0 * u1 - 1.0)
    cos_t, sin_t = np.cos(flat), np.sin(flat)
    accepted = np.ones(kappa.shape, dtype=bool)
    live, f, sign, ok = _best_fisher_round(kappa, u1, u2, u3)
    cos_t[live] = f
    sin_t[live] = sign * np.sqrt(1.0 - f * f)
    accepted[live] = ok
    return cos_t, sin_t, accepted


def _wrap(x):
    r = np.mod(x + np.pi, _TWO_PI) - np.pi
    return np.where(r >= np.pi, r - _TWO_PI, r)


def fold_trajectory(m0, c0, y, alphas):
    """Sequential conjugate updates; returns per-step (m, c) of shape (steps + 1, size)."""
    steps = y.shape[0]
    ms = np.empty((steps + 1,) + m0.shape)
    cs = np.empty_like(ms)
    ms[0] = m0
    cs[0] = c0
    m, c = m0, c0
    for j in range(steps):
        a = alphas[j]
        s = a * np.sin(y[j]) + c * np.sin(m)
        k = a * np.cos(y[j]) + c * np.cos(m)
        c = np.hypot(s, k)
        m = np.where(c > 0.0, _wrap(np.arctan2(s, k)), 0.0)
        ms[j + 1] = m
        cs[j + 1] = c
    return ms, cs


def inverse_cdf(u, edges, cdf):
    return np.interp(u, cdf, edges)


def mean_resultant(re, im, u, alpha, edges, cdf):
    y = np.interp(u, cdf, edges)
    return float(np.mean(np.hypot(re + alpha * np.cos(y), im + alpha * np.sin(y))))
