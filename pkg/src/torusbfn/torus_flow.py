"""Periodic Bayesian flow on the hyper-torus.

The belief over each angle is a von Mises distribution (m, c). Folding a
sender observation y with accuracy alpha is vector addition of
``c * [cos m, sin m]`` and ``alpha * [cos y, sin y]``, which is what makes
the non-iterated flow sampler possible.
"""

from dataclasses import dataclass

import numpy as np

from torusbfn.kernels import impl as _impl
from torusbfn.special import TWO_PI, bessel_ratio_i1_i0, wrap
from torusbfn.von_mises import VonMises, log_pdf, sample_offset_vectors, sample_offsets, sample_vm

# resultant sums switch to extended precision past this many steps
_EXTENDED_PRECISION_STEPS = 10_000


@dataclass(frozen=True)
class TorusBelief:
    m: np.ndarray
    c: np.ndarray

    @classmethod
    def prior(cls, shape, rng=None):
        """c = 0 everywhere; m uniform when ``rng`` is given, else zero."""
        shape = tuple(np.atleast_1d(shape)) if np.ndim(shape) else (int(shape),)
        m = rng.uniform(-np.pi, np.pi, size=shape) if rng is not None else np.zeros(shape)
        return cls(wrap(m), np.zeros(shape))

    def shift(self, t):
        return TorusBelief(wrap(self.m + t), self.c)


@dataclass(frozen=True)
class SenderDraw:
    y: np.ndarray
    alpha: float

    def shift(self, t):
        return SenderDraw(wrap(self.y + t), self.alpha)


def bayesian_update(prev, draw):
    """Conjugate posterior after observing ``draw.y`` with accuracy ``draw.alpha``.

    The concentration is the length of the summed 2-vectors; ``hypot`` gives
    the same value as sqrt(a^2 + c^2 + 2ac cos(y - m)) without cancellation.
    An exactly cancelled resultant maps to (m=0, c=0).
    """
    a = np.asarray(draw.alpha, dtype=np.float64)
    s = a * np.sin(draw.y) + prev.c * np.sin(prev.m)
    k = a * np.cos(draw.y) + prev.c * np.cos(prev.m)
    c = np.hypot(s, k)
    m = np.where(c > 0, wrap(np.arctan2(s, k)), 0.0)
    return TorusBelief(m, c)


def posterior_oracle(prev_m, prev_c, y, alpha, grid_size=10_000):
    """Brute-force posterior on a uniform midpoint grid over ``[-pi, pi)``.

    Returns ``(grid, density)`` for a single dimension, with the density
    normalised so that ``density.sum() * 2*pi/grid_size == 1``.
    """
    if grid_size < 1000:
        raise ValueError("grid_size must be at least 1000")
    dx = TWO_PI / grid_size
    grid = -np.pi + dx * (np.arange(grid_size) + 0.5)
    log_lik = alpha * np.cos(y - grid)
    log_prior = prev_c * np.cos(grid - prev_m)
    log_post = log_lik + log_prior
    log_post -= log_post.max()
    dens = np.exp(log_post)
    dens /= dens.sum() * dx
    return grid, dens


def grid_total_variation(grid, density, dist):
    """TV distance between a gridded density and a von Mises distribution."""
    dx = grid[1] - grid[0]
    q = np.exp(log_pdf(dist, grid))
    q = q / (q.sum() * dx)
    return 0.5 * np.sum(np.abs(density - q)) * dx


def closed_form_posterior(prev_m, prev_c, y, alpha):
    post = bayesian_update(TorusBelief(np.asarray(prev_m), np.asarray(prev_c)), SenderDraw(y, alpha))
    return VonMises(post.m, post.c)


def _check_alphas(alphas):
    alphas = np.asarray(alphas, dtype=np.float64).ravel()
    if np.any(~np.isfinite(alphas)) or np.any(alphas <= 0):
        raise ValueError("accuracies must be finite and positive")
    return alphas


def draw_sender_sequence(x, alphas, rng):
    """All sender draws ``y_j ~ vM(x, alpha_j)``, shape ``(len(alphas),) + x.shape``."""
    x = np.asarray(x, dtype=np.float64)
    alphas = _check_alphas(alphas)
    conc = np.broadcast_to(alphas.reshape((-1,) + (1,) * x.ndim), alphas.shape + x.shape)
    return wrap(x + sample_offsets(conc, rng))


def fold_draws(y, alphas, prior=None):
    """Iterate the update over shared draws; returns per-step (m, c), step 0 = prior."""
    y = np.asarray(y, dtype=np.float64)
    alphas = np.asarray(alphas, dtype=np.float64).ravel()
    shape = y.shape[1:]
    if prior is None:
        prior = TorusBelief.prior(shape)
    ms, cs = _impl.fold_trajectory(
        np.ascontiguousarray(np.broadcast_to(prior.m, shape), dtype=np.float64).ravel(),
        np.ascontiguousarray(np.broadcast_to(prior.c, shape), dtype=np.float64).ravel(),
        np.ascontiguousarray(y.reshape(y.shape[0], -1)),
        np.ascontiguousarray(alphas),
    )
    return ms.reshape((-1,) + shape), cs.reshape((-1,) + shape)


def resultant_draws(y, alphas, prior=None):
    """Closed-form per-step (m, c) from cumulative resultant sums over shared draws."""
    y = np.asarray(y, dtype=np.float64)
    alphas = np.asarray(alphas, dtype=np.float64).ravel()
    shape = y.shape[1:]
    if prior is None:
        prior = TorusBelief.prior(shape)
    w = alphas.reshape((-1,) + (1,) * len(shape))
    dtype = np.longdouble if len(alphas) > _EXTENDED_PRECISION_STEPS else np.float64
    sx = np.cumsum((w * np.sin(y)).astype(dtype), axis=0)
    cx = np.cumsum((w * np.cos(y)).astype(dtype), axis=0)
    c = np.hypot(cx, sx).astype(np.float64)
    m = np.where(c > 0, wrap(np.arctan2(sx, cx).astype(np.float64)), 0.0)
    m0 = np.broadcast_to(prior.m, shape)[None]
    c0 = np.broadcast_to(prior.c, shape)[None]
    return np.concatenate([m0, m]), np.concatenate([c0, c])


def flow_sample_iterated(x, alphas, rng):
    """Sample the flow by drawing and folding one observation at a time.

    Slow reference path, kept as an oracle for :func:`flow_sample_fast`.
    """
    x = np.asarray(x, dtype=np.float64)
    alphas = _check_alphas(alphas) if len(np.atleast_1d(alphas)) else np.zeros(0)
    belief = TorusBelief.prior(x.shape, rng)
    for a in alphas:
        y = sample_vm(x, a, rng, size=x.shape)
        belief = bayesian_update(belief, SenderDraw(y, a))
    return belief


def flow_sample_fast(x, alphas, rng):
    """Sample the flow from the summed resultant of independent sender draws."""
    x = np.asarray(x, dtype=np.float64)
    if len(np.atleast_1d(alphas)) == 0:
        return TorusBelief.prior(x.shape, rng)
    alphas = _check_alphas(alphas)
    conc = np.broadcast_to(alphas.reshape((-1,) + (1,) * x.ndim), alphas.shape + x.shape)
    # the resultant of alpha_j e^{i(x + d_j)} is e^{ix} times that of alpha_j e^{i d_j}
    cos_d, sin_d = sample_offset_vectors(conc, rng)
    w = alphas.reshape((-1,) + (1,) * x.ndim)
    dtype = np.longdouble if len(alphas) > _EXTENDED_PRECISION_STEPS else np.float64
    sd = np.sum((w * sin_d).astype(dtype), axis=0)
    cd = np.sum((w * cos_d).astype(dtype), axis=0)
    c = np.hypot(cd, sd).astype(np.float64)
    m = np.where(c > 0, wrap(x + np.arctan2(sd, cd).astype(np.float64)), 0.0)
    return TorusBelief(m, c)


def flow_sample_fast_batch(x, prefix_lengths, alphas, rng):
    """Fast flow states for a batch where each row has its own step count.

    ``x`` has shape (B, D); row b folds ``alphas[:prefix_lengths[b]]``.
    Rows with an empty prefix get the prior (c = 0, uniform m).
    """
    x = np.asarray(x, dtype=np.float64)
    k = np.asarray(prefix_lengths, dtype=np.int64)
    alphas = np.asarray(alphas, dtype=np.float64)
    batch, dims = x.shape
    kmax = int(k.max(initial=0))
    prior_m = rng.uniform(-np.pi, np.pi, size=(batch, dims))
    if kmax == 0:
        return TorusBelief(wrap(prior_m), np.zeros((batch, dims)))
    mask = np.arange(kmax)[None, :] < k[:, None]
    rows, cols = np.nonzero(mask)
    conc = np.repeat(alphas[cols][:, None], dims, axis=1)
    cos_d, sin_d = sample_offset_vectors(conc, rng)
    w = alphas[cols][:, None]
    sd = np.zeros((batch, dims))
    cd = np.zeros((batch, dims))
    np.add.at(sd, rows, w * sin_d)
    np.add.at(cd, rows, w * cos_d)
    c = np.hypot(cd, sd)
    m = np.where(c > 0, wrap(x + np.arctan2(sd, cd)), 0.0)
    empty = k == 0
    m[empty] = wrap(prior_m[empty])
    c[empty] = 0.0
    return TorusBelief(m, c)


def demonstrate_nonadditivity(x, alpha_a, alpha_b, trials, rng, bins=40):
    """Contrast one update at alpha_a + alpha_b with two successive updates.

    From the c = 0 prior, a single update always yields c = alpha_a + alpha_b,
    while two updates yield the random length |alpha_a y_a + alpha_b y_b|.
    """
    if alpha_a <= 0 or alpha_b < 0:
        raise ValueError("alpha_a must be positive and alpha_b nonnegative")
    if trials < 10_000:
        raise ValueError("trials must be at least 10_000")
    ya = sample_vm(x, alpha_a, rng, size=trials)
    yb = sample_vm(x, alpha_b, rng, size=trials)
    prior = TorusBelief(np.zeros(trials), np.zeros(trials))
    after_a = bayesian_update(prior, SenderDraw(ya, alpha_a))
    two_step = bayesian_update(after_a, SenderDraw(yb, alpha_b)).c
    lo, hi = float(two_step.min()), float(two_step.max())
    if hi - lo <= 1e-9 * max(hi, 1.0):
        # (near-)constant, e.g. alpha_b = 0: widen so the bins are finite
        lo, hi = lo - 0.5, hi + 0.5
    counts, edges = np.histogram(two_step, bins=bins, range=(lo, hi))
    return {
        "x": float(x),
        "alpha_a": float(alpha_a),
        "alpha_b": float(alpha_b),
        "trials": int(trials),
        "one_step_c": float(alpha_a + alpha_b),
        "two_step_mean": float(two_step.mean()),
        "two_step_var": float(two_step.var()),
        "two_step_min": float(two_step.min()),
        "two_step_max": float(two_step.max()),
        "histogram": {"edges": edges.tolist(), "counts": counts.tolist()},
    }


def torus_loss(F, F_hat, alpha, n):
    """n alpha I1(alpha)/I0(alpha) sum_d (1 - cos(F - F_hat)), per sample.

    This is n KL(vM(F, alpha) || vM(F_hat, alpha)) summed over dimensions.
    ``alpha`` is a scalar or one accuracy per leading row.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    d = 1.0 - np.cos(np.asarray(F, dtype=np.float64) - np.asarray(F_hat, dtype=np.float64))
    return n * alpha * bessel_ratio_i1_i0(alpha) * np.sum(d, axis=-1)
