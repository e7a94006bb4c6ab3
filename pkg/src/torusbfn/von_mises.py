"""The von Mises distribution on ``[-pi, pi)``."""

from dataclasses import dataclass

import numpy as np

from torusbfn.kernels import impl as _impl
from torusbfn.special import (
    LOG_TWO_PI,
    DomainError,
    bessel_i0_log,
    bessel_ratio_i1_i0,
    wrap,
)


@dataclass(frozen=True)
class VonMises:
    """vM(m, c). ``c == 0`` is the uniform circular distribution.

    ``m`` and ``c`` may be scalars or broadcastable arrays; ``m`` is stored
    wrapped.
    """

    m: object
    c: object

    def __post_init__(self):
        c = np.asarray(self.c, dtype=np.float64)
        if not np.all(np.isfinite(c)) or np.any(c < 0):
            raise DomainError("concentration must be finite and nonnegative")
        object.__setattr__(self, "m", wrap(self.m))
        object.__setattr__(self, "c", c if c.ndim else float(c))


def log_pdf(d, x):
    """Log density ``c cos(x - m) - ln(2 pi) - ln I0(c)``."""
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise DomainError("x must be finite")
    out = d.c * np.cos(x - d.m) - LOG_TWO_PI - bessel_i0_log(d.c)
    return out if np.ndim(out) else float(out)


def _rejection_rounds(concentration, rng, size, kernel, outputs):
    conc = np.asarray(concentration, dtype=np.float64)
    shape = conc.shape if size is None else tuple(np.atleast_1d(size))
    kappa = np.ascontiguousarray(np.broadcast_to(conc, shape), dtype=np.float64).ravel()
    if not np.all(np.isfinite(kappa)) or np.any(kappa < 0):
        raise DomainError("concentration must be finite and nonnegative")
    outs = [np.empty(kappa.size) for _ in range(outputs)]
    pending = np.arange(kappa.size)
    while pending.size:
        u = rng.random((3, pending.size))
        *values, ok = kernel(np.ascontiguousarray(kappa[pending]), u[0], u[1], u[2])
        done = pending[ok]
        for out, v in zip(outs, values):
            out[done] = v[ok]
        pending = pending[~ok]
    return [out.reshape(shape) for out in outs]


def sample_offsets(concentration, rng, size=None):
    """Zero-mean vM draws by Best-Fisher rejection, independent of any location.

    Rejection proceeds in rounds: each round draws three uniforms for every
    still-pending element, in index order, so the stream consumed depends
    only on the concentrations and the generator state.
    """
    (theta,) = _rejection_rounds(concentration, rng, size, _impl.vm_offsets, 1)
    return theta


def sample_offset_vectors(concentration, rng, size=None):
    """``(cos, sin)`` of the :func:`sample_offsets` draws for the same generator state.

    Skips the arccos and the trig round trip, for callers that only need
    the unit vectors.
    """
    cos_t, sin_t = _rejection_rounds(concentration, rng, size, _impl.vm_offset_vectors, 2)
    return cos_t, sin_t


def sample_vm(mean, concentration, rng, size=None):
    """Draw vM(mean, concentration) samples of broadcast shape (or ``size``)."""
    mean = np.asarray(mean, dtype=np.float64)
    conc = np.asarray(concentration, dtype=np.float64)
    if size is None:
        size = np.broadcast_shapes(mean.shape, conc.shape)
    offsets = sample_offsets(np.broadcast_to(conc, size), rng)
    return wrap(mean + offsets)


def sample(d, rng, size=None):
    return sample_vm(d.m, d.c, rng, size)


def entropy(c):
    """Differential entropy ``-c I1/I0 + ln(2 pi I0(c))``; decreasing in c."""
    c = np.asarray(c, dtype=np.float64)
    out = -c * bessel_ratio_i1_i0(c) + LOG_TWO_PI + bessel_i0_log(c)
    return out if np.ndim(out) else float(out)


def kl_divergence(p, q):
    """KL(p || q) in the two-vector form, stable for large concentrations."""
    c1, c2 = np.asarray(p.c), np.asarray(q.c)
    cross = c1 - c2 * np.cos(np.asarray(p.m) - np.asarray(q.m))
    out = bessel_i0_log(c2) - bessel_i0_log(c1) + bessel_ratio_i1_i0(c1) * cross
    return out if np.ndim(out) else float(out)


def circular_mean(angles, axis=None):
    """Return (mean direction, mean resultant length) of ``angles``."""
    angles = np.asarray(angles)
    s = np.mean(np.sin(angles), axis=axis)
    c = np.mean(np.cos(angles), axis=axis)
    return wrap(np.arctan2(s, c)), np.hypot(s, c)
