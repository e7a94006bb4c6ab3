"""Bessel functions in log/ratio form and angle utilities.

All angles live on ``[-pi, pi)``. Fractional coordinates in ``[0, 1)``
are converted only at the boundaries of the pipeline.
"""

import numpy as np

from torusbfn.kernels import impl as _impl

TWO_PI = 2.0 * np.pi
LOG_TWO_PI = float(np.log(TWO_PI))


class DomainError(ValueError):
    """Raised when an argument falls outside a function's domain."""


def _as_nonnegative(x, name):
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} must be finite")
    if np.any(arr < 0):
        raise DomainError(f"{name} must be nonnegative, got min {arr.min()}")
    return arr


def _elementwise(kernel, arr):
    flat = np.ascontiguousarray(arr.ravel())
    out = kernel(flat).reshape(arr.shape)
    return out if arr.ndim else float(out)


def bessel_i0_log(x):
    """Natural log of the modified Bessel function I0 for ``x >= 0``.

    Power series below 20, Hankel asymptotic expansion above; I0 itself is
    never formed for large arguments.
    """
    return _elementwise(_impl.log_i0, _as_nonnegative(x, "x"))


def bessel_ratio_i1_i0(x):
    """I1(x) / I0(x) for ``x >= 0``; lies in ``[0, 1)``."""
    return _elementwise(_impl.ratio_i1_i0, _as_nonnegative(x, "x"))


def wrap(x):
    """Map real angles onto ``[-pi, pi)``."""
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise DomainError("angle must be finite")
    r = np.mod(arr + np.pi, TWO_PI) - np.pi
    r = np.where(r >= np.pi, r - TWO_PI, r)
    return r if r.ndim else float(r)


def frac_to_angle(f):
    """Fractional coordinate in ``[0, 1)`` to angle ``2*pi*f - pi``."""
    arr = np.asarray(f, dtype=np.float64)
    if not np.all(np.isfinite(arr)) or np.any(arr < 0) or np.any(arr >= 1):
        raise DomainError("fractional coordinates must lie in [0, 1)")
    out = TWO_PI * arr - np.pi
    return out if out.ndim else float(out)


def angle_to_frac(a):
    """Inverse of :func:`frac_to_angle`; any real angle is wrapped first."""
    f = (np.asarray(wrap(a)) + np.pi) / TWO_PI
    # rounding can land exactly on 1.0 for angles just below pi
    f = np.where(f >= 1.0, 0.0, f)
    return f if f.ndim else float(f)


def circular_distance(a, b):
    """Absolute angular difference in ``[0, pi]``."""
    return np.abs(wrap(np.asarray(a) - np.asarray(b)))
