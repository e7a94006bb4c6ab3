# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels; same contracts as ``_pykernels``.

The scalar loops stop series/asymptotic sums adaptively instead of running
a fixed number of terms, and fuse the elementwise passes the numpy version
spreads over temporaries.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport M_PI, acos, atan2, cos, fabs, hypot, log, log1p, sin, sqrt, fmod

cnp.import_array()

cdef double SPLIT = 20.0
cdef double TWO_PI = 2.0 * M_PI
cdef double EPS = 1e-17


cdef inline double _asymptotic_sum(double x, double mu) nogil:
    cdef double term = 1.0, total = 1.0, prev = 1e300, k
    cdef int i
    for i in range(1, 60):
        k = <double>i
        term = term * ((2.0 * k - 1.0) * (2.0 * k - 1.0) - mu) / (8.0 * k * x)
        if fabs(term) >= prev:
            break
        total += term
        prev = fabs(term)
        if prev < EPS * fabs(total):
            break
    return total


cdef inline double _log_i0(double x) nogil:
    cdef double q, term, tail, k
    cdef int i
    if x <= SPLIT:
        q = 0.25 * x * x
        term = 1.0
        tail = 0.0
        for i in range(1, 200):
            k = <double>i
            term = term * q / (k * k)
            tail += term
            if term < EPS * (1.0 + tail):
                break
        return log1p(tail)
    return x - 0.5 * log(TWO_PI * x) + log(_asymptotic_sum(x, 0.0))


cdef inline double _ratio(double x) nogil:
    cdef double q, t0, t1, s0, s1, k
    cdef int i
    if x <= SPLIT:
        q = 0.25 * x * x
        t0 = 1.0
        t1 = 1.0
        s0 = 1.0
        s1 = 1.0
        for i in range(1, 200):
            k = <double>i
            t0 = t0 * q / (k * k)
            t1 = t1 * q / (k * (k + 1.0))
            s0 += t0
            s1 += t1
            if t0 < EPS * s0 and t1 < EPS * s1:
                break
        return 0.5 * x * s1 / s0
    return _asymptotic_sum(x, 4.0) / _asymptotic_sum(x, 0.0)


cdef inline double _wrap(double x) nogil:
    cdef double r = fmod(x + M_PI, TWO_PI)
    if r < 0.0:
        r += TWO_PI
    r -= M_PI
    if r >= M_PI:
        r -= TWO_PI
    return r


def log_i0(const double[::1] x):
    cdef Py_ssize_t i, n = x.shape[0]
    out = np.empty(n)
    cdef double[::1] o = out
    with nogil:
        for i in range(n):
            o[i] = _log_i0(x[i])
    return out


def ratio_i1_i0(const double[::1] x):
    cdef Py_ssize_t i, n = x.shape[0]
    out = np.empty(n)
    cdef double[::1] o = out
    with nogil:
        for i in range(n):
            o[i] = _ratio(x[i])
    return out


cdef inline double _bf_r(double k) nogil:
    cdef double tau, rho
    if k < 1e-5:
        return 1.0 / k + k
    tau = 1.0 + sqrt(1.0 + 4.0 * k * k)
    rho = (tau - sqrt(2.0 * tau)) / (2.0 * k)
    return (1.0 + rho * rho) / (2.0 * rho)


cdef inline bint _bf_propose(double k, double r, double u1, double u2, double* f_out) nogil:
    """Best-Fisher proposal: writes the clipped cosine to f_out, returns acceptance."""
    cdef double z = cos(M_PI * u1)
    cdef double f = (1.0 + r * z) / (r + z)
    cdef double c = k * (r - f)
    cdef bint ok
    if c * (2.0 - c) - u2 > 0.0:
        ok = 1
    elif u2 > 0.0 and log(c / u2) + 1.0 - c >= 0.0:
        ok = 1
    else:
        ok = u2 == 0.0
    if f > 1.0:
        f = 1.0
    elif f < -1.0:
        f = -1.0
    f_out[0] = f
    return ok


def vm_offsets(const double[::1] kappa, const double[::1] u1, const double[::1] u2, const double[::1] u3):
    cdef Py_ssize_t i, n = kappa.shape[0]
    theta = np.empty(n)
    accepted = np.empty(n, dtype=bool)
    cdef double[::1] th = theta
    cdef cnp.npy_bool[::1] acc = accepted
    cdef double k, r = 0.0, f, k_prev = -1.0
    with nogil:
        for i in range(n):
            k = kappa[i]
            if k == 0.0:
                th[i] = M_PI * (2.0 * u1[i] - 1.0)
                acc[i] = 1
                continue
            # runs of equal kappa are the common case (one flow step per row)
            if k != k_prev:
                r = _bf_r(k)
                k_prev = k
            acc[i] = _bf_propose(k, r, u1[i], u2[i], &f)
            th[i] = acos(f) if u3[i] >= 0.5 else -acos(f)
    return theta, accepted


def vm_offset_vectors(const double[::1] kappa, const double[::1] u1, const double[::1] u2, const double[::1] u3):
    cdef Py_ssize_t i, n = kappa.shape[0]
    cos_arr = np.empty(n)
    sin_arr = np.empty(n)
    accepted = np.empty(n, dtype=bool)
    cdef double[::1] co = cos_arr
    cdef double[::1] si = sin_arr
    cdef cnp.npy_bool[::1] acc = accepted
    cdef double k, r = 0.0, f, t, k_prev = -1.0
    with nogil:
        for i in range(n):
            k = kappa[i]
            if k == 0.0:
                t = M_PI * (2.0 * u1[i] - 1.0)
                co[i] = cos(t)
                si[i] = sin(t)
                acc[i] = 1
                continue
            if k != k_prev:
                r = _bf_r(k)
                k_prev = k
            acc[i] = _bf_propose(k, r, u1[i], u2[i], &f)
            co[i] = f
            si[i] = sqrt(1.0 - f * f) if u3[i] >= 0.5 else -sqrt(1.0 - f * f)
    return cos_arr, sin_arr, accepted


def fold_trajectory(const double[::1] m0, const double[::1] c0, const double[:, ::1] y, const double[::1] alphas):
    cdef Py_ssize_t steps = y.shape[0], size = y.shape[1], j, d
    ms_arr = np.empty((steps + 1, size))
    cs_arr = np.empty((steps + 1, size))
    cdef double[:, ::1] ms = ms_arr
    cdef double[:, ::1] cs = cs_arr
    cdef double m, c, a, s, k
    with nogil:
        for d in range(size):
            m = m0[d]
            c = c0[d]
            ms[0, d] = m
            cs[0, d] = c
            for j in range(steps):
                a = alphas[j]
                s = a * sin(y[j, d]) + c * sin(m)
                k = a * cos(y[j, d]) + c * cos(m)
                c = hypot(s, k)
                m = _wrap(atan2(s, k)) if c > 0.0 else 0.0
                ms[j + 1, d] = m
                cs[j + 1, d] = c
    return ms_arr, cs_arr


cdef inline double _interp_sorted(double u, const double[::1] edges, const double[::1] cdf, Py_ssize_t* j) nogil:
    cdef Py_ssize_t g = cdf.shape[0] - 1
    cdef double w
    if u <= cdf[0]:
        return edges[0]
    if u >= cdf[g]:
        return edges[g]
    while j[0] < g - 1 and cdf[j[0] + 1] <= u:
        j[0] += 1
    w = cdf[j[0] + 1] - cdf[j[0]]
    if w <= 0.0:
        return edges[j[0]]
    return edges[j[0]] + (u - cdf[j[0]]) / w * (edges[j[0] + 1] - edges[j[0]])


def inverse_cdf(const double[::1] u, const double[::1] edges, const double[::1] cdf):
    """Linear inverse of a tabulated CDF; ``u`` must be sorted ascending."""
    cdef Py_ssize_t i, n = u.shape[0], j = 0
    out = np.empty(n)
    cdef double[::1] o = out
    with nogil:
        for i in range(n):
            o[i] = _interp_sorted(u[i], edges, cdf, &j)
    return out


def mean_resultant(const double[::1] re, const double[::1] im, const double[::1] u, double alpha,
                   const double[::1] edges, const double[::1] cdf):
    """Mean of |R + alpha * exp(i y(u))| over particles; ``u`` sorted ascending."""
    cdef Py_ssize_t i, n = u.shape[0], j = 0
    cdef double y, total = 0.0
    with nogil:
        for i in range(n):
            y = _interp_sorted(u[i], edges, cdf, &j)
            total += hypot(re[i] + alpha * cos(y), im[i] + alpha * sin(y))
    return total / n
