# cython: boundscheck=False, wraparound=False, cdivision=True
# cython: language_level=3
"""Compiled clone of the pure.py density kernels.

Scalar-theta, contiguous 1-d inputs only; the backend dispatcher routes
everything else to the NumPy implementation.  Formulas mirror pure.py
line by line so the two backends agree to rounding.
"""

import numpy as np

from libc.math cimport exp, expm1, fabs, log, log1p, sqrt, M_PI, INFINITY
from scipy.special.cython_special cimport betaincinv, gammaln, ndtri

cdef int CODE_INDEPENDENCE = 0
cdef int CODE_GAUSSIAN = 1
cdef int CODE_STUDENT_T = 2
cdef int CODE_GUMBEL = 3
cdef int CODE_CLAYTON = 4
cdef int CODE_FRANK = 5

cdef double THETA_TINY = 1e-8
cdef double LOG_2PI = log(2.0 * M_PI)


cdef inline double _logaddexp(double a, double b) noexcept nogil:
    cdef double m = a if a > b else b
    if m == -INFINITY:
        return -INFINITY
    return m + log(exp(a - m) + exp(b - m))


cdef inline double _neg_log(double u) noexcept nogil:
    if u > 0.5:
        return -log1p(u - 1.0)
    return -log(u)


cdef inline double _norm_logpdf(double x) noexcept nogil:
    return -0.5 * (x * x + LOG_2PI)


# ---------------------------------------------------------------------------
# Gaussian (kernels take quantile scores; loops transform or reuse)


cdef inline double _gauss_logpdf(double theta, double x, double y) noexcept nogil:
    cdef double r2 = 1.0 - theta * theta
    return -0.5 * log(r2) - (theta * theta * (x * x + y * y) - 2.0 * theta * x * y) / (2.0 * r2)


cdef inline void _gauss_partials(double theta, double x, double y, double* out) noexcept nogil:
    cdef double r2 = 1.0 - theta * theta
    out[0] = -0.5 * log(r2) - (theta * theta * (x * x + y * y) - 2.0 * theta * x * y) / (2.0 * r2)
    out[1] = theta * (y - theta * x) / (r2 * exp(_norm_logpdf(x)))
    out[2] = theta * (x - theta * y) / (r2 * exp(_norm_logpdf(y)))
    out[3] = theta / r2 + (x * y * (1.0 + theta * theta) - theta * (x * x + y * y)) / (r2 * r2)


# ---------------------------------------------------------------------------
# Student t


cdef inline double _t_quantile(double df, double p) noexcept nogil:
    # mirrors pure.t_quantile: central branch inverts the complementary
    # beta argument so x*x is formed without cancellation near p = 0.5
    cdef double pp = p if p < 0.5 else 1.0 - p
    cdef double w, x2
    if pp >= 0.25:
        w = betaincinv(0.5, df / 2.0, 1.0 - 2.0 * pp)
        x2 = df * w / (1.0 - w)
    else:
        w = betaincinv(df / 2.0, 0.5, 2.0 * pp)
        x2 = df * (1.0 - w) / w
    if p < 0.5:
        return -sqrt(x2)
    return sqrt(x2)


cdef inline double _t_logpdf_1d(double df, double x) noexcept nogil:
    return (
        gammaln((df + 1.0) / 2.0)
        - gammaln(df / 2.0)
        - 0.5 * log(df * M_PI)
        - (df + 1.0) / 2.0 * log1p(x * x / df)
    )


cdef inline double _t_logpdf(double theta, double df, double tconst, double x, double y) noexcept nogil:
    cdef double r2 = 1.0 - theta * theta
    cdef double q = (x * x - 2.0 * theta * x * y + y * y) / r2
    return (
        tconst
        - 0.5 * log(r2)
        - (df + 2.0) / 2.0 * log1p(q / df)
        + (df + 1.0) / 2.0 * (log1p(x * x / df) + log1p(y * y / df))
    )


cdef inline void _t_partials(double theta, double df, double tconst, double x, double y, double* out) noexcept nogil:
    cdef double r2 = 1.0 - theta * theta
    cdef double q = (x * x - 2.0 * theta * x * y + y * y) / r2
    cdef double dlp_dx = -(df + 2.0) * (x - theta * y) / (r2 * (df + q)) + (df + 1.0) * x / (df + x * x)
    cdef double dlp_dy = -(df + 2.0) * (y - theta * x) / (r2 * (df + q)) + (df + 1.0) * y / (df + y * y)
    out[0] = (
        tconst
        - 0.5 * log(r2)
        - (df + 2.0) / 2.0 * log1p(q / df)
        + (df + 1.0) / 2.0 * (log1p(x * x / df) + log1p(y * y / df))
    )
    out[1] = dlp_dx / exp(_t_logpdf_1d(df, x))
    out[2] = dlp_dy / exp(_t_logpdf_1d(df, y))
    out[3] = theta / r2 - (df + 2.0) * (theta * (x * x + y * y) - x * y * (1.0 + theta * theta)) / (
        r2 * r2 * (df + q)
    )


# ---------------------------------------------------------------------------
# Gumbel


cdef inline double _gumbel_logpdf(double theta, double u, double v) noexcept nogil:
    cdef double a = _neg_log(u)
    cdef double b = _neg_log(v)
    cdef double la = log(a)
    cdef double lb = log(b)
    cdef double log_s = _logaddexp(theta * la, theta * lb) / theta
    cdef double s = exp(log_s)
    return (
        -s
        + (theta - 1.0) * (la + lb)
        + (1.0 - 2.0 * theta) * log_s
        + log(s + theta - 1.0)
        + a
        + b
    )


cdef inline void _gumbel_partials(double theta, double u, double v, double* out) noexcept nogil:
    cdef double a = _neg_log(u)
    cdef double b = _neg_log(v)
    cdef double la = log(a)
    cdef double lb = log(b)
    cdef double log_s = _logaddexp(theta * la, theta * lb) / theta
    cdef double s = exp(log_s)
    cdef double ds_da = exp((theta - 1.0) * (la - log_s))
    cdef double ds_db = exp((theta - 1.0) * (lb - log_s))
    cdef double tail = (1.0 - 2.0 * theta) / s + 1.0 / (s + theta - 1.0)
    cdef double dlp_da = -ds_da + (theta - 1.0) / a + tail * ds_da + 1.0
    cdef double dlp_db = -ds_db + (theta - 1.0) / b + tail * ds_db + 1.0
    cdef double wa = exp(theta * (la - log_s))
    cdef double wb = exp(theta * (lb - log_s))
    cdef double ds_dth = (s / theta) * (wa * la + wb * lb - log_s)
    out[0] = (
        -s
        + (theta - 1.0) * (la + lb)
        + (1.0 - 2.0 * theta) * log_s
        + log(s + theta - 1.0)
        + a
        + b
    )
    out[1] = -dlp_da / u
    out[2] = -dlp_db / v
    out[3] = (
        -ds_dth
        + (la + lb)
        - 2.0 * log_s
        + tail * ds_dth
        + 1.0 / (s + theta - 1.0)
    )


# ---------------------------------------------------------------------------
# Clayton


cdef inline double _clayton_logS(double theta, double u, double v, double* eu, double* ev) noexcept nogil:
    eu[0] = theta * _neg_log(u)
    ev[0] = theta * _neg_log(v)
    cdef double m = eu[0] if eu[0] > ev[0] else ev[0]
    if m <= 30.0:
        return log1p(expm1(eu[0]) + expm1(ev[0]))
    return m + log(exp(eu[0] - m) + exp(ev[0] - m) - exp(-m))


cdef inline double _clayton_logpdf(double theta, double u, double v) noexcept nogil:
    cdef double lu = -_neg_log(u)
    cdef double lv = -_neg_log(v)
    cdef double eu, ev
    cdef double logS = _clayton_logS(theta, u, v, &eu, &ev)
    return log1p(theta) - (theta + 1.0) * (lu + lv) - (2.0 + 1.0 / theta) * logS


cdef inline void _clayton_partials(double theta, double u, double v, double* out) noexcept nogil:
    cdef double lu = -_neg_log(u)
    cdef double lv = -_neg_log(v)
    cdef double eu, ev
    cdef double logS = _clayton_logS(theta, u, v, &eu, &ev)
    cdef double wa = exp(eu - logS)
    cdef double wb = exp(ev - logS)
    out[0] = log1p(theta) - (theta + 1.0) * (lu + lv) - (2.0 + 1.0 / theta) * logS
    out[1] = -(theta + 1.0) / u + (2.0 * theta + 1.0) * exp(eu - lu - logS)
    out[2] = -(theta + 1.0) / v + (2.0 * theta + 1.0) * exp(ev - lv - logS)
    out[3] = (
        1.0 / (1.0 + theta)
        - (lu + lv)
        + logS / (theta * theta)
        + (2.0 + 1.0 / theta) * (wa * lu + wb * lv)
    )


# ---------------------------------------------------------------------------
# Frank


cdef inline void _frank_parts(double theta, double u, double v, double* parts) noexcept nogil:
    # parts: log_neg_e, r_u, r_v, r_theta
    cdef double e1 = -theta
    cdef double e3 = -theta * u
    cdef double e4 = -theta * v
    cdef double e2 = e3 + e4
    cdef double m = 0.0
    if theta >= 5.0:
        m = e3 if e3 > e4 else e4
    cdef double p1 = exp(e1 - m)
    cdef double p2 = exp(e2 - m)
    cdef double p3 = exp(e3 - m)
    cdef double p4 = exp(e4 - m)
    cdef double neg_e
    if theta >= 5.0:
        neg_e = p3 + p4 - p1 - p2
    else:
        neg_e = -expm1(e1) - expm1(e3) * expm1(e4)
    cdef double nu = -p3 * expm1(e4)
    cdef double nv = -p4 * expm1(e3)
    parts[0] = m + log(neg_e)
    parts[1] = nu / neg_e
    parts[2] = nv / neg_e
    parts[3] = (p1 - u * nu - v * nv) / neg_e


cdef inline double _frank_logpdf(double theta, double u, double v) noexcept nogil:
    cdef double parts[4]
    _frank_parts(theta, u, v, parts)
    return log(theta) + log(-expm1(-theta)) - theta * (u + v) - 2.0 * parts[0]


cdef inline void _frank_partials(double theta, double u, double v, double* out) noexcept nogil:
    cdef double parts[4]
    _frank_parts(theta, u, v, parts)
    cdef double em1_arg = theta if theta < 700.0 else 700.0
    out[0] = log(theta) + log(-expm1(-theta)) - theta * (u + v) - 2.0 * parts[0]
    out[1] = -theta + 2.0 * theta * parts[1]
    out[2] = -theta + 2.0 * theta * parts[2]
    out[3] = 1.0 / theta + 1.0 / expm1(em1_arg) - (u + v) - 2.0 * parts[3]


# ---------------------------------------------------------------------------
# dispatch


cdef inline bint _degenerate(int code, double theta) noexcept nogil:
    if code == CODE_GUMBEL:
        return theta - 1.0 < THETA_TINY
    if code == CODE_CLAYTON or code == CODE_FRANK:
        return theta < THETA_TINY
    return 0


def logpdf(int code, double theta, double df, const double[::1] u, const double[::1] v,
           xs=None, ys=None):
    """Log copula density over paired 1-d inputs at a scalar theta.

    xs and ys optionally carry precomputed quantile scores of u and v
    for the elliptical families, as in the NumPy implementation.
    """
    cdef Py_ssize_t n = u.shape[0]
    cdef Py_ssize_t i
    out_arr = np.empty(n)
    cdef double[::1] out = out_arr
    if code == CODE_INDEPENDENCE or _degenerate(code, theta):
        out_arr.fill(0.0)
        return out_arr
    cdef bint has_x = xs is not None
    cdef bint has_y = ys is not None
    cdef const double[::1] xv = xs if has_x else u
    cdef const double[::1] yv = ys if has_y else v
    if xv.shape[0] != n or yv.shape[0] != n:
        raise ValueError("score arrays must match the input length")
    cdef double x, y
    cdef double tconst = 0.0
    if code == CODE_STUDENT_T:
        tconst = gammaln((df + 2.0) / 2.0) + gammaln(df / 2.0) - 2.0 * gammaln((df + 1.0) / 2.0)
    with nogil:
        if code == CODE_GAUSSIAN:
            for i in range(n):
                x = xv[i] if has_x else ndtri(u[i])
                y = yv[i] if has_y else ndtri(v[i])
                out[i] = _gauss_logpdf(theta, x, y)
        elif code == CODE_STUDENT_T:
            for i in range(n):
                x = xv[i] if has_x else _t_quantile(df, u[i])
                y = yv[i] if has_y else _t_quantile(df, v[i])
                out[i] = _t_logpdf(theta, df, tconst, x, y)
        elif code == CODE_GUMBEL:
            for i in range(n):
                out[i] = _gumbel_logpdf(theta, u[i], v[i])
        elif code == CODE_CLAYTON:
            for i in range(n):
                out[i] = _clayton_logpdf(theta, u[i], v[i])
        else:
            for i in range(n):
                out[i] = _frank_logpdf(theta, u[i], v[i])
    return out_arr


def t_score(double df, const double[::1] p):
    """Student t quantiles of p, the score transform used by the t kernels."""
    cdef Py_ssize_t n = p.shape[0]
    cdef Py_ssize_t i
    out_arr = np.empty(n)
    cdef double[::1] out = out_arr
    with nogil:
        for i in range(n):
            out[i] = _t_quantile(df, p[i])
    return out_arr


def logpdf_partials(int code, double theta, double df, const double[::1] u, const double[::1] v,
                    xs=None, ys=None):
    """(log density, d/du, d/dv, d/dtheta) over paired 1-d inputs.

    xs and ys are optional precomputed quantile scores as in logpdf.
    """
    cdef Py_ssize_t n = u.shape[0]
    cdef Py_ssize_t i
    lp_arr = np.empty(n)
    du_arr = np.empty(n)
    dv_arr = np.empty(n)
    dth_arr = np.empty(n)
    cdef double[::1] lp = lp_arr
    cdef double[::1] du = du_arr
    cdef double[::1] dv = dv_arr
    cdef double[::1] dth = dth_arr
    cdef double buf[4]
    if code == CODE_INDEPENDENCE or _degenerate(code, theta):
        lp_arr.fill(0.0)
        du_arr.fill(0.0)
        dv_arr.fill(0.0)
        dth_arr.fill(0.0)
        return lp_arr, du_arr, dv_arr, dth_arr
    cdef bint has_x = xs is not None
    cdef bint has_y = ys is not None
    cdef const double[::1] xv = xs if has_x else u
    cdef const double[::1] yv = ys if has_y else v
    if xv.shape[0] != n or yv.shape[0] != n:
        raise ValueError("score arrays must match the input length")
    cdef double x, y
    cdef double tconst = 0.0
    if code == CODE_STUDENT_T:
        tconst = gammaln((df + 2.0) / 2.0) + gammaln(df / 2.0) - 2.0 * gammaln((df + 1.0) / 2.0)
    with nogil:
        if code == CODE_GAUSSIAN:
            for i in range(n):
                x = xv[i] if has_x else ndtri(u[i])
                y = yv[i] if has_y else ndtri(v[i])
                _gauss_partials(theta, x, y, buf)
                lp[i] = buf[0]; du[i] = buf[1]; dv[i] = buf[2]; dth[i] = buf[3]
        elif code == CODE_STUDENT_T:
            for i in range(n):
                x = xv[i] if has_x else _t_quantile(df, u[i])
                y = yv[i] if has_y else _t_quantile(df, v[i])
                _t_partials(theta, df, tconst, x, y, buf)
                lp[i] = buf[0]; du[i] = buf[1]; dv[i] = buf[2]; dth[i] = buf[3]
        elif code == CODE_GUMBEL:
            for i in range(n):
                _gumbel_partials(theta, u[i], v[i], buf)
                lp[i] = buf[0]; du[i] = buf[1]; dv[i] = buf[2]; dth[i] = buf[3]
        elif code == CODE_CLAYTON:
            for i in range(n):
                _clayton_partials(theta, u[i], v[i], buf)
                lp[i] = buf[0]; du[i] = buf[1]; dv[i] = buf[2]; dth[i] = buf[3]
        else:
            for i in range(n):
                _frank_partials(theta, u[i], v[i], buf)
                lp[i] = buf[0]; du[i] = buf[1]; dv[i] = buf[2]; dth[i] = buf[3]
    return lp_arr, du_arr, dv_arr, dth_arr
