"""NumPy reference implementation of the bivariate copula kernels.

Every kernel works on the Kendall-tau-free parametrization: callers pass the
native parameter ``theta`` (correlation for elliptical families, the usual
positive parameter for the Archimedean ones).  Inputs are assumed to lie
strictly inside the unit interval; boundary handling (clamping, rejection)
is the caller's job.  Non-finite intermediate values are allowed to flow
through so callers can map them to a rejection sentinel.

Family codes: 0 independence, 1 gaussian, 2 student_t, 3 gumbel, 4 clayton,
5 frank.
"""

import numpy as np
from scipy.special import betaincinv, gammaln, ndtr, ndtri, stdtr, stdtrit

CODE_INDEPENDENCE = 0
CODE_GAUSSIAN = 1
CODE_STUDENT_T = 2
CODE_GUMBEL = 3
CODE_CLAYTON = 4
CODE_FRANK = 5

# Below these values the Archimedean parameters are numerically indistinct
# from independence and the 1/theta terms lose all precision.
_THETA_TINY = 1e-8

_LOG_2PI = float(np.log(2.0 * np.pi))


def _norm_logpdf(x):
    return -0.5 * (x * x + _LOG_2PI)


def _t_logpdf_1d(df, x):
    return (
        gammaln((df + 1.0) / 2.0)
        - gammaln(df / 2.0)
        - 0.5 * np.log(df * np.pi)
        - (df + 1.0) / 2.0 * np.log1p(x * x / df)
    )


def _neg_log(u):
    # -log(u) with full relative precision on both ends of (0, 1)
    u = np.asarray(u)
    return np.where(u > 0.5, -np.log1p(u - 1.0), -np.log(u))


def t_quantile(df, p):
    """Student t quantile via the inverse regularized incomplete beta.

    Splits at tail probability 0.25: the central branch inverts the
    complementary beta argument so that the squared quantile is formed
    without cancellation near p = 0.5, the tail branch avoids it for
    small p. Roughly 3x faster than the cdf-inverting root finder and
    stays finite for probabilities down to the smallest normals.
    """
    p = np.asarray(p, dtype=float)
    pp = np.minimum(p, 1.0 - p)
    out = np.empty(pp.shape)
    center = pp >= 0.25
    tail = ~center
    if np.any(center):
        w = betaincinv(0.5, df / 2.0, 1.0 - 2.0 * pp[center])
        out[center] = df * w / (1.0 - w)
    if np.any(tail):
        z = betaincinv(df / 2.0, 0.5, 2.0 * pp[tail])
        out[tail] = df * (1.0 - z) / z
    out = np.where(p < 0.5, -1.0, 1.0) * np.sqrt(out)
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# Gaussian


def _gauss_logpdf(theta, u, v, xs=None, ys=None):
    x = ndtri(u) if xs is None else xs
    y = ndtri(v) if ys is None else ys
    r2 = 1.0 - theta * theta
    return -0.5 * np.log(r2) - (theta * theta * (x * x + y * y) - 2.0 * theta * x * y) / (2.0 * r2)


def _gauss_partials(theta, u, v, xs=None, ys=None):
    x = ndtri(u) if xs is None else xs
    y = ndtri(v) if ys is None else ys
    r2 = 1.0 - theta * theta
    lp = -0.5 * np.log(r2) - (theta * theta * (x * x + y * y) - 2.0 * theta * x * y) / (2.0 * r2)
    du = theta * (y - theta * x) / (r2 * np.exp(_norm_logpdf(x)))
    dv = theta * (x - theta * y) / (r2 * np.exp(_norm_logpdf(y)))
    dth = theta / r2 + (x * y * (1.0 + theta * theta) - theta * (x * x + y * y)) / (r2 * r2)
    return lp, du, dv, dth


def _gauss_hfun(theta, u, v):
    x = ndtri(u)
    y = ndtri(v)
    return ndtr((x - theta * y) / np.sqrt(1.0 - theta * theta))


def _gauss_hinv(theta, p, v):
    y = ndtri(v)
    return ndtr(np.sqrt(1.0 - theta * theta) * ndtri(p) + theta * y)


# ---------------------------------------------------------------------------
# Student t


def _t_logpdf(theta, df, u, v, xs=None, ys=None):
    x = t_quantile(df, u) if xs is None else xs
    y = t_quantile(df, v) if ys is None else ys
    r2 = 1.0 - theta * theta
    q = (x * x - 2.0 * theta * x * y + y * y) / r2
    const = gammaln((df + 2.0) / 2.0) + gammaln(df / 2.0) - 2.0 * gammaln((df + 1.0) / 2.0)
    return (
        const
        - 0.5 * np.log(r2)
        - (df + 2.0) / 2.0 * np.log1p(q / df)
        + (df + 1.0) / 2.0 * (np.log1p(x * x / df) + np.log1p(y * y / df))
    )


def _t_partials(theta, df, u, v, xs=None, ys=None):
    x = t_quantile(df, u) if xs is None else xs
    y = t_quantile(df, v) if ys is None else ys
    r2 = 1.0 - theta * theta
    q = (x * x - 2.0 * theta * x * y + y * y) / r2
    lp = _t_logpdf(theta, df, u, v, x, y)
    dlp_dx = -(df + 2.0) * (x - theta * y) / (r2 * (df + q)) + (df + 1.0) * x / (df + x * x)
    dlp_dy = -(df + 2.0) * (y - theta * x) / (r2 * (df + q)) + (df + 1.0) * y / (df + y * y)
    du = dlp_dx / np.exp(_t_logpdf_1d(df, x))
    dv = dlp_dy / np.exp(_t_logpdf_1d(df, y))
    dth = theta / r2 - (df + 2.0) * (theta * (x * x + y * y) - x * y * (1.0 + theta * theta)) / (
        r2 * r2 * (df + q)
    )
    return lp, du, dv, dth


def _t_hfun(theta, df, u, v):
    x = stdtrit(df, u)
    y = stdtrit(df, v)
    scale = np.sqrt((1.0 - theta * theta) * (df + y * y) / (df + 1.0))
    return stdtr(df + 1, (x - theta * y) / scale)


def _t_hinv(theta, df, p, v):
    y = stdtrit(df, v)
    scale = np.sqrt((1.0 - theta * theta) * (df + y * y) / (df + 1.0))
    x = theta * y + scale * stdtrit(df + 1, p)
    return stdtr(df, x)


# ---------------------------------------------------------------------------
# Gumbel


def _gumbel_parts(theta, u, v):
    """Shared quantities: a, b, log a, log b, log s, s for s = (a^t + b^t)^(1/t)."""
    a = _neg_log(u)
    b = _neg_log(v)
    la = np.log(a)
    lb = np.log(b)
    log_bigs = np.logaddexp(theta * la, theta * lb)
    log_s = log_bigs / theta
    return a, b, la, lb, log_s, np.exp(log_s)


def _gumbel_logpdf(theta, u, v):
    a, b, la, lb, log_s, s = _gumbel_parts(theta, u, v)
    return (
        -s
        + (theta - 1.0) * (la + lb)
        + (1.0 - 2.0 * theta) * log_s
        + np.log(s + theta - 1.0)
        + a
        + b
    )


def _gumbel_partials(theta, u, v):
    a, b, la, lb, log_s, s = _gumbel_parts(theta, u, v)
    lp = (
        -s
        + (theta - 1.0) * (la + lb)
        + (1.0 - 2.0 * theta) * log_s
        + np.log(s + theta - 1.0)
        + a
        + b
    )
    # ds/da = (a/s)^(theta-1) <= 1, likewise for b
    ds_da = np.exp((theta - 1.0) * (la - log_s))
    ds_db = np.exp((theta - 1.0) * (lb - log_s))
    tail = (1.0 - 2.0 * theta) / s + 1.0 / (s + theta - 1.0)
    dlp_da = -ds_da + (theta - 1.0) / a + tail * ds_da + 1.0
    dlp_db = -ds_db + (theta - 1.0) / b + tail * ds_db + 1.0
    du = -dlp_da / u
    dv = -dlp_db / v
    # weights a^t/S, b^t/S as a stable softmax
    wa = np.exp(theta * (la - log_s))
    wb = np.exp(theta * (lb - log_s))
    ds_dth = (s / theta) * (wa * la + wb * lb - log_s)
    dth = (
        -ds_dth
        + (la + lb)
        - 2.0 * log_s
        + tail * ds_dth
        + 1.0 / (s + theta - 1.0)
    )
    return lp, du, dv, dth


def _gumbel_hfun(theta, u, v):
    _, b, _, lb, log_s, s = _gumbel_parts(theta, u, v)
    return np.exp(-s + (theta - 1.0) * (lb - log_s) + b)


def _gumbel_hinv(theta, p, v, max_iter=200, width_tol=1e-12):
    # no closed form: bisect h(u | v) = p in u, h is increasing in u
    p, v = np.broadcast_arrays(p, v)
    theta = np.broadcast_to(theta, p.shape)
    lo = np.full(p.shape, 1e-15)
    hi = np.full(p.shape, 1.0 - 1e-16)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        too_low = _gumbel_hfun(theta, mid, v) < p
        lo = np.where(too_low, mid, lo)
        hi = np.where(too_low, hi, mid)
        if np.max(hi - lo) < width_tol:
            break
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# Clayton


def _clayton_logS(theta, u, v):
    """log(u^-t + v^-t - 1) without overflow, plus the exponents -t*log(u|v)."""
    eu = theta * _neg_log(u)
    ev = theta * _neg_log(v)
    m = np.maximum(eu, ev)
    small = m <= 30.0
    with np.errstate(over="ignore"):
        logS = np.where(
            small,
            np.log1p(np.expm1(eu) + np.expm1(ev)),
            m + np.log(np.exp(eu - m) + np.exp(ev - m) - np.exp(-m)),
        )
    return logS, eu, ev


def _clayton_logpdf(theta, u, v):
    lu = -_neg_log(u)
    lv = -_neg_log(v)
    logS, _, _ = _clayton_logS(theta, u, v)
    return np.log1p(theta) - (theta + 1.0) * (lu + lv) - (2.0 + 1.0 / theta) * logS


def _clayton_partials(theta, u, v):
    lu = -_neg_log(u)
    lv = -_neg_log(v)
    logS, eu, ev = _clayton_logS(theta, u, v)
    lp = np.log1p(theta) - (theta + 1.0) * (lu + lv) - (2.0 + 1.0 / theta) * logS
    du = -(theta + 1.0) / u + (2.0 * theta + 1.0) * np.exp(eu - lu - logS)
    dv = -(theta + 1.0) / v + (2.0 * theta + 1.0) * np.exp(ev - lv - logS)
    wa = np.exp(eu - logS)
    wb = np.exp(ev - logS)
    dth = (
        1.0 / (1.0 + theta)
        - (lu + lv)
        + logS / (theta * theta)
        + (2.0 + 1.0 / theta) * (wa * lu + wb * lv)
    )
    return lp, du, dv, dth


def _clayton_hfun(theta, u, v):
    lv = -_neg_log(v)
    logS, _, _ = _clayton_logS(theta, u, v)
    return np.exp(-(theta + 1.0) * lv - (1.0 / theta + 1.0) * logS)


def _clayton_hinv(theta, p, v):
    lv = -_neg_log(v)
    lp = -_neg_log(p)
    # u = (1 + v^-t (p^(-t/(1+t)) - 1))^(-1/t), assembled in log space
    a_log = -theta * lv + np.log(np.expm1(-theta * lp / (1.0 + theta)))
    return np.exp(-np.logaddexp(0.0, a_log) / theta)


# ---------------------------------------------------------------------------
# Frank


def _frank_parts(theta, u, v):
    """Stable pieces of the Frank density.

    Returns (log_negE, r_u, r_v, r_theta) where E = g(1) + g(u) g(v) < 0 with
    g(x) = exp(-theta x) - 1, r_u = (e^{-tu} - e^{-t(u+v)}) / (-E),
    r_v symmetric, and r_theta = (dE/dtheta) / E.
    """
    theta = np.asarray(theta, dtype=float)
    e1 = -theta
    e3 = -theta * u
    e4 = -theta * v
    e2 = e3 + e4
    m = np.where(theta >= 5.0, np.maximum(e3, e4), 0.0)
    p1 = np.exp(e1 - m)
    p2 = np.exp(e2 - m)
    p3 = np.exp(e3 - m)
    p4 = np.exp(e4 - m)
    # for small theta the direct sum cancels; regroup through expm1
    neg_e_small = -np.expm1(e1) - np.expm1(e3) * np.expm1(e4)
    neg_e = np.where(theta >= 5.0, p3 + p4 - p1 - p2, neg_e_small)
    log_neg_e = m + np.log(neg_e)
    nu = -p3 * np.expm1(e4)  # e^{e3-m} - e^{e2-m}
    nv = -p4 * np.expm1(e3)
    r_u = nu / neg_e
    r_v = nv / neg_e
    r_theta = (p1 - u * nu - v * nv) / neg_e
    return log_neg_e, r_u, r_v, r_theta


def _frank_logpdf(theta, u, v):
    log_neg_e, _, _, _ = _frank_parts(theta, u, v)
    return np.log(theta) + np.log(-np.expm1(-theta)) - theta * (u + v) - 2.0 * log_neg_e


def _frank_partials(theta, u, v):
    log_neg_e, r_u, r_v, r_theta = _frank_parts(theta, u, v)
    lp = np.log(theta) + np.log(-np.expm1(-theta)) - theta * (u + v) - 2.0 * log_neg_e
    du = -theta + 2.0 * theta * r_u
    dv = -theta + 2.0 * theta * r_v
    with np.errstate(over="ignore"):
        em1 = np.expm1(np.minimum(theta, 700.0))
    dth = 1.0 / theta + 1.0 / em1 - (u + v) - 2.0 * r_theta
    return lp, du, dv, dth


def _frank_hfun(theta, u, v):
    _, _, r_v, _ = _frank_parts(theta, u, v)
    return r_v


def _frank_hinv(theta, p, v):
    lognum = np.logaddexp(-theta * v + np.log1p(-p), -theta + np.log(p))
    logden = np.logaddexp(-theta * v + np.log1p(-p), np.log(p))
    return (logden - lognum) / theta


# ---------------------------------------------------------------------------
# dispatch


def _split_degenerate(code, theta):
    """Mask thetas so close to independence that 1/theta terms blow up.

    Returns (mask, theta_floored); the floored values keep the family
    formulas finite on masked entries, whose outputs are then replaced by
    their independence limits.
    """
    theta = np.asarray(theta, dtype=float)
    if code == CODE_GUMBEL:
        deg = theta - 1.0 < _THETA_TINY
        return deg, np.where(deg, 1.0 + _THETA_TINY, theta)
    deg = theta < _THETA_TINY
    return deg, np.where(deg, _THETA_TINY, theta)


def logpdf(code, theta, df, u, v, xs=None, ys=None):
    """Log copula density; array broadcast over u, v (and theta).

    For the elliptical families xs and ys may carry precomputed quantile
    scores of u and v, sparing the dominant transform; other families
    ignore them.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if code == CODE_INDEPENDENCE:
        return np.zeros(np.broadcast(u, v).shape)
    # numpy scalars keep boundary arithmetic (theta at 1) on IEEE semantics
    # instead of raising ZeroDivisionError as python floats would
    theta = np.asarray(theta, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        if code == CODE_GAUSSIAN:
            return _gauss_logpdf(theta, u, v, xs, ys)
        if code == CODE_STUDENT_T:
            return _t_logpdf(theta, df, u, v, xs, ys)
        deg, th = _split_degenerate(code, theta)
        if code == CODE_GUMBEL:
            out = _gumbel_logpdf(th, u, v)
        elif code == CODE_CLAYTON:
            out = _clayton_logpdf(th, u, v)
        elif code == CODE_FRANK:
            out = _frank_logpdf(th, u, v)
        else:
            raise ValueError(f"unknown family code {code}")
        return np.where(deg, 0.0, out) if np.any(deg) else out


def logpdf_partials(code, theta, df, u, v, xs=None, ys=None):
    """Log density with partials w.r.t. u, v and theta.

    Returns (lp, d/du, d/dv, d/dtheta), each with the broadcast shape.
    xs and ys are optional precomputed quantile scores as in logpdf.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if code == CODE_INDEPENDENCE:
        z = np.zeros(np.broadcast(u, v).shape)
        return z, z.copy(), z.copy(), z.copy()
    theta = np.asarray(theta, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        if code == CODE_GAUSSIAN:
            return _gauss_partials(theta, u, v, xs, ys)
        if code == CODE_STUDENT_T:
            return _t_partials(theta, df, u, v, xs, ys)
        deg, th = _split_degenerate(code, theta)
        if code == CODE_GUMBEL:
            out = _gumbel_partials(th, u, v)
        elif code == CODE_CLAYTON:
            out = _clayton_partials(th, u, v)
        elif code == CODE_FRANK:
            out = _frank_partials(th, u, v)
        else:
            raise ValueError(f"unknown family code {code}")
        if np.any(deg):
            out = tuple(np.where(deg, 0.0, part) for part in out)
        return out


# nearest representable doubles inside (0, 1); h outputs are clipped here so
# the open-interval contract survives rounding at extreme arguments
_UNIT_LO = np.finfo(float).tiny
_UNIT_HI = float(np.nextafter(1.0, 0.0))


def hfun(code, theta, df, u, v):
    """Conditional distribution h(u | v) = dC(u, v)/dv."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if code == CODE_INDEPENDENCE:
        return np.broadcast_arrays(u, v)[0].astype(float, copy=True)
    theta = np.asarray(theta, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        if code == CODE_GAUSSIAN:
            return _gauss_hfun(theta, u, v)
        if code == CODE_STUDENT_T:
            return _t_hfun(theta, df, u, v)
        deg, th = _split_degenerate(code, theta)
        if code == CODE_GUMBEL:
            out = _gumbel_hfun(th, u, v)
        elif code == CODE_CLAYTON:
            out = _clayton_hfun(th, u, v)
        elif code == CODE_FRANK:
            out = _frank_hfun(th, u, v)
        else:
            raise ValueError(f"unknown family code {code}")
        if np.any(deg):
            out = np.where(deg, np.broadcast_arrays(u, v)[0], out)
        return np.clip(out, _UNIT_LO, _UNIT_HI)


def hinv(code, theta, df, p, v):
    """Inverse of hfun in its first argument: u with h(u | v) = p."""
    p = np.asarray(p, dtype=float)
    v = np.asarray(v, dtype=float)
    if code == CODE_INDEPENDENCE:
        return np.broadcast_arrays(p, v)[0].astype(float, copy=True)
    theta = np.asarray(theta, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        if code == CODE_GAUSSIAN:
            return _gauss_hinv(theta, p, v)
        if code == CODE_STUDENT_T:
            return _t_hinv(theta, df, p, v)
        deg, th = _split_degenerate(code, theta)
        if code == CODE_GUMBEL:
            out = _gumbel_hinv(th, p, v)
        elif code == CODE_CLAYTON:
            out = _clayton_hinv(th, p, v)
        elif code == CODE_FRANK:
            out = _frank_hinv(th, p, v)
        else:
            raise ValueError(f"unknown family code {code}")
        if np.any(deg):
            out = np.where(deg, np.broadcast_arrays(p, v)[0], out)
        return np.clip(out, _UNIT_LO, _UNIT_HI)
