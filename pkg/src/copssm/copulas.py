"""Bivariate copula families parametrized by Kendall's tau.

Six families are supported: independence, Gaussian, Student t (fixed integer
degrees of freedom), Gumbel, Clayton and Frank.  All are restricted to
non-negative dependence, tau in [0, 1).  Conversions between tau and each
family's native parameter theta are exact closed forms except for Frank,
which goes through the first Debye function.

The numerical kernels live in ``copssm._core``; this module adds argument
validation and the tau parametrization.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad
from scipy.special import bernoulli

from . import _core
from .errors import DomainError

FAMILY_CODES = {
    "independence": _core.CODE_INDEPENDENCE,
    "gaussian": _core.CODE_GAUSSIAN,
    "student_t": _core.CODE_STUDENT_T,
    "gumbel": _core.CODE_GUMBEL,
    "clayton": _core.CODE_CLAYTON,
    "frank": _core.CODE_FRANK,
}

# Frank's theta is searched on this bracket when inverting tau(theta).
FRANK_THETA_LO = 1e-8
FRANK_THETA_HI = 1e4


@dataclass(frozen=True)
class CopulaFamily:
    """A copula family name plus the Student-t degrees of freedom if needed."""

    name: str
    df: int | None = None

    def __post_init__(self):
        if self.name not in FAMILY_CODES:
            raise DomainError(f"unknown copula family {self.name!r}")
        if self.name == "student_t":
            if self.df is None or int(self.df) != self.df or self.df < 1:
                raise DomainError("student_t requires a positive integer df")
            object.__setattr__(self, "df", int(self.df))
        elif self.df is not None:
            raise DomainError(f"df is only meaningful for student_t, got {self.name}")

    @property
    def code(self):
        return FAMILY_CODES[self.name]

    def label(self):
        """Short display label, e.g. "t3" or "gumbel"."""
        if self.name == "student_t":
            return f"t{self.df}"
        return self.name

    @classmethod
    def parse(cls, text):
        """Parse labels such as "gaussian", "t3", "t(6)" or "student_t:3"."""
        s = str(text).strip().lower()
        if s in FAMILY_CODES and s != "student_t":
            return cls(s)
        for prefix in ("student_t:", "student_t(", "t(", "t"):
            if s.startswith(prefix):
                tail = s[len(prefix):].rstrip(")")
                if tail.isdigit():
                    return cls("student_t", int(tail))
        raise DomainError(f"cannot parse copula family {text!r}")


INDEPENDENCE = CopulaFamily("independence")
GAUSSIAN = CopulaFamily("gaussian")
GUMBEL = CopulaFamily("gumbel")
CLAYTON = CopulaFamily("clayton")
FRANK = CopulaFamily("frank")


def student_t(df):
    return CopulaFamily("student_t", df)


# ---------------------------------------------------------------------------
# Debye function and Frank conversions


_BERNOULLI = bernoulli(34)
# coefficients of x^(2k) in the series for D1(x), k = 1..17
_DEBYE_COEF = [
    _BERNOULLI[2 * k] / (math.factorial(2 * k) * (2 * k + 1)) for k in range(1, 18)
]


def debye1(x):
    """First Debye function D1(x) = (1/x) * integral_0^x t/(e^t - 1) dt."""
    if x < 0:
        raise DomainError("debye1 requires x >= 0")
    if x == 0.0:
        return 1.0
    if x <= 2.0:
        # Bernoulli-number series, converges fast for x < 2*pi
        total = 1.0 - x / 4.0
        xk = 1.0
        x2 = x * x
        for coef in _DEBYE_COEF:
            xk *= x2
            term = coef * xk
            total += term
            if abs(term) < 1e-18:
                break
        return total
    # split off the exponentially small tail of the integral to infinity
    tail = 0.0
    k = 1
    while True:
        term = math.exp(-k * x) * (x / k + 1.0 / (k * k))
        tail += term
        if term < 1e-18 or k > 200:
            break
        k += 1
    return (math.pi * math.pi / 6.0 - tail) / x


def _debye1_quad(x):
    """D1 by adaptive quadrature; the slow reference route."""
    if x == 0.0:
        return 1.0

    def integrand(t):
        if t == 0.0:
            return 1.0
        return t * math.exp(-t) / -math.expm1(-t)

    value, _ = quad(integrand, 0.0, x, epsabs=1e-12, epsrel=1e-12, limit=200)
    return value / x


def _frank_tau(theta, debye=debye1):
    if theta == 0.0:
        return 0.0
    return 1.0 - 4.0 * (1.0 - debye(theta)) / theta


def _frank_dtau_dtheta(theta):
    d1 = debye1(theta)
    em1 = math.expm1(theta) if theta < 700.0 else math.inf
    return 4.0 / (theta * theta) * (1.0 - 2.0 * d1) + 4.0 / (theta * em1)


def _frank_theta_from_tau(tau):
    """Fast inverse of _frank_tau: safeguarded Newton on the series Debye."""
    if tau <= _frank_tau(FRANK_THETA_LO):
        return FRANK_THETA_LO
    lo, hi = FRANK_THETA_LO, FRANK_THETA_HI
    # starting guess from the small- and large-theta limits of tau(theta)
    theta = min(max(9.0 * tau, 4.0 / (1.0 - tau) - 4.0), hi)
    theta = max(theta, lo)
    for _ in range(100):
        f = _frank_tau(theta) - tau
        if f > 0:
            hi = theta
        else:
            lo = theta
        step = f / _frank_dtau_dtheta(theta)
        theta_new = theta - step
        if not lo < theta_new < hi:
            theta_new = 0.5 * (lo + hi)
        if abs(theta_new - theta) <= 1e-14 * max(1.0, theta):
            return theta_new
        theta = theta_new
    return theta


def _frank_theta_from_tau_bisect(tau):
    """Plain bisection against the quadrature Debye; the reference route."""
    lo, hi = FRANK_THETA_LO, FRANK_THETA_HI
    if tau <= _frank_tau(lo, _debye1_quad):
        return lo
    if tau >= _frank_tau(hi, _debye1_quad):
        return hi
    while hi - lo > 1e-10:
        mid = 0.5 * (lo + hi)
        if _frank_tau(mid, _debye1_quad) < tau:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# tau <-> theta


def _check_tau(tau):
    tau = float(tau)
    if not 0.0 <= tau < 1.0 or not math.isfinite(tau):
        raise DomainError(f"tau must lie in [0, 1), got {tau}")
    return tau


def tau_to_theta(family, tau):
    """Map Kendall's tau to the family's native parameter.

    Elliptical families use theta = sin(pi tau / 2) (the correlation);
    Gumbel uses 1/(1 - tau), Clayton 2 tau/(1 - tau), and Frank inverts the
    Debye relation by bisection on [1e-8, 1e4].
    """
    tau = _check_tau(tau)
    name = family.name
    if name == "independence":
        if tau != 0.0:
            raise DomainError("independence copula only admits tau = 0")
        return 0.0
    if name in ("gaussian", "student_t"):
        return math.sin(math.pi * tau / 2.0)
    if name == "gumbel":
        return 1.0 / (1.0 - tau)
    if name == "clayton":
        return 2.0 * tau / (1.0 - tau)
    if tau == 0.0:
        return 0.0
    return _frank_theta_from_tau_bisect(tau)


def theta_to_tau(family, theta):
    """Inverse of tau_to_theta."""
    theta = float(theta)
    name = family.name
    if name == "independence":
        return 0.0
    if name in ("gaussian", "student_t"):
        if not 0.0 <= theta < 1.0:
            raise DomainError(f"correlation parameter must lie in [0, 1), got {theta}")
        return 2.0 / math.pi * math.asin(theta)
    if name == "gumbel":
        if theta < 1.0:
            raise DomainError(f"gumbel theta must be >= 1, got {theta}")
        return 1.0 - 1.0 / theta
    if name == "clayton":
        if theta < 0.0:
            raise DomainError(f"clayton theta must be >= 0, got {theta}")
        return theta / (theta + 2.0)
    if theta < 0.0:
        raise DomainError(f"frank theta must be >= 0, got {theta}")
    return _frank_tau(theta, _debye1_quad)


def tau_to_theta_fast(family, tau):
    """tau_to_theta with the series Debye for Frank; used inside hot loops.

    Agrees with tau_to_theta to ~1e-10 (checked by tests) but avoids the
    adaptive quadrature that dominates otherwise.
    """
    if family.name != "frank":
        return tau_to_theta(family, tau)
    tau = _check_tau(tau)
    if tau == 0.0:
        return 0.0
    return _frank_theta_from_tau(tau)


def dtheta_dtau(family, tau, theta=None):
    """Derivative of the tau -> theta map, for chain-rule gradients."""
    tau = _check_tau(tau)
    name = family.name
    if name == "independence":
        return 0.0
    if name in ("gaussian", "student_t"):
        return math.pi / 2.0 * math.cos(math.pi * tau / 2.0)
    if name == "gumbel":
        g = 1.0 - tau
        return 1.0 / (g * g)
    if name == "clayton":
        g = 1.0 - tau
        return 2.0 / (g * g)
    if theta is None:
        theta = tau_to_theta_fast(family, tau)
    if theta <= FRANK_THETA_LO:
        return 9.0  # small-theta limit of dtheta/dtau for Frank
    return 1.0 / _frank_dtau_dtheta(theta)


# ---------------------------------------------------------------------------
# copula specification and validated operations


@dataclass(frozen=True)
class CopulaSpec:
    """A family together with its dependence level, in both parametrizations."""

    family: CopulaFamily
    tau: float
    theta: float

    def __post_init__(self):
        _check_tau(self.tau)

    @classmethod
    def from_tau(cls, family, tau):
        return cls(family, float(tau), tau_to_theta(family, tau))


def _validate_unit_open(name, x):
    arr = np.asarray(x, dtype=float)
    if arr.size and (not np.all(np.isfinite(arr)) or np.any(arr <= 0.0) or np.any(arr >= 1.0)):
        raise DomainError(f"{name} must lie strictly inside (0, 1)")
    return arr


def _as_result(out, *inputs):
    if all(np.ndim(x) == 0 for x in inputs):
        return float(out)
    return out


def log_density(spec, u, v):
    """Log copula density log c(u, v) for the given spec; broadcasts u, v."""
    u = _validate_unit_open("u", u)
    v = _validate_unit_open("v", v)
    out = _core.logpdf(spec.family.code, spec.theta, spec.family.df, u, v)
    return _as_result(out, u, v)


def log_density_partials(spec, u, v):
    """Log density and its partials w.r.t. u, v and theta.

    Returns (lp, dlp_du, dlp_dv, dlp_dtheta).  Combine dlp_dtheta with
    dtheta_dtau for tau-scale gradients.
    """
    u = _validate_unit_open("u", u)
    v = _validate_unit_open("v", v)
    out = _core.logpdf_partials(spec.family.code, spec.theta, spec.family.df, u, v)
    return tuple(_as_result(part, u, v) for part in out)


def h_function(spec, u, v):
    """Conditional distribution h(u | v) = dC(u, v)/dv."""
    u = _validate_unit_open("u", u)
    v = _validate_unit_open("v", v)
    out = _core.hfun(spec.family.code, spec.theta, spec.family.df, u, v)
    return _as_result(out, u, v)


def h_inverse(spec, p, v):
    """Inverse of h_function in u: returns u such that h(u | v) = p."""
    p = _validate_unit_open("p", p)
    v = _validate_unit_open("v", v)
    out = _core.hinv(spec.family.code, spec.theta, spec.family.df, p, v)
    return _as_result(out, p, v)
