"""The copula state space model.

Observation equation: u_t | v_t follows the conditional of the observation
copula at tau_obs; state equation: v_t | v_{t-1} follows the conditional of
the latent copula at tau_lat.  tau_obs is never free: it is tied to tau_lat
through sin(pi tau_obs / 2) = sin(pi tau_lat / 2)^c with a fixed smoothing
exponent c >= 1.  The joint log posterior of (tau_lat, v_1..v_T) given the
pseudo observations is evaluated on an unconstrained scale via the logistic
map, with a flat Uniform(0,1) prior on tau_lat.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, ndtri

from . import _core
from .copulas import CopulaFamily, dtheta_dtau, tau_to_theta_fast
from .errors import DomainError

# Constrained coordinates are clamped this far inside (0,1) before any
# density code sees them; HMC proposals can graze the boundaries.
UNIT_MARGIN = 1e-12

_clamp_total = 0


def clamp_count():
    """Total coordinates clamped into the open unit interval so far.

    Advisory diagnostic only; increments are not synchronized across threads.
    """
    return _clamp_total


def _clamp_unit(x):
    global _clamp_total
    clipped = np.clip(x, UNIT_MARGIN, 1.0 - UNIT_MARGIN)
    hits = int(np.count_nonzero(clipped != x))
    if hits:
        _clamp_total += hits
    return clipped


@dataclass(frozen=True)
class ModelConfig:
    """Model class: a copula family pair plus the smoothing exponent c.

    The three classes used in practice are independence (both families
    independence), gaussian (both Gaussian), and a single non-Gaussian
    family shared by both equations.  The prior on tau_lat is fixed as
    Uniform(0, 1).
    """

    obs_family: CopulaFamily
    lat_family: CopulaFamily
    c: float = 1.0

    def __post_init__(self):
        if not (isinstance(self.obs_family, CopulaFamily) and isinstance(self.lat_family, CopulaFamily)):
            raise DomainError("obs_family and lat_family must be CopulaFamily instances")
        if self.obs_family != self.lat_family:
            raise DomainError("observation and latent equations share one family")
        c = float(self.c)
        if not (math.isfinite(c) and c >= 1.0):
            raise DomainError(f"smoothing exponent c must be >= 1, got {self.c}")
        object.__setattr__(self, "c", c)

    @property
    def kind(self):
        if self.obs_family.name == "independence":
            return "independence"
        if self.obs_family.name == "gaussian":
            return "gaussian"
        return "copula"

    def label(self):
        if self.kind == "independence":
            return "ind"
        return f"{self.obs_family.label()}-c{self.c:g}"


@dataclass(frozen=True)
class PseudoSeries:
    """Standardized series on the copula scale: u_hat = Phi(z_hat)."""

    u_hat: np.ndarray
    z_hat: np.ndarray
    timestamps: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u_hat, dtype=float)
        z = np.asarray(self.z_hat, dtype=float)
        ts = np.asarray(self.timestamps)
        if u.ndim != 1 or u.shape != z.shape or ts.shape != u.shape:
            raise DomainError("u_hat, z_hat and timestamps must be 1-d of equal length")
        if len(u) < 2:
            raise DomainError("a pseudo series needs at least two observations")
        if not np.all(np.isfinite(u)) or not np.all(np.isfinite(z)):
            raise DomainError("pseudo series entries must be finite")
        if np.any(u <= 0.0) or np.any(u >= 1.0):
            raise DomainError("u_hat must lie strictly inside (0, 1)")
        from scipy.special import ndtr

        if np.max(np.abs(u - ndtr(z))) > 1e-12:
            raise DomainError("u_hat and z_hat disagree: u_hat must equal Phi(z_hat)")
        for name, arr in (("u_hat", u), ("z_hat", z), ("timestamps", ts)):
            arr = arr.copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    def __len__(self):
        return len(self.u_hat)

    @classmethod
    def from_z(cls, z, timestamps=None):
        from scipy.special import ndtr

        z = np.asarray(z, dtype=float)
        if timestamps is None:
            timestamps = np.arange(len(z))
        u = np.clip(ndtr(z), UNIT_MARGIN, 1.0 - UNIT_MARGIN)
        # re-derive z from the clipped u so the identity holds exactly
        return cls(u, ndtri(u), np.asarray(timestamps))

    @classmethod
    def from_u(cls, u, timestamps=None):
        u = np.clip(np.asarray(u, dtype=float), UNIT_MARGIN, 1.0 - UNIT_MARGIN)
        if timestamps is None:
            timestamps = np.arange(len(u))
        return cls(u, ndtri(u), np.asarray(timestamps))


# ---------------------------------------------------------------------------
# identifiability constraint


def tau_obs_from_tau_lat(tau_lat, c):
    """Observation-level tau implied by the latent tau and exponent c."""
    tau_lat = np.asarray(tau_lat, dtype=float)
    c = float(c)
    if np.any(tau_lat <= 0.0) or np.any(tau_lat >= 1.0):
        raise DomainError("tau_lat must lie in (0, 1)")
    if c < 1.0:
        raise DomainError(f"c must be >= 1, got {c}")
    if c == 1.0:
        out = tau_lat.copy()
    else:
        m = np.sin(np.pi * tau_lat / 2.0)
        out = 2.0 / np.pi * np.arcsin(m ** c)
    return float(out) if out.ndim == 0 else out


def _dtau_obs_dtau_lat(tau_lat, c):
    m = math.sin(math.pi * tau_lat / 2.0)
    if m == 0.0:
        return 1.0 if c == 1.0 else 0.0
    # 1 - m^(2c) via expm1 keeps precision as tau_lat -> 1
    one_minus = -math.expm1(2.0 * c * math.log(m))
    if one_minus <= 0.0:
        return math.inf
    return c * m ** (c - 1.0) * math.cos(math.pi * tau_lat / 2.0) / math.sqrt(one_minus)


def gaussian_oracle_autocorr(rho_obs, rho_lat):
    """Lag-1 autocorrelation of Z_t in the linear-Gaussian pair: rho_obs^2 rho_lat."""
    for name, r in (("rho_obs", rho_obs), ("rho_lat", rho_lat)):
        if not 0.0 <= r < 1.0:
            raise DomainError(f"{name} must lie in [0, 1), got {r}")
    return rho_obs * rho_obs * rho_lat


# ---------------------------------------------------------------------------
# unconstrained parametrization


def constrain(q):
    """Map unconstrained coordinates to (tau_lat, v) in (0,1)^(T+1)."""
    s = expit(np.asarray(q, dtype=float))
    return s[0], s[1:]


def unconstrain(tau_lat, v):
    """Inverse of constrain: the logistic (log-odds) map."""
    x = np.concatenate(([tau_lat], np.asarray(v, dtype=float)))
    if np.any(x <= 0.0) or np.any(x >= 1.0):
        raise DomainError("constrained coordinates must lie strictly inside (0, 1)")
    return np.log(x) - np.log1p(-x)


def _log_jacobian_and_grad(q):
    # sum of log sigma(q) + log(1 - sigma(q)) = -sum softplus(q) + softplus(-q)
    j = -np.sum(np.logaddexp(0.0, q) + np.logaddexp(0.0, -q))
    s = expit(q)
    return j, 1.0 - 2.0 * s, s


class PosteriorTarget:
    """Log posterior of (tau_lat, v_1..v_T) on the unconstrained scale.

    The sampler only needs ``dim`` and ``value_and_grad``; everything else
    here is precomputed per (data, config) pair so the per-evaluation cost
    is two kernel calls over the series.
    """

    def __init__(self, data, config):
        if not isinstance(data, PseudoSeries):
            raise DomainError("data must be a PseudoSeries")
        if not isinstance(config, ModelConfig):
            raise DomainError("config must be a ModelConfig")
        self.data = data
        self.config = config
        self._u_hat = np.ascontiguousarray(data.u_hat)
        self._obs_code = config.obs_family.code
        self._lat_code = config.lat_family.code
        self._df = config.obs_family.df
        self._independent = config.kind == "independence"
        # elliptical kernels spend most of their time in the quantile
        # transform; cache the data scores and share the state scores
        # between the two kernel calls
        if self._obs_code == _core.CODE_GAUSSIAN:
            self._score = ndtri
        elif self._obs_code == _core.CODE_STUDENT_T:
            df = self._df
            self._score = lambda p: _core.t_quantile(df, p)
        else:
            self._score = None
        self._x_hat = None if self._score is None else self._score(self._u_hat)

    @property
    def dim(self):
        return len(self.data) + 1

    def value_and_grad(self, q):
        q = np.asarray(q, dtype=float)
        if q.shape != (self.dim,):
            raise DomainError(f"q must have length {self.dim}")
        if not np.all(np.isfinite(q)):
            raise DomainError("q must be finite")
        jac, djac, s = _log_jacobian_and_grad(q)
        if np.any(s <= 0.0) or np.any(s >= 1.0):
            return -math.inf, np.zeros_like(q)
        if self._independent:
            return jac, djac

        tau_lat = float(_clamp_unit(s[0]))
        v = _clamp_unit(s[1:])
        cfg = self.config
        tau_obs = tau_obs_from_tau_lat(tau_lat, cfg.c)
        if not 0.0 < tau_obs < 1.0:
            return -math.inf, np.zeros_like(q)
        theta_obs = tau_to_theta_fast(cfg.obs_family, tau_obs)
        theta_lat = tau_to_theta_fast(cfg.lat_family, tau_lat)

        ys = None if self._score is None else self._score(v)
        lp_o, du_o, dv_o, dth_o = _core.logpdf_partials(
            self._obs_code, theta_obs, self._df, self._u_hat, v, self._x_hat, ys
        )
        lp_l, d1_l, d2_l, dth_l = _core.logpdf_partials(
            self._lat_code,
            theta_lat,
            self._df,
            v[1:],
            v[:-1],
            None if ys is None else ys[1:],
            None if ys is None else ys[:-1],
        )
        # boundary proposals yield nan partials; the finiteness gate below
        # turns them into -inf, so the intermediate arithmetic may warn
        with np.errstate(invalid="ignore", over="ignore"):
            value = float(np.sum(lp_o) + np.sum(lp_l)) + jac
            grad_v = dv_o.copy()
            grad_v[1:] += d1_l
            grad_v[:-1] += d2_l
            dtau = (
                float(np.sum(dth_o))
                * dtheta_dtau(cfg.obs_family, tau_obs, theta_obs)
                * _dtau_obs_dtau_lat(tau_lat, cfg.c)
                + float(np.sum(dth_l)) * dtheta_dtau(cfg.lat_family, tau_lat, theta_lat)
            )
            grad_x = np.concatenate(([dtau], grad_v))
            grad_q = grad_x * s * (1.0 - s) + djac
        if not (math.isfinite(value) and np.all(np.isfinite(grad_q))):
            return -math.inf, np.zeros_like(q)
        return value, grad_q

    def value(self, q):
        return self.value_and_grad(q)[0]


def log_posterior(q, data, config):
    """Joint log posterior on the unconstrained scale, Jacobian included.

    Returns -inf (a sentinel, not an exception) when the constrained point
    degenerates to a boundary or the density underflows.
    """
    return PosteriorTarget(data, config).value(q)


def grad_log_posterior(q, data, config):
    """Gradient of log_posterior; requires a finite value at q."""
    value, grad = PosteriorTarget(data, config).value_and_grad(q)
    if not math.isfinite(value):
        raise DomainError("log_posterior is not finite at q")
    return grad


# ---------------------------------------------------------------------------
# forward simulation


def simulate_series(config, tau_lat, t_len, rng):
    """Draw a PseudoSeries of length t_len from the model at tau_lat.

    The latent path is the sequential part; the observation draws vectorize.
    Elliptical families use the closed conditional quantile recursion, other
    families step through the latent h-inverse one point at a time.
    """
    if t_len < 2:
        raise DomainError("t_len must be at least 2")
    tau_lat = float(tau_lat)
    if config.kind == "independence":
        if tau_lat != 0.0:
            raise DomainError("independence model requires tau_lat = 0")
        u = rng.uniform(size=t_len)
        return PseudoSeries.from_u(u)
    if not 0.0 < tau_lat < 1.0:
        raise DomainError(f"tau_lat must lie in (0, 1), got {tau_lat}")

    tau_obs = tau_obs_from_tau_lat(tau_lat, config.c)
    theta_obs = tau_to_theta_fast(config.obs_family, tau_obs)
    v = _simulate_latent_path(config, tau_lat, t_len, rng)
    p = rng.uniform(size=t_len)
    u = _core.hinv(config.obs_family.code, theta_obs, config.obs_family.df, p, v)
    return PseudoSeries.from_u(np.asarray(u))


def _simulate_latent_path(config, tau_lat, t_len, rng, v_prev=None):
    """Draw t_len steps of the latent chain at tau_lat.

    Starts from the stationary Uniform(0,1) marginal, or continues from the
    state v_prev when one is given (then all t_len draws are transitions).
    Elliptical families use the closed conditional quantile recursion on the
    score scale; other families invert the conditional one step at a time.
    """
    theta_lat = tau_to_theta_fast(config.lat_family, tau_lat)
    w = rng.uniform(size=t_len)
    name = config.lat_family.name

    if name == "gaussian":
        from scipy.special import ndtr

        scale = math.sqrt(1.0 - theta_lat * theta_lat)
        shocks = scale * ndtri(w)
        y = np.empty(t_len)
        if v_prev is None:
            y[0] = ndtri(w[0])
        else:
            y[0] = theta_lat * ndtri(v_prev) + shocks[0]
        acc = y[0]
        for t in range(1, t_len):
            acc = theta_lat * acc + shocks[t]
            y[t] = acc
        v = ndtr(y)
    elif name == "student_t":
        from scipy.special import stdtr, stdtrit

        df = config.lat_family.df
        eps = stdtrit(df + 1, w)
        r2 = 1.0 - theta_lat * theta_lat
        x = np.empty(t_len)
        if v_prev is None:
            acc = stdtrit(df, w[0])
            x[0] = acc
            start = 1
        else:
            acc = stdtrit(df, v_prev)
            start = 0
        for t in range(start, t_len):
            scale = math.sqrt(r2 * (df + acc * acc) / (df + 1.0))
            acc = theta_lat * acc + scale * eps[t]
            x[t] = acc
        v = stdtr(df, x)
    else:
        v = np.empty(t_len)
        code = config.lat_family.code
        if v_prev is None:
            v[0] = w[0]
            start = 1
        else:
            v[0] = _core.hinv(code, theta_lat, None, w[0], float(v_prev))
            start = 1
        for t in range(start, t_len):
            v[t] = _core.hinv(code, theta_lat, None, w[t], v[t - 1])
    return np.clip(v, UNIT_MARGIN, 1.0 - UNIT_MARGIN)
