"""Predictive simulation on the copula and response scales.

in_sample draws the observation conditionally on each posterior draw of
the latent state at a held-in hour; out_of_sample advances the latent
chain past the end of the fitted series and samples the observation at
the final step.  Both work purely on the copula scale and never read the
marginal model.  to_response and scenario push copula-scale draws through
a fitted marginal: y = f_hat(x) + sigma_hat * eps and pm = exp(y).  The
marginal parameters enter as plug-in values, so marginal-fit uncertainty
is excluded from every predictive band by construction.
"""

import numpy as np
from dataclasses import dataclass, replace
from scipy.special import ndtri

from . import _core
from .errors import DomainError
from .inference import credible_interval, kde_mode
from .marginal import predict_mean
from .model import _clamp_unit
from .sampler import _theta_per_draw

IN_SAMPLE = "in-sample"
OUT_OF_SAMPLE = "out-of-sample"

# scenario edits may touch covariates only, never the response or the clock
EDITABLE_FIELDS = ("dewp", "temp", "pres", "cbwd", "iws", "prec")


@dataclass(frozen=True)
class PredictiveDraws:
    """Copula-scale predictive draws, one per pooled posterior draw.

    kind says whether horizon indexes a held-in hour (1-based) or counts
    steps past the end of the series.  eps is the normal score of u; the
    response-scale vectors y (log scale) and pm (raw concentration scale)
    stay None until to_response or scenario fills them in.
    """

    kind: str
    horizon: int
    u: np.ndarray
    eps: np.ndarray
    y: np.ndarray | None = None
    pm: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in (IN_SAMPLE, OUT_OF_SAMPLE):
            raise DomainError(f"unknown prediction kind {self.kind!r}")
        if self.horizon < 1:
            raise DomainError("horizon must be >= 1")
        u = np.asarray(self.u, dtype=float)
        eps = np.asarray(self.eps, dtype=float)
        if u.ndim != 1 or len(u) == 0 or eps.shape != u.shape:
            raise DomainError("u and eps must be matching non-empty vectors")
        if np.any(u <= 0.0) or np.any(u >= 1.0):
            raise DomainError("u must lie strictly inside (0, 1)")
        if np.max(np.abs(eps - ndtri(u))) > 1e-12:
            raise DomainError("eps must equal the normal score of u")
        arrays = {"u": u, "eps": eps}
        for name in ("y", "pm"):
            value = getattr(self, name)
            if value is None:
                continue
            value = np.asarray(value, dtype=float)
            if value.shape != u.shape:
                raise DomainError(f"{name} must match u in length")
            if not np.all(np.isfinite(value)):
                raise DomainError(f"{name} must be finite")
            arrays[name] = value
        if "pm" in arrays and np.any(arrays["pm"] <= 0.0):
            raise DomainError("pm draws must be positive")
        for name, arr in arrays.items():
            arr = arr.copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def n_draws(self):
        return len(self.u)

    def summary(self, level=0.90):
        """Mode and central interval of the most derived scale present."""
        for scale in ("pm", "y", "eps"):
            values = getattr(self, scale)
            if values is not None:
                break
        lo, hi = credible_interval(values, level)
        return {
            "kind": self.kind,
            "horizon": self.horizon,
            "scale": scale,
            "mode": kde_mode(values),
            "lo": lo,
            "hi": hi,
        }


def _fresh_uniforms(rng, n):
    # uniform() can return exactly 0.0; keep the draws strictly interior
    return _clamp_unit(rng.uniform(size=n))


def in_sample(draws, model, t, rng):
    """Observation draws at held-in hour t (1-based), one per posterior draw.

    Each posterior draw r supplies its own latent state v_t and dependence
    parameter; a fresh uniform is pushed through the inverse conditional
    distribution of the observation copula.
    """
    if not 1 <= t <= draws.t_len:
        raise DomainError(f"t must lie in 1..{draws.t_len}, got {t}")
    n = draws.n_chains * draws.n_kept
    p = _fresh_uniforms(rng, n)
    if model.kind == "independence":
        u = p
    else:
        obs = model.obs_family
        theta = _theta_per_draw(obs, draws.pooled_tau_obs())
        v = draws.pooled_latent()[:, t - 1]
        u = _clamp_unit(np.asarray(_core.hinv(obs.code, theta, obs.df, p, v)))
    return PredictiveDraws(kind=IN_SAMPLE, horizon=t, u=u, eps=ndtri(u))


def out_of_sample(draws, model, steps, rng):
    """Observation draws `steps` hours past the end of the fitted series.

    Per posterior draw r the latent chain continues from its final
    in-sample state through `steps` inverse-conditional transitions, then
    the observation is sampled at the last step.  No re-fitting happens;
    dependence parameters stay at their posterior values.
    """
    if steps < 1:
        raise DomainError("steps must be >= 1")
    n = draws.n_chains * draws.n_kept
    if model.kind == "independence":
        u = _fresh_uniforms(rng, n)
    else:
        lat, obs = model.lat_family, model.obs_family
        theta_lat = _theta_per_draw(lat, draws.pooled_tau_lat())
        theta_obs = _theta_per_draw(obs, draws.pooled_tau_obs())
        v = draws.pooled_latent()[:, -1]
        for _ in range(steps):
            w = _fresh_uniforms(rng, n)
            v = _clamp_unit(np.asarray(_core.hinv(lat.code, theta_lat, lat.df, w, v)))
        p = _fresh_uniforms(rng, n)
        u = _clamp_unit(np.asarray(_core.hinv(obs.code, theta_obs, obs.df, p, v)))
    return PredictiveDraws(kind=OUT_OF_SAMPLE, horizon=steps, u=u, eps=ndtri(u))


def last_same_hour(records, hour):
    """Covariate proxy: the most recent record sharing the clock hour.

    Out-of-sample covariates are unknown, so forecasts reuse the covariate
    row of the last observed time point with the same hour of day.
    """
    if not 0 <= hour <= 23:
        raise DomainError("hour must lie in 0..23")
    for record in reversed(list(records)):
        if record.hour == hour:
            return record
    raise DomainError(f"no record with hour {hour} to serve as covariate proxy")


def edit_record(record, **changes):
    """Copy a covariate record with scenario edits applied.

    Only covariate fields may change; the edited record passes the same
    validation as an ingested one, so out-of-category values are rejected.
    """
    bad = sorted(set(changes) - set(EDITABLE_FIELDS))
    if bad:
        raise DomainError(f"fields not editable in a scenario: {bad}")
    return replace(record, **changes)


def to_response(pred, marginal, covariates):
    """Map eps draws to the log-response scale through the marginal fit."""
    f_hat = float(predict_mean(marginal, [covariates])[0])
    return replace(pred, y=f_hat + marginal.sigma_hat * pred.eps)


def scenario(pred, marginal, covariates):
    """Concentration draws under the given covariate row, raw scale."""
    f_hat = float(predict_mean(marginal, [covariates])[0])
    y = f_hat + marginal.sigma_hat * pred.eps
    return replace(pred, y=y, pm=np.exp(y))
