"""Marginal regression turning hourly PM2.5 into pseudo observations.

A penalized B-spline additive model of log PM2.5 stands in for a full
GAM: smooths of dew point, temperature, pressure and wind speed are
replicated per wind direction, precipitation gets one shared smooth
plus a rain indicator, the hour enters through a periodic spline and
the weekday as dummies.  The fitted mean and residual scale map the
response to z scores and pseudo uniforms for the copula stage.

The smoothing parameter is selected by generalized cross validation on
a fixed log-spaced grid; each smooth carries a second-difference
curvature penalty with a small ridge component so rank-deficient
blocks (constant covariates, empty categories inside a block) shrink
to zero instead of breaking the solve.
"""

import logging
import math
from dataclasses import dataclass
from datetime import datetime

import numpy as np
from scipy.interpolate import BSpline
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .errors import DomainError
from .model import PseudoSeries

logger = logging.getLogger(__name__)

WIND_CATEGORIES = ("NW", "NE", "SE", "CV")
SMOOTH_COVARIATES = ("dewp", "temp", "pres", "iws")
SPLINE_DEGREE = 3
N_INTERIOR_KNOTS = 8
CYCLIC_BASIS_DIM = 8
HOURS_PER_DAY = 24.0
LAMBDA_GRID = tuple(np.logspace(-4.0, 4.0, 17))
# ridge share of each curvature penalty; lets the largest grid lambda
# drive even the unpenalized null space (level, slope) of a smooth to
# zero while staying negligible at data-driven lambdas
NULL_RIDGE = 1e-3
MIN_ROWS = 30

_N_WEEKDAY_DUMMIES = 6
_N_PARAMETRIC = 1 + _N_WEEKDAY_DUMMIES + 1  # intercept, Tue..Sun, rain flag


@dataclass(frozen=True)
class HourlyRecord:
    """One hour of the pollution series with its meteorological state.

    pm25 may be missing (None); non-positive concentrations are treated
    as missing as well since the model works on the log scale.  The
    hour and weekday regressors derive from the timestamp.
    """

    timestamp: datetime
    pm25: float | None
    dewp: float
    temp: float
    pres: float
    cbwd: str
    iws: float
    prec: float

    def __post_init__(self):
        if not isinstance(self.timestamp, datetime):
            raise DomainError("timestamp must be a datetime")
        if self.cbwd not in WIND_CATEGORIES:
            raise DomainError(
                f"unknown wind direction {self.cbwd!r}; expected one of {WIND_CATEGORIES}"
            )
        for name in ("dewp", "temp", "pres", "iws", "prec"):
            x = getattr(self, name)
            if not (isinstance(x, (int, float)) and math.isfinite(x)):
                raise DomainError(f"{name} must be a finite number, got {x!r}")
        if self.pm25 is not None and not isinstance(self.pm25, (int, float)):
            raise DomainError(f"pm25 must be a number or None, got {self.pm25!r}")

    @property
    def hour(self):
        return self.timestamp.hour

    @property
    def weekday(self):
        """ISO weekday, Monday = 1 through Sunday = 7."""
        return self.timestamp.isoweekday()

    @property
    def prec_ind(self):
        return 1.0 if self.prec > 0.0 else 0.0

    @property
    def has_response(self):
        p = self.pm25
        return p is not None and math.isfinite(p) and p > 0.0


def split_usable(records):
    """Partition records into (usable, dropped) by response availability."""
    usable = [r for r in records if r.has_response]
    dropped = [r for r in records if not r.has_response]
    return usable, dropped


# ---------------------------------------------------------------------------
# design construction


@dataclass(frozen=True)
class SmoothTerm:
    """One penalized block of the design: a spline basis description.

    kind "spline" is a clamped cubic basis over the stored knot vector,
    optionally gated by a wind-direction indicator; "cyclic" is the
    periodic hour basis (knots empty, dimension fixed).  An empty knot
    vector on a spline term marks a degenerate covariate contributing
    no columns.
    """

    label: str
    kind: str
    covariate: str | None
    wind: str | None
    knots: tuple

    @property
    def ncol(self):
        if self.kind == "cyclic":
            return CYCLIC_BASIS_DIM
        if not self.knots:
            return 0
        return len(self.knots) - SPLINE_DEGREE - 1


def _knot_vector(values, n_interior):
    lo = float(np.min(values))
    hi = float(np.max(values))
    if not hi > lo:
        return ()
    qs = np.quantile(values, np.linspace(0.0, 1.0, n_interior + 2)[1:-1])
    interior = np.unique(qs[(qs > lo) & (qs < hi)])
    k = SPLINE_DEGREE
    return tuple(np.concatenate([[lo] * (k + 1), interior, [hi] * (k + 1)]))


def _spline_block(term, x):
    k = SPLINE_DEGREE
    t = np.asarray(term.knots)
    lo, hi = t[k], t[-k - 1]
    clipped = np.clip(x, lo, hi)
    n_out = int(np.count_nonzero(clipped != x))
    if n_out:
        logger.warning("%s: %d values outside the training range were clipped", term.label, n_out)
    return BSpline.design_matrix(clipped, t, k).toarray()


def _cyclic_block(hours):
    k = SPLINE_DEGREE
    m = CYCLIC_BASIS_DIM
    step = HOURS_PER_DAY / m
    t = step * np.arange(-k, m + k + 1)
    full = BSpline.design_matrix(np.asarray(hours, dtype=float) % HOURS_PER_DAY, t, k).toarray()
    # periodic identification folds the trailing k basis functions back
    out = full[:, :m].copy()
    out[:, :k] += full[:, m:]
    return out


def _curvature_penalty(term):
    m = term.ncol
    if m == 0:
        return np.zeros((0, 0))
    if term.kind == "cyclic":
        d = np.zeros((m, m))
        for j in range(m):
            d[j, j] = 1.0
            d[j, (j + 1) % m] = -2.0
            d[j, (j + 2) % m] = 1.0
    else:
        d = np.diff(np.eye(m), n=2, axis=0)
    return d.T @ d + NULL_RIDGE * np.eye(m)


def _term_values(term, records):
    if term.kind == "cyclic":
        return _cyclic_block([r.hour for r in records])
    x = np.array([getattr(r, term.covariate) for r in records], dtype=float)
    if term.ncol == 0:
        return np.zeros((len(records), 0))
    block = _spline_block(term, x)
    if term.wind is not None:
        block = block * np.array([1.0 if r.cbwd == term.wind else 0.0 for r in records])[:, None]
    return block


def make_terms(records, n_interior=N_INTERIOR_KNOTS):
    """Smooth-term descriptions with knots placed at covariate quantiles.

    Knots for a covariate are shared by its four wind-gated replicas.
    """
    terms = []
    for cov in SMOOTH_COVARIATES:
        knots = _knot_vector(np.array([getattr(r, cov) for r in records], dtype=float), n_interior)
        for wind in WIND_CATEGORIES:
            terms.append(SmoothTerm(f"s({cov}):{wind}", "spline", cov, wind, knots))
    prec_knots = _knot_vector(np.array([r.prec for r in records], dtype=float), n_interior)
    terms.append(SmoothTerm("s(prec)", "spline", "prec", None, prec_knots))
    terms.append(SmoothTerm("s(hour)", "cyclic", None, None, ()))
    return tuple(terms)


def build_design(records, terms=None, n_interior=N_INTERIOR_KNOTS):
    """Design matrix (parametric columns, then smooth blocks) and its terms.

    The parametric part is an intercept, weekday dummies (Monday is the
    baseline) and the rain indicator; each smooth block follows in the
    order produced by make_terms.
    """
    records = list(records)
    if not records:
        raise DomainError("no records to build a design from")
    if terms is None:
        terms = make_terms(records, n_interior)
    n = len(records)
    parts = [np.ones((n, 1))]
    weekdays = np.array([r.weekday for r in records])
    parts.append(np.column_stack([(weekdays == d).astype(float) for d in range(2, 8)]))
    parts.append(np.array([r.prec_ind for r in records], dtype=float)[:, None])
    for term in terms:
        parts.append(_term_values(term, records))
    return np.hstack(parts), terms


def _term_slices(terms):
    out = []
    start = _N_PARAMETRIC
    for term in terms:
        out.append(slice(start, start + term.ncol))
        start += term.ncol
    return out


# ---------------------------------------------------------------------------
# fitting


@dataclass(frozen=True)
class MarginalModel:
    """Fitted marginal regression: design description plus estimates.

    The design is reconstructable from terms alone, so predictions and
    refits on fresh records reproduce the training geometry exactly.
    """

    month: str
    terms: tuple
    coef: np.ndarray
    lambdas: np.ndarray
    sigma_hat: float
    edf: float
    edf_by_term: np.ndarray
    gcv: float
    n_obs: int

    def __post_init__(self):
        coef = np.asarray(self.coef, dtype=float)
        lambdas = np.asarray(self.lambdas, dtype=float)
        edf_by_term = np.asarray(self.edf_by_term, dtype=float)
        if not np.all(np.isfinite(coef)):
            raise DomainError("coefficients must be finite")
        if not (math.isfinite(self.sigma_hat) and self.sigma_hat > 0.0):
            raise DomainError(f"sigma_hat must be positive, got {self.sigma_hat}")
        if lambdas.shape != (len(self.terms),) or np.any(lambdas <= 0.0):
            raise DomainError("one positive penalty weight per smooth term is required")
        expected = _N_PARAMETRIC + sum(t.ncol for t in self.terms)
        if coef.shape != (expected,):
            raise DomainError(f"coefficient vector must have length {expected}")
        for name, arr in (("coef", coef), ("lambdas", lambdas), ("edf_by_term", edf_by_term)):
            arr = arr.copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    def to_dict(self):
        return {
            "month": self.month,
            "sigma_hat": self.sigma_hat,
            "edf": self.edf,
            "gcv": self.gcv,
            "n_obs": self.n_obs,
            "coef": self.coef.tolist(),
            "lambdas": self.lambdas.tolist(),
            "edf_by_term": self.edf_by_term.tolist(),
            "terms": [
                {
                    "label": t.label,
                    "kind": t.kind,
                    "covariate": t.covariate,
                    "wind": t.wind,
                    "knots": list(t.knots),
                }
                for t in self.terms
            ],
        }

    @classmethod
    def from_dict(cls, d):
        terms = tuple(
            SmoothTerm(t["label"], t["kind"], t["covariate"], t["wind"], tuple(t["knots"]))
            for t in d["terms"]
        )
        return cls(
            month=d["month"],
            terms=terms,
            coef=np.asarray(d["coef"], dtype=float),
            lambdas=np.asarray(d["lambdas"], dtype=float),
            sigma_hat=float(d["sigma_hat"]),
            edf=float(d["edf"]),
            edf_by_term=np.asarray(d["edf_by_term"], dtype=float),
            gcv=float(d["gcv"]),
            n_obs=int(d["n_obs"]),
        )


def _penalty_blocks(terms, slices, xtx):
    """Per-term penalties scaled to the data Gram so lambda is unitless."""
    out = []
    for term, sl in zip(terms, slices):
        s = _curvature_penalty(term)
        if s.shape[0] == 0:
            out.append(s)
            continue
        data_scale = float(np.trace(xtx[sl, sl]))
        pen_scale = float(np.trace(s))
        if data_scale > 0.0 and pen_scale > 0.0:
            s = s * (data_scale / pen_scale)
        out.append(s)
    return out


def _solve_penalized(xtx, xty, penalties, slices, lambdas):
    g = xtx.copy()
    for s, sl, lam in zip(penalties, slices, lambdas):
        if s.shape[0]:
            g[sl, sl] += lam * s
    try:
        cho = cho_factor(g, lower=True)
    except LinAlgError as err:
        raise DomainError("penalized system is singular; check the design for empty categories") from err
    coef = cho_solve(cho, xty)
    influence = cho_solve(cho, xtx)
    return coef, influence


def fit(records, month, n_interior=N_INTERIOR_KNOTS, lambda_grid=LAMBDA_GRID):
    """Penalized least squares on log pm25 with GCV-selected smoothing.

    One smoothing value from the grid is shared by every smooth term;
    sigma_hat applies the effective-degrees-of-freedom correction.
    """
    usable, dropped = split_usable(records)
    if dropped:
        logger.warning(
            "%s: dropped %d rows without usable pm25 (first at %s)",
            month,
            len(dropped),
            dropped[0].timestamp.isoformat(),
        )
    n = len(usable)
    if n < MIN_ROWS:
        raise DomainError(f"need at least {MIN_ROWS} rows with a response, got {n}")
    y = np.log(np.array([r.pm25 for r in usable], dtype=float))
    x, terms = build_design(usable, n_interior=n_interior)
    slices = _term_slices(terms)
    xtx = x.T @ x
    xty = x.T @ y
    yty = float(y @ y)
    penalties = _penalty_blocks(terms, slices, xtx)

    best = None
    for lam in lambda_grid:
        lambdas = np.full(len(terms), float(lam))
        coef, influence = _solve_penalized(xtx, xty, penalties, slices, lambdas)
        edf = float(np.trace(influence))
        rss = yty - 2.0 * float(xty @ coef) + float(coef @ xtx @ coef)
        rss = max(rss, 0.0)
        if n - edf <= 1.0:
            continue
        gcv = n * rss / (n - edf) ** 2
        if best is None or gcv < best[0]:
            best = (gcv, lam, coef, edf, influence, rss)
    if best is None:
        raise DomainError("no smoothing value left a positive residual degree of freedom")
    gcv, lam, coef, edf, influence, rss = best
    sigma2 = rss / (n - edf)
    if not sigma2 > 0.0:
        raise DomainError("residual variance collapsed to zero")
    edf_by_term = np.array([float(np.trace(influence[sl, sl])) for sl in slices])
    return MarginalModel(
        month=month,
        terms=terms,
        coef=coef,
        lambdas=np.full(len(terms), float(lam)),
        sigma_hat=float(np.sqrt(sigma2)),
        edf=edf,
        edf_by_term=edf_by_term,
        gcv=float(gcv),
        n_obs=n,
    )


def predict_mean(model, records):
    """Fitted mean of log pm25 for each record, from the stored basis."""
    x, _ = build_design(records, terms=model.terms)
    return x @ model.coef


def standardize(model, records):
    """PseudoSeries of the records' responses under the fitted marginal.

    Rows without a usable response are dropped (and logged); remaining
    points are treated as a contiguous series.
    """
    usable, dropped = split_usable(records)
    if dropped:
        logger.warning(
            "%s: standardize dropped %d rows without usable pm25 at %s",
            model.month,
            len(dropped),
            ", ".join(r.timestamp.isoformat() for r in dropped[:5])
            + ("..." if len(dropped) > 5 else ""),
        )
    if len(usable) < 2:
        raise DomainError("standardize needs at least two rows with a response")
    y = np.log(np.array([r.pm25 for r in usable], dtype=float))
    z = (y - predict_mean(model, usable)) / model.sigma_hat
    stamps = np.array([r.timestamp for r in usable])
    return PseudoSeries.from_z(z, stamps)
