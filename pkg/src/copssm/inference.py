"""Post-sampling analysis: WAIC, summaries, convergence, contour grids.

Everything here consumes immutable draws.  The WAIC estimator works on
likelihood-scale contributions with the mean term computed through
log-sum-exp, so strongly peaked likelihoods cannot overflow.  Model
selection is the WAIC argmin with deterministic tie-breaking.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import gaussian_kde

from .errors import DomainError

KDE_GRID_SIZE = 512
CONTOUR_SPAN = 3.0
CONTOUR_POINTS = 101


def _loglik_values(loglik):
    if hasattr(loglik, "pooled_loglik"):
        loglik = loglik.pooled_loglik()
    elif isinstance(loglik, LogLikMatrix):
        loglik = loglik.values
    values = np.asarray(loglik, dtype=float)
    if values.ndim != 2 or values.shape[0] < 2:
        raise DomainError("loglik must be an R x T matrix with R >= 2 draws")
    if not np.all(np.isfinite(values)) or np.any(values <= 0.0):
        raise DomainError("likelihood contributions must be finite and positive")
    return values


@dataclass(frozen=True)
class LogLikMatrix:
    """Per-draw, per-time likelihood contributions on the density scale."""

    values: np.ndarray

    def __post_init__(self):
        values = _loglik_values(self.values)
        values = values.copy()
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @property
    def n_draws(self):
        return self.values.shape[0]

    @property
    def t_len(self):
        return self.values.shape[1]


def waic(loglik):
    """Widely applicable information criterion from likelihood draws.

    -2 sum_t [ log mean_r(l_rt) - var_r(log l_rt) ], the variance with
    the unbiased divisor.  Accepts an R x T array, a LogLikMatrix, or
    anything with a pooled_loglik() accessor.
    """
    values = _loglik_values(loglik)
    log_l = np.log(values)
    shift = log_l.max(axis=0)
    log_mean = shift + np.log(np.exp(log_l - shift).mean(axis=0))
    penalty = np.var(log_l, axis=0, ddof=1)
    return -2.0 * float(np.sum(log_mean - penalty)) + 0.0


def select_model(results):
    """Pick the WAIC-minimizing entry from (config, waic) pairs.

    Ties break toward the smaller smoothing exponent c, then the
    alphabetically first family label.
    """
    results = list(results)
    if not results:
        raise DomainError("select_model needs at least one (config, waic) pair")
    for config, value in results:
        if not math.isfinite(value):
            raise DomainError(f"non-finite WAIC for {config.label()}")
    return min(results, key=lambda cw: (cw[1], cw[0].c, cw[0].obs_family.label()))[0]


# ---------------------------------------------------------------------------
# posterior summaries


def _checked_samples(samples, minimum=100):
    x = np.asarray(samples, dtype=float).ravel()
    if len(x) < minimum:
        raise DomainError(f"need at least {minimum} samples, got {len(x)}")
    if not np.all(np.isfinite(x)):
        raise DomainError("samples must be finite")
    return x


def kde_mode(samples):
    """Location of the kernel density maximum over a 512-point grid.

    Gaussian kernel with Silverman bandwidth; zero-variance samples
    return their common value directly.
    """
    x = _checked_samples(samples)
    lo, hi = float(x.min()), float(x.max())
    if hi == lo:
        return lo
    grid = np.linspace(lo, hi, KDE_GRID_SIZE)
    density = gaussian_kde(x, bw_method="silverman")(grid)
    return float(grid[np.argmax(density)])


def credible_interval(samples, level=0.90):
    """Central credible interval from empirical quantiles."""
    if not 0.0 < level < 1.0:
        raise DomainError(f"level must lie in (0, 1), got {level}")
    x = _checked_samples(samples)
    alpha = (1.0 - level) / 2.0
    lo, hi = np.quantile(x, [alpha, 1.0 - alpha])
    return float(lo), float(hi)


# ---------------------------------------------------------------------------
# contour diagnostics


@dataclass(frozen=True)
class ContourGrid:
    """Bivariate density on a square normalized grid, for external plotting."""

    axis: np.ndarray
    density: np.ndarray

    def __post_init__(self):
        axis = np.asarray(self.axis, dtype=float)
        density = np.asarray(self.density, dtype=float)
        if axis.ndim != 1 or density.shape != (len(axis), len(axis)):
            raise DomainError("density must be square over the axis grid")
        if np.any(density < 0.0) or not np.all(np.isfinite(density)):
            raise DomainError("density values must be finite and non-negative")
        mass = np.trapezoid(np.trapezoid(density, axis, axis=1), axis)
        if abs(mass - 1.0) > 0.02:
            raise DomainError(f"grid mass {mass:.4f} is not within 0.02 of 1")
        for name, arr in (("axis", axis), ("density", density)):
            arr = arr.copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    def rows(self):
        """(z1, z2, density) triples in row-major order."""
        for i, a in enumerate(self.axis):
            for j, b in enumerate(self.axis):
                yield a, b, self.density[i, j]


def lag1_contour(z, span=CONTOUR_SPAN, points=CONTOUR_POINTS):
    """KDE of consecutive pairs (z_t, z_{t-1}) on the normalized scale.

    Pairs are standardized coordinate-wise before smoothing, so the
    grid holds essentially all of the mass even if the input drifted
    from unit scale.  The kernel is Gaussian and axis-aligned with
    Silverman bandwidths per coordinate, which keeps perfectly
    dependent pairs (a singular cloud) well defined.
    """
    z = np.asarray(z, dtype=float).ravel()
    if len(z) < 50:
        raise DomainError(f"need at least 50 points, got {len(z)}")
    if not np.all(np.isfinite(z)):
        raise DomainError("z must be finite")
    pairs = np.column_stack([z[1:], z[:-1]])
    sd = pairs.std(axis=0, ddof=1)
    if np.any(sd == 0.0):
        raise DomainError("contour pairs are constant in one coordinate")
    pairs = (pairs - pairs.mean(axis=0)) / sd

    n = len(pairs)
    # Silverman for d=2 reduces to sigma * n^(-1/6); coordinates have
    # unit variance after standardization
    h = float(n) ** (-1.0 / 6.0)
    axis = np.linspace(-span, span, points)
    k1 = np.exp(-0.5 * ((axis[:, None] - pairs[None, :, 0]) / h) ** 2)
    k2 = np.exp(-0.5 * ((axis[:, None] - pairs[None, :, 1]) / h) ** 2)
    density = (k1 @ k2.T) / (n * 2.0 * math.pi * h * h)
    return ContourGrid(axis=axis, density=density)


# ---------------------------------------------------------------------------
# convergence


def _autocovariance(x):
    n = len(x)
    x = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, size)
    acov = np.fft.irfft(f * np.conjugate(f), size)[:n].real
    return acov / n


def rhat_ess(chains):
    """Split-R-hat and autocorrelation effective sample size.

    chains is (n_chains, n_draws); both statistics are computed on the
    half-split chains.  Identical constant chains report R-hat 1;
    distinct constant chains report infinity.
    """
    x = np.asarray(chains, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise DomainError("chains must be (n_chains, n_draws) with at least 2 chains")
    if x.shape[1] < 4:
        raise DomainError("need at least 4 draws per chain to split")
    if not np.all(np.isfinite(x)):
        raise DomainError("chains must be finite")
    half = x.shape[1] // 2
    split = np.vstack([x[:, :half], x[:, x.shape[1] - half :]])
    m, n = split.shape

    means = split.mean(axis=1)
    variances = split.var(axis=1, ddof=1)
    w = float(variances.mean())
    b = n * float(np.var(means, ddof=1))
    var_plus = (n - 1) / n * w + b / n
    if w == 0.0:
        rhat = 1.0 if b == 0.0 else math.inf
    else:
        rhat = math.sqrt(var_plus / w)

    if var_plus == 0.0:
        return rhat, float(m * n)
    acov = np.vstack([_autocovariance(row) for row in split])
    rho = 1.0 - (w - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    # Geyer initial monotone positive sequence on paired sums
    tau = 0.0
    prev = math.inf
    for k in range(0, n - 1, 2):
        pair = rho[k] + (rho[k + 1] if k + 1 < n else 0.0)
        if pair < 0.0:
            break
        pair = min(pair, prev)
        prev = pair
        tau += pair
    tau = max(2.0 * tau - 1.0, 1.0 / m)
    return rhat, float(m * n / tau)
