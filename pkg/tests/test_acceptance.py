"""End-to-end acceptance gate, one test per shipped guarantee.

Each test prints a single ``[criterion N] PASS/FAIL: detail`` line on the
live terminal (capture is bypassed) so a plain ``pytest -v`` log shows the
verdicts.  Hard runtime limits are asserted where the guarantee includes
one; the long statistical checks report elapsed time in the detail line
instead of asserting it.

Criteria 5 and 6 rerun the full sampler ten times each and dominate the
module's runtime (roughly ten minutes on one core).  Criterion 8 needs the
hourly PM2.5 csv and is skipped when the file is absent; its path defaults
to data/PRSA_data_2010.1.1-2014.12.31.csv under the repository root and
can be overridden with the COPSSM_UCI_CSV environment variable.
"""

import math
import os
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.stats import kstest

from copssm import copulas as cop
from copssm.cli import ingest, monthly_windows
from copssm.copulas import CopulaSpec
from copssm.inference import credible_interval, select_model, waic
from copssm.marginal import fit as fit_marginal
from copssm.marginal import standardize
from copssm.model import ModelConfig, PosteriorTarget, PseudoSeries, simulate_series, tau_obs_from_tau_lat
from copssm.predict import out_of_sample
from copssm.sampler import PhasePoint, PosteriorDraws, SamplerConfig, leapfrog, run, sample
from oracles import central_diff, copula_cdf

ALL_CONFIGS = [
    ModelConfig(cop.INDEPENDENCE, cop.INDEPENDENCE, c=1.0),
    ModelConfig(cop.GAUSSIAN, cop.GAUSSIAN, c=1.0),
    ModelConfig(cop.student_t(3), cop.student_t(3), c=3.0),
    ModelConfig(cop.student_t(6), cop.student_t(6), c=1.0),
    ModelConfig(cop.GUMBEL, cop.GUMBEL, c=1.0),
    ModelConfig(cop.CLAYTON, cop.CLAYTON, c=6.0),
    ModelConfig(cop.FRANK, cop.FRANK, c=10.0),
]

DEPENDENT_FAMILIES = [
    cop.GAUSSIAN,
    cop.student_t(3),
    cop.student_t(6),
    cop.GUMBEL,
    cop.CLAYTON,
    cop.FRANK,
]

_CAPSYS = None


@pytest.fixture(autouse=True)
def _live_terminal(capsys):
    global _CAPSYS
    _CAPSYS = capsys
    yield
    _CAPSYS = None


def _report(criterion, ok, detail):
    line = f"[criterion {criterion}] {'PASS' if ok else 'FAIL'}: {detail}"
    if _CAPSYS is not None:
        with _CAPSYS.disabled():
            print(line, flush=True)
    else:
        print(line, flush=True)
    assert ok, line


class MvnTarget:
    """Zero-mean multivariate normal test target."""

    def __init__(self, cov):
        cov = np.atleast_2d(np.asarray(cov, dtype=float))
        self.prec = np.linalg.inv(cov)
        self.dim = cov.shape[0]

    def value_and_grad(self, q):
        pq = self.prec @ q
        return -0.5 * float(q @ pq), -pq


def _synthetic_draws(model, tau_lat, latent):
    """One-chain posterior container with prescribed tau and latent states."""
    r, t = latent.shape
    tl = np.full((1, r), tau_lat)
    return PosteriorDraws(
        tau_lat=tl,
        tau_obs=tau_obs_from_tau_lat(tl, model.c),
        latent=latent[None],
        loglik=np.ones((1, r, t)),
        divergent=np.zeros((1, r), dtype=bool),
        accept_stat=np.full((1, r), 0.9),
        flagged_chains=np.zeros(1, dtype=bool),
        model=model,
        sampler=SamplerConfig(),
        step_size=np.array([0.5]),
    )


def test_criterion_1_gaussian_equivalence():
    # both equations Gaussian at c=1 collapse to a linear Gaussian state
    # space model whose observed score has lag-1 autocorrelation
    # rho_obs^2 * rho_lat = 0.8^2 * 0.8 = 0.512
    t0 = time.perf_counter()
    rho = 0.8
    tau = 2.0 / math.pi * math.asin(rho)
    config = ModelConfig(cop.GAUSSIAN, cop.GAUSSIAN, c=1.0)
    series = simulate_series(config, tau, 100_000, np.random.default_rng(1))
    z = series.z_hat
    corr = float(np.corrcoef(z[1:], z[:-1])[0, 1])
    elapsed = time.perf_counter() - t0
    ok = abs(corr - 0.512) <= 0.01 and elapsed < 10.0
    _report(1, ok, f"lag-1 corr(Z) = {corr:.4f}, target 0.512 +/- 0.01, {elapsed:.1f}s (< 10s)")


def test_criterion_2_gradient_matches_finite_differences():
    t0 = time.perf_counter()
    t_len = 5
    worst = 0.0
    for config in ALL_CONFIGS:
        data = PseudoSeries.from_u(np.random.default_rng(7).uniform(0.02, 0.98, size=t_len))
        target = PosteriorTarget(data, config)
        rng = np.random.default_rng(8)
        for _ in range(20):
            q = rng.uniform(-1.8, 1.8, size=t_len + 1)
            value, grad = target.value_and_grad(q)
            assert math.isfinite(value), config.label()
            h = 1e-5
            for i in range(t_len + 1):
                e = np.zeros(t_len + 1)
                e[i] = h
                fd = (target.value(q + e) - target.value(q - e)) / (2 * h)
                worst = max(worst, abs(grad[i] - fd) / max(1.0, abs(fd)))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-5 and elapsed < 5.0
    _report(2, ok, f"max relative gradient error {worst:.2e} (< 1e-5) over all families, {elapsed:.1f}s (< 5s)")


def test_criterion_3_copula_numerics():
    t0 = time.perf_counter()
    worst_round, worst_tau, worst_h, worst_mass = 0.0, 0.0, 0.0, 0.0

    for family in DEPENDENT_FAMILIES:
        # tau <-> theta round trips
        for tau in (0.05, 0.2, 0.5, 0.8, 0.9):
            theta = cop.tau_to_theta(family, tau)
            worst_tau = max(worst_tau, abs(cop.theta_to_tau(family, theta) - tau))

        # h_inverse undoes h_function across the unit square
        for lo, hi, tau in ((0.05, 0.95, 0.3), (0.05, 0.95, 0.5), (0.1, 0.9, 0.7)):
            spec = CopulaSpec.from_tau(family, tau)
            grid = np.linspace(lo, hi, 10)
            uu, vv = np.meshgrid(grid, grid)
            back = cop.h_inverse(spec, cop.h_function(spec, uu, vv), vv)
            worst_round = max(worst_round, float(np.max(np.abs(back - uu))))

        for tau in (0.3, 0.7):
            spec = CopulaSpec.from_tau(family, tau)

            # h_function against a numeric partial of the oracle CDF; the
            # student t CDF needs double quadrature, so fewer points there
            pts = [(0.3, 0.55), (0.7, 0.25)]
            if family.name != "student_t":
                pts += [(0.15, 0.85), (0.5, 0.5)]
            for u, v in pts:
                want = central_diff(
                    lambda vv: copula_cdf(family.name, spec.theta, family.df, u, vv), v, 1e-5
                )
                worst_h = max(worst_h, abs(cop.h_function(spec, u, v) - want))

            # conditional density integrates to one in u
            for v in (0.2, 0.7):
                val, _ = quad(
                    lambda u: math.exp(cop.log_density(spec, u, v)),
                    1e-10,
                    1.0 - 1e-10,
                    epsabs=1e-9,
                    epsrel=1e-9,
                    limit=200,
                )
                worst_mass = max(worst_mass, abs(val - 1.0))

    elapsed = time.perf_counter() - t0
    ok = (
        worst_round < 1e-8
        and worst_tau < 1e-8
        and worst_h < 1e-6
        and worst_mass < 1e-4
        and elapsed < 30.0
    )
    _report(
        3,
        ok,
        f"h round trip {worst_round:.1e} (< 1e-8), tau<->theta {worst_tau:.1e} (< 1e-8), "
        f"h vs dC/dv {worst_h:.1e} (< 1e-6), density mass {worst_mass:.1e} (< 1e-4), "
        f"{elapsed:.1f}s (< 30s)",
    )


def test_criterion_4_sampler_validity():
    t0 = time.perf_counter()
    target = MvnTarget(np.eye(10))

    raw = sample(target, SamplerConfig(n_chains=2, n_iter=5500, n_burnin=500, seed=11))
    pooled = raw.draws.reshape(-1, 10)
    assert pooled.shape == (10_000, 10)
    mean_err = float(np.max(np.abs(pooled.mean(axis=0))))
    var_err = float(np.max(np.abs(pooled.var(axis=0) - 1.0)))

    # leapfrog runs backward to the start after a momentum flip
    state = PhasePoint.at(target, np.full(10, 0.7), np.linspace(-1.0, 1.0, 10))
    fwd, ok_f = leapfrog(state, 0.05, 100, np.ones(10), target)
    back, ok_b = leapfrog(PhasePoint(fwd.q, -fwd.p, fwd.logp, fwd.grad), 0.05, 100, np.ones(10), target)
    rev_err = max(float(np.max(np.abs(back.q - state.q))), float(np.max(np.abs(-back.p - state.p))))

    # halving the step size quarters the energy error (second order)
    def energy_err(eps, n):
        end, ok = leapfrog(state, eps, n, np.ones(10), target)
        assert ok
        h0 = -state.logp + 0.5 * float(state.p @ state.p)
        h1 = -end.logp + 0.5 * float(end.p @ end.p)
        return abs(h1 - h0)

    ratio = energy_err(0.01, 100) / energy_err(0.005, 200)

    elapsed = time.perf_counter() - t0
    ok = (
        ok_f
        and ok_b
        and mean_err <= 0.05
        and var_err <= 0.1
        and rev_err < 1e-10
        and 3.5 <= ratio <= 4.5
        and elapsed < 60.0
    )
    _report(
        4,
        ok,
        f"10-d normal: max |mean| {mean_err:.3f} (<= 0.05), max |var-1| {var_err:.3f} (<= 0.1), "
        f"reversibility {rev_err:.1e} (< 1e-10), energy ratio {ratio:.2f} (in [3.5, 4.5]), "
        f"{elapsed:.1f}s (< 60s)",
    )


def test_criterion_5_parameter_recovery():
    t0 = time.perf_counter()
    truth = 0.7
    config = ModelConfig(cop.GAUSSIAN, cop.GAUSSIAN, c=1.0)
    hits = 0
    means = []
    for rep in range(10):
        data = simulate_series(config, truth, 500, np.random.default_rng(100 + rep))
        draws = run(data, config, SamplerConfig(seed=rep))
        pooled = draws.pooled_tau_lat()
        mean = float(pooled.mean())
        lo, hi = credible_interval(pooled, 0.90)
        means.append(mean)
        if abs(mean - truth) <= 0.1 and lo <= truth <= hi:
            hits += 1
    elapsed = time.perf_counter() - t0
    ok = hits >= 7
    _report(
        5,
        ok,
        f"{hits}/10 replications (need >= 7) recovered tau_lat = 0.7; posterior means "
        f"{min(means):.3f}..{max(means):.3f}; {elapsed:.0f}s",
    )


def test_criterion_6_waic_zero_and_ordering():
    # the independence likelihood matrix is identically one on the density
    # scale, so its criterion is exactly zero regardless of the data
    for shape in ((2, 5), (40, 7), (3, 1)):
        assert waic(np.ones(shape)) == 0.0

    t0 = time.perf_counter()
    # smoothing exponent 6: at c = 1 the two elliptical fits are so close in
    # the bulk that the heavier-tailed model's larger variance penalty can
    # outweigh its fit advantage (the states-known expected log density gap
    # is 0.077 per observation against a penalty gap near 0.15); weakening
    # the observation coupling keeps the tail signature while shrinking the
    # penalty, so the true family separates reliably
    t3 = ModelConfig(cop.student_t(3), cop.student_t(3), c=6.0)
    gauss = ModelConfig(cop.GAUSSIAN, cop.GAUSSIAN, c=6.0)
    wins = 0
    orderings = []
    for rep in range(10):
        data = simulate_series(t3, 0.7, 500, np.random.default_rng(200 + rep))
        w_t3 = waic(run(data, t3, SamplerConfig(seed=rep)).pooled_loglik())
        w_gauss = waic(run(data, gauss, SamplerConfig(seed=rep)).pooled_loglik())
        orderings.append((w_t3, w_gauss))
        if w_t3 < w_gauss < 0.0:
            wins += 1
    elapsed = time.perf_counter() - t0
    ok = wins >= 8
    worst = max(orderings, key=lambda p: p[0] - p[1])
    _report(
        6,
        ok,
        f"t(3) < gaussian < ind ordering in {wins}/10 replications (need >= 8); "
        f"smallest margin pair ({worst[0]:.1f}, {worst[1]:.1f}); {elapsed:.0f}s",
    )


def test_criterion_7_predictive_dispersion():
    t0 = time.perf_counter()
    config = ModelConfig(cop.GAUSSIAN, cop.GAUSSIAN, c=1.0)
    data = simulate_series(config, 0.6, 200, np.random.default_rng(42))
    draws = run(data, config, SamplerConfig(n_iter=1200, n_burnin=400, seed=3))
    var1 = float(np.var(out_of_sample(draws, config, 1, np.random.default_rng(50)).eps))
    var48 = float(np.var(out_of_sample(draws, config, 48, np.random.default_rng(51)).eps))

    # under independence every horizon draw is exactly uniform; the stored
    # tau and latent constants are never read by its predictive
    ind = ModelConfig(cop.INDEPENDENCE, cop.INDEPENDENCE, c=1.0)
    ind_draws = _synthetic_draws(ind, 0.5, np.full((4000, 6), 0.5))
    pvals = []
    for steps, seed in ((1, 60), (24, 61), (48, 62)):
        u = out_of_sample(ind_draws, ind, steps, np.random.default_rng(seed)).u
        pvals.append(float(kstest(u, "uniform").pvalue))

    elapsed = time.perf_counter() - t0
    ok = var48 >= var1 and all(p > 0.05 for p in pvals) and elapsed < 60.0
    _report(
        7,
        ok,
        f"eps variance horizon 48 {var48:.3f} >= horizon 1 {var1:.3f}; independence KS "
        f"p-values {', '.join(f'{p:.2f}' for p in pvals)} (all > 0.05); {elapsed:.1f}s (< 60s)",
    )


def _uci_path():
    env = os.environ.get("COPSSM_UCI_CSV")
    if env:
        return Path(env)
    return Path(__file__).resolve().parents[1] / "data" / "PRSA_data_2010.1.1-2014.12.31.csv"


UCI_CSV = _uci_path()


@pytest.mark.skipif(not UCI_CSV.exists(), reason=f"hourly PM2.5 csv not found at {UCI_CSV}")
def test_criterion_8_real_data_smoke():
    t0 = time.perf_counter()
    records, report = ingest(UCI_CSV, 2014, "ir")
    windows = monthly_windows(records)
    assert sorted(windows) == list(range(1, 13)), "expected 12 monthly windows"

    ind = ModelConfig(cop.INDEPENDENCE, cop.INDEPENDENCE, c=1.0)
    gauss = ModelConfig(cop.GAUSSIAN, cop.GAUSSIAN, c=1.0)
    picks = {}
    jan = None
    for month in range(1, 13):
        marginal = fit_marginal(windows[month], month=month)
        series = standardize(marginal, windows[month])
        w_gauss = waic(run(series, gauss, SamplerConfig(seed=month)).pooled_loglik())
        picks[month] = select_model([(gauss, w_gauss), (ind, 0.0)]).label()
        if month == 1:
            gum = ModelConfig(cop.GUMBEL, cop.GUMBEL, c=1.0)
            pooled = run(series, gum, SamplerConfig(seed=100)).pooled_tau_lat()
            jan = (float(pooled.mean()),) + credible_interval(pooled, 0.90)

    elapsed = time.perf_counter() - t0
    never_ind = all(label != "ind" for label in picks.values())
    concentrated = 0.4 < jan[1] and jan[2] < 0.95
    ok = never_ind and concentrated
    _report(
        8,
        ok,
        f"12 monthly windows; january tau_lat mean {jan[0]:.3f}, 90% interval "
        f"({jan[1]:.3f}, {jan[2]:.3f}) inside (0.4, 0.95); selection picked independence "
        f"{sum(label == 'ind' for label in picks.values())} times (need 0); {elapsed:.0f}s",
    )
