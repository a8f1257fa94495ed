"""Marginal regression tests: design geometry, GCV fitting, standardization."""

import math
from datetime import datetime, timedelta

import numpy as np
import pytest
from scipy.stats import kstest

from copssm.errors import DomainError
from copssm.marginal import (
    LAMBDA_GRID,
    MIN_ROWS,
    SPLINE_DEGREE,
    HourlyRecord,
    MarginalModel,
    build_design,
    fit,
    make_terms,
    predict_mean,
    split_usable,
    standardize,
)

_START = datetime(2014, 1, 1)


def make_records(n, rng, mean_fn=None, sigma=0.5, temp_span=(-10.0, 10.0), constant=None):
    """Synthetic month: covariates uniform, response lognormal around mean_fn."""
    winds = rng.choice(["NW", "NE", "SE", "CV"], size=n)
    temp = rng.uniform(*temp_span, n)
    records = []
    for i in range(n):
        fields = {
            "dewp": float(rng.uniform(-15.0, 5.0)),
            "temp": float(temp[i]),
            "pres": float(rng.uniform(1000.0, 1040.0)),
            "iws": float(rng.uniform(0.0, 100.0)),
            "prec": float(max(0.0, rng.normal(-1.0, 1.0))),
        }
        if constant:
            fields.update(constant)
        mu = 4.0 if mean_fn is None else mean_fn(fields)
        y = float(np.exp(mu + sigma * rng.standard_normal()))
        records.append(
            HourlyRecord(
                timestamp=_START + timedelta(hours=i),
                pm25=y,
                cbwd=str(winds[i]),
                **fields,
            )
        )
    return records


def record_at(ts=_START, pm25=10.0, **overrides):
    fields = dict(dewp=0.0, temp=5.0, pres=1010.0, cbwd="NW", iws=3.0, prec=0.0)
    fields.update(overrides)
    return HourlyRecord(timestamp=ts, pm25=pm25, **fields)


# ---------------------------------------------------------------------------
# records


def test_record_validation_and_derived_fields():
    r = record_at(ts=datetime(2014, 1, 6, 13))  # a Monday
    assert r.hour == 13
    assert r.weekday == 1
    assert r.prec_ind == 0.0
    assert record_at(prec=0.3).prec_ind == 1.0
    with pytest.raises(DomainError, match="wind"):
        record_at(cbwd="N")
    with pytest.raises(DomainError, match="temp"):
        record_at(temp=float("nan"))
    with pytest.raises(DomainError, match="timestamp"):
        HourlyRecord("2014-01-01", 10.0, 0.0, 5.0, 1010.0, "NW", 3.0, 0.0)


def test_response_availability():
    assert record_at(pm25=12.0).has_response
    for bad in (None, 0.0, -3.0, float("nan")):
        assert not record_at(pm25=bad).has_response
    usable, dropped = split_usable([record_at(), record_at(pm25=None), record_at(pm25=-1.0)])
    assert len(usable) == 1 and len(dropped) == 2


# ---------------------------------------------------------------------------
# design


def test_wind_replicas_are_mutually_exclusive():
    rng = np.random.default_rng(0)
    records = make_records(60, rng)
    x, terms = build_design(records)
    start = x.shape[1] - sum(t.ncol for t in terms)
    for term in terms:
        sl = slice(start, start + term.ncol)
        start += term.ncol
        if term.wind is None:
            continue
        off_rows = [i for i, r in enumerate(records) if r.cbwd != term.wind]
        assert np.all(x[off_rows, sl] == 0.0)
        on_rows = [i for i, r in enumerate(records) if r.cbwd == term.wind]
        assert np.any(x[on_rows, sl] != 0.0)


def test_column_count_formula():
    rng = np.random.default_rng(1)
    # distinct covariate values so no quantile knots collapse
    records = [
        record_at(
            ts=_START + timedelta(hours=i),
            dewp=float(i),
            temp=float(2 * i + 0.5),
            pres=1000.0 + 1.3 * i,
            iws=float(i**1.1),
            prec=float(i) / 10.0 + 0.01,
            cbwd=str(rng.choice(["NW", "NE", "SE", "CV"])),
        )
        for i in range(10)
    ]
    x, terms = build_design(records, n_interior=6)
    per_block = 6 + SPLINE_DEGREE + 1
    expected = (1 + 6 + 1) + 16 * per_block + per_block + 8
    assert x.shape == (10, expected)
    assert sum(t.ncol for t in terms) == expected - 8


def test_constant_covariate_still_fits():
    rng = np.random.default_rng(2)
    records = make_records(200, rng, constant={"dewp": 3.0})
    x, terms = build_design(records)
    assert all(t.ncol == 0 for t in terms if t.covariate == "dewp")
    model = fit(records, "const-dewp")
    assert model.sigma_hat > 0.0


def test_unknown_wind_rejected_before_design():
    with pytest.raises(DomainError):
        record_at(cbwd="EW")


# ---------------------------------------------------------------------------
# fitting


def test_noise_fit_flattens_and_recovers_sigma():
    rng = np.random.default_rng(3)
    records = make_records(2000, rng, sigma=1.0)
    model = fit(records, "noise")
    assert 0.9 <= model.sigma_hat <= 1.1
    # GCV drives the smooths toward zero effective df on pure noise
    assert float(model.edf_by_term.sum()) < 15.0
    fitted = predict_mean(model, records)
    assert float(np.std(fitted)) < 0.25


def test_known_smooth_of_temp_recovered():
    rng = np.random.default_rng(4)
    truth = lambda f: 4.0 + np.sin(f["temp"] / 3.0)
    records = make_records(2000, rng, mean_fn=truth, sigma=0.3)
    model = fit(records, "smooth")
    grid = np.linspace(-8.0, 8.0, 33)  # interior of the training span
    probes = [record_at(temp=float(t)) for t in grid]
    fhat = predict_mean(model, probes)
    want = 4.0 + np.sin(grid / 3.0)
    # compare shapes: the level is shared with the intercept block
    assert np.max(np.abs((fhat - fhat.mean()) - (want - want.mean()))) < 0.15


def test_minimum_rows_enforced():
    rng = np.random.default_rng(5)
    records = make_records(MIN_ROWS - 1, rng)
    with pytest.raises(DomainError, match="at least"):
        fit(records, "short")
    # rows without response do not count
    records = make_records(MIN_ROWS + 5, rng)
    gutted = records[:6]
    for r in records[6:]:
        gutted.append(HourlyRecord(r.timestamp, None, r.dewp, r.temp, r.pres, r.cbwd, r.iws, r.prec))
    with pytest.raises(DomainError, match="at least"):
        fit(gutted, "mostly-missing")


def test_lambda_is_grid_member_and_refit_reproducible():
    rng = np.random.default_rng(6)
    records = make_records(300, rng)
    model = fit(records, "repro")
    assert float(model.lambdas[0]) in [float(l) for l in LAMBDA_GRID]
    assert np.all(model.lambdas == model.lambdas[0])
    again = fit(records, "repro")
    assert np.array_equal(model.coef, again.coef)
    assert model.sigma_hat == again.sigma_hat
    # description round trip preserves predictions bit for bit
    clone = MarginalModel.from_dict(model.to_dict())
    probes = make_records(40, np.random.default_rng(7))
    assert np.array_equal(predict_mean(model, probes), predict_mean(clone, probes))


def test_temp_shift_touches_only_matching_wind_block():
    rng = np.random.default_rng(8)
    records = make_records(120, rng)
    terms = make_terms(records)
    base = record_at(temp=2.0, cbwd="SE")
    bumped = record_at(temp=3.0, cbwd="SE")
    xa, _ = build_design([base], terms=terms)
    xb, _ = build_design([bumped], terms=terms)
    changed = np.flatnonzero(xa[0] != xb[0])
    start = xa.shape[1] - sum(t.ncol for t in terms)
    owners = set()
    for term in terms:
        sl = range(start, start + term.ncol)
        start += term.ncol
        if any(c in sl for c in changed):
            owners.add(term.label)
    assert owners == {"s(temp):SE"}


# ---------------------------------------------------------------------------
# standardization


def test_standardize_pins_zero_and_one_sigma():
    rng = np.random.default_rng(9)
    records = make_records(200, rng)
    model = fit(records, "std")
    fhat = predict_mean(model, records)
    exact = [
        HourlyRecord(r.timestamp, float(np.exp(f)), r.dewp, r.temp, r.pres, r.cbwd, r.iws, r.prec)
        for r, f in zip(records, fhat)
    ]
    ps = standardize(model, exact)
    assert np.max(np.abs(ps.z_hat)) < 1e-10
    assert np.max(np.abs(ps.u_hat - 0.5)) < 1e-10
    shifted = [
        HourlyRecord(r.timestamp, float(np.exp(f + model.sigma_hat)), r.dewp, r.temp, r.pres, r.cbwd, r.iws, r.prec)
        for r, f in zip(records, fhat)
    ]
    ps = standardize(model, shifted)
    assert np.allclose(ps.z_hat, 1.0, atol=1e-10)
    assert np.allclose(ps.u_hat, 0.8413447460685429, atol=1e-9)


def test_standardize_round_trip_and_drop_report(caplog):
    rng = np.random.default_rng(10)
    records = make_records(300, rng)
    model = fit(records, "trip")
    records[5] = HourlyRecord(
        records[5].timestamp, None, 0.0, 1.0, 1010.0, "NW", 2.0, 0.0
    )
    with caplog.at_level("WARNING", logger="copssm.marginal"):
        ps = standardize(model, records)
    assert len(ps) == 299
    assert any("dropped 1" in m for m in caplog.messages)
    kept = [r for r in records if r.has_response]
    y = np.log(np.array([r.pm25 for r in kept]))
    back = predict_mean(model, kept) + model.sigma_hat * ps.z_hat
    assert np.max(np.abs(back - y)) < 1e-10


def test_self_generated_scores_look_standard_normal():
    rng = np.random.default_rng(11)
    records = make_records(744, rng)
    model = fit(records, "ks")
    fhat = predict_mean(model, records)
    eps = rng.standard_normal(len(records))
    fresh = [
        HourlyRecord(r.timestamp, float(np.exp(f + model.sigma_hat * e)), r.dewp, r.temp, r.pres, r.cbwd, r.iws, r.prec)
        for r, f, e in zip(records, fhat, eps)
    ]
    ps = standardize(model, fresh)
    stat = kstest(ps.z_hat, "norm").statistic
    assert stat < 1.36 / math.sqrt(len(ps))
