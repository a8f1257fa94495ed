"""End-to-end driver tests: ingestion, pipeline artifacts, persistence."""

import hashlib
import json
import math
from pathlib import Path

import numpy as np
import pytest

from copssm.cli import (
    RunManifest,
    fit_pipeline,
    ingest,
    main,
    monthly_windows,
    parse_edit,
    read_draws_csv,
    read_series_csv,
    write_draws_csv,
)
from copssm.copulas import GAUSSIAN, INDEPENDENCE
from copssm.errors import DomainError, SchemaError
from copssm.model import ModelConfig, tau_obs_from_tau_lat
from copssm.predict import out_of_sample
from copssm.sampler import PosteriorDraws, SamplerConfig

HEADER = "No,year,month,day,hour,pm2.5,DEWP,TEMP,PRES,cbwd,Iws,Is,Ir"


def _write_small_csv(path):
    rows = [
        HEADER,
        "1,2014,1,1,0,120.0,-5,2.0,1020,NW,10.5,0,0",
        "2,2014,1,1,1,NA,-6,1.5,1021,cv,11.0,0,2",
        "3,2014,1,1,2,95.2,-6,1.0,1021,SE,3.0,0,0",
        "4,2013,12,31,23,80.0,-4,3.0,1019,NE,5.0,0,0",
        "5,2014,1,1,junk,80.0,-4,x,1019,NE,5.0,0,0",
        "6,2014,1,1,3,88.8,-5,0.5,1022,NE,4.0,0,1",
    ]
    path.write_text("\n".join(rows) + "\n")


def _write_month_csv(path, rng, n_days=8, phi=0.9):
    """One January of hourly rows whose log response carries AR(1) noise."""
    lines = [HEADER]
    z = 0.0
    no = 1
    for day in range(1, n_days + 1):
        for hour in range(24):
            z = phi * z + math.sqrt(1 - phi * phi) * rng.standard_normal()
            temp = 5.0 * math.sin(2 * math.pi * hour / 24) + rng.normal(0, 2)
            pm = math.exp(4.0 - 0.06 * temp + 0.5 * z)
            pm_txt = "NA" if rng.uniform() < 0.03 else f"{pm:.2f}"
            cb = rng.choice(["NW", "NE", "SE", "cv"])
            lines.append(
                f"{no},2014,1,{day},{hour},{pm_txt},{rng.uniform(-15, 5):.1f},"
                f"{temp:.1f},{rng.uniform(1000, 1040):.1f},{cb},"
                f"{rng.uniform(0, 60):.2f},0,{max(0.0, rng.normal(-1, 1)):.1f}"
            )
            no += 1
    path.write_text("\n".join(lines) + "\n")


def _tree_digest(root, skip=()):
    digest = {}
    for path in sorted(Path(root).rglob("*")):
        if path.is_file() and path.name not in skip:
            digest[str(path.relative_to(root))] = hashlib.sha256(path.read_bytes()).hexdigest()
    return digest


# ---------------------------------------------------------------------------
# ingestion


def test_ingest_small_file(tmp_path):
    csv_path = tmp_path / "small.csv"
    _write_small_csv(csv_path)
    records, report = ingest(csv_path, year=2014)
    assert report["records"] == 4
    assert report["missing_pm25"] == 1
    assert report["filtered_other_years"] == 1
    assert report["skipped_lines"] == [6]
    assert records[1].pm25 is None and not records[1].has_response
    assert records[1].cbwd == "CV"
    assert monthly_windows(records) == {1: records}


def test_ingest_schema_error_lists_columns(tmp_path):
    csv_path = tmp_path / "bad.csv"
    csv_path.write_text("No,year,month,day,hour,pm2.5,DEWP,PRES,cbwd,Iws,Is,Ir\n")
    with pytest.raises(SchemaError, match="temp"):
        ingest(csv_path)
    with pytest.raises(SchemaError, match="empty"):
        csv_path.write_text("")
        ingest(csv_path)


def test_ingest_prec_column_mapping(tmp_path):
    csv_path = tmp_path / "small.csv"
    _write_small_csv(csv_path)
    by_ir, _ = ingest(csv_path, prec_column="ir")
    by_is, _ = ingest(csv_path, prec_column="is")
    assert by_ir[1].prec == 2.0
    assert by_is[1].prec == 0.0


# ---------------------------------------------------------------------------
# manifest


def test_manifest_validation_and_grid():
    sampler = SamplerConfig()
    m = RunManifest(data="d.csv", out="o", months=(1, 2), families=("gaussian", "ind"),
                    c_values=(1.0, 3.0), sampler=sampler, seed=0)
    labels = [c.label() for c in m.grid()]
    assert labels == ["gaussian-c1", "gaussian-c3", "ind"]
    assert RunManifest.from_dict(m.to_dict()) == m
    with pytest.raises(DomainError, match="non-empty"):
        RunManifest(data="d", out="o", months=(1,), families=(),
                    c_values=(1.0,), sampler=sampler, seed=0)
    with pytest.raises(DomainError, match=">= 1"):
        RunManifest(data="d", out="o", months=(1,), families=("gaussian",),
                    c_values=(0.5,), sampler=sampler, seed=0)
    with pytest.raises(DomainError, match="months"):
        RunManifest(data="d", out="o", months=(13,), families=("gaussian",),
                    c_values=(1.0,), sampler=sampler, seed=0)


def test_parse_edit_grammar():
    assert parse_edit("temp-4") == ("temp", ("shift", -4.0))
    assert parse_edit("iws+2.5") == ("iws", ("shift", 2.5))
    assert parse_edit("cbwd=ne") == ("cbwd", ("set", "NE"))
    assert parse_edit("prec=0") == ("prec", ("set", 0.0))
    with pytest.raises(DomainError, match="edit"):
        parse_edit("temp")


# ---------------------------------------------------------------------------
# draws persistence


def _tiny_draws():
    rng = np.random.default_rng(0)
    model = ModelConfig(GAUSSIAN, GAUSSIAN, c=1.0)
    tau_lat = rng.uniform(0.4, 0.8, size=(2, 30))
    return PosteriorDraws(
        tau_lat=tau_lat,
        tau_obs=tau_obs_from_tau_lat(tau_lat, 1.0),
        latent=rng.uniform(0.05, 0.95, size=(2, 30, 7)),
        loglik=rng.uniform(0.2, 3.0, size=(2, 30, 7)),
        divergent=rng.uniform(size=(2, 30)) < 0.1,
        accept_stat=rng.uniform(0.7, 1.0, size=(2, 30)),
        flagged_chains=np.array([False, True]),
        model=model,
        sampler=SamplerConfig(n_chains=2, n_iter=40, n_burnin=10),
        step_size=np.array([0.3, 0.4]),
    )


def test_draws_round_trip_is_bit_exact(tmp_path):
    draws = _tiny_draws()
    path = tmp_path / "draws.csv"
    write_draws_csv(path, draws)
    back = read_draws_csv(path, draws.model, draws.sampler,
                          draws.step_size, draws.flagged_chains)
    for name in ("tau_lat", "tau_obs", "latent", "loglik", "accept_stat"):
        assert np.array_equal(getattr(back, name), getattr(draws, name)), name
    assert np.array_equal(back.divergent, draws.divergent)
    # reloaded draws feed predictions identically
    model = draws.model
    a = out_of_sample(draws, model, 3, np.random.default_rng(9))
    b = out_of_sample(back, model, 3, np.random.default_rng(9))
    assert np.array_equal(a.u, b.u)


# ---------------------------------------------------------------------------
# pipeline


@pytest.fixture(scope="module")
def month_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "jan.csv"
    _write_month_csv(path, np.random.default_rng(42))
    return path


@pytest.fixture(scope="module")
def fitted(tmp_path_factory, month_csv):
    out = tmp_path_factory.mktemp("fitted")
    manifest = RunManifest(
        data=str(month_csv), out=str(out), months=(1,),
        families=("gaussian", "ind"), c_values=(1.0,),
        sampler=SamplerConfig(n_chains=2, n_iter=400, n_burnin=150, seed=0),
        seed=0,
    )
    code = fit_pipeline(manifest)
    assert code == 0
    return out


def test_fit_artifacts_and_waic_table(fitted):
    mdir = fitted / "month_01"
    for name in ("marginal.json", "series.csv", "records.csv",
                 "waic.json", "selection.json"):
        assert (mdir / name).exists(), name
    table = json.loads((mdir / "waic.json").read_text())
    ind_rows = [r for r in table["rows"] if r["label"] == "ind"]
    assert len(ind_rows) == 1 and ind_rows[0]["waic"] == 0.0
    values = [r["waic"] for r in table["rows"]]
    assert values == sorted(values)
    selection = json.loads((mdir / "selection.json").read_text())
    assert selection["waic"] == min(values)
    # the data carries real serial dependence: the copula model must win
    assert selection["label"] == "gaussian-c1"


def test_fit_is_deterministic(month_csv, tmp_path):
    outs = []
    for sub in ("a", "b"):
        out = tmp_path / sub
        manifest = RunManifest(
            data=str(month_csv), out=str(out), months=(1,),
            families=("gaussian", "ind"), c_values=(1.0,),
            sampler=SamplerConfig(n_chains=2, n_iter=200, n_burnin=80, seed=3),
            seed=3,
        )
        assert fit_pipeline(manifest) == 0
        # the manifest records its own output path, so hash everything else
        outs.append(_tree_digest(out, skip=("manifest.json",)))
    assert outs[0] == outs[1]


def test_ind_only_grid_reports_zero(month_csv, tmp_path):
    out = tmp_path / "ind_only"
    manifest = RunManifest(
        data=str(month_csv), out=str(out), months=(1,),
        families=("ind",), c_values=(1.0,),
        sampler=SamplerConfig(n_chains=2, n_iter=200, n_burnin=80, seed=0),
        seed=0,
    )
    assert fit_pipeline(manifest) == 0
    table = json.loads((out / "month_01" / "waic.json").read_text())
    assert [r["waic"] for r in table["rows"]] == [0.0]
    selection = json.loads((out / "month_01" / "selection.json").read_text())
    assert selection["label"] == "ind"


# ---------------------------------------------------------------------------
# prediction commands over persisted artifacts


def test_predict_single_step_file(fitted):
    code = main(["predict", "--out", str(fitted), "--month", "1",
                 "--steps", "1", "--seed", "11"])
    assert code == 0
    lines = (fitted / "month_01" / "predict_h1_gaussian-c1.csv").read_text().splitlines()
    assert lines[0] == "horizon,draw,u,eps,y,pm"
    assert len(lines) == 1 + 2 * 250
    assert all(line.split(",")[0] == "1" for line in lines[1:])


def test_predict_48_hours_bands_widen(fitted):
    code = main(["predict", "--out", str(fitted), "--month", "1",
                 "--steps", "48", "--seed", "7", "--name", "wide"])
    assert code == 0
    rows = json.loads((fitted / "month_01" / "wide_summary.json").read_text())["rows"]
    assert len(rows) == 48
    widths = [r["hi"] - r["lo"] for r in rows]
    # per-horizon widths are noisy; the trend must rise front to back
    assert np.mean(widths[-12:]) > np.mean(widths[:12])
    assert widths[-1] > widths[0]


def test_predict_response_scale(fitted):
    code = main(["predict", "--out", str(fitted), "--month", "1",
                 "--t", "5", "--seed", "2", "--response", "--name", "resp"])
    assert code == 0
    lines = (fitted / "month_01" / "resp.csv").read_text().splitlines()
    first = lines[1].split(",")
    assert first[4] != "" and first[5] != ""
    assert float(first[5]) == pytest.approx(math.exp(float(first[4])), rel=1e-12)
    summary = json.loads((fitted / "month_01" / "resp_summary.json").read_text())
    assert summary["rows"][0]["scale"] == "pm"


def test_predict_errors(fitted, tmp_path):
    assert main(["predict", "--out", str(tmp_path), "--month", "1",
                 "--steps", "1"]) == 4
    assert main(["predict", "--out", str(fitted), "--month", "1"]) == 2
    assert main(["predict", "--out", str(fitted), "--month", "1",
                 "--steps", "1", "--t", "1"]) == 2


def test_predict_from_independence_model(fitted):
    code = main(["predict", "--out", str(fitted), "--month", "1", "--model", "ind",
                 "--steps", "2", "--seed", "5", "--name", "indpred"])
    assert code == 0
    rows = json.loads((fitted / "month_01" / "indpred_summary.json").read_text())["rows"]
    # flat model: eps quantiles sit near the standard normal ones
    assert rows[0]["lo"] == pytest.approx(-1.645, abs=0.25)
    assert rows[0]["hi"] == pytest.approx(1.645, abs=0.25)


def test_scenario_zero_edit_matches_baseline(fitted):
    base = main(["scenario", "--out", str(fitted), "--month", "1",
                 "--seed", "4", "--name", "base"])
    zero = main(["scenario", "--out", str(fitted), "--month", "1",
                 "--seed", "4", "--name", "zero", "--edit", "temp+0"])
    assert base == 0 and zero == 0
    mdir = fitted / "month_01"
    assert (mdir / "base.csv").read_bytes() == (mdir / "zero.csv").read_bytes()
    b = json.loads((mdir / "base.json").read_text())
    z = json.loads((mdir / "zero.json").read_text())
    assert b["monthly_mean_of_modes"] == z["monthly_mean_of_modes"]
    assert z["edits"] == ["temp+0"]


def test_contour_command(fitted):
    assert main(["contour", "--out", str(fitted), "--month", "1"]) == 0
    lines = (fitted / "month_01" / "contour.csv").read_text().splitlines()
    assert lines[0] == "z1,z2,density"
    assert len(lines) == 1 + 101 * 101


def test_waic_recompute_and_select_round_trip(fitted):
    mdir = fitted / "month_01"
    before_w = (mdir / "waic.json").read_bytes()
    before_s = (mdir / "selection.json").read_bytes()
    assert main(["waic", "--out", str(fitted), "--month", "1", "--recompute"]) == 0
    assert main(["select", "--out", str(fitted), "--month", "1"]) == 0
    assert (mdir / "waic.json").read_bytes() == before_w
    assert (mdir / "selection.json").read_bytes() == before_s


def test_main_schema_exit_code(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("No,year\n")
    assert main(["ingest", "--data", str(bad)]) == 2
    assert main(["ingest", "--data", str(tmp_path / "nope.csv")]) == 4
