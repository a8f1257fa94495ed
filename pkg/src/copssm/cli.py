"""Command line driver: ingest, fit, model comparison, prediction, scenarios.

Subcommands
  ingest    validate a raw hourly CSV and report monthly coverage
  fit       per month: marginal fit, standardization, copula-model grid fit
  waic      rebuild the model-comparison table from persisted fits
  select    pick the best model per month from the comparison table
  predict   in-sample or recursive out-of-sample predictive draws
  scenario  concentration draws and summaries under edited covariates
  contour   lag-1 dependence grid of the standardized series

Artifacts are plain JSON (manifests, models, reports) and CSV (series,
draws, grids) with fixed column orders.  Floats are written with enough
digits to round-trip exactly, so commands running over reloaded artifacts
reproduce downstream numbers bit for bit.  Grid cells (month x family x c)
are independent jobs; COPSSM_WORKERS bounds the process pool that runs
them (default 1, sequential).

Exit codes: 0 success, 2 schema or domain error, 3 every sampler run of
some month failed, 4 a required artifact is missing.
"""

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from .copulas import CopulaFamily
from .errors import ArtifactError, CopssmError, DomainError, SamplerError, SchemaError
from .inference import credible_interval, kde_mode, lag1_contour, rhat_ess, select_model, waic
from .marginal import HourlyRecord, MarginalModel
from .marginal import fit as fit_marginal
from .marginal import standardize
from .model import ModelConfig, PseudoSeries
from .predict import edit_record, in_sample, last_same_hour, out_of_sample, scenario
from .sampler import PosteriorDraws, SamplerConfig, run

EXIT_OK = 0
EXIT_SCHEMA = 2
EXIT_SAMPLER = 3
EXIT_MISSING = 4

WORKERS_ENV = "COPSSM_WORKERS"

DEFAULT_FAMILIES = ("gaussian", "t3", "t6", "gumbel", "clayton", "frank", "ind")
DEFAULT_C_VALUES = (1.0, 3.0, 6.0, 10.0)
DEFAULT_YEAR = 2014

# raw-file schema, matched case-insensitively against the header
REQUIRED_COLUMNS = ("year", "month", "day", "hour", "pm2.5",
                    "dewp", "temp", "pres", "cbwd", "iws")
PREC_CHOICES = ("ir", "is")

_FLOAT_FMT = "%.17g"


def _fmt(x):
    return _FLOAT_FMT % float(x)


def _family_from_label(label):
    s = str(label).strip().lower()
    if s in ("ind", "independence"):
        return CopulaFamily("independence")
    return CopulaFamily.parse(s)


def _config_from_label(label, c=1.0):
    fam = _family_from_label(label)
    if fam.name == "independence":
        return ModelConfig(fam, fam)
    return ModelConfig(fam, fam, c=float(c))


# ---------------------------------------------------------------------------
# manifest


@dataclass(frozen=True)
class RunManifest:
    """Everything a fit run needs, persisted alongside its outputs."""

    data: str
    out: str
    months: tuple
    families: tuple
    c_values: tuple
    sampler: SamplerConfig
    seed: int
    year: int = DEFAULT_YEAR
    prec_column: str = "ir"

    def __post_init__(self):
        if not self.families or not self.c_values:
            raise DomainError("the model grid must be non-empty")
        for c in self.c_values:
            if not float(c) >= 1.0:
                raise DomainError(f"c values must be >= 1, got {c}")
        for m in self.months:
            if not 1 <= int(m) <= 12:
                raise DomainError(f"months must lie in 1..12, got {m}")
        for label in self.families:
            _family_from_label(label)
        if self.prec_column not in PREC_CHOICES:
            raise DomainError(f"prec_column must be one of {PREC_CHOICES}")

    def grid(self):
        """Model configurations: one per family x c, one total for ind."""
        configs = []
        for label in self.families:
            fam = _family_from_label(label)
            if fam.name == "independence":
                configs.append(ModelConfig(fam, fam))
            else:
                for c in self.c_values:
                    configs.append(ModelConfig(fam, fam, c=float(c)))
        return configs

    def to_dict(self):
        d = {
            "data": self.data,
            "out": self.out,
            "months": list(self.months),
            "families": list(self.families),
            "c_values": [float(c) for c in self.c_values],
            "sampler": asdict(self.sampler),
            "seed": self.seed,
            "year": self.year,
            "prec_column": self.prec_column,
        }
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(
            data=d["data"],
            out=d["out"],
            months=tuple(d["months"]),
            families=tuple(d["families"]),
            c_values=tuple(d["c_values"]),
            sampler=SamplerConfig(**d["sampler"]),
            seed=int(d["seed"]),
            year=int(d["year"]),
            prec_column=d["prec_column"],
        )


# ---------------------------------------------------------------------------
# ingestion


def ingest(path, year=DEFAULT_YEAR, prec_column="ir"):
    """Read the raw hourly CSV into typed records plus a summary report.

    The header must contain the standard columns (case-insensitive); the
    precipitation covariate is taken from `prec_column` (cumulated rain
    "ir" or snow "is").  Rows of other years are filtered out; rows with a
    missing response are kept and flagged; unparseable rows are skipped
    and reported by line number.
    """
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"data file not found: {path}")
    records = []
    skipped = []
    filtered = 0
    missing_pm = 0
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError("data file is empty") from None
        names = [h.strip().lower() for h in header]
        wanted = REQUIRED_COLUMNS + (prec_column,)
        missing_cols = [c for c in wanted if c not in names]
        if missing_cols:
            raise SchemaError(f"missing required columns: {missing_cols}")
        idx = {c: names.index(c) for c in wanted}
        for lineno, row in enumerate(reader, start=2):
            try:
                if int(row[idx["year"]]) != year:
                    filtered += 1
                    continue
                ts = datetime(int(row[idx["year"]]), int(row[idx["month"]]),
                              int(row[idx["day"]]), int(row[idx["hour"]]))
                raw_pm = row[idx["pm2.5"]].strip()
                pm = None if raw_pm.lower() in ("", "na", "nan") else float(raw_pm)
                if pm is not None and not np.isfinite(pm):
                    pm = None
                rec = HourlyRecord(
                    timestamp=ts,
                    pm25=pm,
                    dewp=float(row[idx["dewp"]]),
                    temp=float(row[idx["temp"]]),
                    pres=float(row[idx["pres"]]),
                    cbwd=row[idx["cbwd"]].strip().upper(),
                    iws=float(row[idx["iws"]]),
                    prec=float(row[idx[prec_column]]),
                )
            except (ValueError, IndexError, CopssmError):
                skipped.append(lineno)
                continue
            if pm is None:
                missing_pm += 1
            records.append(rec)
    months = {}
    for rec in records:
        months[rec.timestamp.month] = months.get(rec.timestamp.month, 0) + 1
    report = {
        "records": len(records),
        "missing_pm25": missing_pm,
        "filtered_other_years": filtered,
        "n_skipped": len(skipped),
        "skipped_lines": skipped[:50],
        "months": {str(m): months[m] for m in sorted(months)},
        "year": year,
        "prec_column": prec_column,
    }
    return records, report


def monthly_windows(records):
    """Group records by calendar month of the timestamp, in time order."""
    out = {}
    for rec in sorted(records, key=lambda r: r.timestamp):
        out.setdefault(rec.timestamp.month, []).append(rec)
    return out


# ---------------------------------------------------------------------------
# persistence


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _read_json(path):
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"missing artifact: {path}")
    return json.loads(path.read_text())


def write_records_csv(path, records):
    with open(path, "w", newline="") as fh:
        fh.write("timestamp,pm25,dewp,temp,pres,cbwd,iws,prec\n")
        for r in records:
            pm = "" if r.pm25 is None else _fmt(r.pm25)
            fh.write(f"{r.timestamp.isoformat()},{pm},{_fmt(r.dewp)},{_fmt(r.temp)},"
                     f"{_fmt(r.pres)},{r.cbwd},{_fmt(r.iws)},{_fmt(r.prec)}\n")


def read_records_csv(path):
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"missing artifact: {path}")
    records = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            records.append(HourlyRecord(
                timestamp=datetime.fromisoformat(row[0]),
                pm25=None if row[1] == "" else float(row[1]),
                dewp=float(row[2]), temp=float(row[3]), pres=float(row[4]),
                cbwd=row[5], iws=float(row[6]), prec=float(row[7]),
            ))
    return records


def write_series_csv(path, series):
    with open(path, "w", newline="") as fh:
        fh.write("t,timestamp,u_hat,z_hat\n")
        for i in range(len(series)):
            ts = series.timestamps[i]
            ts = ts.isoformat() if hasattr(ts, "isoformat") else str(ts)
            fh.write(f"{i + 1},{ts},{_fmt(series.u_hat[i])},{_fmt(series.z_hat[i])}\n")


def read_series_csv(path):
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"missing artifact: {path}")
    u, z, ts = [], [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            try:
                stamp = datetime.fromisoformat(row[1])
            except ValueError:
                stamp = row[1]
            ts.append(stamp)
            u.append(float(row[2]))
            z.append(float(row[3]))
    return PseudoSeries(np.array(u), np.array(z), np.array(ts, dtype=object))


def write_draws_csv(path, draws):
    """Persist posterior draws; columns are documented in the header row."""
    c, r, t = draws.latent.shape
    meta = np.column_stack([
        np.repeat(np.arange(c), r),
        np.tile(np.arange(r), c),
        draws.tau_lat.reshape(-1),
        draws.tau_obs.reshape(-1),
        draws.divergent.reshape(-1).astype(float),
        draws.accept_stat.reshape(-1),
    ])
    body = np.hstack([meta, draws.latent.reshape(c * r, t),
                      draws.loglik.reshape(c * r, t)])
    header = (["chain", "iter", "tau_lat", "tau_obs", "divergent", "accept_stat"]
              + [f"v_{i + 1}" for i in range(t)] + [f"ll_{i + 1}" for i in range(t)])
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        np.savetxt(fh, body, fmt=_FLOAT_FMT, delimiter=",")


def read_draws_csv(path, model, sampler, step_size, flagged):
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"missing artifact: {path}")
    with open(path, newline="") as fh:
        header = fh.readline().strip().split(",")
        body = np.loadtxt(fh, delimiter=",", ndmin=2)
    t = sum(1 for h in header if h.startswith("v_"))
    n_chains = int(body[:, 0].max()) + 1
    kept = body.shape[0] // n_chains
    if kept * n_chains != body.shape[0]:
        raise ArtifactError(f"draws file is ragged across chains: {path}")
    order = np.lexsort((body[:, 1], body[:, 0]))
    body = body[order]
    return PosteriorDraws(
        tau_lat=body[:, 2].reshape(n_chains, kept),
        tau_obs=body[:, 3].reshape(n_chains, kept),
        latent=body[:, 6:6 + t].reshape(n_chains, kept, t),
        loglik=body[:, 6 + t:6 + 2 * t].reshape(n_chains, kept, t),
        divergent=body[:, 4].reshape(n_chains, kept).astype(bool),
        accept_stat=body[:, 5].reshape(n_chains, kept),
        flagged_chains=np.asarray(flagged, dtype=bool),
        model=model,
        sampler=sampler,
        step_size=np.asarray(step_size, dtype=float),
    )


def _month_dir(out, month):
    return Path(out) / f"month_{int(month):02d}"


def _load_model(month_dir, label):
    """Reload one fitted model: its config, sampler settings and draws."""
    info = _read_json(Path(month_dir) / "models" / f"{label}.json")
    config = _config_from_label(info["family"], info.get("c", 1.0))
    if config.kind == "independence":
        return config, None, info
    sampler = SamplerConfig(**info["sampler"])
    draws = read_draws_csv(
        Path(month_dir) / "models" / info["draws_csv"],
        config, sampler, info["step_size"], info["flagged_chains"],
    )
    return config, draws, info


def _selected_label(month_dir):
    return _read_json(Path(month_dir) / "selection.json")["label"]


def _ind_draws(config, sampler_cfg, t_len):
    """Stand-in posterior for the independence model.

    Its predictive never reads the latent states or tau, so constants keep
    the draw count consistent with a sampled model at the same settings.
    """
    shape = (sampler_cfg.n_chains, sampler_cfg.n_iter - sampler_cfg.n_burnin)
    half = np.full(shape, 0.5)
    return PosteriorDraws(
        tau_lat=half, tau_obs=half.copy(),
        latent=np.full(shape + (t_len,), 0.5),
        loglik=np.ones(shape + (t_len,)),
        divergent=np.zeros(shape, dtype=bool),
        accept_stat=np.ones(shape),
        flagged_chains=np.zeros(shape[0], dtype=bool),
        model=config, sampler=sampler_cfg,
        step_size=np.ones(shape[0]),
    )


# ---------------------------------------------------------------------------
# fitting


def _job_seed(seed, month, config):
    # independent, reproducible stream per grid cell
    key = [int(seed), int(month), config.obs_family.code,
           int(config.obs_family.df or 0), int(round(float(config.c) * 1e6))]
    return int(np.random.SeedSequence(key).generate_state(1, np.uint64)[0] >> 1)


def _fit_cell(args):
    """One grid cell: sample, score, persist.  Runs inside a worker."""
    series, config, sampler_cfg, month, seed, models_dir = args
    label = config.label()
    cfg = replace(sampler_cfg, seed=_job_seed(seed, month, config))
    try:
        draws = run(series, config, cfg)
    except Exception as err:  # recorded per cell; the grid keeps going
        return {"label": label, "family": config.obs_family.label(),
                "c": config.c, "waic": None, "error": str(err)}
    value = waic(draws.pooled_loglik())
    pooled = draws.pooled_tau_lat()
    lo, hi = credible_interval(pooled, 0.90)
    rhat, ess = rhat_ess(draws.tau_lat)
    info = {
        "family": config.obs_family.label(),
        "c": config.c,
        "label": label,
        "kind": config.kind,
        "waic": value,
        "sampler": asdict(cfg),
        "step_size": [float(s) for s in draws.step_size],
        "flagged_chains": [bool(b) for b in draws.flagged_chains],
        "divergence_rate": float(draws.divergent.mean()),
        "tau_lat": {"mean": float(pooled.mean()), "mode": kde_mode(pooled),
                    "lo90": lo, "hi90": hi, "rhat": rhat, "ess": ess},
        "draws_csv": f"{label}_draws.csv",
        "predictive_note": "marginal-fit uncertainty is excluded from predictive draws",
    }
    write_draws_csv(Path(models_dir) / info["draws_csv"], draws)
    _write_json(Path(models_dir) / f"{label}.json", info)
    return {"label": label, "family": info["family"], "c": config.c, "waic": value}


def _waic_table(month, rows):
    ordered = sorted(rows, key=lambda r: (r["waic"] is None,
                                          r["waic"] if r["waic"] is not None else 0.0,
                                          r["c"], r["family"]))
    return {"month": int(month), "rows": ordered}


def _select_from_table(table):
    pairs = []
    for row in table["rows"]:
        if row.get("waic") is None:
            continue
        pairs.append((_config_from_label(row["family"], row["c"]), row["waic"]))
    if not pairs:
        raise SamplerError(f"no usable fits for month {table['month']}")
    best = select_model(pairs)
    value = dict(pairs)[best]
    return {"month": table["month"], "label": best.label(),
            "family": best.obs_family.label(), "c": best.c, "waic": value}


def fit_pipeline(manifest):
    """Fit every month of the manifest; returns the overall exit code.

    Per month: marginal fit, standardization, the copula-model grid, the
    comparison table and the selection report.  Cell failures are recorded
    and the grid keeps going; a month whose sampler runs all fail yields
    exit code 3 at the end.
    """
    out = Path(manifest.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "manifest.json", manifest.to_dict())
    records, report = ingest(manifest.data, manifest.year, manifest.prec_column)
    _write_json(out / "ingest_summary.json", report)
    windows = monthly_windows(records)
    months = manifest.months or tuple(sorted(windows))
    workers = max(1, int(os.environ.get(WORKERS_ENV, "1")))
    month_status = {}
    sampler_exit = False

    for month in months:
        month = int(month)
        rows_m = windows.get(month, [])
        mdir = _month_dir(out, month)
        models_dir = mdir / "models"
        models_dir.mkdir(parents=True, exist_ok=True)
        try:
            marginal = fit_marginal(rows_m, month=month)
            series = standardize(marginal, rows_m)
        except CopssmError as err:
            month_status[month] = {"error": str(err)}
            continue
        _write_json(mdir / "marginal.json", marginal.to_dict())
        write_series_csv(mdir / "series.csv", series)
        write_records_csv(mdir / "records.csv", rows_m)

        jobs = []
        rows = []
        for config in manifest.grid():
            if config.kind == "independence":
                # flat likelihood: the comparison value is identically zero
                rows.append({"label": "ind", "family": "independence",
                             "c": 1.0, "waic": 0.0})
                _write_json(models_dir / "ind.json",
                            {"family": "independence", "c": 1.0, "label": "ind",
                             "kind": "independence", "waic": 0.0,
                             "sampler": asdict(manifest.sampler)})
            else:
                jobs.append((series, config, manifest.sampler, month,
                             manifest.seed, str(models_dir)))
        if workers > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                rows.extend(pool.map(_fit_cell, jobs))
        else:
            rows.extend(_fit_cell(job) for job in jobs)

        table = _waic_table(month, rows)
        _write_json(mdir / "waic.json", table)
        failures = [r for r in rows if r.get("waic") is None]
        attempted = len(jobs)
        if attempted and len(failures) == attempted:
            month_status[month] = {"error": "all sampler runs failed",
                                   "failures": [r["label"] for r in failures]}
            sampler_exit = True
            continue
        selection = _select_from_table(table)
        _write_json(mdir / "selection.json", selection)
        month_status[month] = {"selected": selection["label"],
                               "waic": selection["waic"],
                               "n_failed": len(failures)}

    _write_json(out / "fit_report.json", {"months": {str(m): s for m, s in month_status.items()}})
    if sampler_exit:
        return EXIT_SAMPLER
    if month_status and all("error" in s for s in month_status.values()):
        return EXIT_SCHEMA
    return EXIT_OK


# ---------------------------------------------------------------------------
# prediction commands


def _predict_rng(seed, horizon):
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(horizon)]))


def _marginal_and_records(mdir):
    marginal = MarginalModel.from_dict(_read_json(Path(mdir) / "marginal.json"))
    records = read_records_csv(Path(mdir) / "records.csv")
    return marginal, records


def write_predictive_csv(path, preds):
    with open(path, "w", newline="") as fh:
        fh.write("horizon,draw,u,eps,y,pm\n")
        for pred in preds:
            y = pred.y if pred.y is not None else [None] * pred.n_draws
            pm = pred.pm if pred.pm is not None else [None] * pred.n_draws
            for i in range(pred.n_draws):
                ys = "" if y[i] is None else _fmt(y[i])
                ps = "" if pm[i] is None else _fmt(pm[i])
                fh.write(f"{pred.horizon},{i},{_fmt(pred.u[i])},{_fmt(pred.eps[i])},{ys},{ps}\n")


def predict_cmd(out, month, model_label=None, steps=None, t=None,
                seed=0, response=False, name=None):
    """Emit predictive draws and per-horizon summaries for one month."""
    if (steps is None) == (t is None):
        raise DomainError("exactly one of --steps and --t is required")
    mdir = _month_dir(out, month)
    label = model_label or _selected_label(mdir)
    config, draws, info = _load_model(mdir, label)
    series = read_series_csv(mdir / "series.csv")
    if draws is None:
        if "sampler" not in info:
            raise ArtifactError(f"model {label} lacks sampler settings; re-run fit")
        draws = _ind_draws(config, SamplerConfig(**info["sampler"]), len(series))
    marginal = records = None
    if response:
        marginal, records = _marginal_and_records(mdir)
        observed = [r for r in records if r.has_response]
        by_ts = {r.timestamp: r for r in records}
        last_ts = series.timestamps[-1]

    preds = []
    if t is not None:
        pred = in_sample(draws, config, int(t), _predict_rng(seed, int(t)))
        if response:
            cov = by_ts.get(series.timestamps[int(t) - 1])
            if cov is None:
                raise ArtifactError(f"no covariate row at series position {t}")
            pred = scenario(pred, marginal, cov)
        preds.append(pred)
        stem = name or f"predict_t{int(t)}_{label}"
    else:
        for h in range(1, int(steps) + 1):
            pred = out_of_sample(draws, config, h, _predict_rng(seed, h))
            if response:
                hour = (last_ts + timedelta(hours=h)).hour
                pred = scenario(pred, marginal, last_same_hour(observed, hour))
            preds.append(pred)
        stem = name or f"predict_h{int(steps)}_{label}"

    write_predictive_csv(mdir / f"{stem}.csv", preds)
    _write_json(mdir / f"{stem}_summary.json",
                {"month": int(month), "model": label, "seed": int(seed),
                 "rows": [p.summary() for p in preds]})
    return EXIT_OK


def parse_edit(text):
    """Parse one scenario edit: "temp-4", "iws+2.5" or "cbwd=NE"."""
    s = str(text).strip()
    if "=" in s:
        field, value = s.split("=", 1)
        field = field.strip().lower()
        if field == "cbwd":
            return field, ("set", value.strip().upper())
        return field, ("set", float(value))
    for i, ch in enumerate(s):
        if i > 0 and ch in "+-":
            return s[:i].strip().lower(), ("shift", float(s[i:]))
    raise DomainError(f"cannot parse covariate edit {text!r}")


def _apply_edits(record, edits):
    changes = {}
    for field, (op, value) in edits:
        base = getattr(record, field, None)
        if op == "shift":
            if base is None:
                raise DomainError(f"record has no numeric field {field!r}")
            changes[field] = float(base) + value
        else:
            changes[field] = value
    return edit_record(record, **changes) if changes else record


def scenario_cmd(out, month, edits, model_label=None, seed=0, name="scenario"):
    """Typical-level report for one month under edited covariates.

    For every standardized hour t: draw in-sample on the copula scale,
    push the draws through the marginal at the edited covariate row, then
    summarize the concentration draws by their density mode and central
    90% interval.  The report carries the per-hour modes plus monthly
    averages of both the modes and the draw means.
    """
    mdir = _month_dir(out, month)
    label = model_label or _selected_label(mdir)
    config, draws, info = _load_model(mdir, label)
    series = read_series_csv(mdir / "series.csv")
    if draws is None:
        if "sampler" not in info:
            raise ArtifactError(f"model {label} lacks sampler settings; re-run fit")
        draws = _ind_draws(config, SamplerConfig(**info["sampler"]), len(series))
    marginal, records = _marginal_and_records(mdir)
    by_ts = {r.timestamp: r for r in records}
    parsed = [parse_edit(e) for e in edits]

    modes = np.empty(len(series))
    means = np.empty(len(series))
    rows = []
    for t in range(1, len(series) + 1):
        cov = by_ts.get(series.timestamps[t - 1])
        if cov is None:
            raise ArtifactError(f"no covariate row at series position {t}")
        pred = in_sample(draws, config, t, _predict_rng(seed, t))
        pred = scenario(pred, marginal, _apply_edits(cov, parsed))
        lo, hi = credible_interval(pred.pm, 0.90)
        modes[t - 1] = kde_mode(pred.pm)
        means[t - 1] = float(pred.pm.mean())
        ts = series.timestamps[t - 1]
        rows.append((t, ts.isoformat() if hasattr(ts, "isoformat") else str(ts),
                     modes[t - 1], lo, hi))

    with open(mdir / f"{name}.csv", "w", newline="") as fh:
        fh.write("t,timestamp,mode,lo90,hi90\n")
        for t, ts, mode, lo, hi in rows:
            fh.write(f"{t},{ts},{_fmt(mode)},{_fmt(lo)},{_fmt(hi)}\n")
    _write_json(mdir / f"{name}.json", {
        "month": int(month), "model": label, "seed": int(seed),
        "edits": list(edits),
        "monthly_mean_of_modes": float(modes.mean()),
        "monthly_mean_of_means": float(means.mean()),
    })
    return EXIT_OK


def contour_cmd(out, month):
    """Write the lag-1 dependence grid of the standardized series."""
    mdir = _month_dir(out, month)
    series = read_series_csv(mdir / "series.csv")
    grid = lag1_contour(series.z_hat)
    with open(mdir / "contour.csv", "w", newline="") as fh:
        fh.write("z1,z2,density\n")
        for z1, z2, d in grid.rows():
            fh.write(f"{_fmt(z1)},{_fmt(z2)},{_fmt(d)}\n")
    return EXIT_OK


def waic_cmd(out, month, recompute=False):
    """Rebuild the comparison table from the persisted per-model files."""
    mdir = _month_dir(out, month)
    models_dir = mdir / "models"
    if not models_dir.exists():
        raise ArtifactError(f"missing artifact: {models_dir}")
    rows = [{"label": "ind", "family": "independence", "c": 1.0, "waic": 0.0}]
    for path in sorted(models_dir.glob("*.json")):
        info = _read_json(path)
        if info.get("kind") == "independence":
            continue
        value = info.get("waic")
        if recompute and info.get("draws_csv"):
            config, draws, _ = _load_model(mdir, info["label"])
            value = waic(draws.pooled_loglik())
        rows.append({"label": info["label"], "family": info["family"],
                     "c": info["c"], "waic": value})
    table = _waic_table(month, rows)
    _write_json(mdir / "waic.json", table)
    return EXIT_OK


def select_cmd(out, month):
    """Recompute the selection report from the comparison table."""
    mdir = _month_dir(out, month)
    table = _read_json(mdir / "waic.json")
    _write_json(mdir / "selection.json", _select_from_table(table))
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def _add_common_fit_args(p):
    p.add_argument("--data", required=True, help="raw hourly CSV file")
    p.add_argument("--year", type=int, default=DEFAULT_YEAR)
    p.add_argument("--prec-column", choices=PREC_CHOICES, default="ir",
                   help="raw column used as the precipitation covariate")


def build_parser():
    parser = argparse.ArgumentParser(prog="copssm", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate a raw CSV and report coverage")
    _add_common_fit_args(p)
    p.add_argument("--out", default=None, help="directory for ingest_summary.json")

    p = sub.add_parser("fit", help="fit marginal and copula-model grid per month")
    _add_common_fit_args(p)
    p.add_argument("--out", required=True)
    p.add_argument("--months", default="all", help="comma list of months, or 'all'")
    p.add_argument("--families", default=",".join(DEFAULT_FAMILIES))
    p.add_argument("--c-values", default=",".join(str(c) for c in DEFAULT_C_VALUES))
    p.add_argument("--chains", type=int, default=2)
    p.add_argument("--iters", type=int, default=2000)
    p.add_argument("--burnin", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)

    for cmd in ("waic", "select", "contour"):
        p = sub.add_parser(cmd)
        p.add_argument("--out", required=True)
        p.add_argument("--month", type=int, required=True)
        if cmd == "waic":
            p.add_argument("--recompute", action="store_true",
                           help="recompute from persisted draws instead of trusting model files")

    p = sub.add_parser("predict", help="predictive draws for one month")
    p.add_argument("--out", required=True)
    p.add_argument("--month", type=int, required=True)
    p.add_argument("--model", default=None, help="model label; default: the selected model")
    p.add_argument("--steps", type=int, default=None, help="out-of-sample horizons 1..N")
    p.add_argument("--t", type=int, default=None, help="in-sample series position")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--response", action="store_true",
                   help="also map draws to the response scale via the marginal fit")
    p.add_argument("--name", default=None, help="output file stem")

    p = sub.add_parser("scenario", help="typical levels under covariate edits")
    p.add_argument("--out", required=True)
    p.add_argument("--month", type=int, required=True)
    p.add_argument("--model", default=None)
    p.add_argument("--edit", action="append", default=[],
                   help="covariate edit, e.g. temp-4 or cbwd=NW; repeatable")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--name", default="scenario")
    return parser


def _parse_months(text, available=None):
    if text.strip().lower() == "all":
        return tuple(available) if available else tuple(range(1, 13))
    return tuple(int(m) for m in text.split(",") if m.strip())


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "ingest":
            records, report = ingest(args.data, args.year, args.prec_column)
            if args.out:
                Path(args.out).mkdir(parents=True, exist_ok=True)
                _write_json(Path(args.out) / "ingest_summary.json", report)
            print(json.dumps(report, indent=2, sort_keys=True))
            return EXIT_OK
        if args.command == "fit":
            records, _ = ingest(args.data, args.year, args.prec_column)
            available = sorted(monthly_windows(records))
            manifest = RunManifest(
                data=args.data,
                out=args.out,
                months=_parse_months(args.months, available),
                families=tuple(f.strip() for f in args.families.split(",") if f.strip()),
                c_values=tuple(float(c) for c in args.c_values.split(",") if c.strip()),
                sampler=SamplerConfig(n_chains=args.chains, n_iter=args.iters,
                                      n_burnin=args.burnin, seed=args.seed),
                seed=args.seed,
                year=args.year,
                prec_column=args.prec_column,
            )
            return fit_pipeline(manifest)
        if args.command == "waic":
            return waic_cmd(args.out, args.month, recompute=args.recompute)
        if args.command == "select":
            return select_cmd(args.out, args.month)
        if args.command == "contour":
            return contour_cmd(args.out, args.month)
        if args.command == "predict":
            return predict_cmd(args.out, args.month, model_label=args.model,
                               steps=args.steps, t=args.t, seed=args.seed,
                               response=args.response, name=args.name)
        if args.command == "scenario":
            return scenario_cmd(args.out, args.month, args.edit,
                                model_label=args.model, seed=args.seed, name=args.name)
        raise DomainError(f"unknown command {args.command!r}")
    except ArtifactError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_MISSING
    except SamplerError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_SAMPLER
    except (SchemaError, DomainError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_SCHEMA


if __name__ == "__main__":
    sys.exit(main())
