"""Experiment runner: seeded end-to-end studies with file-based outputs.

A run executes (dataset x label-fraction x seed x method) cells. Within a
seed every method consumes the same split and the same trained predictive
model, so differences come only from the calibration method. Each
randomized stage draws from its own stream derived from (master seed, seed
index, stage name); adding or removing methods never perturbs the others.

Outputs per run directory: `aggregate.csv` (one row per cell),
`per_sample_<run>.csv` files, and `manifest.json` (config echo, seeds,
versions, wall time, per-cell status). `emit_plot_data` turns those files
into plot-ready CSVs.
"""

from __future__ import annotations

import json
import math
import re
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, conformal, data, forest, metrics, nn, pretext
from .conformal import CalibratedConformal, EncoderMode, Kind
from .errors import ConfigurationError
from .seeding import derive_seed, stable_hash64

DEFAULT_P_GRID = (0.1, 0.2, 0.3, 0.4, 0.5)
EXPERIMENT_KINDS = ("synthetic", "labeled", "semi_supervised", "ablation_unlabeled",
                    "cqr", "sanity_ssl_norm", "robustness")
DEFAULT_METHODS = {
    "synthetic": ("CRF", "SSCP"),
    "labeled": ("CRF", "SSCP"),
    "semi_supervised": ("CRF", "SSCP"),
    "ablation_unlabeled": ("SSCP_ALL", "SSCP_LABELED"),
    "cqr": ("CQR", "CQR_SSCP(indep)", "CQR_SSCP(shared)"),
    "sanity_ssl_norm": ("CRF", "SSCP", "SSL_NORM"),
    "robustness": ("CRF", "SSCP"),
}

AGGREGATE_COLUMNS = ("dataset", "method", "p", "seed", "alpha", "n_test", "coverage",
                     "avg_width", "avg_deficit", "avg_excess", "width_std", "n_infinite",
                     "epsilon", "sigma_mae", "crossing_rate")


@dataclass(frozen=True)
class MethodSpec:
    label: str
    kind: Kind
    encoder_mode: EncoderMode = EncoderMode.INDEPENDENT
    pretext_on: str = "all"


_METHOD_RE = re.compile(r"^CQR_SSCP\((shared|indep(?:endent)?)\)$")


def parse_method(name: str) -> MethodSpec:
    token = name.strip()
    m = _METHOD_RE.match(token)
    if m:
        mode = EncoderMode.SHARED if m.group(1) == "shared" else EncoderMode.INDEPENDENT
        label = f"CQR_SSCP({'shared' if mode == EncoderMode.SHARED else 'indep'})"
        return MethodSpec(label, Kind.CQR_SSCP, mode)
    if token == "SSCP_ALL":
        return MethodSpec("SSCP_ALL", Kind.SSCP, pretext_on="all")
    if token == "SSCP_LABELED":
        return MethodSpec("SSCP_LABELED", Kind.SSCP, pretext_on="labeled")
    try:
        kind = Kind(token)
    except ValueError:
        raise ConfigurationError(f"unknown method {name!r}") from None
    return MethodSpec(kind.value, kind)


@dataclass
class ExperimentConfig:
    experiment: str
    methods: list[str] = field(default_factory=list)
    dataset: str | None = None
    datasets: list[str] = field(default_factory=list)
    target_column: str = "y"
    synthetic_n: int | None = None
    pretext: str = "vime"
    alpha: float = 0.1
    label_fraction: float | None = None
    label_fraction_grid: list[float] = field(default_factory=lambda: list(DEFAULT_P_GRID))
    n_seeds: int = 5
    master_seed: int = 0
    output_dir: str = "out"
    normalizer_backend: str = "mlp"
    n_trees: int = 1000
    zero_ss_feature: bool = False

    def __post_init__(self):
        if self.experiment not in EXPERIMENT_KINDS:
            raise ConfigurationError(f"unknown experiment {self.experiment!r}; "
                                     f"expected one of {EXPERIMENT_KINDS}")
        if not self.methods:
            self.methods = list(DEFAULT_METHODS[self.experiment])
        if not self.methods:
            raise ConfigurationError("at least one method is required")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigurationError(f"alpha must be in (0,1), got {self.alpha}")
        if self.n_seeds < 1:
            raise ConfigurationError("n_seeds must be >= 1")
        if self.pretext not in ("vime", "autoencoder"):
            raise ConfigurationError(f"pretext must be vime or autoencoder, got {self.pretext!r}")
        if self.dataset is None and not self.datasets and self.synthetic_n is None:
            raise ConfigurationError("provide a dataset path or synthetic_n")
        self.specs = [parse_method(m) for m in self.methods]

    @classmethod
    def from_json(cls, path: str, overrides: dict | None = None) -> "ExperimentConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigurationError(f"config file not found: {path}") from None
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"config {path} is not valid JSON: {e}") from None
        if overrides:
            raw.update(overrides)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise ConfigurationError(f"unknown config fields: {sorted(unknown)}")
        return cls(**raw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("specs", None)
        return d

    def pretext_kind(self) -> pretext.PretextKind:
        return pretext.Vime() if self.pretext == "vime" else pretext.Autoencoder()

    def label_fractions(self) -> list[float]:
        if self.experiment in ("semi_supervised", "ablation_unlabeled"):
            if self.label_fraction is not None:
                return [self.label_fraction]
            return list(self.label_fraction_grid)
        return [self.label_fraction if self.label_fraction is not None else 1.0]


# ---------------------------------------------------------------------------
# single-cell fits
# ---------------------------------------------------------------------------

@dataclass
class CellResult:
    report: metrics.IntervalReport
    widths: np.ndarray
    epsilon: float
    sigma_mae: float | None
    crossing_rate: float | None
    ss_errors: np.ndarray | None


def fit_method(spec: MethodSpec, X: np.ndarray, y: np.ndarray,
               split: data.SplitAssignment, alpha: float,
               pretext_kind: pretext.PretextKind, run_seed: int,
               f: nn.Mlp | None = None, ss_model: pretext.SsModel | None = None,
               backend: str = "mlp", n_trees: int = 1000,
               zero_ss: bool = False) -> CalibratedConformal:
    """Fit one calibration method; shared f/ss_model keep methods comparable."""
    if spec.kind == Kind.ICP:
        return conformal.fit_icp(X, y, split, alpha=alpha, f=f, seed=run_seed)
    if spec.kind == Kind.CRF:
        return conformal.fit_crf(X, y, split, alpha=alpha, f=f,
                                 backend=backend, n_trees=n_trees, seed=run_seed)
    if spec.kind == Kind.SSCP:
        if zero_ss:
            # ablation: the error column carries nothing, so the pipeline
            # reduces to plain residual fitting on the same streams
            return conformal.sscp_fit(X, y, split, None, alpha=alpha, f=f,
                                      use_ss=False, backend=backend,
                                      n_trees=n_trees, seed=run_seed)
        return conformal.sscp_fit(X, y, split, pretext_kind, alpha=alpha, f=f,
                                  ss_model=ss_model if spec.pretext_on == "all" else None,
                                  pretext_on=spec.pretext_on, backend=backend,
                                  n_trees=n_trees, seed=run_seed)
    if spec.kind == Kind.SSL_NORM:
        if zero_ss:
            raise ConfigurationError("SSL_NORM is meaningless with the SS feature zeroed")
        return conformal.fit_ssl_norm(X, y, split, pretext_kind, alpha=alpha, f=f,
                                      ss_model=ss_model, seed=run_seed)
    if spec.kind == Kind.CQR:
        return conformal.fit_cqr(X, y, split, alpha=alpha, seed=run_seed)
    if spec.kind == Kind.CQR_SSCP:
        return conformal.cqr_sscp_fit(X, y, split, pretext_kind,
                                      encoder_mode=spec.encoder_mode, alpha=alpha,
                                      use_ss=not zero_ss, pretext_on=spec.pretext_on,
                                      seed=run_seed)
    raise ConfigurationError(f"unhandled method kind {spec.kind}")


def evaluate_cell(cc: CalibratedConformal, X_test: np.ndarray, y_test: np.ndarray) -> CellResult:
    lo, hi = cc.intervals(X_test)
    widths = cc.width_values(X_test)
    report = metrics.evaluate(lo, hi, y_test, widths=widths)
    sigma_mae = None
    if cc.kind in (Kind.CRF, Kind.SSCP, Kind.SSL_NORM):
        resid = np.abs(y_test - cc.predict_point(X_test))
        sigma_mae = float(np.mean(np.abs(cc.sigma_values(X_test) - resid)))
    crossing = cc.crossing_rate if cc.kind in (Kind.CQR, Kind.CQR_SSCP) else None
    errs = cc.ss_errors(X_test)
    return CellResult(report, widths, cc.epsilon, sigma_mae, crossing, errs)


# ---------------------------------------------------------------------------
# synthetic demonstration (out-of-bag forest calibration)
# ---------------------------------------------------------------------------

def synth_demo_seed(config: ExperimentConfig, seed_index: int):
    """One seed of the synthetic study: forest normalizer, OOB calibration.

    Residuals come straight from the generator (the predictive model is the
    zero function), so differences between methods isolate the normalizer.
    The self-supervised feature is the reconstruction error of a
    single-unit-bottleneck autoencoder. OOB-normalized scores on the
    training rows stand in for a separate calibration split.
    """
    n = config.synthetic_n or 1000
    ms = config.master_seed
    samples = data.synth_generate(n, seed=derive_seed(ms, seed_index, "data-synth"))
    X_raw, y_raw, latent = data.synth_matrices(samples)

    rng = np.random.default_rng(derive_seed(ms, seed_index, "split"))
    perm = rng.permutation(n)
    n_test = int(n * 0.2)
    test_idx, train_idx = np.sort(perm[:n_test]), np.sort(perm[n_test:])

    scaler = data.fit_scaler(X_raw[train_idx], y_raw[train_idx])
    X = scaler.transform_X(X_raw)
    y = scaler.transform_y(y_raw)
    d = X.shape[1]

    run_seed = derive_seed(ms, seed_index, "fit")
    ss = None
    if not config.zero_ss_feature:
        ss = pretext.train_pretext_standalone(
            pretext.Autoencoder(), X[train_idx],
            bottleneck_sizes=(d, 64, 1, 64, d),
            seed=stable_hash64(run_seed, "pretext"))

    resid_train = np.abs(y[train_idx])
    floor = conformal.normalizer_floor(resid_train)
    fitted: dict[str, CalibratedConformal] = {}
    for spec in (parse_method(m) for m in config.methods):
        if spec.kind == Kind.ICP:
            eps = conformal.icp_calibrate(resid_train, config.alpha)
            fitted[spec.label] = CalibratedConformal(Kind.ICP, config.alpha, eps)
        elif spec.kind in (Kind.CRF, Kind.SSCP):
            use_ss = spec.kind == Kind.SSCP and ss is not None
            feats = X[train_idx]
            if use_ss:
                feats = pretext.augment_features(feats, ss.errors(X[train_idx]))
            fr = forest.forest_fit(feats, resid_train,
                                   forest.ForestConfig(n_trees=config.n_trees,
                                                       seed=stable_hash64(run_seed, "normalizer")))
            oob, _ = forest.forest_oob_predict(fr, feats)
            scores = conformal.crf_score(y[train_idx], 0.0, np.maximum(oob, floor))
            eps = conformal.icp_calibrate(scores, config.alpha)
            norm = conformal.Normalizer(fr, "forest", floor, uses_ss_feature=use_ss)
            fitted[spec.label] = CalibratedConformal(
                spec.kind if use_ss or spec.kind == Kind.CRF else Kind.CRF,
                config.alpha, eps, normalizer=norm, ss_model=ss if use_ss else None)
        elif spec.kind == Kind.SSL_NORM:
            if ss is None:
                raise ConfigurationError("SSL_NORM needs the SS feature enabled")
            sigma_train = conformal.ssl_norm_sigma(ss.errors(X[train_idx]))
            scores = conformal.crf_score(y[train_idx], 0.0, sigma_train)
            eps = conformal.icp_calibrate(scores, config.alpha)
            fitted[spec.label] = CalibratedConformal(Kind.SSL_NORM, config.alpha, eps,
                                                     ss_model=ss)
        else:
            raise ConfigurationError(
                f"method {spec.label} is not part of the synthetic study")
    return fitted, X, y, latent, test_idx


# ---------------------------------------------------------------------------
# standard (split-based) experiments
# ---------------------------------------------------------------------------

def standard_seed(config: ExperimentConfig, X_raw: np.ndarray, y_raw: np.ndarray,
                  seed_index: int, p: float):
    """Split, standardize and fit every requested method for one seed."""
    ms = config.master_seed
    n = X_raw.shape[0]
    split = data.split(n, seed=derive_seed(ms, seed_index, "split"))
    if p < 1.0:
        split = data.apply_label_mask(split, p, seed=derive_seed(ms, seed_index, "label-mask"))

    scaler = data.fit_scaler(X_raw[split.train], y_raw[split.train])
    X = scaler.transform_X(X_raw)
    y = scaler.transform_y(y_raw)

    run_seed = derive_seed(ms, seed_index, "fit")
    specs = config.specs
    f = None
    if any(s.kind in (Kind.ICP, Kind.CRF, Kind.SSCP, Kind.SSL_NORM) for s in specs):
        f = conformal.train_predictor(X[split.labeled_train], y[split.labeled_train], run_seed)

    ss_model = None
    needs_shared_ss = (not config.zero_ss_feature) and any(
        s.kind in (Kind.SSCP, Kind.SSL_NORM) and s.pretext_on == "all" for s in specs)
    if needs_shared_ss:
        rows = np.concatenate([split.labeled_train, split.unlabeled_train])
        ss_model = pretext.train_pretext(nn.extract_encoder(f), config.pretext_kind(),
                                         X[rows], seed=stable_hash64(run_seed, "pretext"))

    fitted = {}
    for spec in specs:
        fitted[spec.label] = fit_method(spec, X, y, split, config.alpha,
                                        config.pretext_kind(), run_seed, f=f,
                                        ss_model=ss_model,
                                        backend=config.normalizer_backend,
                                        n_trees=config.n_trees,
                                        zero_ss=config.zero_ss_feature)
    return fitted, X, y, split


# ---------------------------------------------------------------------------
# file output
# ---------------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    lines = [",".join(header)]
    lines += [",".join(_fmt(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")


def _dataset_sources(config: ExperimentConfig):
    """(name, kind, payload) triples; CSV loading is deferred to the caller."""
    sources = []
    paths = config.datasets if config.datasets else (
        [config.dataset] if config.dataset else [])
    for p in paths:
        sources.append((Path(p).stem, "csv", p))
    if config.synthetic_n is not None and not paths:
        sources.append(("synthetic", "synthetic", config.synthetic_n))
    return sources


def run_experiment(config: ExperimentConfig, out_dir: str | None = None) -> dict:
    """Execute every (dataset, p, seed, method) cell and write outputs.

    CSV datasets are fixed and re-split per seed; the synthetic generator
    draws a fresh sample per seed. Failures are isolated per cell and
    recorded in the manifest; the summary reports ok/failed counts. Output
    CSVs are byte-deterministic for a fixed config.
    """
    t_start = time.time()
    out = Path(out_dir or config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    agg_rows: list[list] = []
    statuses: list[dict] = []
    n_ok = n_failed = 0

    for ds_name, src_kind, payload in _dataset_sources(config):
        try:
            if src_kind == "csv":
                ds = data.load_csv(payload, config.target_column)
                payload = (ds.X, ds.y)
        except Exception as e:  # dataset-level failure kills only this dataset
            for p in config.label_fractions():
                for seed_index in range(config.n_seeds):
                    for m in config.methods:
                        statuses.append({"dataset": ds_name, "method": m, "p": p,
                                         "seed": seed_index, "status": "failed",
                                         "error": str(e)})
                        n_failed += 1
            continue

        for p in config.label_fractions():
            for seed_index in range(config.n_seeds):
                cells, extra = _run_cells(config, ds_name, src_kind, payload,
                                          seed_index, p, statuses)
                n_ok += len(cells)
                n_failed += extra
                for label, (cell, per_sample) in cells.items():
                    agg_rows.append(_aggregate_row(ds_name, label, p, seed_index,
                                                   config.alpha, cell))
                    fname = f"per_sample_{ds_name}_{_safe(label)}_p{p}_s{seed_index}.csv"
                    write_csv(out / fname, per_sample[0], per_sample[1])

    write_csv(out / "aggregate.csv", list(AGGREGATE_COLUMNS), agg_rows)
    manifest = {
        "config": config.to_dict(),
        "versions": {"package": __version__, "numpy": np.__version__,
                     "python": sys.version.split()[0]},
        "cells": statuses,
        "wall_time_s": round(time.time() - t_start, 3),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return {"n_ok": n_ok, "n_failed": n_failed, "output_dir": str(out),
            "all_failed": n_ok == 0}


def _safe(label: str) -> str:
    return label.replace("(", "_").replace(")", "")


def _run_cells(config, ds_name, src_kind, payload, seed_index, p, statuses):
    """Fit and evaluate all methods of one (dataset, p, seed); isolate failures."""
    results: dict[str, tuple[CellResult, tuple]] = {}
    n_failed = 0
    try:
        if config.experiment == "synthetic":
            if config.synthetic_n is None:
                raise ConfigurationError("the synthetic study needs synthetic_n")
            fitted, X, y, latent, test_idx = synth_demo_seed(config, seed_index)
        else:
            if src_kind == "synthetic":
                samples = data.synth_generate(
                    payload, seed=derive_seed(config.master_seed, seed_index, "data-synth"))
                X_raw, y_raw, latent = data.synth_matrices(samples)
            else:
                (X_raw, y_raw), latent = payload, None
            fitted, X, y, split = standard_seed(config, X_raw, y_raw, seed_index, p)
            test_idx = split.test
    except Exception as e:
        for m in config.methods:
            statuses.append({"dataset": ds_name, "method": m, "p": p,
                             "seed": seed_index, "status": "failed", "error": str(e)})
        return results, len(config.methods)

    X_test, y_test = X[test_idx], y[test_idx]
    try:
        pc1 = metrics.pc1_project(X_test)
    except Exception:
        pc1 = np.zeros(len(test_idx))

    for label, cc in fitted.items():
        try:
            cell = evaluate_cell(cc, X_test, y_test)
            header = ["l", "r", "y", "covered", "width", "deficit", "excess",
                      "pc1", "ss_error"]
            cols = [cell.report.lower, cell.report.upper, cell.report.y,
                    cell.report.covered, cell.report.width, cell.report.deficit,
                    cell.report.excess, pc1,
                    cell.ss_errors if cell.ss_errors is not None else np.zeros(len(y_test))]
            if latent is not None:
                header.append("latent")
                cols.append(latent[test_idx])
            rows = [[col[i] for col in cols] for i in range(len(y_test))]
            results[label] = (cell, (header, rows))
            statuses.append({"dataset": ds_name, "method": label, "p": p,
                             "seed": seed_index, "status": "ok"})
        except Exception as e:
            statuses.append({"dataset": ds_name, "method": label, "p": p,
                             "seed": seed_index, "status": "failed", "error": str(e)})
            n_failed += 1
    return results, n_failed


def _width_std(widths: np.ndarray) -> float:
    """Std of the finite widths; exactly 0 for a bit-constant column."""
    finite = widths[np.isfinite(widths)]
    if finite.size == 0:
        return math.inf
    if np.ptp(finite) == 0.0:
        return 0.0
    return float(np.std(finite))


def _aggregate_row(ds_name, label, p, seed_index, alpha, cell: CellResult) -> list:
    rep = cell.report
    width_std = _width_std(cell.widths)
    return [ds_name, label, p, seed_index, alpha, rep.n_samples, rep.coverage,
            rep.avg_width, rep.avg_deficit, rep.avg_excess, width_std,
            rep.n_infinite, cell.epsilon, cell.sigma_mae, cell.crossing_rate]


# ---------------------------------------------------------------------------
# plot-ready data
# ---------------------------------------------------------------------------

def _read_csv(path: Path):
    lines = path.read_text().strip().split("\n")
    header = lines[0].split(",")
    rows = [line.split(",") for line in lines[1:]]
    return header, rows


def emit_plot_data(run_dir: str) -> dict:
    """Derive plot-ready CSVs from a finished run directory.

    Families: sorted metric curves and raw metric values per method,
    PC1-vs-target intervals, relative width per label fraction, per-dataset
    width-gain confidence intervals, and intervals vs the latent coordinate
    for synthetic runs. Expected cells missing from the run are listed in
    gaps.csv.
    """
    run = Path(run_dir)
    agg_path = run / "aggregate.csv"
    if not agg_path.exists():
        raise ConfigurationError(f"no aggregate.csv under {run_dir}")
    header, rows = _read_csv(agg_path)
    col = {name: i for i, name in enumerate(header)}
    plots = run / "plots"
    plots.mkdir(exist_ok=True)
    written = {}

    manifest = json.loads((run / "manifest.json").read_text())
    gaps = [c for c in manifest.get("cells", []) if c.get("status") != "ok"]
    write_csv(plots / "gaps.csv", ["dataset", "method", "p", "seed", "error"],
              [[g["dataset"], g["method"], g["p"], g["seed"], g.get("error", "")]
               for g in gaps])
    written["gaps"] = len(gaps)

    # per-sample derived families
    curve_rows, dist_rows, pc1_rows, latent_rows = [], [], [], []
    for ps in sorted(run.glob("per_sample_*.csv")):
        m = re.match(r"per_sample_(.+)_p([0-9.]+)_s(\d+)\.csv", ps.name)
        if not m:
            continue
        tag, p_str, seed = m.group(1), m.group(2), int(m.group(3))
        ph, prows = _read_csv(ps)
        pcol = {name: i for i, name in enumerate(ph)}
        for metric_name in ("width", "excess", "deficit"):
            vals = np.array([float(r[pcol[metric_name]]) for r in prows])
            for rank, v in metrics.sorted_metric_curve(vals):
                curve_rows.append([tag, p_str, seed, metric_name, rank, v])
            dist_rows.extend([tag, p_str, seed, metric_name, float(v)] for v in vals)
        for r in prows:
            pc1_rows.append([tag, p_str, seed, float(r[pcol["pc1"]]), float(r[pcol["y"]]),
                             float(r[pcol["l"]]), float(r[pcol["r"]])])
            if "latent" in pcol:
                latent_rows.append([tag, p_str, seed, float(r[pcol["latent"]]),
                                    float(r[pcol["y"]]), float(r[pcol["l"]]),
                                    float(r[pcol["r"]])])
    write_csv(plots / "sorted_curves.csv",
              ["run", "p", "seed", "metric", "rank", "value"], curve_rows)
    write_csv(plots / "metric_distributions.csv",
              ["run", "p", "seed", "metric", "value"], dist_rows)
    write_csv(plots / "pc1_intervals.csv",
              ["run", "p", "seed", "pc1", "y", "l", "r"], pc1_rows)
    written["sorted_curves"] = len(curve_rows)
    written["pc1_intervals"] = len(pc1_rows)
    if latent_rows:
        write_csv(plots / "intervals_vs_latent.csv",
                  ["run", "p", "seed", "latent", "y", "l", "r"], latent_rows)
        written["intervals_vs_latent"] = len(latent_rows)

    # aggregate-derived families
    def mean_width(dataset, method, p):
        vals = [float(r[col["avg_width"]]) for r in rows
                if r[col["dataset"]] == dataset and r[col["method"]] == method
                and r[col["p"]] == p]
        return float(np.mean(vals)) if vals else None

    datasets = sorted({r[col["dataset"]] for r in rows})
    ps = sorted({r[col["p"]] for r in rows}, key=float)
    methods = list(dict.fromkeys(r[col["method"]] for r in rows))

    rel_rows = []
    for base, trial in (("CRF", "SSCP"), ("CQR", "CQR_SSCP(indep)"),
                        ("CQR", "CQR_SSCP(shared)"), ("SSCP_LABELED", "SSCP_ALL")):
        if base not in methods or trial not in methods:
            continue
        for ds_name in datasets:
            for p in ps:
                wb, wt = mean_width(ds_name, base, p), mean_width(ds_name, trial, p)
                if wb and wt:
                    rel_rows.append([ds_name, p, trial, base, wt, wb, wt / wb])
    if rel_rows:
        write_csv(plots / "relative_width_vs_p.csv",
                  ["dataset", "p", "method", "baseline", "method_width",
                   "baseline_width", "relative_width"], rel_rows)
        written["relative_width_vs_p"] = len(rel_rows)

    if "CRF" in methods and "SSCP" in methods:
        ci_rows = []
        for ds_name in datasets:
            for p in ps:
                gains = []
                seeds = sorted({int(r[col["seed"]]) for r in rows
                                if r[col["dataset"]] == ds_name and r[col["p"]] == p})
                for s in seeds:
                    pair = {}
                    for r in rows:
                        if (r[col["dataset"]] == ds_name and r[col["p"]] == p
                                and int(r[col["seed"]]) == s):
                            pair[r[col["method"]]] = float(r[col["avg_width"]])
                    if "CRF" in pair and "SSCP" in pair:
                        gains.append(pair["CRF"] - pair["SSCP"])
                if len(gains) >= 2:
                    ci = metrics.gain_ci(np.array(gains), level=0.9)
                    ci_rows.append([ds_name, p, len(gains), ci.mean, ci.lower, ci.upper])
        if ci_rows:
            write_csv(plots / "gain_ci.csv",
                      ["dataset", "p", "n_seeds", "mean_gain", "lower", "upper"], ci_rows)
            written["gain_ci"] = len(ci_rows)

    return written
