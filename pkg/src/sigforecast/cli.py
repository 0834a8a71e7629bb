"""Command-line frontend: synthesize, extract, train, evaluate, grid.

Commands are deterministic given (inputs, config, seed) and independent of
the worker count.  Exit codes: 0 success, 1 usage or configuration error,
2 data error, 3 numerical failure.  Every emitted text file starts with a
provenance line carrying the tool version and the configuration hash.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__, evaluation, featbank, fileformats, pipeline, prep
from . import sparsefit, synth
from .errors import ConfigError, DataError, NumericalError, SigForecastError

# key -> (type, default); booleans accept true/false, 1/0, yes/no
CONFIG_SCHEMA: dict[str, tuple[type, object]] = {
    "seed": (int, 0),
    "workers": (int, 1),
    "out": (str, "."),
    # synthesis
    "patient_id": (str, "synth"),
    "duration_hours": (float, 400.0),
    "channel_count": (int, 16),
    "sample_rate": (int, 400),
    "mean_interval_hours": (float, 8.0),
    "refractory_hours": (float, 5.0),
    "baseline_uv": (float, 60.0),
    "ac_shift": (float, 0.015),
    "variance_gain": (float, 0.0),
    "spike_rate_gain": (float, 0.0),
    "ramp_minutes": (float, 15.0),
    "dropout_per_hour": (float, 0.2),
    # features
    "feature_set": (str, "all"),
    "window_sec": (float, 10.0),
    "xc_pair_mode": (str, "paper-count"),
    "sig_precision": (str, "float32"),
    "fft_exponent_step": (float, 0.1),
    "fft_exponent_max": (float, 5.1),
    # labeling and smoothing
    "sigma_min": (float, 10.0),
    "alpha": (float, 1.0),
    # preprocessing
    "cutoff_hz": (float, 170.0),
    "settle_days": (float, 100.0),
    "post_ictal_hours": (float, 4.0),
    "horizon_minutes": (float, 120.0),
    # lasso
    "lasso_lambda_count": (int, 100),
    "lasso_lambda_min_ratio": (float, 1e-4),
    "lasso_tol": (float, 1e-7),
    "lasso_max_iter": (int, 100_000),
    "lasso_intercept": (bool, False),
    "cv_forward_only": (bool, False),
    # subset selection
    "subset_eta0": (float, 1.0),
    "subset_max_iter": (int, 500),
    "subset_patience": (int, 20),
    # grid axes
    "grid_sigma_minutes": (str, "5,10,20"),
    "grid_delta_seconds": (str, "5,10,20"),
    "grid_alphas": (str, "0,1,10"),
    "grid_feature_sets": (str, "sig,mo,ac,ft"),
}


def _coerce(key: str, raw: str):
    typ, _ = CONFIG_SCHEMA[key]
    if typ is bool:
        low = raw.strip().lower()
        if low in ("1", "true", "yes"):
            return True
        if low in ("0", "false", "no"):
            return False
        raise ConfigError(f"config key {key}: expected boolean, got {raw!r}")
    try:
        return typ(raw)
    except ValueError as exc:
        raise ConfigError(f"config key {key}: {exc}")


@dataclass
class RunConfig:
    values: dict

    def __getattr__(self, key):
        try:
            return self.values[key]
        except KeyError:
            raise AttributeError(key)

    #: keys that do not influence computed results
    _NON_SEMANTIC = ("out", "workers")

    @property
    def config_hash(self) -> str:
        blob = "\n".join(
            f"{k}={self.values[k]}"
            for k in sorted(self.values)
            if k not in self._NON_SEMANTIC
        )
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    @property
    def provenance(self) -> str:
        return f"sigforecast {__version__} config={self.config_hash}"

    def floats(self, key) -> tuple[float, ...]:
        return tuple(float(x) for x in str(self.values[key]).split(",") if x)

    def strings(self, key) -> tuple[str, ...]:
        return tuple(x.strip() for x in str(self.values[key]).split(",") if x)

    def feature_config(self) -> featbank.FeatureConfig:
        return featbank.FeatureConfig(
            xc_pair_mode=self.xc_pair_mode,
            sig_precision=self.sig_precision,
            fft_exponent_step=self.fft_exponent_step,
            fft_exponent_max=self.fft_exponent_max,
            sample_rate_hz=float(self.sample_rate),
        )

    def lasso_config(self) -> sparsefit.LassoConfig:
        return sparsefit.LassoConfig(
            lambda_count=self.lasso_lambda_count,
            lambda_min_ratio=self.lasso_lambda_min_ratio,
            tol=self.lasso_tol,
            max_iter=self.lasso_max_iter,
            fit_intercept=self.lasso_intercept,
            cv_forward_only=self.cv_forward_only,
        )

    def subset_config(self) -> sparsefit.SubsetConfig:
        return sparsefit.SubsetConfig(
            eta0=self.subset_eta0,
            max_iter=self.subset_max_iter,
            patience=self.subset_patience,
        )

    def synth_config(self) -> synth.SynthConfig:
        return synth.SynthConfig(
            seed=self.seed,
            duration_hours=self.duration_hours,
            channel_count=self.channel_count,
            sample_rate=self.sample_rate,
            mean_interval_hours=self.mean_interval_hours,
            refractory_hours=self.refractory_hours,
            baseline_uv=self.baseline_uv,
            ac_shift=self.ac_shift,
            variance_gain=self.variance_gain,
            spike_rate_gain=self.spike_rate_gain,
            ramp_minutes=self.ramp_minutes,
            dropout_per_hour=self.dropout_per_hour,
            patient_id=self.patient_id,
        )

    def prep_kwargs(self) -> dict:
        return dict(
            cutoff_hz=self.cutoff_hz,
            settle_days=self.settle_days,
            post_ictal_hours=self.post_ictal_hours,
            horizon_minutes=self.horizon_minutes,
        )


def load_config(path=None, overrides=None) -> RunConfig:
    values = {k: v for k, (_, v) in CONFIG_SCHEMA.items()}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file {p} not found")
        for lineno, line in enumerate(p.read_text(encoding="utf-8").splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{p}:{lineno}: expected key=value, got {line!r}")
            key, raw = (s.strip() for s in line.split("=", 1))
            if key not in CONFIG_SCHEMA:
                raise ConfigError(f"{p}:{lineno}: unknown config key {key!r}")
            values[key] = _coerce(key, raw)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in CONFIG_SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = value
    return RunConfig(values)


# ---------------------------------------------------------------------------
# dataset discovery and split helpers


def find_dataset(directory) -> tuple[Path, Path]:
    """Locate (signal file, annotation file) in a dataset directory."""
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"{directory}: not a dataset directory")
    signals = sorted(directory.glob("*.f32raw")) + sorted(directory.glob("*.csv"))
    signals = [p for p in signals if not p.name.endswith(".windows.csv")]
    annotations = sorted(directory.glob("*.seiz"))
    if len(signals) != 1 or len(annotations) != 1:
        raise DataError(
            f"{directory}: expected exactly one signal and one .seiz file, "
            f"found {len(signals)} and {len(annotations)}"
        )
    return signals[0], annotations[0]


def pseudo_segments(ff: fileformats.FeatureFile) -> list[prep.Segment]:
    """Minimal segment records (id + onset) reconstructed from provenance."""
    segs = []
    for sid in sorted(ff.segment_onsets):
        segs.append(
            prep.Segment(
                segment_id=sid,
                patient_id=ff.patient_id,
                onset_s=ff.segment_onsets[sid],
                start_sample=0,
                end_sample=1,
                sample_rate=ff.table.sample_rate,
            )
        )
    return segs


def split_for_phase(ff: fileformats.FeatureFile, phase: str) -> prep.SplitAssignment:
    scheme = "validation-phase" if phase == "validation" else "final-phase"
    return prep.split_dataset(
        ff.table.segment_id, pseudo_segments(ff), ff.table.duration_s, scheme
    )


def append_results_row(path, report: evaluation.EvaluationReport, provenance: str):
    path = Path(path)
    if not path.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
        header = ""
        if provenance:
            header += f"# {provenance}\n"
        header += evaluation.RESULT_COLUMNS + "\n"
        path.write_text(header, encoding="utf-8")
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(report.csv_row() + "\n")


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args, cfg: RunConfig) -> int:
    out_dir = Path(args.out or cfg.out)
    source = synth.SyntheticSource(cfg.synth_config())
    annotations = source.annotations
    paths = synth.write_dataset(
        source, annotations, out_dir, provenance=cfg.provenance
    )
    segments = prep.extract_lead_segments(
        source, annotations, cfg.post_ictal_hours, cfg.horizon_minutes,
        cfg.settle_days,
    )
    print(f"dataset written to {out_dir}")
    print(f"duration_hours={cfg.duration_hours:g}")
    print(f"n_seizures={len(annotations)}")
    print(f"n_lead_seizures={len(segments)}")
    for key, value in paths.items():
        print(f"{key}={value}")
    return 0


def cmd_extract(args, cfg: RunConfig) -> int:
    data_path, ann_path = find_dataset(args.data_dir)
    recording = prep.load_recording(data_path)
    annotations = prep.load_annotations(ann_path)
    window_sec = args.window_sec if args.window_sec is not None else cfg.window_sec
    feature_set = args.features or cfg.feature_set
    delta_samples = int(round(window_sec * recording.sample_rate))
    feat_cfg = replace(
        cfg.feature_config(), sample_rate_hz=float(recording.sample_rate)
    )
    matrix, table, segments = pipeline.assemble_features(
        recording,
        annotations,
        delta_samples,
        feature_set,
        feat_cfg,
        workers=cfg.workers,
        **cfg.prep_kwargs(),
    )
    if len(table) == 0:
        raise DataError(
            "no usable windows after exclusions: "
            f"{table.n_candidates} candidates, {table.n_nan_excluded} with "
            f"dropouts, {table.n_flat_excluded} below the variance threshold"
        )
    out = Path(args.out or (Path(cfg.out) / f"{recording.patient_id}_features.sfm"))
    out.parent.mkdir(parents=True, exist_ok=True)
    fileformats.write_feature_file(
        out,
        matrix,
        table,
        patient_id=recording.patient_id,
        feature_set=featbank.normalize_set_id(feature_set),
        segment_onsets={s.segment_id: s.onset_s for s in segments},
        provenance=cfg.provenance,
    )
    print(f"features written to {out}")
    print(f"n_features={matrix.n_features}")
    print(f"n_windows={matrix.n_windows}")
    print(
        f"excluded: nan={table.n_nan_excluded} "
        f"low_variance={table.n_flat_excluded}"
    )
    return 0


def _resolve_budget(args) -> int | None:
    if args.budget is not None:
        return args.budget
    if args.budget_from is not None:
        donor = sparsefit.load_model(args.budget_from)
        return max(1, len(donor.names))
    return None


def cmd_train(args, cfg: RunConfig) -> int:
    ff = fileformats.read_feature_file(args.features_file)
    sigma_min = args.sigma_min if args.sigma_min is not None else cfg.sigma_min
    alpha = args.alpha if args.alpha is not None else cfg.alpha
    split = split_for_phase(ff, "test")  # final-phase split for training
    train_idx = split.indices("train")
    labels = prep.labels_from_tts(ff.table.time_to_seizure, sigma_min)
    if len(np.unique(labels[train_idx])) < 2:
        pos = int((labels[train_idx] == 1).sum())
        raise DataError(
            f"single-class training data: {pos} pre-ictal of {train_idx.size}"
        )
    cw = prep.class_weight_map(labels[train_idx])
    weights = np.where(labels == 1, cw[1], cw[-1])
    X, scaler = prep.standardize_features(ff.matrix.values, train_idx, inplace=True)
    names = ff.matrix.names
    if args.classifier == "lasso":
        sel = sparsefit.cv_select_lambda(
            X[:, train_idx],
            labels[train_idx],
            weights[train_idx],
            split.fold[train_idx],
            cfg.lasso_config(),
            feature_names=names,
            scaler=scaler,
        )
        model = sel.model
        print(f"lambda_opt={model.lam:.10g} (grid index {sel.lambda_index})")
    else:
        budget = _resolve_budget(args)
        if budget is None:
            raise ConfigError(
                "subset training needs --budget or --budget-from <lasso model>"
            )
        ridge_lambda = float(train_idx.size) ** -0.5
        model = sparsefit.fit_subset_select(
            X[:, train_idx],
            labels[train_idx],
            weights[train_idx],
            budget=budget,
            ridge_lambda=ridge_lambda,
            config=cfg.subset_config(),
            feature_names=names,
            scaler=scaler,
        )
        print(f"budget={budget} ridge_lambda={ridge_lambda:.10g}")
    raw = sparsefit.predict_scores(model, X[:, train_idx])
    smoothed = sparsefit.ema_smooth(
        sparsefit.RiskScoreSeries(raw, ff.table.segment_id[train_idx]), alpha
    ).smoothed
    train_auc = evaluation.auc(smoothed, labels[train_idx])
    out = Path(args.out or (Path(cfg.out) / f"{ff.patient_id}_{args.classifier}.model"))
    out.parent.mkdir(parents=True, exist_ok=True)
    sparsefit.save_model(
        out,
        model,
        alpha=alpha,
        sigma_min=sigma_min,
        delta_sec=ff.table.delta_samples / ff.table.sample_rate,
        feature_set=ff.feature_set,
        provenance=cfg.provenance,
    )
    print(f"model written to {out}")
    print(f"support_size={model.n_selected}")
    print(f"train_auc={train_auc:.10g}")
    return 0


def cmd_evaluate(args, cfg: RunConfig) -> int:
    model = sparsefit.load_model(args.model_file)
    ff = fileformats.read_feature_file(args.features_file)
    phase = args.phase
    split = split_for_phase(ff, phase)
    role = "train" if phase == "train" else phase
    eval_idx = split.indices(role)
    if eval_idx.size == 0:
        raise DataError(f"no windows in the {phase} split")
    labels = prep.labels_from_tts(ff.table.time_to_seizure, model.sigma_min)
    raw = model.score_raw_features(
        ff.matrix.values[:, eval_idx], ff.matrix.names
    )
    if not np.isfinite(raw).all():
        raise NumericalError("non-finite risk scores; model or features corrupt")
    series = sparsefit.RiskScoreSeries(raw, ff.table.segment_id[eval_idx])
    smoothed = sparsefit.ema_smooth(series, model.alpha).smoothed
    score_auc = evaluation.auc(smoothed, labels[eval_idx])
    report = evaluation.EvaluationReport(
        patient_id=ff.patient_id,
        phase=phase,
        feature_set=model.feature_set,
        classifier=model.classifier,
        sigma_min=model.sigma_min,
        delta_sec=model.delta_sec,
        alpha=model.alpha,
        auc=score_auc,
        lam=float(model.extras["lambda"]) if "lambda" in model.extras else None,
        budget=int(model.extras["budget"]) if "budget" in model.extras else None,
        n_features_selected=len(model.names),
        n_eval_windows=int(eval_idx.size),
        n_preictal=int((labels[eval_idx] == 1).sum()),
    )
    results = Path(args.results or (Path(cfg.out) / "results.csv"))
    append_results_row(results, report, cfg.provenance)
    print(f"auc={score_auc:.10g}")
    print(f"results row appended to {results}")
    return 0


class _JsonlCellCache:
    """Per-cell grid results persisted as JSON lines for --resume."""

    def __init__(self, path: Path, resume: bool):
        self.path = path
        self.entries: dict[str, list] = {}
        if resume and path.exists():
            for line in path.read_text(encoding="utf-8").splitlines():
                if not line.strip():
                    continue
                obj = json.loads(line)
                self.entries[obj["key"]] = obj["reports"]
        elif path.exists():
            path.unlink()

    @staticmethod
    def _key(key_tuple) -> str:
        pid, fs_id, sigma, delta = key_tuple
        return f"{pid}|{fs_id}|{sigma:g}|{delta:g}"

    def get(self, key_tuple):
        raw = self.entries.get(self._key(key_tuple))
        if raw is None:
            return None
        return [self._from_dict(d) for d in raw]

    def put(self, key_tuple, reports):
        key = self._key(key_tuple)
        raw = [self._to_dict(r) for r in reports]
        self.entries[key] = raw
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps({"key": key, "reports": raw}, sort_keys=True) + "\n")

    @staticmethod
    def _to_dict(r: evaluation.EvaluationReport) -> dict:
        return {
            "patient_id": r.patient_id,
            "phase": r.phase,
            "feature_set": r.feature_set,
            "classifier": r.classifier,
            "sigma_min": r.sigma_min,
            "delta_sec": r.delta_sec,
            "alpha": r.alpha,
            "auc": None if not np.isfinite(r.auc) else r.auc,
            "auc_raw": None if not np.isfinite(r.auc_raw) else r.auc_raw,
            "lam": r.lam,
            "budget": r.budget,
            "n_features_selected": r.n_features_selected,
            "n_eval_windows": r.n_eval_windows,
            "n_preictal": r.n_preictal,
            "status": r.status,
            "support_by_family": r.support_by_family,
        }

    @staticmethod
    def _from_dict(d: dict) -> evaluation.EvaluationReport:
        d = dict(d)
        d["auc"] = np.nan if d.get("auc") is None else d["auc"]
        d["auc_raw"] = np.nan if d.get("auc_raw") is None else d["auc_raw"]
        return evaluation.EvaluationReport(**d)


def cmd_grid(args, cfg: RunConfig) -> int:
    root = Path(args.data_root)
    if args.patients:
        patient_dirs = [root / p for p in args.patients.split(",")]
    else:
        patient_dirs = sorted(d for d in root.iterdir() if d.is_dir())
    if not patient_dirs:
        raise DataError(f"{root}: no patient dataset directories")
    patients = []
    for d in patient_dirs:
        data_path, ann_path = find_dataset(d)
        patients.append(
            pipeline.PatientData(
                prep.load_recording(data_path), prep.load_annotations(ann_path)
            )
        )
    out_dir = Path(args.out or cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    cache = _JsonlCellCache(out_dir / "grid_state.jsonl", resume=args.resume)
    result = evaluation.run_grid_search(
        patients,
        sigma_grid=cfg.floats("grid_sigma_minutes"),
        delta_grid=cfg.floats("grid_delta_seconds"),
        alpha_grid=cfg.floats("grid_alphas"),
        feature_sets=cfg.strings("grid_feature_sets"),
        feature_config=cfg.feature_config(),
        lasso_config=cfg.lasso_config(),
        workers=cfg.workers,
        prep_kwargs=cfg.prep_kwargs(),
        cache=cache,
    )
    results_path = out_dir / "results.csv"
    evaluation.write_results_csv(result.reports, results_path, cfg.provenance)
    evaluation.summarize(result.reports, out_dir, cfg.provenance)
    n_errors = sum(1 for r in result.reports if r.status != "ok")
    print(f"grid complete: {len(result.reports)} rows, {n_errors} error cells")
    print(f"results written to {results_path}")
    if n_errors and not args.permissive:
        print("error cells present; rerun with --permissive to accept them")
        return 2
    return 0


# ---------------------------------------------------------------------------
# entry point


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> _Parser:
    common = argparse.ArgumentParser(add_help=False)
    # SUPPRESS keeps values set before the subcommand from being clobbered
    common.add_argument("--config", default=argparse.SUPPRESS,
                        help="flat key=value config file")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                        help="global random seed")
    common.add_argument("--workers", type=int, default=argparse.SUPPRESS,
                        help="worker pool size")
    common.add_argument("--out", default=argparse.SUPPRESS,
                        help="output directory or file")

    parser = _Parser(prog="sigforecast", description=__doc__, parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common],
                       help="generate a synthetic dataset")
    p.add_argument("--duration-hours", type=float, dest="duration_hours")
    p.add_argument("--channels", type=int, dest="channel_count")
    p.add_argument("--patient-id", dest="patient_id")
    p.add_argument("--mean-interval-hours", type=float, dest="mean_interval_hours")
    p.add_argument("--ac-shift", type=float, dest="ac_shift")
    p.add_argument("--dropout-per-hour", type=float, dest="dropout_per_hour")

    p = sub.add_parser("extract", parents=[common],
                       help="extract a feature matrix from a dataset")
    p.add_argument("data_dir")
    p.add_argument("--features", choices=featbank.FEATURE_SET_IDS)
    p.add_argument("--window-sec", type=float)

    p = sub.add_parser("train", parents=[common],
                       help="train a classifier on extracted features")
    p.add_argument("features_file")
    p.add_argument("--classifier", choices=("lasso", "subset"), default="lasso")
    p.add_argument("--sigma-min", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--budget", type=int)
    p.add_argument("--budget-from", help="lasso model file providing the budget")

    p = sub.add_parser("evaluate", parents=[common],
                       help="evaluate a model on a split")
    p.add_argument("model_file")
    p.add_argument("features_file")
    p.add_argument("--phase", choices=("train", "validation", "test"),
                   default="test")
    p.add_argument("--results", help="results CSV to append to")

    p = sub.add_parser("grid", parents=[common],
                       help="run the hyperparameter grid search")
    p.add_argument("data_root")
    p.add_argument("--patients", help="comma-separated patient directory names")
    p.add_argument("--permissive", action="store_true",
                   help="exit 0 even when cells carry error marks")
    p.add_argument("--resume", action="store_true",
                   help="reuse cached cells from an interrupted run")
    return parser


_COMMANDS = {
    "synth": cmd_synth,
    "extract": cmd_extract,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "grid": cmd_grid,
}

_CONFIG_OVERRIDE_KEYS = (
    "seed",
    "workers",
    "duration_hours",
    "channel_count",
    "patient_id",
    "mean_interval_hours",
    "ac_shift",
    "dropout_per_hour",
    "window_sec",
    "sigma_min",
    "alpha",
)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        for key in ("config", "seed", "workers", "out"):
            if not hasattr(args, key):
                setattr(args, key, None)
        overrides = {
            k: getattr(args, k)
            for k in _CONFIG_OVERRIDE_KEYS
            if hasattr(args, k) and getattr(args, k) is not None
        }
        if args.out is not None:
            overrides["out"] = args.out
        cfg = load_config(args.config, overrides)
        return _COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"usage/config error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3
    except SigForecastError as exc:  # pragma: no cover - safety net
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
