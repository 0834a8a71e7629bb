"""AUC computation, grid-search protocol, final-model comparison, summaries.

The grid search runs the validation-phase protocol: for every (feature set,
sigma, delta) cell a Lasso path is tuned by blocked 10-fold CV on the first
half of the observation period, refitted at the selected penalty, and the
validation block (50-70%) is scored; each smoothing strength alpha is then
applied to÷ the same scores, so 108 reports per patient cost 36 fits.  The
final-model comparison uses the 70/30 split on the combined feature set and
matches the subset-selection budget to the Lasso support size.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence
from xml.sax.saxutils import escape

import numpy as np

from . import featbank, pipeline, prep, sparsefit
from .errors import DataError, UndefinedAUCError

RESULT_COLUMNS = (
    "patient,phase,feature_set,classifier,sigma_min,delta_sec,alpha,lambda,"
    "budget,n_features_selected,auc,n_test_windows,n_preictal,status"
)

DEFAULT_SIGMA_GRID = (5.0, 10.0, 20.0)
DEFAULT_DELTA_GRID = (5.0, 10.0, 20.0)
DEFAULT_ALPHA_GRID = (0.0, 1.0, 10.0)
DEFAULT_FEATURE_SETS = ("sig", "mo", "ac", "ft")


def auc(scores, labels) -> float:
    """Rank-based (Mann-Whitney) AUC with ties credited one half.

    Computed from average ranks in O(M log M); agrees exactly with the
    quadratic pairwise definition.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = labels == 1
    neg = labels == -1
    n_pos = int(pos.sum())
    n_neg = int(neg.sum())
    if n_pos == 0 or n_neg == 0:
        raise UndefinedAUCError(
            f"AUC undefined: {n_pos} positive and {n_neg} negative labels"
        )
    order = np.argsort(scores, kind="mergesort")
    sorted_scores = scores[order]
    ranks = np.empty(len(scores))
    boundaries = np.flatnonzero(np.diff(sorted_scores) != 0) + 1
    edges = np.concatenate(([0], boundaries, [len(scores)]))
    for lo, hi in zip(edges[:-1], edges[1:]):
        ranks[order[lo:hi]] = 0.5 * (lo + 1 + hi)  # average 1-based rank
    u_stat = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u_stat / (n_pos * n_neg))


@dataclass
class EvaluationReport:
    patient_id: str
    phase: str
    feature_set: str
    classifier: str
    sigma_min: float
    delta_sec: float
    alpha: float
    auc: float = np.nan
    auc_raw: float = np.nan
    lam: Optional[float] = None
    budget: Optional[int] = None
    n_features_selected: int = 0
    n_eval_windows: int = 0
    n_preictal: int = 0
    status: str = "ok"
    support_by_family: Optional[dict] = None

    def sort_key(self):
        return (
            self.patient_id,
            self.phase,
            self.sigma_min,
            self.delta_sec,
            self.alpha,
            self.feature_set,
            self.classifier,
        )

    def csv_row(self) -> str:
        def num(x, fmt="%.10g"):
            if x is None or (isinstance(x, float) and not np.isfinite(x)):
                return ""
            return fmt % x

        return ",".join(
            [
                self.patient_id,
                self.phase,
                self.feature_set,
                self.classifier,
                num(self.sigma_min, "%g"),
                num(self.delta_sec, "%g"),
                num(self.alpha, "%g"),
                num(self.lam),
                "" if self.budget is None else str(self.budget),
                str(self.n_features_selected),
                num(self.auc),
                str(self.n_eval_windows),
                str(self.n_preictal),
                self.status,
            ]
        )


@dataclass
class GridResult:
    reports: list[EvaluationReport]
    extraction_counts: dict = field(default_factory=dict)

    def ok_reports(self):
        return [r for r in self.reports if r.status == "ok"]


def write_results_csv(reports, path, provenance: str = "") -> None:
    lines = []
    if provenance:
        lines.append(f"# {provenance}")
    lines.append(RESULT_COLUMNS)
    for rep in sorted(reports, key=lambda r: r.sort_key()):
        lines.append(rep.csv_row())
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_results_csv(path) -> list[str]:
    return [
        line
        for line in Path(path).read_text(encoding="utf-8").splitlines()
        if line and not line.startswith("#")
    ]


# ---------------------------------------------------------------------------
# protocol runners


def _standardized_slice(matrix, rows, train_idx):
    X = np.array(matrix.values[rows], dtype=matrix.values.dtype)
    X, scaler = prep.standardize_features(X, train_idx, inplace=True)
    return X, scaler


def _scored_report(
    base: EvaluationReport,
    model: sparsefit.ModelCoefficients,
    X_eval,
    labels_eval,
    seg_eval,
    alphas,
    names,
) -> list[EvaluationReport]:
    raw = sparsefit.predict_scores(model, X_eval)
    series = sparsefit.RiskScoreSeries(raw, seg_eval)
    try:
        auc_raw = auc(raw, labels_eval)
    except UndefinedAUCError:
        auc_raw = np.nan
    out = []
    for alpha in alphas:
        smoothed = sparsefit.ema_smooth(series, alpha).smoothed
        rep = replace(
            base,
            alpha=alpha,
            auc=auc(smoothed, labels_eval),
            auc_raw=auc_raw,
            lam=model.lam,
            budget=model.budget,
            n_features_selected=model.n_selected,
            n_eval_windows=int(labels_eval.size),
            n_preictal=int((labels_eval == 1).sum()),
            support_by_family=pipeline.support_by_family(names, model.support),
        )
        out.append(rep)
    return out


def run_grid_search(
    patients: Sequence[pipeline.PatientData],
    *,
    sigma_grid=DEFAULT_SIGMA_GRID,
    delta_grid=DEFAULT_DELTA_GRID,
    alpha_grid=DEFAULT_ALPHA_GRID,
    feature_sets=DEFAULT_FEATURE_SETS,
    feature_config: featbank.FeatureConfig = featbank.DEFAULT_CONFIG,
    lasso_config: sparsefit.LassoConfig = sparsefit.LassoConfig(),
    workers: int = 1,
    prep_kwargs: Optional[dict] = None,
    cache=None,
) -> GridResult:
    """Validation-phase grid: one report per (set, sigma, delta, alpha) cell.

    Feature matrices are extracted once per (patient, delta) on the combined
    set and sliced per family, so sigma and alpha reuse the extraction.
    Cells that fail (degenerate folds, undefined AUC) are reported with an
    error status rather than dropped.  `cache` (get/put by cell key) lets an
    interrupted run resume without recomputing finished cells.
    """
    prep_kwargs = prep_kwargs or {}
    reports: list[EvaluationReport] = []
    extraction_counts: dict[str, int] = {}
    for patient in patients:
        pid = patient.patient_id
        extraction_counts[pid] = 0
        for delta_sec in delta_grid:
            all_cells = [
                (fs_id, sigma) for fs_id in feature_sets for sigma in sigma_grid
            ]
            if cache is not None:
                cached = {
                    cell: cache.get((pid, cell[0], cell[1], delta_sec))
                    for cell in all_cells
                }
                if all(v is not None for v in cached.values()):
                    for cell in all_cells:
                        reports.extend(cached[cell])
                    continue
            delta_samples = int(round(delta_sec * patient.source.sample_rate))
            matrix, table, segments = pipeline.assemble_features(
                patient.source,
                patient.annotations,
                delta_samples,
                "all",
                feature_config,
                workers=workers,
                **prep_kwargs,
            )
            extraction_counts[pid] += 1
            split = prep.split_dataset(
                table.segment_id, segments, table.duration_s, "validation-phase"
            )
            train_idx = split.indices("train")
            eval_idx = split.indices("validation")
            seg_eval = table.segment_id[eval_idx]
            cells = all_cells

            def run_cell(cell):
                fs_id, sigma = cell
                if cache is not None:
                    hit = cache.get((pid, fs_id, sigma, delta_sec))
                    if hit is not None:
                        return hit
                base = EvaluationReport(
                    patient_id=pid,
                    phase="validation",
                    feature_set=fs_id,
                    classifier="lasso",
                    sigma_min=sigma,
                    delta_sec=delta_sec,
                    alpha=np.nan,
                )
                try:
                    rows = pipeline.family_rows(matrix.names, fs_id)
                    names = [matrix.names[i] for i in rows]
                    X, scaler = _standardized_slice(matrix, rows, train_idx)
                    labels = prep.labels_from_tts(table.time_to_seizure, sigma)
                    cw = prep.class_weight_map(labels[train_idx])
                    weights = np.where(labels == 1, cw[1], cw[-1])
                    with warnings.catch_warnings():
                        warnings.simplefilter("ignore")
                        sel = sparsefit.cv_select_lambda(
                            X[:, train_idx],
                            labels[train_idx],
                            weights[train_idx],
                            split.fold[train_idx],
                            lasso_config,
                            feature_names=names,
                            scaler=scaler,
                        )
                    out = _scored_report(
                        base,
                        sel.model,
                        X[:, eval_idx],
                        labels[eval_idx],
                        seg_eval,
                        alpha_grid,
                        names,
                    )
                except Exception as exc:  # noqa: BLE001 - cell isolation
                    out = [
                        replace(base, alpha=a, status=f"error:{type(exc).__name__}")
                        for a in alpha_grid
                    ]
                if cache is not None:
                    cache.put((pid, fs_id, sigma, delta_sec), out)
                return out

            if workers > 1 and len(cells) > 1:
                with ThreadPoolExecutor(max_workers=workers) as pool:
                    for cell_reports in pool.map(run_cell, cells):
                        reports.extend(cell_reports)
            else:
                for cell in cells:
                    reports.extend(run_cell(cell))
    return GridResult(sorted(reports, key=lambda r: r.sort_key()), extraction_counts)


def run_final_models(
    patient: pipeline.PatientData,
    *,
    sigma_min: float = 10.0,
    delta_sec: float = 10.0,
    alpha: float = 1.0,
    feature_config: featbank.FeatureConfig = featbank.DEFAULT_CONFIG,
    lasso_config: sparsefit.LassoConfig = sparsefit.LassoConfig(),
    subset_config: sparsefit.SubsetConfig = sparsefit.SubsetConfig(),
    classifiers: Sequence[str] = ("lasso", "subset"),
    workers: int = 1,
    prep_kwargs: Optional[dict] = None,
) -> list[EvaluationReport]:
    """Final-phase comparison on the combined feature set.

    The Lasso penalty is tuned by 10-fold CV on the first 70% and evaluated
    on the last 30%; subset selection trains with the budget matched to the
    Lasso support (floored at one, with a warning, if the support is empty)
    and the default ridge scale 1/sqrt(M_train).
    """
    prep_kwargs = prep_kwargs or {}
    source = patient.source
    delta_samples = int(round(delta_sec * source.sample_rate))
    matrix, table, segments = pipeline.assemble_features(
        source,
        patient.annotations,
        delta_samples,
        "all",
        feature_config,
        workers=workers,
        **prep_kwargs,
    )
    split = prep.split_dataset(
        table.segment_id, segments, table.duration_s, "final-phase"
    )
    train_idx = split.indices("train")
    test_idx = split.indices("test")
    labels = prep.labels_from_tts(table.time_to_seizure, sigma_min)
    cw = prep.class_weight_map(labels[train_idx])
    weights = np.where(labels == 1, cw[1], cw[-1])
    X, scaler = prep.standardize_features(
        matrix.values, train_idx, inplace=True
    )
    names = matrix.names
    base = EvaluationReport(
        patient_id=patient.patient_id,
        phase="test",
        feature_set="all",
        classifier="",
        sigma_min=sigma_min,
        delta_sec=delta_sec,
        alpha=alpha,
    )
    seg_eval = table.segment_id[test_idx]
    reports: list[EvaluationReport] = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        sel = sparsefit.cv_select_lambda(
            X[:, train_idx],
            labels[train_idx],
            weights[train_idx],
            split.fold[train_idx],
            lasso_config,
            feature_names=names,
            scaler=scaler,
        )
    if "lasso" in classifiers:
        reports.extend(
            _scored_report(
                replace(base, classifier="lasso"),
                sel.model,
                X[:, test_idx],
                labels[test_idx],
                seg_eval,
                (alpha,),
                names,
            )
        )
    if "subset" in classifiers:
        budget = sel.model.n_selected
        if budget == 0:
            warnings.warn(
                "empty lasso support; running subset selection with budget 1",
                stacklevel=2,
            )
            budget = 1
        subset_model = sparsefit.fit_subset_select(
            X[:, train_idx],
            labels[train_idx],
            weights[train_idx],
            budget=budget,
            config=subset_config,
            feature_names=names,
            scaler=scaler,
        )
        reports.extend(
            _scored_report(
                replace(base, classifier="subset"),
                subset_model,
                X[:, test_idx],
                labels[test_idx],
                seg_eval,
                (alpha,),
                names,
            )
        )
    return reports


# ---------------------------------------------------------------------------
# summaries and plots


def summarize(reports: Sequence[EvaluationReport], out_dir, provenance: str = ""):
    """Emit summary tables (CSV) and self-contained SVG plots.

    Returns a dict of written paths.  Medians/extremes are recomputable from
    the per-cell results CSV.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = {}
    grid = [r for r in reports if r.classifier == "lasso" and r.phase == "validation"]
    final = [r for r in reports if r.phase == "test"]

    patients = sorted({r.patient_id for r in grid})
    sets = sorted({r.feature_set for r in grid})
    lines = [f"# {provenance}"] if provenance else []
    header = "patient,n_cells,n_errors,median_auc,min_auc,max_auc"
    header += "".join(f",best_{s}" for s in sets)
    lines.append(header)
    stats = {}
    for pid in patients:
        rows = [r for r in grid if r.patient_id == pid]
        ok = [r for r in rows if r.status == "ok"]
        aucs = np.array([r.auc for r in ok])
        entry = [pid, str(len(rows)), str(len(rows) - len(ok))]
        if aucs.size:
            med, amin, amax = np.median(aucs), aucs.min(), aucs.max()
            entry += ["%.10g" % med, "%.10g" % amin, "%.10g" % amax]
        else:
            med = amin = amax = np.nan
            entry += ["", "", ""]
        best = {}
        for s in sets:
            vals = [r.auc for r in ok if r.feature_set == s]
            best[s] = max(vals) if vals else np.nan
            entry.append("%.10g" % best[s] if vals else "")
        stats[pid] = (med, amin, amax, best)
        lines.append(",".join(entry))
    summary_path = out_dir / "summary.csv"
    summary_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    written["summary"] = summary_path

    if final:
        lines = [f"# {provenance}"] if provenance else []
        lines.append(
            "patient,classifier,auc,n_features_selected,budget,"
            "n_sig,n_mo,n_ac,n_ft"
        )
        for r in sorted(final, key=lambda r: (r.patient_id, r.classifier)):
            fam = r.support_by_family or {}
            lines.append(
                ",".join(
                    [
                        r.patient_id,
                        r.classifier,
                        "%.10g" % r.auc if np.isfinite(r.auc) else "",
                        str(r.n_features_selected),
                        "" if r.budget is None else str(r.budget),
                        str(fam.get("sig", 0)),
                        str(fam.get("mo", 0)),
                        str(fam.get("ac", 0)),
                        str(fam.get("ft", 0)),
                    ]
                )
            )
        comparison_path = out_dir / "comparison.csv"
        comparison_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        written["comparison"] = comparison_path

    if patients:
        svg_path = out_dir / "auc_by_patient.svg"
        _write_box_svg(svg_path, "AUC by patient (validation grid)", stats, sets)
        written["plot"] = svg_path
    return written


_SET_COLORS = {"sig": "#1f77b4", "mo": "#ff7f0e", "ac": "#2ca02c", "ft": "#d62728"}


def _write_box_svg(path, title, stats, sets):
    """Median/min/max whisker plot with best-per-set dots, one column per patient."""
    width = 120 + 90 * max(1, len(stats))
    height = 360
    y0, y1 = 40, 300  # pixel range for AUC 1.0 .. 0.0

    def y_of(v):
        return y0 + (1.0 - v) * (y1 - y0)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        f'<title>{escape(title)}</title>',
        f'<text x="{width // 2}" y="20" text-anchor="middle" '
        f'font-size="14">{escape(title)}</text>',
    ]
    for tick in (0.0, 0.25, 0.5, 0.75, 1.0):
        ty = y_of(tick)
        parts.append(
            f'<line x1="60" y1="{ty:.1f}" x2="{width - 20}" y2="{ty:.1f}" '
            f'stroke="#dddddd"/>'
        )
        parts.append(
            f'<text x="52" y="{ty + 4:.1f}" text-anchor="end" '
            f'font-size="10">{tick:g}</text>'
        )
    for i, (pid, (med, amin, amax, best)) in enumerate(sorted(stats.items())):
        x = 100 + 90 * i
        if np.isfinite(med):
            parts.append(
                f'<line x1="{x}" y1="{y_of(amin):.1f}" x2="{x}" '
                f'y2="{y_of(amax):.1f}" stroke="#333333"/>'
            )
            parts.append(
                f'<rect x="{x - 18}" y="{y_of(med) - 2:.1f}" width="36" '
                f'height="4" fill="#333333"/>'
            )
            for k, s in enumerate(sets):
                v = best.get(s, np.nan)
                if np.isfinite(v):
                    color = _SET_COLORS.get(s, "#888888")
                    parts.append(
                        f'<circle cx="{x - 12 + 8 * k}" cy="{y_of(v):.1f}" '
                        f'r="3.5" fill="{color}"><title>{escape(s)}'
                        f'</title></circle>'
                    )
        parts.append(
            f'<text x="{x}" y="{y1 + 20}" text-anchor="middle" '
            f'font-size="11">{escape(pid)}</text>'
        )
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n", encoding="utf-8")
