"""Streaming orchestration from sample sources to labeled feature matrices.

Recordings at production scale do not fit in memory, so the pipeline pulls
one pre-event segment at a time from a sample source (an in-memory
`prep.Recording`, a memory-mapped file, or a `synth.SyntheticSource`),
filters and normalizes it with enough margin that the result is identical
to whole-recording preprocessing, tiles it into windows, and writes the
surviving windows' features straight into the output matrix.
"""

from __future__ import annotations

import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import featbank, prep
from .errors import DataError


@dataclass
class WindowTable:
    """Provenance of assembled windows; column k of the matrix is row k here."""

    segment_id: np.ndarray
    index_in_segment: np.ndarray
    start_sample: np.ndarray
    time_to_seizure: np.ndarray
    sample_rate: float
    delta_samples: int
    duration_s: float
    n_candidates: int = 0
    n_nan_excluded: int = 0
    n_flat_excluded: int = 0

    def __len__(self) -> int:
        return len(self.segment_id)

    @property
    def window_end_s(self) -> np.ndarray:
        return (self.start_sample + self.delta_samples) / self.sample_rate


@dataclass
class PatientData:
    """A sample source plus its event annotations."""

    source: object  # sample-source protocol: read_span, sample_rate, ...
    annotations: prep.AnnotationSet

    @property
    def patient_id(self) -> str:
        return self.source.patient_id


def assemble_features(
    source,
    annotations: prep.AnnotationSet,
    delta_samples: int,
    set_id: str,
    config: featbank.FeatureConfig = featbank.DEFAULT_CONFIG,
    *,
    cutoff_hz: float = prep.DEFAULT_CUTOFF_HZ,
    norm_divisor: float = 100.0,
    settle_days: float = prep.DEFAULT_SETTLE_DAYS,
    post_ictal_hours: float = prep.DEFAULT_POST_ICTAL_HOURS,
    horizon_minutes: float = prep.DEFAULT_HORIZON_MINUTES,
    min_std: float = prep.MIN_CHANNEL_STD,
    matrix_dtype=np.float32,
    workers: int = 1,
):
    """Segment-streamed feature extraction.

    Returns (FeatureMatrix, WindowTable, segments).  Window exclusion counts
    are recorded on the table so callers can report why a dataset came out
    empty.
    """
    sid = featbank.normalize_set_id(set_id)
    fs = source.sample_rate
    segments = prep.extract_lead_segments(
        source,
        annotations,
        post_ictal_hours=post_ictal_hours,
        horizon_minutes=horizon_minutes,
        settle_days=settle_days,
    )
    names = featbank.feature_names(source.channel_count, sid, config)
    offsets = [prep.window_offsets(seg, delta_samples) for seg in segments]
    starts = np.concatenate(([0], np.cumsum([len(o) for o in offsets]))).astype(int)
    n_max = int(starts[-1])
    values = np.empty((len(names), n_max), dtype=matrix_dtype)
    seg_col = np.empty(n_max, dtype=np.int64)
    idx_col = np.empty(n_max, dtype=np.int64)
    start_col = np.empty(n_max, dtype=np.int64)
    tts_col = np.empty(n_max, dtype=np.float64)
    kept = np.zeros(n_max, dtype=bool)
    stats = np.zeros((len(segments), 2), dtype=np.int64)  # nan, flat per segment

    h = prep.design_lowpass(cutoff_hz, fs)
    pad = len(h)
    p = source.channel_count
    max_span = max(
        (int(seg.end_sample + pad - max(0, int(o[0]) - pad)))
        for seg, o in zip(segments, offsets)
        if o.size
    ) if any(o.size for o in offsets) else 0
    max_win = max((o.size for o in offsets), default=0)
    src_dtype = np.float32  # canonical pipeline dtype
    chunk_cols = featbank._MATRIX_CHUNK

    # Per-thread reusable buffers: large fresh allocations dominate the
    # runtime on hosts with slow page faults.
    workspaces: dict[int, dict] = {}

    def get_ws():
        key = threading.get_ident()
        ws = workspaces.get(key)
        if ws is None:
            ws = {
                "raw": np.empty((p, max_span), dtype=src_dtype),
                "filt": np.empty((p, max_span), dtype=src_dtype),
                "stack": np.empty((max_win, p, delta_samples), dtype=src_dtype),
                "cols": np.empty((len(names), chunk_cols), dtype=matrix_dtype),
            }
            workspaces[key] = ws
        return ws

    def process(i: int):
        seg = segments[i]
        offs = offsets[i]
        if offs.size == 0:
            return
        ws = get_ws()
        span_lo = max(0, int(offs[0]) - pad)
        span_hi = min(source.n_samples, seg.end_sample + pad)
        n_span = span_hi - span_lo
        raw = source.read_span(span_lo, span_hi, out=ws["raw"][:, :n_span])
        filtered = ws["filt"][:, :n_span]
        for c in range(p):
            prep.filter_channel(raw[c], h, out=filtered[c])
        lo = int(offs[0]) - span_lo
        data = filtered[:, lo : lo + offs.size * delta_samples]
        data /= norm_divisor
        keep = prep.window_exclusion_mask(data, delta_samples, min_std)
        n_win = offs.size
        tiles = data.reshape(p, n_win, delta_samples)
        nan_mask = ~np.isfinite(tiles).all(axis=(0, 2))
        stats[i, 0] = int(nan_mask.sum())
        stats[i, 1] = int(n_win - keep.sum() - nan_mask.sum())
        base = starts[i]
        kept_local = np.flatnonzero(keep)
        kept[base + kept_local] = True
        seg_col[base : base + n_win] = seg.segment_id
        idx_col[base : base + n_win] = np.arange(n_win)
        start_col[base : base + n_win] = offs
        tts_col[base : base + n_win] = seg.onset_s - (offs + delta_samples) / fs
        if kept_local.size == 0:
            return
        stack = ws["stack"][: kept_local.size]
        np.copyto(stack, tiles[:, kept_local, :].transpose(1, 0, 2))
        for clo in range(0, stack.shape[0], chunk_cols):
            chi = min(clo + chunk_cols, stack.shape[0])
            block = ws["cols"][:, : chi - clo]
            featbank._extract_batch_into(stack[clo:chi], sid, config, block)
            values[:, base + kept_local[clo:chi]] = block

    if workers > 1 and len(segments) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(process, range(len(segments))))
    else:
        for i in range(len(segments)):
            process(i)

    sel = np.flatnonzero(kept)
    table = WindowTable(
        segment_id=seg_col[sel],
        index_in_segment=idx_col[sel],
        start_sample=start_col[sel],
        time_to_seizure=tts_col[sel],
        sample_rate=fs,
        delta_samples=delta_samples,
        duration_s=source.n_samples / fs,
        n_candidates=n_max,
        n_nan_excluded=int(stats[:, 0].sum()),
        n_flat_excluded=int(stats[:, 1].sum()),
    )
    matrix = featbank.FeatureMatrix(
        np.ascontiguousarray(values[:, sel]), names, None
    )
    return matrix, table, segments


FAMILY_PREFIXES = {
    "sig": ("sig/",),
    "mo": ("mo/",),
    "ac": ("ac/", "xc/"),
    "ft": ("ft/",),
}


def family_rows(names: Sequence[str], set_id: str) -> np.ndarray:
    """Row indices of one feature family within an assembled name table."""
    prefixes = FAMILY_PREFIXES[set_id]
    return np.array(
        [i for i, n in enumerate(names) if n.startswith(prefixes)], dtype=int
    )


def support_by_family(names: Sequence[str], support: np.ndarray) -> dict[str, int]:
    counts = {k: 0 for k in FAMILY_PREFIXES}
    for j in support:
        name = names[j]
        for fam, prefixes in FAMILY_PREFIXES.items():
            if name.startswith(prefixes):
                counts[fam] += 1
                break
    return counts
