"""Recording ingestion, filtering, segmentation, windowing and splits.

The pipeline from raw multichannel recordings to a labeled window set:

1. load signal (`.f32raw` + `.meta`, or `.csv` for small tests) and event
   annotations (`.seiz`);
2. low-pass filter at 170 Hz (linear-phase FIR, dropout-aware) and divide
   amplitudes by 100 to dimensionless units;
3. cut one segment per lead event covering up to 120 minutes before onset,
   never entering another event's 4-hour exclusion zone;
4. tile segments with non-overlapping windows aligned to the event onset,
   discarding windows with dropouts or near-constant channels;
5. label windows by time-to-event, split train/validation/test strictly in
   time (segments are never divided), standardize features on training
   statistics only, and weight samples by inverse class proportion.
"""

from __future__ import annotations

import io
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.signal import oaconvolve

from .errors import (
    ClassMissingError,
    ConfigError,
    DataError,
    DataFormatError,
    ShapeError,
)

META_KEYS = (
    "patient_id",
    "sample_rate_hz",
    "channel_count",
    "start_offset_days",
    "format_version",
)

FILTER_TAPS = 101
DEFAULT_CUTOFF_HZ = 170.0
DEFAULT_POST_ICTAL_HOURS = 4.0
DEFAULT_HORIZON_MINUTES = 120.0
DEFAULT_SETTLE_DAYS = 100.0
MIN_CHANNEL_STD = 0.1  # normalized units; 10 uV before the /100 scaling


@dataclass
class Recording:
    """Multichannel sampled signal; NaN samples mark dropouts."""

    samples: np.ndarray  # (p, N), uV unless normalized
    sample_rate: float
    patient_id: str
    start_offset_days: float = 0.0

    def __post_init__(self):
        if self.samples.ndim != 2:
            raise ShapeError(f"samples must be (p, N), got {self.samples.shape}")
        if self.sample_rate <= 0:
            raise ConfigError(f"sample_rate {self.sample_rate} must be positive")

    @property
    def channel_count(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.sample_rate

    def read_span(self, start: int, stop: int, out: np.ndarray = None) -> np.ndarray:
        """Copy of samples[:, start:stop]; the sample-source protocol."""
        if out is not None:
            np.copyto(out, self.samples[:, start:stop], casting="same_kind")
            return out
        return np.array(self.samples[:, start:stop])


@dataclass
class AnnotationSet:
    """Event (seizure) onset/end times in seconds from recording start."""

    onsets: np.ndarray
    ends: np.ndarray

    def __post_init__(self):
        self.onsets = np.asarray(self.onsets, dtype=np.float64)
        self.ends = np.asarray(self.ends, dtype=np.float64)
        if self.onsets.shape != self.ends.shape:
            raise ShapeError("onsets and ends must have matching lengths")
        if np.any(np.diff(self.onsets) <= 0):
            raise DataFormatError("onsets must be strictly increasing")
        if np.any(self.ends < self.onsets):
            raise DataFormatError("event end before onset")

    def __len__(self) -> int:
        return len(self.onsets)


@dataclass
class Segment:
    """Pre-event horizon of one lead event, as a sample range."""

    segment_id: int
    patient_id: str
    onset_s: float
    start_sample: int
    end_sample: int
    sample_rate: float

    @property
    def n_samples(self) -> int:
        return self.end_sample - self.start_sample

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.sample_rate


@dataclass
class Window:
    """Fixed-length sample block with provenance."""

    data: np.ndarray  # (p, delta) normalized
    segment_id: int
    index_in_segment: int
    time_to_seizure: float  # seconds from window end to the segment onset
    start_sample: int  # absolute position in the recording
    k: int = -1  # global index, assigned at dataset assembly


@dataclass
class Scaler:
    """Per-feature training mean/std; constant features are zeroed."""

    mean: np.ndarray
    std: np.ndarray
    constant: np.ndarray

    def transform(self, values: np.ndarray) -> np.ndarray:
        out = (np.asarray(values, dtype=np.float64).T - self.mean) / self.std
        out[..., self.constant] = 0.0
        return out.T


@dataclass
class SplitAssignment:
    """Per-window role ('train' | 'validation' | 'test') and train fold id."""

    role: np.ndarray  # '<U10'
    fold: np.ndarray  # int, -1 outside training

    def indices(self, role: str) -> np.ndarray:
        return np.flatnonzero(self.role == role)


# ---------------------------------------------------------------------------
# file formats


def _parse_meta(meta_path) -> dict:
    meta = {}
    with open(meta_path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise DataFormatError(f"{meta_path}: bad metadata line {line!r}")
            key, value = line.split("=", 1)
            meta[key.strip()] = value.strip()
    missing = [k for k in META_KEYS if k not in meta]
    if missing:
        raise DataFormatError(f"{meta_path}: missing keys {missing}")
    if meta["format_version"] != "1":
        raise DataFormatError(
            f"{meta_path}: unknown format_version {meta['format_version']!r}"
        )
    return meta


def load_recording(data_path, meta_path=None) -> Recording:
    """Load a `.f32raw`/`.meta` pair or a `.csv` file.

    Raw files are little-endian float32, channel-interleaved frames, memory
    mapped read-only; NaN samples are preserved as dropout markers.
    """
    data_path = Path(data_path)
    if not data_path.exists():
        raise DataFormatError(f"{data_path}: no such file")
    if data_path.suffix == ".csv":
        if meta_path is None and data_path.with_suffix(".meta").exists():
            meta_path = data_path.with_suffix(".meta")
        return _load_csv(data_path, meta_path)
    if meta_path is None:
        meta_path = data_path.with_suffix(".meta")
    if not Path(meta_path).exists():
        raise DataFormatError(f"{meta_path}: no such metadata file")
    meta = _parse_meta(meta_path)
    p = int(meta["channel_count"])
    fs = float(meta["sample_rate_hz"])
    nbytes = os.path.getsize(data_path)
    frame_bytes = 4 * p
    if p <= 0 or nbytes % frame_bytes != 0:
        raise DataFormatError(
            f"{data_path}: size {nbytes} not divisible by frame size {frame_bytes}"
        )
    n = nbytes // frame_bytes
    if n == 0:
        raise DataFormatError(f"{data_path}: empty signal file")
    mm = np.memmap(data_path, dtype="<f4", mode="r", shape=(n, p))
    return Recording(
        samples=mm.T,
        sample_rate=fs,
        patient_id=meta["patient_id"],
        start_offset_days=float(meta["start_offset_days"]),
    )


def _load_csv(data_path, meta_path=None) -> Recording:
    with open(data_path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        cols = header.split(",")
        if cols[0] != "t" or any(not c.startswith("ch") for c in cols[1:]):
            raise DataFormatError(f"{data_path}: expected header t,ch00,...")
        body = np.loadtxt(fh, delimiter=",", ndmin=2)
    if body.shape[1] != len(cols):
        raise DataFormatError(f"{data_path}: column count mismatch")
    t = body[:, 0]
    if len(t) < 2:
        raise DataFormatError(f"{data_path}: need at least two samples")
    fs = 1.0 / np.median(np.diff(t))
    patient_id = data_path.stem
    start_offset = 0.0
    if meta_path is not None and Path(meta_path).exists():
        meta = _parse_meta(meta_path)
        patient_id = meta["patient_id"]
        fs = float(meta["sample_rate_hz"])
        start_offset = float(meta["start_offset_days"])
    return Recording(
        samples=np.ascontiguousarray(body[:, 1:].T),
        sample_rate=fs,
        patient_id=patient_id,
        start_offset_days=start_offset,
    )


def load_annotations(path) -> AnnotationSet:
    """Read a `.seiz` file: one `onset<TAB>end` pair per line, sorted."""
    onsets, ends = [], []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataFormatError(f"{path}: bad annotation line {line!r}")
            onsets.append(float(parts[0]))
            ends.append(float(parts[1]))
    return AnnotationSet(np.array(onsets), np.array(ends))


# ---------------------------------------------------------------------------
# filtering and normalization


def design_lowpass(cutoff_hz: float, sample_rate: float, taps: int = FILTER_TAPS):
    """Linear-phase windowed-sinc low-pass, unit DC gain, Hamming window."""
    if cutoff_hz >= sample_rate / 2:
        raise ConfigError(
            f"cutoff {cutoff_hz} Hz >= Nyquist {sample_rate / 2} Hz"
        )
    m = np.arange(taps) - (taps - 1) / 2
    h = 2 * cutoff_hz / sample_rate * np.sinc(2 * cutoff_hz / sample_rate * m)
    h *= np.hamming(taps)
    return h / h.sum()


def _filter_run(x: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Filter one gap-free run, reflection-padded, group delay compensated."""
    half = (len(h) - 1) // 2
    n = len(x)
    if n <= half:
        # Too short to pad; such runs border NaN gaps, so windows touching
        # them are excluded downstream anyway.
        return x.copy()
    padded = np.pad(x, half, mode="reflect")
    return oaconvolve(padded, h.astype(x.dtype, copy=False), mode="valid")


def filter_channel(x: np.ndarray, h: np.ndarray, out: np.ndarray = None):
    """NaN-aware filtering: each finite run filtered independently.

    Computation follows the input dtype; `out` may be a same-length buffer.
    """
    x = np.asarray(x)
    if out is None:
        out = np.empty(len(x), dtype=x.dtype if x.dtype.kind == "f" else np.float64)
    out[:] = np.nan
    finite = np.isfinite(x)
    if not finite.any():
        return out
    boundaries = np.flatnonzero(np.diff(finite.astype(np.int8))) + 1
    edges = np.concatenate(([0], boundaries, [len(x)]))
    for lo, hi in zip(edges[:-1], edges[1:]):
        if finite[lo]:
            out[lo:hi] = _filter_run(x[lo:hi], h)
    return out


def lowpass_filter(
    recording: Recording, cutoff_hz: float = DEFAULT_CUTOFF_HZ
) -> Recording:
    """Low-pass each channel; dropout gaps stay NaN and restart the filter."""
    h = design_lowpass(cutoff_hz, recording.sample_rate)
    dtype = (
        recording.samples.dtype
        if recording.samples.dtype.kind == "f"
        else np.float64
    )
    filtered = np.empty((recording.channel_count, recording.n_samples), dtype=dtype)
    for c in range(recording.channel_count):
        filter_channel(np.asarray(recording.samples[c]), h, out=filtered[c])
    return Recording(
        filtered,
        recording.sample_rate,
        recording.patient_id,
        recording.start_offset_days,
    )


def normalize_amplitude(recording: Recording, divisor: float = 100.0) -> Recording:
    """Divide samples by 100 uV; output is dimensionless."""
    return Recording(
        np.asarray(recording.samples, dtype=np.float64) / divisor,
        recording.sample_rate,
        recording.patient_id,
        recording.start_offset_days,
    )


# ---------------------------------------------------------------------------
# segmentation and windowing


def extract_lead_segments(
    recording,
    annotations: AnnotationSet,
    post_ictal_hours: float = DEFAULT_POST_ICTAL_HOURS,
    horizon_minutes: float = DEFAULT_HORIZON_MINUTES,
    settle_days: float = DEFAULT_SETTLE_DAYS,
) -> list[Segment]:
    """One segment per lead event.

    An event is a lead event iff no earlier event ended within the preceding
    post-ictal exclusion; its segment ends at the onset and starts at the
    latest of onset - horizon, the previous event's exclusion-zone end, the
    post-implantation settling boundary, and the recording start.
    """
    fs = recording.sample_rate
    duration_s = recording.n_samples / fs
    post_ictal_s = post_ictal_hours * 3600.0
    horizon_s = horizon_minutes * 60.0
    settle_end_s = max(0.0, (settle_days - recording.start_offset_days) * 86400.0)
    segments: list[Segment] = []
    prev_end = -np.inf
    seg_id = 0
    for onset, end in zip(annotations.onsets, annotations.ends):
        is_lead = onset - prev_end >= post_ictal_s
        exclusion_end = prev_end + post_ictal_s if np.isfinite(prev_end) else 0.0
        prev_end = max(prev_end, end)
        if not is_lead:
            continue
        start_s = max(onset - horizon_s, exclusion_end, settle_end_s, 0.0)
        end_s = min(onset, duration_s)
        start_sample = int(round(start_s * fs))
        end_sample = int(round(end_s * fs))
        if end_sample <= start_sample:
            continue
        segments.append(
            Segment(seg_id, recording.patient_id, onset, start_sample, end_sample, fs)
        )
        seg_id += 1
    return segments


def window_offsets(segment: Segment, delta_samples: int) -> np.ndarray:
    """Absolute start samples of non-overlapping windows aligned to the end."""
    n_win = segment.n_samples // delta_samples
    first = segment.end_sample - n_win * delta_samples
    return first + delta_samples * np.arange(n_win)


def window_exclusion_mask(
    data: np.ndarray, delta_samples: int, min_std: float = MIN_CHANNEL_STD
) -> np.ndarray:
    """Keep-mask over windows tiled from (p, n_win * delta) normalized data.

    A window is dropped when it contains NaN or any channel's standard
    deviation falls below the threshold (10 uV before normalization).
    """
    p, total = data.shape
    n_win = total // delta_samples
    tiles = data.reshape(p, n_win, delta_samples)
    finite = np.isfinite(tiles).all(axis=(0, 2))
    keep = finite.copy()
    if keep.any():
        stds = np.nanstd(tiles[:, keep, :], axis=2)
        keep[keep] = (stds >= min_std).all(axis=0)
    return keep


def window_segments(
    segments: Sequence[Segment],
    recording,
    delta_samples: int,
    min_std: float = MIN_CHANNEL_STD,
) -> list[Window]:
    """Tile segments into windows, apply exclusions, record provenance.

    time_to_seizure decreases by exactly delta / sample_rate between
    consecutive windows and reaches its minimum at the onset-adjacent window.
    """
    if delta_samples < 2:
        raise ConfigError(f"delta_samples {delta_samples} < 2")
    fs = recording.sample_rate
    windows: list[Window] = []
    for seg in segments:
        offs = window_offsets(seg, delta_samples)
        if offs.size == 0:
            continue
        data = recording.read_span(int(offs[0]), seg.end_sample)
        keep = window_exclusion_mask(data, delta_samples, min_std)
        for j in np.flatnonzero(keep):
            lo = int(offs[j] - offs[0])
            wdata = np.asarray(
                data[:, lo : lo + delta_samples], dtype=np.float64
            )
            tts = seg.onset_s - (offs[j] + delta_samples) / fs
            windows.append(
                Window(
                    data=wdata,
                    segment_id=seg.segment_id,
                    index_in_segment=int(j),
                    time_to_seizure=tts,
                    start_sample=int(offs[j]),
                )
            )
    for k, w in enumerate(windows):
        w.k = k
    return windows


# ---------------------------------------------------------------------------
# labels, splits, standardization, weights


def labels_from_tts(time_to_seizure: np.ndarray, sigma_minutes: float) -> np.ndarray:
    """+1 (pre-ictal) iff time-to-event <= sigma; equality labels +1."""
    if sigma_minutes <= 0:
        raise ConfigError(f"sigma {sigma_minutes} must be positive")
    tts = np.asarray(time_to_seizure, dtype=np.float64)
    return np.where(tts <= sigma_minutes * 60.0, 1, -1).astype(np.int8)


def label_windows(windows: Sequence[Window], sigma_minutes: float) -> np.ndarray:
    return labels_from_tts(
        np.array([w.time_to_seizure for w in windows]), sigma_minutes
    )


def split_dataset(
    window_segment_ids: np.ndarray,
    segments: Sequence[Segment],
    total_duration_s: float,
    scheme: str = "final-phase",
    n_folds: int = 10,
) -> SplitAssignment:
    """Time-ordered split; a segment belongs wholly to one side by its onset.

    final-phase: onsets in the first 70% of the observation period train
    (subdivided into 10 contiguous, time-ordered folds), the rest test.
    validation-phase: first 50% train (10 folds), (50%, 70%] validation,
    rest test.
    """
    if scheme not in ("final-phase", "validation-phase"):
        raise ConfigError(f"unknown split scheme {scheme!r}")
    onsets = np.array([s.onset_s for s in segments])
    if np.any(np.diff(onsets) <= 0):
        raise DataError("segments must be ordered by onset time")
    train_frac = 0.7 if scheme == "final-phase" else 0.5
    # Sub-millisecond slack so boundary onsets are not flipped by rounding
    # in the fraction-of-duration product.
    eps = 1e-9 * max(total_duration_s, 1.0)
    seg_role = {}
    train_segments = []
    for seg in segments:
        if seg.onset_s <= train_frac * total_duration_s + eps:
            seg_role[seg.segment_id] = "train"
            train_segments.append(seg.segment_id)
        elif (
            scheme == "validation-phase"
            and seg.onset_s <= 0.7 * total_duration_s + eps
        ):
            seg_role[seg.segment_id] = "validation"
        else:
            seg_role[seg.segment_id] = "test"
    if len(train_segments) < n_folds:
        raise DataError(
            f"fold-count error: {len(train_segments)} training segments "
            f"< {n_folds} folds"
        )
    seg_fold = {}
    for f, group in enumerate(np.array_split(np.array(train_segments), n_folds)):
        for sid in group:
            seg_fold[int(sid)] = f
    window_segment_ids = np.asarray(window_segment_ids)
    role = np.array([seg_role[int(s)] for s in window_segment_ids], dtype="<U10")
    fold = np.array(
        [seg_fold.get(int(s), -1) for s in window_segment_ids], dtype=np.int64
    )
    return SplitAssignment(role, fold)


def standardize_features(
    values: np.ndarray,
    train_indices: np.ndarray,
    inplace: bool = False,
) -> tuple[np.ndarray, Scaler]:
    """Standardize an (m, M) matrix with training-column statistics only.

    Features whose training standard deviation is below 1e-10 are flagged
    constant and zeroed everywhere.
    """
    train_indices = np.asarray(train_indices)
    if train_indices.size == 0:
        raise DataError("empty training index set")
    train = values[:, train_indices]
    mean = train.mean(axis=1, dtype=np.float64)
    std = train.std(axis=1, dtype=np.float64)
    constant = std < 1e-10
    std_safe = np.where(constant, 1.0, std)
    out = values if inplace else values.astype(np.float64, copy=True)
    out -= mean[:, None].astype(out.dtype)
    out /= std_safe[:, None].astype(out.dtype)
    out[constant, :] = 0.0
    return out, Scaler(mean, std_safe, constant)


def compute_sample_weights(train_labels: np.ndarray) -> np.ndarray:
    """Per-sample weights M_train / (2 * class count); they sum to M_train."""
    z = np.asarray(train_labels)
    n = len(z)
    n_pos = int(np.sum(z == 1))
    n_neg = int(np.sum(z == -1))
    if n_pos == 0 or n_neg == 0:
        raise ClassMissingError(
            f"training labels have a single class (pos={n_pos}, neg={n_neg})"
        )
    w = np.where(z == 1, n / (2.0 * n_pos), n / (2.0 * n_neg))
    return w


def class_weight_map(train_labels: np.ndarray) -> dict[int, float]:
    """Class -> weight mapping from the training distribution."""
    z = np.asarray(train_labels)
    n = len(z)
    n_pos = int(np.sum(z == 1))
    n_neg = int(np.sum(z == -1))
    if n_pos == 0 or n_neg == 0:
        raise ClassMissingError(
            f"training labels have a single class (pos={n_pos}, neg={n_neg})"
        )
    return {1: n / (2.0 * n_pos), -1: n / (2.0 * n_neg)}
