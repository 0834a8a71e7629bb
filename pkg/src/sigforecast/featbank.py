"""Per-window feature extraction and feature-matrix assembly.

Four feature families are computed from a (p, delta) window:

* ``sig``: a depth-2 signature of all channels jointly time-augmented plus a
  depth-5 signature of each channel individually time-augmented;
* ``mo``: mean, sample standard deviation and standardized central moments
  of orders 3-5 per channel;
* ``ac``: normalized autocorrelations at configured lags per channel plus
  Pearson cross-correlations of lagged unordered channel pairs;
* ``ft``: the amplitude spectrum linearly interpolated at exponentially
  spaced frequencies e^i - 1.

All extractors are pure functions; `build_feature_matrix` evaluates windows
in fixed-size chunks so that parallel and sequential runs produce identical
matrices.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.fft import rfft as scipy_rfft

from . import _sigbatch, sigcore
from ._sigbatch import njit
from .errors import ConfigError, DegenerateWindowError, ShapeError

FEATURE_SET_IDS = ("sig", "mo", "ac", "ft", "all")
#: concatenation order of the combined set
ALL_ORDER = ("sig", "mo", "ac", "ft")

_MATRIX_CHUNK = 256  # windows per extraction chunk, independent of workers


@dataclass(frozen=True)
class FeatureConfig:
    """Knobs for the four extractors.

    Defaults reproduce the dimension contracts for 16-channel data:
    m_sig = 307 + 16*63 = 1315, m_mo = 80, m_ac = 400 in "paper-count"
    cross-correlation mode (640 in "unordered-all-lags"), m_ft = 832.
    """

    ac_lags: tuple[int, ...] = (1, 2, 4, 8, 16, 32, 64, 128, 256, 512)
    xc_lags: tuple[int, ...] = (1, 2, 4, 8)
    xc_pair_mode: str = "paper-count"  # or "unordered-all-lags"
    fft_exponent_step: float = 0.1
    fft_exponent_max: float = 5.1
    sample_rate_hz: float = 400.0
    sig_joint_depth: int = 2
    sig_channel_depth: int = 5
    sig_precision: str = "float32"  # or "float64"

    def __post_init__(self):
        if any(l <= 0 for l in self.ac_lags) or any(l <= 0 for l in self.xc_lags):
            raise ConfigError("correlation lags must be positive")
        if self.xc_pair_mode not in ("paper-count", "unordered-all-lags"):
            raise ConfigError(f"unknown xc_pair_mode {self.xc_pair_mode!r}")
        if self.fft_exponent_max < 0 or self.fft_exponent_step <= 0:
            raise ConfigError("frequency grid must contain at least one point")
        if self.sig_precision not in ("float32", "float64"):
            raise ConfigError(f"unknown sig_precision {self.sig_precision!r}")
        if self.sig_joint_depth < 1 or self.sig_channel_depth < 1:
            raise ConfigError("signature depths must be >= 1")

    @property
    def effective_xc_lags(self) -> tuple[int, ...]:
        # "paper-count" keeps two lags so 120 unordered pairs yield 240
        # cross-correlation values, matching the published dimension.
        if self.xc_pair_mode == "paper-count":
            return self.xc_lags[:2]
        return self.xc_lags

    @property
    def fft_target_freqs(self) -> np.ndarray:
        n = int(round(self.fft_exponent_max / self.fft_exponent_step)) + 1
        exponents = np.arange(n) * self.fft_exponent_step
        return np.expm1(exponents)

    @property
    def sig_dtype(self):
        return np.float32 if self.sig_precision == "float32" else np.float64


DEFAULT_CONFIG = FeatureConfig()


@dataclass
class FeatureVector:
    values: np.ndarray
    names: list[str]

    def __post_init__(self):
        if len(self.values) != len(self.names):
            raise ShapeError(
                f"{len(self.values)} values vs {len(self.names)} names"
            )


@dataclass
class FeatureMatrix:
    """m x M matrix of named features; column k belongs to window k."""

    values: np.ndarray
    names: list[str]
    window_refs: Optional[list] = None

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape[0] != len(self.names):
            raise ShapeError(
                f"matrix shape {self.values.shape} inconsistent with "
                f"{len(self.names)} feature names"
            )

    @property
    def n_features(self) -> int:
        return self.values.shape[0]

    @property
    def n_windows(self) -> int:
        return self.values.shape[1]

    def row_indices(self, prefix: str) -> np.ndarray:
        return np.array(
            [i for i, n in enumerate(self.names) if n.startswith(prefix)], dtype=int
        )


def _as_batch(window: np.ndarray) -> np.ndarray:
    w = np.asarray(window)
    if w.ndim != 2:
        raise ShapeError(f"window must be 2-d (p, delta), got shape {w.shape}")
    return w[None, :, :]


def _check_delta(delta: int, minimum: int):
    if delta < minimum:
        raise DegenerateWindowError(f"window length {delta} < {minimum}")


# ---------------------------------------------------------------------------
# signature features


def signature_feature_names(p: int, config: FeatureConfig) -> list[str]:
    names = [
        f"sig/joint/{s}"
        for s in sigcore.level_index_names(p + 1, config.sig_joint_depth)
    ]
    for c in range(p):
        names.extend(
            f"sig/ch{c:02d}/{s}"
            for s in sigcore.level_index_names(2, config.sig_channel_depth)
        )
    return names


def _sig_batch(windows: np.ndarray, config: FeatureConfig) -> np.ndarray:
    n_win, p, delta = windows.shape
    _check_delta(delta, 2)
    dtype = config.sig_dtype
    if config.sig_joint_depth == 2:
        joint = _sigbatch.joint_signature_depth2(windows, dtype=dtype)
    else:
        joint = np.empty(
            (n_win, sigcore.flat_length(p + 1, config.sig_joint_depth)), dtype=dtype
        )
        for i in range(n_win):
            emb = sigcore.embed_time_augmented(windows[i], list(range(p)))
            joint[i] = sigcore.flatten_values(
                sigcore.signature(emb, config.sig_joint_depth)
            )
    per_channel = _sigbatch.channel_signatures(
        windows.reshape(n_win * p, delta), config.sig_channel_depth, dtype=dtype
    ).reshape(n_win, p * (2 ** (config.sig_channel_depth + 1) - 1))
    return np.concatenate([joint, per_channel], axis=1)


def extract_signature_features(
    window: np.ndarray, config: FeatureConfig = DEFAULT_CONFIG
) -> FeatureVector:
    """Joint depth-2 plus per-channel depth-5 signature block of one window."""
    batch = _as_batch(window)
    values = _sig_batch(batch, config)[0]
    return FeatureVector(values, signature_feature_names(batch.shape[1], config))


# ---------------------------------------------------------------------------
# moments and autocorrelation share one cache-resident pass per window


@njit(cache=True)
def _window_stats_kernel(x, lags, mean, msums, acsums):  # pragma: no cover
    n_win, p, delta = x.shape
    n_lags = lags.shape[0]
    for b in range(n_win):
        for c in range(p):
            row = x[b, c]
            s = 0.0
            for t in range(delta):
                s += row[t]
            mu = s / delta
            s2 = 0.0
            s3 = 0.0
            s4 = 0.0
            s5 = 0.0
            for t in range(delta):
                d = row[t] - mu
                d2 = d * d
                s2 += d2
                s3 += d2 * d
                s4 += d2 * d2
                s5 += d2 * d2 * d
            mean[b, c] = mu
            msums[b, c, 0] = s2
            msums[b, c, 1] = s3
            msums[b, c, 2] = s4
            msums[b, c, 3] = s5
            for li in range(n_lags):
                lag = lags[li]
                acc = 0.0
                for t in range(delta - lag):
                    acc += (row[t] - mu) * (row[t + lag] - mu)
                acsums[b, c, li] = acc


_EMPTY_LAGS = np.empty(0, dtype=np.int64)


def _window_stats(windows, lags):
    """Per-channel mean, central power sums 2..5 and lagged product sums."""
    n_win, p, delta = windows.shape
    lags = np.asarray(lags, dtype=np.int64)
    mean = np.empty((n_win, p))
    msums = np.empty((n_win, p, 4))
    acsums = np.empty((n_win, p, len(lags)))
    if _sigbatch.HAVE_NUMBA:
        _window_stats_kernel(windows, lags, mean, msums, acsums)
    else:  # pragma: no cover - exercised only without numba
        x = np.asarray(windows, dtype=np.float64)
        mean[:] = x.mean(axis=2)
        xc = x - mean[:, :, None]
        pw = xc * xc
        for k in range(4):
            msums[:, :, k] = pw.sum(axis=2)
            pw = pw * xc
        for li, lag in enumerate(lags):
            acsums[:, :, li] = np.einsum(
                "bct,bct->bc", xc[:, :, :-lag], xc[:, :, lag:]
            )
    return mean, msums, acsums


def moment_feature_names(p: int) -> list[str]:
    return [f"mo/ch{c:02d}/ord{k}" for c in range(p) for k in range(1, 6)]


def _mo_batch(windows: np.ndarray) -> np.ndarray:
    n_win, p, delta = windows.shape
    _check_delta(delta, 5)
    mean, msums, _ = _window_stats(windows, _EMPTY_LAGS)
    m2 = msums[:, :, 0] / delta
    if np.any(m2 < 1e-18):
        raise DegenerateWindowError(
            "zero-variance channel; upstream exclusion should have removed it"
        )
    out = np.empty((n_win, p, 5))
    out[:, :, 0] = mean
    out[:, :, 1] = np.sqrt(msums[:, :, 0] / (delta - 1))
    for k in range(3, 6):
        out[:, :, k - 1] = (msums[:, :, k - 2] / delta) / m2 ** (k / 2.0)
    return out.reshape(n_win, p * 5)


def extract_moments(window: np.ndarray) -> FeatureVector:
    """Mean, sample std and standardized central moments 3-5 per channel."""
    batch = _as_batch(window)
    return FeatureVector(_mo_batch(batch)[0], moment_feature_names(batch.shape[1]))


# ---------------------------------------------------------------------------
# auto/cross-correlation


def correlation_feature_names(p: int, config: FeatureConfig) -> list[str]:
    names = [f"ac/ch{c:02d}/lag{l}" for c in range(p) for l in config.ac_lags]
    for i in range(p):
        for j in range(i + 1, p):
            names.extend(
                f"xc/ch{i:02d}-ch{j:02d}/lag{l}" for l in config.effective_xc_lags
            )
    return names


def _ac_batch(windows: np.ndarray, config: FeatureConfig) -> np.ndarray:
    n_win, p, delta = windows.shape
    max_ac = max(config.ac_lags)
    if max_ac >= delta:
        raise ConfigError(f"autocorrelation lag {max_ac} >= window length {delta}")
    xlags = config.effective_xc_lags
    # Pearson on the overlapped subsequences needs at least two points.
    if xlags and max(xlags) >= delta - 1:
        raise ConfigError(
            f"cross-correlation lag {max(xlags)} leaves fewer than two "
            f"overlapping samples in windows of length {delta}"
        )
    x = np.asarray(windows)
    _, msums, acsums = _window_stats(x, np.array(config.ac_lags, dtype=np.int64))
    ac = acsums / msums[:, :, :1]
    blocks = [ac.reshape(n_win, p * len(config.ac_lags))]
    if p > 1 and xlags:
        iu, ju = np.triu_indices(p, k=1)
        xcors = np.empty((n_win, iu.size, len(xlags)))
        for li, lag in enumerate(xlags):
            a = x[:, :, : delta - lag]  # leading
            b = x[:, :, lag:]  # lagging
            n = delta - lag
            ma = np.asarray(a.mean(axis=2), dtype=np.float64)
            mb = np.asarray(b.mean(axis=2), dtype=np.float64)
            va = np.einsum("bct,bct->bc", a, a, dtype=np.float64) / n - ma * ma
            vb = np.einsum("bct,bct->bc", b, b, dtype=np.float64) / n - mb * mb
            cross = np.matmul(a, b.transpose(0, 2, 1)) / n  # (B, p, p)
            cov = np.asarray(cross, dtype=np.float64) - ma[:, :, None] * mb[:, None, :]
            corr = cov / np.sqrt(va[:, :, None] * vb[:, None, :])
            xcors[:, :, li] = corr[:, iu, ju]
        blocks.append(xcors.reshape(n_win, iu.size * len(xlags)))
    return np.concatenate(blocks, axis=1) if len(blocks) > 1 else blocks[0]


def extract_autocorr(
    window: np.ndarray, config: FeatureConfig = DEFAULT_CONFIG
) -> FeatureVector:
    """Normalized autocorrelations plus lagged pairwise cross-correlations."""
    batch = _as_batch(window)
    return FeatureVector(
        _ac_batch(batch, config)[0],
        correlation_feature_names(batch.shape[1], config),
    )


# ---------------------------------------------------------------------------
# amplitude spectrum


def fft_feature_names(p: int, config: FeatureConfig) -> list[str]:
    return [
        f"ft/ch{c:02d}/{f:.4f}" for c in range(p) for f in config.fft_target_freqs
    ]


def _ft_batch(windows: np.ndarray, config: FeatureConfig) -> np.ndarray:
    n_win, p, delta = windows.shape
    _check_delta(delta, 8)
    targets = config.fft_target_freqs
    nyquist = config.sample_rate_hz / 2.0
    if targets[-1] > nyquist:
        raise ConfigError(
            f"target frequency {targets[-1]:.4f} Hz above Nyquist {nyquist:.4f} Hz"
        )
    x = np.asarray(windows)
    if x.dtype.kind != "f":
        x = x.astype(np.float64)
    spectrum = np.abs(scipy_rfft(x, axis=2))  # float32 in -> float32 out
    spectrum *= np.asarray(2.0 / delta, dtype=spectrum.dtype)
    spectrum[:, :, 0] *= spectrum.dtype.type(0.5)  # DC scaled 1/delta
    bin_freqs = np.arange(spectrum.shape[2]) * (config.sample_rate_hz / delta)
    hi = np.searchsorted(bin_freqs, targets, side="left")
    hi = np.clip(hi, 1, len(bin_freqs) - 1)
    lo = hi - 1
    w = (targets - bin_freqs[lo]) / (bin_freqs[hi] - bin_freqs[lo])
    w = np.clip(w, 0.0, 1.0).astype(spectrum.dtype)
    feats = spectrum[:, :, lo] * (1.0 - w) + spectrum[:, :, hi] * w
    return feats.reshape(n_win, p * len(targets))


def extract_fft(
    window: np.ndarray, config: FeatureConfig = DEFAULT_CONFIG
) -> FeatureVector:
    """Amplitude spectrum interpolated at the exponential frequency grid."""
    batch = _as_batch(window)
    return FeatureVector(
        _ft_batch(batch, config)[0], fft_feature_names(batch.shape[1], config)
    )


# ---------------------------------------------------------------------------
# dispatch and matrix assembly

_BATCH_FUNCS = {
    "sig": lambda w, cfg: _sig_batch(w, cfg),
    "mo": lambda w, cfg: _mo_batch(w),
    "ac": lambda w, cfg: _ac_batch(w, cfg),
    "ft": lambda w, cfg: _ft_batch(w, cfg),
}

_NAME_FUNCS = {
    "sig": lambda p, cfg: signature_feature_names(p, cfg),
    "mo": lambda p, cfg: moment_feature_names(p),
    "ac": lambda p, cfg: correlation_feature_names(p, cfg),
    "ft": lambda p, cfg: fft_feature_names(p, cfg),
}


def normalize_set_id(set_id: str) -> str:
    sid = set_id.lower()
    if sid not in FEATURE_SET_IDS:
        raise ConfigError(
            f"unknown feature set {set_id!r}; expected one of {FEATURE_SET_IDS}"
        )
    return sid


def feature_names(p: int, set_id: str, config: FeatureConfig = DEFAULT_CONFIG):
    sid = normalize_set_id(set_id)
    sets = ALL_ORDER if sid == "all" else (sid,)
    names: list[str] = []
    for s in sets:
        names.extend(_NAME_FUNCS[s](p, config))
    return names


def _extract_batch_into(
    windows: np.ndarray, set_id: str, config: FeatureConfig, out: np.ndarray
) -> np.ndarray:
    """Fill a preallocated (m, B) column block, one feature family at a time."""
    sets = ALL_ORDER if set_id == "all" else (set_id,)
    offset = 0
    p = windows.shape[1]
    for s in sets:
        block = _BATCH_FUNCS[s](windows, config)
        out[offset : offset + block.shape[1], :] = block.T
        offset += block.shape[1]
    return out


def _extract_batch(
    windows: np.ndarray, set_id: str, config: FeatureConfig
) -> np.ndarray:
    m = len(feature_names(windows.shape[1], set_id, config))
    out = np.empty((m, windows.shape[0]))
    return _extract_batch_into(windows, set_id, config, out).T


def extract(
    window: np.ndarray, set_id: str, config: FeatureConfig = DEFAULT_CONFIG
) -> FeatureVector:
    """Compute one window's features for a named set ("all" concatenates)."""
    sid = normalize_set_id(set_id)
    batch = _as_batch(window)
    values = _extract_batch(batch, sid, config)[0]
    return FeatureVector(values, feature_names(batch.shape[1], sid, config))


def build_feature_matrix(
    windows,
    set_id: str,
    config: FeatureConfig = DEFAULT_CONFIG,
    *,
    workers: int = 1,
    dtype=np.float64,
    window_refs: Optional[list] = None,
) -> FeatureMatrix:
    """Feature matrix with one column per window.

    Windows are processed in fixed-size chunks; with workers > 1 the chunks
    run on a thread pool but land in preallocated slots, so the result is
    identical to the sequential one.
    """
    sid = normalize_set_id(set_id)
    if isinstance(windows, np.ndarray) and windows.ndim == 3:
        stack = windows
    else:
        windows = list(windows)
        if not windows:
            raise ShapeError("no windows given")
        shapes = {np.asarray(w).shape for w in windows}
        if len(shapes) != 1:
            raise ShapeError(f"heterogeneous window shapes: {sorted(shapes)}")
        stack = np.stack([np.asarray(w) for w in windows])
    n_win, p, delta = stack.shape
    names = feature_names(p, sid, config)
    out = np.empty((len(names), n_win), dtype=dtype)

    chunks = [
        (lo, min(lo + _MATRIX_CHUNK, n_win)) for lo in range(0, n_win, _MATRIX_CHUNK)
    ]

    def work(bounds):
        lo, hi = bounds
        _extract_batch_into(stack[lo:hi], sid, config, out[:, lo:hi])

    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(work, chunks))
    else:
        for bounds in chunks:
            work(bounds)
    return FeatureMatrix(out, names, window_refs)
