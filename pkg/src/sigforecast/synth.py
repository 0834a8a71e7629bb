"""Seeded synthetic multichannel recordings with scheduled events.

Each channel is a second-order autoregressive oscillator (randomized 8-25 Hz
resonance) plus a shared low-frequency component that induces inter-channel
correlation and a broadband term, scaled to a configurable microvolt level.
Before each scheduled event the configured effect profile ramps up linearly:
a pole-radius shift changes autocorrelation at fixed variance, a drive gain
changes variance, and Poisson spikes change higher moments.  Dropouts are
inserted as NaN runs and events are annotated exactly.

Generation is random-access: sample values are a pure function of (seed,
position).  Noise is drawn per fixed 64-second tile from a counter-based
Philox stream keyed by (seed, stream, channel, tile), and filter state is
reconstructed by a burn-in tile, so any span of samples is bit-identical no
matter which spans were generated before it.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .errors import ConfigError, DataError
from .prep import AnnotationSet, Recording

TILE_SECONDS = 64
BURN_TILES = 1  # 64 s of warm-up; AR memory is < 10 s
GEN_BLOCK_TILES = 12  # canonical generation unit: 12 tiles = 768 s
EFFECT_BLOCK_S = 5.0  # ramp discretization, anchored at absolute time 0
MAX_DROPOUT_S = 3.0

_AR_WEIGHT = 0.8
_SHARED_WEIGHT = 0.45
_BROADBAND_WEIGHT = 0.35
_SPIKE_AMPLITUDE = 3.5  # in units of the baseline standard deviation
_ICTAL_AMPLITUDE = 3.0
_MAX_MATERIALIZED = 300_000_000  # samples*channels guard for full arrays


@dataclass(frozen=True)
class SynthConfig:
    seed: int
    duration_hours: float
    channel_count: int = 16
    sample_rate: int = 400
    mean_interval_hours: float = 8.0
    refractory_hours: float = 5.0
    baseline_uv: float = 60.0
    ac_shift: float = 0.015
    variance_gain: float = 0.0
    spike_rate_gain: float = 0.0
    ramp_minutes: float = 15.0
    dropout_per_hour: float = 0.2
    ictal_seconds: float = 60.0
    patient_id: str = "synth"

    def __post_init__(self):
        if self.duration_hours < 2 * self.mean_interval_hours:
            raise ConfigError("duration must be at least twice the mean interval")
        if self.refractory_hours < 4.0 + self.ramp_minutes / 60.0:
            raise ConfigError(
                "refractory must exceed 4 h plus the ramp so every event "
                "remains a lead event"
            )
        if self.mean_interval_hours <= self.refractory_hours:
            raise ConfigError("mean interval must exceed the refractory period")
        if self.sample_rate <= 0 or int(self.sample_rate) != self.sample_rate:
            raise ConfigError("sample_rate must be a positive integer")
        if self.channel_count < 1:
            raise ConfigError("channel_count must be >= 1")
        if min(self.variance_gain, self.spike_rate_gain, self.dropout_per_hour) < 0:
            raise ConfigError("rates and gains must be non-negative")
        if self.ac_shift < 0:
            raise ConfigError("ac_shift must be non-negative")


@dataclass
class GroundTruth:
    """Event times plus the pre-ictal ramp intervals actually applied."""

    onsets: np.ndarray
    ends: np.ndarray
    ramp_minutes: float
    effect: dict

    def preictal_indicator(self, start_s: float, end_s: float, fs: float):
        """Boolean per-sample indicator for [start_s, end_s)."""
        n = int(round((end_s - start_s) * fs))
        t = start_s + np.arange(n) / fs
        out = np.zeros(n, dtype=bool)
        ramp_s = self.ramp_minutes * 60.0
        for onset in self.onsets:
            out |= (t >= onset - ramp_s) & (t < onset)
        return out


def _stream_key(seed: int, stream: str, channel: int) -> np.ndarray:
    digest = hashlib.sha256(
        f"sigforecast:{seed}:{stream}:{channel}".encode()
    ).digest()
    return np.frombuffer(digest[:16], dtype=np.uint64)


def _tile_rng(seed: int, stream: str, channel: int, tile: int):
    counter = np.array([0, 0, 0, tile], dtype=np.uint64)
    return np.random.Generator(
        np.random.Philox(counter=counter, key=_stream_key(seed, stream, channel))
    )


_SQRT12 = float(np.sqrt(12.0))


def _unit_noise(seed, stream, channel, tile_lo, tile_hi, tile_samples):
    """Zero-mean unit-variance drive for tiles [tile_lo, tile_hi)."""
    out = np.empty((tile_hi - tile_lo) * tile_samples, dtype=np.float32)
    for i, tile in enumerate(range(tile_lo, tile_hi)):
        rng = _tile_rng(seed, stream, channel, tile)
        block = rng.random(tile_samples, dtype=np.float32)
        block -= np.float32(0.5)
        block *= np.float32(_SQRT12)
        out[i * tile_samples : (i + 1) * tile_samples] = block
    return out


def _ar_coeffs(freq_hz: float, radius: float, fs: float):
    theta = 2.0 * np.pi * freq_hz / fs
    a1 = 2.0 * radius * np.cos(theta)
    a2 = -radius * radius
    return a1, a2


def _unit_drive_std(a1: float, a2: float) -> float:
    """Drive std so the stationary AR(2) output has unit variance."""
    var_factor = (1.0 - a2) / ((1.0 + a2) * ((1.0 - a2) ** 2 - a1 * a1))
    if var_factor <= 0:
        raise ConfigError("unstable AR parameters")
    return float(1.0 / np.sqrt(var_factor))


class SyntheticSource:
    """Random-access synthetic recording; implements the sample-source API."""

    def __init__(self, config: SynthConfig):
        self.config = config
        fs = config.sample_rate
        self.sample_rate = float(fs)
        self.channel_count = config.channel_count
        self.patient_id = config.patient_id
        self.n_samples = int(round(config.duration_hours * 3600.0)) * fs
        # metadata places the virtual implantation 100 days back, so the
        # post-implantation settling exclusion removes nothing
        self.start_offset_days = 100.0
        self._tile_samples = TILE_SECONDS * fs
        self._schedule()
        self._draw_parameters()

    # -- schedule and parameters ------------------------------------------

    def _schedule(self):
        cfg = self.config
        rng = _tile_rng(cfg.seed, "schedule", 0, 0)
        onsets = []
        t_h = 0.0
        spread = cfg.mean_interval_hours - cfg.refractory_hours
        limit_h = cfg.duration_hours - cfg.ictal_seconds / 3600.0 - 0.01
        while True:
            gap = cfg.refractory_hours - spread * np.log(1.0 - rng.random())
            t_h += gap
            if t_h >= limit_h:
                break
            onsets.append(t_h * 3600.0)
        if not onsets:
            raise ConfigError("no events scheduled; increase duration")
        self.onsets = np.array(onsets)
        self.ends = self.onsets + cfg.ictal_seconds

    def _draw_parameters(self):
        cfg = self.config
        rng = _tile_rng(cfg.seed, "params", 0, 0)
        p = cfg.channel_count
        self._freqs = rng.uniform(8.0, 25.0, size=p)
        self._shared_gains = rng.uniform(0.35, 0.65, size=p)
        self._shared_freq = rng.uniform(0.8, 1.6)
        self._radius = 0.98
        self._shared_radius = 0.99
        # channel scale: unit variance of the mix, then to microvolts
        self._drive_std = np.array(
            [
                _unit_drive_std(*_ar_coeffs(f, self._radius, cfg.sample_rate))
                for f in self._freqs
            ]
        )
        var = (
            _AR_WEIGHT**2
            + _BROADBAND_WEIGHT**2
            + 2.0 * _AR_WEIGHT * _BROADBAND_WEIGHT * self._drive_std
            + (_SHARED_WEIGHT * self._shared_gains) ** 2
        )
        self._channel_scale = (cfg.baseline_uv / np.sqrt(var)).astype(np.float32)

    @property
    def annotations(self) -> AnnotationSet:
        return AnnotationSet(self.onsets.copy(), self.ends.copy())

    @property
    def ground_truth(self) -> GroundTruth:
        cfg = self.config
        return GroundTruth(
            onsets=self.onsets.copy(),
            ends=self.ends.copy(),
            ramp_minutes=cfg.ramp_minutes,
            effect={
                "ac_shift": cfg.ac_shift,
                "variance_gain": cfg.variance_gain,
                "spike_rate_gain": cfg.spike_rate_gain,
            },
        )

    # -- effect profile ----------------------------------------------------

    def _ramp_gain_at(self, t_s: np.ndarray) -> np.ndarray:
        """Effect strength in [0, 1]; linear over the pre-event ramp."""
        ramp_s = self.config.ramp_minutes * 60.0
        gain = np.zeros_like(t_s)
        if ramp_s <= 0:
            return gain
        idx = np.searchsorted(self.onsets, t_s, side="left")
        valid = idx < len(self.onsets)
        dt = np.where(valid, self.onsets[np.minimum(idx, len(self.onsets) - 1)], 0.0)
        rel = (dt - t_s) / ramp_s
        inside = valid & (rel >= 0.0) & (rel < 1.0)
        gain[inside] = 1.0 - rel[inside]
        return gain

    # -- generation --------------------------------------------------------

    def read_span(self, start: int, stop: int, out: np.ndarray = None) -> np.ndarray:
        """Samples[:, start:stop] in microvolts, float32, NaN dropouts.

        The span is assembled from canonical generation blocks, each always
        synthesized from the same absolute warm-up position, so any two
        requests agree bitwise on their overlap.  `out`, when given, must be
        a float32 (p, stop-start) buffer and is filled in place.
        """
        start = max(0, int(start))
        stop = min(self.n_samples, int(stop))
        if stop <= start:
            return np.empty((self.channel_count, 0), dtype=np.float32)
        if out is None:
            out = np.empty((self.channel_count, stop - start), dtype=np.float32)
        elif out.shape != (self.channel_count, stop - start):
            raise ConfigError("read_span: out buffer has the wrong shape")
        bl = GEN_BLOCK_TILES * self._tile_samples
        for block in range(start // bl, (stop - 1) // bl + 1):
            data = self._generate_block(block)
            lo = max(start, block * bl)
            hi = min(stop, (block + 1) * bl)
            out[:, lo - start : hi - start] = data[:, lo - block * bl : hi - block * bl]
        return out

    def _generate_block(self, block: int) -> np.ndarray:
        """One canonical generation block, warm-up discarded."""
        cfg = self.config
        fs = cfg.sample_rate
        block_start = block * GEN_BLOCK_TILES * self._tile_samples
        tile_lo = max(0, block * GEN_BLOCK_TILES - BURN_TILES)
        tile_hi = (block + 1) * GEN_BLOCK_TILES
        gen_start = tile_lo * self._tile_samples
        n_gen = (tile_hi - tile_lo) * self._tile_samples

        # effect-gain schedule on the absolute 5-second grid
        eb_len = int(round(EFFECT_BLOCK_S * fs))
        eb_lo = gen_start // eb_len
        eb_hi = (gen_start + n_gen + eb_len - 1) // eb_len
        mid_t = (np.arange(eb_lo, eb_hi) + 0.5) * (eb_len / fs)
        gains = self._ramp_gain_at(mid_t)
        # run boundaries in absolute samples, clipped to the generated span
        edges = [gen_start]
        for i in range(1, len(gains)):
            if gains[i] != gains[i - 1]:
                edges.append((eb_lo + i) * eb_len)
        edges.append(gen_start + n_gen)
        run_gains = []
        for i, e in enumerate(edges[:-1]):
            idx = e // eb_len - eb_lo
            run_gains.append(gains[idx])

        shared = self._shared_component(tile_lo, tile_hi)
        # scratch buffer reused across blocks; fresh large allocations are
        # disproportionately expensive on some hosts
        if (
            getattr(self, "_block_buf", None) is None
            or self._block_buf.shape[1] < n_gen
        ):
            self._block_buf = np.empty(
                (self.channel_count, n_gen), dtype=np.float32
            )
        out = self._block_buf[:, :n_gen]
        for c in range(self.channel_count):
            out[c] = self._channel_signal(
                c, tile_lo, tile_hi, gen_start, edges, run_gains, shared
            )
        self._add_ictal(out, gen_start)
        self._apply_dropouts(out, tile_lo, tile_hi, gen_start)
        return out[:, block_start - gen_start :]

    def _shared_component(self, tile_lo, tile_hi):
        cfg = self.config
        eps = _unit_noise(
            cfg.seed, "shared", cfg.channel_count, tile_lo, tile_hi,
            self._tile_samples,
        )
        a1, a2 = _ar_coeffs(self._shared_freq, self._shared_radius, cfg.sample_rate)
        b = np.array([_unit_drive_std(a1, a2)], dtype=np.float32)
        a = np.array([1.0, -a1, -a2], dtype=np.float32)
        return lfilter(b, a, eps).astype(np.float32, copy=False)

    def _channel_signal(
        self, c, tile_lo, tile_hi, gen_start, edges, run_gains, shared
    ):
        cfg = self.config
        fs = cfg.sample_rate
        eps = _unit_noise(cfg.seed, "ar", c, tile_lo, tile_hi, self._tile_samples)
        n_gen = eps.size
        ar = np.empty(n_gen, dtype=np.float32)
        zi = np.zeros(2, dtype=np.float32)
        for lo_abs, hi_abs, g in zip(edges[:-1], edges[1:], run_gains):
            radius = min(self._radius + cfg.ac_shift * g, 0.9995)
            a1, a2 = _ar_coeffs(self._freqs[c], radius, fs)
            drive = _unit_drive_std(a1, a2) * (1.0 + cfg.variance_gain * g)
            lo = lo_abs - gen_start
            hi = min(hi_abs - gen_start, n_gen)
            b_coef = np.array([drive], dtype=np.float32)
            a_coef = np.array([1.0, -a1, -a2], dtype=np.float32)
            ar[lo:hi], zi = lfilter(b_coef, a_coef, eps[lo:hi], zi=zi)
        sig = ar
        sig *= np.float32(_AR_WEIGHT)
        eps *= np.float32(_BROADBAND_WEIGHT)
        sig += eps
        sig += np.float32(_SHARED_WEIGHT * self._shared_gains[c]) * shared
        self._add_spikes(sig, c, gen_start)
        sig *= self._channel_scale[c]
        return sig

    def _add_spikes(self, sig, channel, gen_start):
        cfg = self.config
        if cfg.spike_rate_gain <= 0:
            return
        fs = cfg.sample_rate
        ramp_s = cfg.ramp_minutes * 60.0
        t0 = gen_start / fs
        t1 = t0 + sig.size / fs
        wave_len = max(4, int(round(0.04 * fs)))
        wave = np.sin(np.linspace(0, 2 * np.pi, wave_len, endpoint=False)).astype(
            np.float32
        )
        for k, onset in enumerate(self.onsets):
            if onset - ramp_s >= t1 or onset <= t0:
                continue
            rng = _tile_rng(cfg.seed, "spike", channel, k)
            n_blocks = int(np.ceil(ramp_s / EFFECT_BLOCK_S))
            for b in range(n_blocks):
                b_start = onset - ramp_s + b * EFFECT_BLOCK_S
                g = (b + 0.5) / n_blocks
                lam = cfg.spike_rate_gain * g * EFFECT_BLOCK_S
                n_spikes = rng.poisson(lam)
                offsets = rng.random(n_spikes) * EFFECT_BLOCK_S
                signs = np.where(rng.random(n_spikes) < 0.5, -1.0, 1.0)
                for off, sign in zip(offsets, signs):
                    pos = int(round((b_start + off) * fs)) - gen_start
                    lo = max(pos, 0)
                    hi = min(pos + wave_len, sig.size)
                    if hi > lo:
                        sig[lo:hi] += np.float32(sign * _SPIKE_AMPLITUDE) * wave[
                            lo - pos : hi - pos
                        ]

    def _add_ictal(self, out, gen_start):
        cfg = self.config
        fs = cfg.sample_rate
        n = out.shape[1]
        for onset, end in zip(self.onsets, self.ends):
            lo = int(round(onset * fs)) - gen_start
            hi = int(round(end * fs)) - gen_start
            if hi <= 0 or lo >= n:
                continue
            lo_c, hi_c = max(lo, 0), min(hi, n)
            t = np.arange(lo_c, hi_c, dtype=np.float32) / np.float32(fs)
            burst = np.sin(2 * np.pi * 4.0 * t).astype(np.float32)
            out[:, lo_c:hi_c] += (
                np.float32(_ICTAL_AMPLITUDE)
                * self._channel_scale[:, None]
                * burst[None, :]
            )

    def _apply_dropouts(self, out, tile_lo, tile_hi, gen_start):
        cfg = self.config
        if cfg.dropout_per_hour <= 0:
            return
        fs = cfg.sample_rate
        rate_per_tile = cfg.dropout_per_hour * TILE_SECONDS / 3600.0
        n = out.shape[1]
        for tile in range(tile_lo, tile_hi):
            rng = _tile_rng(cfg.seed, "dropout", 0, tile)
            n_events = rng.poisson(rate_per_tile)
            starts = tile * TILE_SECONDS + rng.random(n_events) * TILE_SECONDS
            durations = 0.5 + rng.random(n_events) * (MAX_DROPOUT_S - 0.5)
            for s, d in zip(starts, durations):
                lo = int(round(s * fs)) - gen_start
                hi = int(round((s + d) * fs)) - gen_start
                if hi <= 0 or lo >= n:
                    continue
                out[:, max(lo, 0) : min(hi, n)] = np.nan


def generate_recording(config: SynthConfig):
    """Materialize a full synthetic recording (small durations only).

    Returns (Recording, AnnotationSet, GroundTruth).  For long recordings
    use `SyntheticSource.read_span` to stream spans instead.
    """
    source = SyntheticSource(config)
    total = source.n_samples * source.channel_count
    if total > _MAX_MATERIALIZED:
        raise ConfigError(
            f"recording of {total} sample values is too large to materialize; "
            "use SyntheticSource.read_span"
        )
    samples = source.read_span(0, source.n_samples)
    rec = Recording(
        samples=samples,
        sample_rate=source.sample_rate,
        patient_id=config.patient_id,
        start_offset_days=source.start_offset_days,
    )
    return rec, source.annotations, source.ground_truth


def write_dataset(source, annotations: AnnotationSet, out_dir, provenance: str = ""):
    """Emit `.f32raw` + `.meta` + `.seiz` for a source or recording.

    Round-trips losslessly through `prep.load_recording` (the generator's
    canonical output is float32).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = source.patient_id
    data_path = out_dir / f"{stem}.f32raw"
    meta_path = out_dir / f"{stem}.meta"
    seiz_path = out_dir / f"{stem}.seiz"
    fs = source.sample_rate
    n = source.n_samples
    # block-aligned chunks avoid regenerating warm-up spans
    chunk = 4 * GEN_BLOCK_TILES * TILE_SECONDS * int(fs)
    try:
        with open(data_path, "wb") as fh:
            for lo in range(0, n, chunk):
                hi = min(lo + chunk, n)
                block = source.read_span(lo, hi)
                fh.write(np.ascontiguousarray(block.T.astype("<f4")).tobytes())
    except OSError as exc:
        raise DataError(f"cannot write {data_path}: {exc}")
    header = f"# {provenance}\n" if provenance else ""
    meta_path.write_text(
        header
        + f"patient_id={stem}\n"
        + f"sample_rate_hz={fs:g}\n"
        + f"channel_count={source.channel_count}\n"
        + f"start_offset_days={getattr(source, 'start_offset_days', 100.0):g}\n"
        + "format_version=1\n"
    )
    lines = [header.rstrip("\n")] if header else []
    lines += [f"{o:.6f}\t{e:.6f}" for o, e in zip(annotations.onsets, annotations.ends)]
    seiz_path.write_text("\n".join(lines) + "\n")
    return {"data": data_path, "meta": meta_path, "annotations": seiz_path}
