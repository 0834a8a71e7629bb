import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sigforecast import prep
from sigforecast.errors import (
    ClassMissingError,
    ConfigError,
    DataError,
    DataFormatError,
)
from sigforecast.prep import (
    AnnotationSet,
    Recording,
    Segment,
    compute_sample_weights,
    extract_lead_segments,
    label_windows,
    labels_from_tts,
    load_annotations,
    load_recording,
    lowpass_filter,
    normalize_amplitude,
    split_dataset,
    standardize_features,
    window_segments,
)


def write_raw_dataset(tmp_path, samples_f32, fs=400.0, patient="p00", offset=100.0):
    data = tmp_path / f"{patient}.f32raw"
    meta = tmp_path / f"{patient}.meta"
    frames = np.ascontiguousarray(samples_f32.T.astype("<f4"))
    data.write_bytes(frames.tobytes())
    meta.write_text(
        f"patient_id={patient}\n"
        f"sample_rate_hz={fs}\n"
        f"channel_count={samples_f32.shape[0]}\n"
        f"start_offset_days={offset}\n"
        "format_version=1\n"
    )
    return data, meta


def make_recording(duration_s, fs=400.0, p=1, offset_days=100.0, fill=0.0):
    n = int(round(duration_s * fs))
    return Recording(
        np.full((p, n), fill, dtype=np.float64),
        sample_rate=fs,
        patient_id="pt",
        start_offset_days=offset_days,
    )


class TestLoadRecording:
    def test_round_trip_shapes(self, tmp_path):
        rng = np.random.default_rng(0)
        samples = rng.standard_normal((2, 800)).astype(np.float32)
        data, meta = write_raw_dataset(tmp_path, samples)
        rec = load_recording(data)
        assert rec.channel_count == 2
        assert rec.n_samples == 800
        assert rec.sample_rate == 400.0
        np.testing.assert_array_equal(np.asarray(rec.samples), samples)

    def test_nan_preserved(self, tmp_path):
        samples = np.zeros((2, 100), dtype=np.float32)
        samples[1, 40:45] = np.nan
        data, _ = write_raw_dataset(tmp_path, samples)
        rec = load_recording(data)
        assert np.isnan(np.asarray(rec.samples[1, 40:45])).all()
        assert np.isfinite(np.asarray(rec.samples[0])).all()

    def test_truncated_file(self, tmp_path):
        samples = np.zeros((3, 50), dtype=np.float32)
        data, _ = write_raw_dataset(tmp_path, samples)
        raw = data.read_bytes()
        data.write_bytes(raw[:-6])  # no longer divisible by the frame size
        with pytest.raises(DataFormatError):
            load_recording(data)

    def test_bad_format_version(self, tmp_path):
        samples = np.zeros((1, 10), dtype=np.float32)
        data, meta = write_raw_dataset(tmp_path, samples)
        meta.write_text(meta.read_text().replace("format_version=1", "format_version=9"))
        with pytest.raises(DataFormatError):
            load_recording(data)

    def test_csv_round_trip(self, tmp_path):
        fs = 200.0
        t = np.arange(20) / fs
        x = np.sin(t)
        y = np.cos(t)
        path = tmp_path / "tiny.csv"
        lines = ["t,ch00,ch01"]
        lines += [f"{ti},{a},{b}" for ti, a, b in zip(t, x, y)]
        path.write_text("\n".join(lines) + "\n")
        rec = load_recording(path)
        assert rec.channel_count == 2
        np.testing.assert_allclose(rec.sample_rate, fs, rtol=1e-9)
        np.testing.assert_allclose(rec.samples[0], x)

    def test_annotations_round_trip(self, tmp_path):
        path = tmp_path / "ev.seiz"
        path.write_text("# header\n100.0\t160.0\n5000.5\t5050.0\n")
        ann = load_annotations(path)
        assert len(ann) == 2
        assert ann.onsets[1] == 5000.5


class TestLowpass:
    def test_passband_amplitude_preserved(self):
        fs = 400.0
        t = np.arange(int(4 * fs)) / fs
        rec = Recording(np.sin(2 * np.pi * 10 * t)[None, :], fs, "pt")
        out = lowpass_filter(rec, 170.0)
        interior = out.samples[0, 400:-400]
        assert abs(np.max(np.abs(interior)) - 1.0) < 0.01

    def test_stopband_attenuation(self):
        fs = 400.0
        t = np.arange(int(4 * fs)) / fs
        rec = Recording(np.sin(2 * np.pi * 190 * t)[None, :], fs, "pt")
        out = lowpass_filter(rec, 170.0)
        interior = out.samples[0, 400:-400]
        assert np.max(np.abs(interior)) < 0.1  # >= 20 dB down

    def test_all_nan_channel(self):
        rec = Recording(np.full((1, 500), np.nan), 400.0, "pt")
        out = lowpass_filter(rec)
        assert np.isnan(out.samples).all()

    def test_nan_gap_restarts(self):
        fs = 400.0
        x = np.ones(1000)
        x[500:510] = np.nan
        rec = Recording(x[None, :], fs, "pt")
        out = lowpass_filter(rec)
        assert np.isnan(out.samples[0, 500:510]).all()
        np.testing.assert_allclose(out.samples[0, 100:400], 1.0, rtol=1e-6)
        np.testing.assert_allclose(out.samples[0, 600:900], 1.0, rtol=1e-6)

    def test_cutoff_above_nyquist(self):
        rec = Recording(np.zeros((1, 100)), 300.0, "pt")
        with pytest.raises(ConfigError):
            lowpass_filter(rec, 170.0)


class TestNormalize:
    def test_division(self):
        rec = Recording(np.array([[250.0, np.nan]]), 400.0, "pt")
        out = normalize_amplitude(rec)
        assert out.samples[0, 0] == 2.5
        assert np.isnan(out.samples[0, 1])

    def test_std_scaling(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal(10_000) * 25.0
        rec = Recording(x[None, :], 400.0, "pt")
        out = normalize_amplitude(rec)
        np.testing.assert_allclose(np.std(out.samples), 0.25, atol=0.01)


class TestLeadSegments:
    def test_follow_up_seizure_not_lead(self):
        rec = make_recording(10 * 3600, fs=1.0)
        ann = AnnotationSet(np.array([4 * 3600.0, 5 * 3600.0]),
                            np.array([4 * 3600.0 + 60, 5 * 3600.0 + 60]))
        segs = extract_lead_segments(rec, ann, settle_days=100.0)
        assert len(segs) == 1
        assert segs[0].onset_s == 4 * 3600.0

    def test_isolated_seizure_full_horizon(self):
        rec = make_recording(6 * 3600, fs=1.0)
        ann = AnnotationSet(np.array([3 * 3600.0]), np.array([3 * 3600.0 + 30]))
        (seg,) = extract_lead_segments(rec, ann, settle_days=100.0)
        assert seg.duration_s == pytest.approx(120 * 60.0)
        assert seg.end_sample == int(round(3 * 3600.0 * rec.sample_rate))

    def test_segment_clipped_by_exclusion_zone(self):
        rec = make_recording(12 * 3600, fs=1.0)
        first_end = 2 * 3600.0 + 60
        second_onset = first_end + 4 * 3600.0 + 30 * 60.0
        ann = AnnotationSet(
            np.array([2 * 3600.0, second_onset]),
            np.array([first_end, second_onset + 60]),
        )
        segs = extract_lead_segments(rec, ann, settle_days=100.0)
        assert len(segs) == 2
        assert segs[1].duration_s == pytest.approx(30 * 60.0)

    def test_settle_exclusion(self):
        rec = make_recording(6 * 3600, fs=1.0, offset_days=100.0 - 1.0 / 24)
        # recording starts one hour before the 100-day boundary
        ann = AnnotationSet(np.array([2 * 3600.0]), np.array([2 * 3600.0 + 30]))
        (seg,) = extract_lead_segments(rec, ann)
        assert seg.start_sample == int(3600.0 * rec.sample_rate)


class TestWindowing:
    def test_window_count_120min(self):
        fs = 400.0
        rec = make_recording(3.1 * 3600, fs=fs)
        rec.samples[:] = np.random.default_rng(2).standard_normal(rec.samples.shape)
        ann = AnnotationSet(np.array([3.05 * 3600.0]), np.array([3.05 * 3600.0 + 30]))
        (seg,) = extract_lead_segments(rec, ann, settle_days=100.0)
        windows = window_segments([seg], rec, 4000)
        assert len(windows) == 720

    def test_nan_window_excluded(self):
        fs = 100.0
        rec = make_recording(400.0, fs=fs)
        rng = np.random.default_rng(3)
        rec.samples[:] = rng.standard_normal(rec.samples.shape)
        rec.samples[0, 20_000] = np.nan  # inside window 0 of the segment below
        seg = Segment(0, "pt", 400.0, 18_000, 40_000, fs)
        windows = window_segments([seg], rec, 1000)
        indices = {w.index_in_segment for w in windows}
        assert 2 not in indices  # samples 20000..21000 fall in tile 2
        assert len(windows) == 21

    def test_flat_channel_excluded(self):
        fs = 100.0
        rec = make_recording(100.0, fs=fs, p=2)
        rng = np.random.default_rng(4)
        rec.samples[:] = rng.standard_normal(rec.samples.shape)
        rec.samples[1, 2000:3000] *= 0.05  # std ~0.05 < 0.1 threshold
        seg = Segment(0, "pt", 100.0, 0, 10_000, fs)
        windows = window_segments([seg], rec, 1000)
        indices = {w.index_in_segment for w in windows}
        assert 2 not in indices
        assert len(windows) == 9

    def test_time_to_seizure_decrements(self):
        fs = 400.0
        rec = make_recording(3600.0, fs=fs)
        rng = np.random.default_rng(5)
        rec.samples[:] = rng.standard_normal(rec.samples.shape)
        seg = Segment(0, "pt", 3000.0, 0, int(3000 * fs), fs)
        windows = window_segments([seg], rec, 4000)
        tts = np.array([w.time_to_seizure for w in windows])
        np.testing.assert_allclose(np.diff(tts), -10.0, atol=1e-9)
        assert tts[-1] == pytest.approx(0.0, abs=1e-9)


class TestLabels:
    def test_thresholds(self):
        assert labels_from_tts([4 * 60.0], 5.0)[0] == 1
        assert labels_from_tts([30 * 60.0], 20.0)[0] == -1

    def test_boundary_is_positive(self):
        assert labels_from_tts([10 * 60.0], 10.0)[0] == 1

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_monotone_in_sigma(self, seed):
        rng = np.random.default_rng(seed)
        tts = rng.uniform(0, 7200, size=50)
        small = labels_from_tts(tts, 5.0)
        large = labels_from_tts(tts, 20.0)
        assert not np.any((small == 1) & (large == -1))


def equal_segments(n, duration_h=None):
    segs = [
        Segment(i, "pt", (i + 1) * 3600.0, i * 100, i * 100 + 50, 1.0)
        for i in range(n)
    ]
    return segs, (n * 3600.0 if duration_h is None else duration_h * 3600.0)


class TestSplit:
    def test_hundred_equal_segments(self):
        segs, total = equal_segments(100)
        ids = np.arange(100)
        split = split_dataset(ids, segs, total, "final-phase")
        assert list(split.role[:70]) == ["train"] * 70
        assert list(split.role[70:]) == ["test"] * 30

    def test_folds_contiguous_and_ordered(self):
        segs, total = equal_segments(100)
        ids = np.repeat(np.arange(100), 3)
        split = split_dataset(ids, segs, total, "final-phase")
        folds = split.fold[split.role == "train"]
        assert set(folds) == set(range(10))
        assert np.all(np.diff(folds) >= 0)

    def test_validation_phase_regions(self):
        segs, total = equal_segments(100)
        ids = np.arange(100)
        split = split_dataset(ids, segs, total, "validation-phase")
        roles = np.asarray(split.role)
        assert np.all(roles[:50] == "train")
        assert np.all(roles[50:70] == "validation")
        assert np.all(roles[70:] == "test")

    def test_segment_assigned_wholly_by_onset(self):
        # one segment whose onset sits just past the boundary
        segs, total = equal_segments(20)
        split = split_dataset(np.arange(20), segs, total, "final-phase")
        # onset of segment 13 is 14h = 0.7 * 20h exactly -> train side
        assert split.role[13] == "train"
        assert split.role[14] == "test"

    def test_fold_count_error(self):
        segs, total = equal_segments(12)
        with pytest.raises(DataError):
            split_dataset(np.arange(12), segs, total, "final-phase")
        # 12 segments, final phase: onset <= 0.7*12h=8.4h -> 8 train segments

    def test_split_monotonicity(self):
        segs, total = equal_segments(50)
        ids = np.arange(50)
        split = split_dataset(ids, segs, total, "final-phase")
        onsets = np.array([s.onset_s for s in segs])
        assert onsets[split.role == "train"].max() < onsets[split.role == "test"].min()


class TestStandardize:
    def test_train_columns_standardized(self):
        rng = np.random.default_rng(6)
        x = rng.standard_normal((5, 100)) * 3.0 + 1.0
        train = np.arange(60)
        out, scaler = standardize_features(x, train)
        np.testing.assert_allclose(out[:, train].mean(axis=1), 0.0, atol=1e-12)
        np.testing.assert_allclose(out[:, train].std(axis=1), 1.0, atol=1e-12)

    def test_constant_feature_flagged(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal((3, 50))
        x[1] = 7.5
        out, scaler = standardize_features(x, np.arange(30))
        assert scaler.constant[1]
        assert not scaler.constant[0]
        np.testing.assert_array_equal(out[1], 0.0)

    def test_test_columns_use_train_scaler(self):
        rng = np.random.default_rng(8)
        x = rng.standard_normal((2, 100))
        x[:, 60:] += 5.0  # shifted test block
        out, _ = standardize_features(x, np.arange(60))
        assert out[:, 60:].mean() > 3.0

    def test_scaler_transform_matches(self):
        rng = np.random.default_rng(9)
        x = rng.standard_normal((4, 40))
        out, scaler = standardize_features(x, np.arange(25))
        np.testing.assert_allclose(scaler.transform(x), out, atol=1e-12)


class TestWeights:
    def test_imbalanced_example(self):
        z = np.array([-1] * 90 + [1] * 10)
        w = compute_sample_weights(z)
        np.testing.assert_allclose(w[z == -1], 100 / 180)
        np.testing.assert_allclose(w[z == 1], 100 / 20)

    def test_balanced_classes(self):
        z = np.array([-1, 1] * 10)
        np.testing.assert_array_equal(compute_sample_weights(z), 1.0)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(5, 200))
    def test_weight_sum_equals_m(self, seed, m):
        rng = np.random.default_rng(seed)
        z = np.where(rng.uniform(size=m) < 0.3, 1, -1)
        if len(set(z.tolist())) < 2:
            z[0] = 1
            z[1] = -1
        w = compute_sample_weights(z)
        np.testing.assert_allclose(w.sum(), len(z), rtol=1e-12)

    def test_single_class_error(self):
        with pytest.raises(ClassMissingError):
            compute_sample_weights(np.ones(10))
