import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sigforecast import featbank, sigcore
from sigforecast.errors import ConfigError, DegenerateWindowError, ShapeError
from sigforecast.featbank import (
    DEFAULT_CONFIG,
    FeatureConfig,
    build_feature_matrix,
    extract,
    extract_autocorr,
    extract_fft,
    extract_moments,
    extract_signature_features,
)

F64_CONFIG = FeatureConfig(sig_precision="float64")


def rand_window(rng, p=16, delta=64):
    return rng.standard_normal((p, delta))


class TestSignatureFeatures:
    def test_length_contract(self):
        rng = np.random.default_rng(0)
        fv = extract_signature_features(rand_window(rng))
        assert len(fv.values) == 1315
        assert len(set(fv.names)) == 1315

    def test_zero_window_time_only_terms(self):
        fv = extract_signature_features(np.zeros((2, 32)), F64_CONFIG)
        lookup = dict(zip(fv.names, fv.values))
        # data-coordinate terms vanish, pure-time terms equal 1/h!
        assert lookup["sig/ch00/1/(2)"] == 0.0
        assert lookup["sig/ch01/5/(2,2,2,2,2)"] == 0.0
        np.testing.assert_allclose(lookup["sig/ch00/3/(1,1,1)"], 1 / 6, rtol=1e-12)
        np.testing.assert_allclose(lookup["sig/joint/2/(1,1)"], 0.5, rtol=1e-12)

    def test_channel_equal_to_time_matches_closed_form(self):
        delta = 50
        window = np.vstack(
            [np.linspace(0.0, 1.0, delta), np.cos(np.linspace(0, 3, delta))]
        )
        fv = extract_signature_features(window, F64_CONFIG)
        block = [v for v, n in zip(fv.values, fv.names) if n.startswith("sig/ch00/")]
        expected = sigcore.flatten_values(
            sigcore.segment_signature(np.array([1.0, 1.0]), 5)
        )
        np.testing.assert_allclose(block, expected, atol=1e-9)

    def test_float32_default_close_to_float64(self):
        rng = np.random.default_rng(1)
        window = rand_window(rng, p=3, delta=128)
        fast = extract_signature_features(window, DEFAULT_CONFIG)
        exact = extract_signature_features(window, F64_CONFIG)
        np.testing.assert_allclose(fast.values, exact.values, atol=5e-4)

    def test_degenerate_window(self):
        with pytest.raises(DegenerateWindowError):
            extract_signature_features(np.zeros((16, 1)))


class TestMoments:
    def test_mean_example(self):
        fv = extract_moments(np.array([[1.0, 2.0, 3.0, 1.0, 3.0]]))
        assert fv.values[0] == 2.0
        assert fv.names[0] == "mo/ch00/ord1"

    def test_length_for_16_channels(self):
        rng = np.random.default_rng(2)
        fv = extract_moments(rand_window(rng))
        assert len(fv.values) == 80

    def test_symmetric_distribution_skewness(self):
        rng = np.random.default_rng(3)
        fv = extract_moments(rng.standard_normal((1, 100_000)))
        skew = dict(zip(fv.names, fv.values))["mo/ch00/ord3"]
        assert abs(skew) < 0.05

    def test_sample_std(self):
        x = np.array([[1.0, 2.0, 3.0, 4.0, 5.0]])
        fv = extract_moments(x)
        np.testing.assert_allclose(fv.values[1], np.std(x, ddof=1), rtol=1e-14)

    def test_zero_variance_channel(self):
        with pytest.raises(DegenerateWindowError):
            extract_moments(np.ones((1, 10)))


class TestAutocorr:
    def test_lag_too_large(self):
        window = np.zeros((1, 16))
        window[0, 3] = 1.0
        with pytest.raises(ConfigError):
            extract_autocorr(window + 1.0, FeatureConfig(ac_lags=(16,)))
        with pytest.raises(ConfigError):
            extract_autocorr(window + 1.0, FeatureConfig(ac_lags=(1,), xc_lags=(15,)))

    def test_alternating_signal(self):
        delta = 64
        window = np.tile([1.0, -1.0], delta // 2)[None, :]
        fv = extract_autocorr(window, FeatureConfig(ac_lags=(1,)))
        np.testing.assert_allclose(fv.values[0], -(delta - 1) / delta, atol=1e-12)

    def test_sinusoid_half_period_lag(self):
        lag = 8
        delta = 4096
        t = np.arange(delta)
        window = np.sin(2 * np.pi * t / (2 * lag))[None, :]
        fv = extract_autocorr(window, FeatureConfig(ac_lags=(lag,)))
        np.testing.assert_allclose(fv.values[0], -1.0, atol=0.02)

    def test_paper_count_dimension(self):
        rng = np.random.default_rng(4)
        fv = extract_autocorr(rand_window(rng, delta=600))
        assert len(fv.values) == 400  # 160 autocorr + 120 pairs * 2 lags

    def test_all_lags_dimension(self):
        rng = np.random.default_rng(5)
        cfg = FeatureConfig(xc_pair_mode="unordered-all-lags")
        fv = extract_autocorr(rand_window(rng, delta=600), cfg)
        assert len(fv.values) == 640

    def test_values_bounded(self):
        rng = np.random.default_rng(6)
        fv = extract_autocorr(rand_window(rng, p=4, delta=600))
        assert np.all(np.abs(fv.values) <= 1.0 + 1e-12)

    def test_lag_zero_autocorr_is_one(self):
        # r(0) is excluded by config validation; the definition gives 1.
        rng = np.random.default_rng(7)
        x = rng.standard_normal(100)
        xc = x - x.mean()
        assert np.isclose(np.dot(xc, xc) / np.dot(xc, xc), 1.0)
        with pytest.raises(ConfigError):
            FeatureConfig(ac_lags=(0,))


class TestFFT:
    def test_length_contract(self):
        rng = np.random.default_rng(8)
        fv = extract_fft(rand_window(rng))
        assert len(fv.values) == 832
        assert fv.names[0] == "ft/ch00/0.0000"

    def test_exact_bin_sinusoid(self):
        # fs chosen so the grid point e - 1 coincides with DFT bin 10.
        delta, k = 200, 10
        target = np.e - 1.0
        fs = delta * target / k
        cfg = FeatureConfig(sample_rate_hz=fs, fft_exponent_max=1.0)
        amp = 1.7
        t = np.arange(delta)
        window = amp * np.sin(2 * np.pi * k * t / delta + 0.3)[None, :]
        fv = extract_fft(window, cfg)
        lookup = dict(zip(fv.names, fv.values))
        np.testing.assert_allclose(lookup[f"ft/ch00/{target:.4f}"], amp, atol=1e-6)

    def test_constant_channel(self):
        # 10 s at 400 Hz gives 0.1 Hz bins, so every non-DC grid frequency
        # interpolates between zero-amplitude bins.
        c = -3.25
        fv = extract_fft(np.full((1, 4000), c), FeatureConfig(sample_rate_hz=400.0))
        assert np.isclose(fv.values[0], abs(c), atol=1e-12)
        assert np.all(fv.values[1:] < 1e-10)

    def test_above_nyquist_rejected(self):
        with pytest.raises(ConfigError):
            extract_fft(np.zeros((1, 64)), FeatureConfig(sample_rate_hz=300.0))

    def test_nonnegative(self):
        rng = np.random.default_rng(9)
        fv = extract_fft(rand_window(rng, p=3, delta=512))
        assert np.all(fv.values >= 0.0)


class TestExtractDispatch:
    def test_all_length(self):
        rng = np.random.default_rng(10)
        fv = extract(rand_window(rng, delta=600), "all")
        assert len(fv.values) == 2627  # 1315 + 80 + 400 + 832

    def test_mo_dispatch_identity(self):
        rng = np.random.default_rng(11)
        w = rand_window(rng, p=2, delta=32)
        np.testing.assert_array_equal(
            extract(w, "mo").values, extract_moments(w).values
        )

    def test_all_names_unique_and_prefixed(self):
        rng = np.random.default_rng(12)
        fv = extract(rand_window(rng, p=2, delta=600), "all")
        assert len(set(fv.names)) == len(fv.names)
        prefixes = {n.split("/")[0] for n in fv.names}
        assert prefixes == {"sig", "mo", "ac", "xc", "ft"}

    def test_unknown_set_rejected(self):
        with pytest.raises(ConfigError):
            extract(np.zeros((1, 16)), "wavelets")

    def test_extract_is_pure(self):
        rng = np.random.default_rng(13)
        w = rand_window(rng, p=2, delta=600)
        a = extract(w, "all")
        b = extract(w, "all")
        np.testing.assert_array_equal(a.values, b.values)


class TestBuildMatrix:
    def test_shape(self):
        rng = np.random.default_rng(14)
        windows = [rand_window(rng, delta=32) for _ in range(3)]
        fm = build_feature_matrix(windows, "mo")
        assert fm.values.shape == (80, 3)

    def test_identical_windows_identical_columns(self):
        rng = np.random.default_rng(15)
        w = rand_window(rng, p=2, delta=600)
        fm = build_feature_matrix([w, w], "all")
        np.testing.assert_array_equal(fm.values[:, 0], fm.values[:, 1])

    def test_parallel_equals_sequential(self):
        rng = np.random.default_rng(16)
        windows = rng.standard_normal((600, 2, 64))
        seq = build_feature_matrix(windows, "mo", workers=1)
        par = build_feature_matrix(windows, "mo", workers=4)
        np.testing.assert_array_equal(seq.values, par.values)

    def test_column_matches_extract(self):
        rng = np.random.default_rng(17)
        windows = rng.standard_normal((3, 2, 600))
        fm = build_feature_matrix(windows, "all")
        single = extract(windows[1], "all")
        np.testing.assert_allclose(
            fm.values[:, 1], single.values, rtol=1e-12, atol=1e-12
        )

    def test_heterogeneous_shapes_rejected(self):
        with pytest.raises(ShapeError):
            build_feature_matrix([np.zeros((2, 16)), np.zeros((3, 16))], "mo")


class TestScalingProperty:
    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(0.1, 50.0))
    def test_positive_scaling(self, seed, c):
        rng = np.random.default_rng(seed)
        w = rng.standard_normal((2, 600))
        base = extract(w, "all", DEFAULT_CONFIG)
        scaled = extract(c * w, "all", DEFAULT_CONFIG)
        for name, v0, v1 in zip(base.names, base.values, scaled.values):
            kind = name.split("/")[0]
            if kind == "mo" and name.endswith(("ord1", "ord2")):
                np.testing.assert_allclose(v1, c * v0, rtol=1e-10, atol=1e-12)
            elif kind == "mo":
                np.testing.assert_allclose(v1, v0, rtol=1e-9, atol=1e-10)
            elif kind in ("ac", "xc"):
                np.testing.assert_allclose(v1, v0, rtol=1e-9, atol=1e-10)
            elif kind == "ft":
                np.testing.assert_allclose(v1, c * v0, rtol=1e-10, atol=1e-12)
