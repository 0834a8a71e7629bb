import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sigforecast import sigcore
from sigforecast.errors import DegenerateWindowError, ShapeError
from sigforecast.sigcore import (
    PathEmbedding,
    SignatureTensor,
    brute_force_signature,
    chen_concatenate,
    embed_time_augmented,
    flat_length,
    flatten,
    flatten_values,
    segment_signature,
    signature,
)


def random_path(rng, dim, n):
    # Unit-scale vertices, matching normalized data windows; keeps the
    # quadrature oracle's O(h^2) error an order below the 1e-6 gate.
    return PathEmbedding(0.6 * rng.standard_normal((n, dim)))


class TestEmbedTimeAugmented:
    def test_single_channel_three_samples(self):
        window = np.array([[3.0, -1.0, 2.0]])
        emb = embed_time_augmented(window, [0])
        expected = np.array([[0.0, 3.0], [0.5, -1.0], [1.0, 2.0]])
        np.testing.assert_array_equal(emb.vertices, expected)

    def test_last_time_coordinate_is_exactly_one(self):
        rng = np.random.default_rng(0)
        window = rng.standard_normal((4, 17))
        emb = embed_time_augmented(window, [0, 2, 3])
        assert emb.vertices[-1, 0] == 1.0
        assert emb.vertices[0, 0] == 0.0

    def test_sixteen_channels_gives_dim_17(self):
        window = np.zeros((16, 5))
        emb = embed_time_augmented(window, list(range(16)))
        assert emb.dim == 17

    def test_degenerate_window(self):
        with pytest.raises(DegenerateWindowError):
            embed_time_augmented(np.zeros((2, 1)), [0])

    def test_out_of_range_channel(self):
        with pytest.raises(IndexError):
            embed_time_augmented(np.zeros((2, 5)), [2])


class TestSegmentSignature:
    def test_scalar_increment_analytic(self):
        sig = segment_signature(np.array([2.0]), 3)
        assert sig.levels[0][0] == 1.0
        assert sig.levels[1][0] == 2.0
        assert sig.levels[2][0] == 2.0
        np.testing.assert_allclose(sig.levels[3][0], 4.0 / 3.0, rtol=1e-15)

    def test_symmetric_two_dim(self):
        sig = segment_signature(np.array([1.0, 1.0]), 2)
        np.testing.assert_array_equal(sig.levels[2], [0.5, 0.5, 0.5, 0.5])

    def test_zero_increment_is_identity(self):
        sig = segment_signature(np.zeros(3), 4)
        assert sig.levels[0][0] == 1.0
        for lvl in sig.levels[1:]:
            assert not lvl.any()

    def test_nan_increment_rejected(self):
        with pytest.raises(DegenerateWindowError):
            segment_signature(np.array([np.nan]), 2)


class TestChenConcatenate:
    def test_identity_neutral(self):
        rng = np.random.default_rng(1)
        a = segment_signature(rng.standard_normal(3), 3)
        ident = SignatureTensor.identity(3, 3)
        for combined in (chen_concatenate(a, ident), chen_concatenate(ident, a)):
            for la, lc in zip(a.levels, combined.levels):
                np.testing.assert_array_equal(la, lc)

    def test_collinear_segments_match_single_segment(self):
        # Two segments with the same increment v concatenate to one with 2v.
        rng = np.random.default_rng(2)
        v = rng.standard_normal(2)
        combined = chen_concatenate(
            segment_signature(v, 4), segment_signature(v, 4)
        )
        direct = segment_signature(2 * v, 4)
        for lc, ld in zip(combined.levels, direct.levels):
            np.testing.assert_allclose(lc, ld, atol=1e-12)

    def test_three_segment_fold_matches_oracle(self):
        rng = np.random.default_rng(3)
        path = random_path(rng, 2, 4)
        acc = SignatureTensor.identity(2, 3)
        for inc in path.increments():
            acc = chen_concatenate(acc, segment_signature(inc, 3))
        oracle = brute_force_signature(path, 3, 10_000)
        for la, lo in zip(acc.levels, oracle.levels):
            np.testing.assert_allclose(la, lo, atol=1e-6)

    def test_mismatched_tensors_rejected(self):
        a = SignatureTensor.identity(2, 2)
        with pytest.raises(ShapeError):
            chen_concatenate(a, SignatureTensor.identity(3, 2))
        with pytest.raises(ShapeError):
            chen_concatenate(a, SignatureTensor.identity(2, 3))


class TestSignature:
    def test_straight_line_analytic(self):
        path = PathEmbedding(np.array([[0.0, 0.0], [1.0, 2.0]]))
        sig = signature(path, 2)
        assert sig.coefficient((1,)) == 1.0
        assert sig.coefficient((2,)) == 2.0
        assert sig.coefficient((1, 1)) == 0.5
        assert sig.coefficient((1, 2)) == 1.0
        assert sig.coefficient((2, 1)) == 1.0
        assert sig.coefficient((2, 2)) == 2.0

    def test_single_segment_equals_segment_signature(self):
        rng = np.random.default_rng(4)
        verts = rng.standard_normal((2, 3))
        sig = signature(PathEmbedding(verts), 3)
        seg = segment_signature(verts[1] - verts[0], 3)
        for ls, lg in zip(sig.levels, seg.levels):
            np.testing.assert_array_equal(ls, lg)

    def test_random_path_matches_oracle(self):
        rng = np.random.default_rng(5)
        path = random_path(rng, 2, 5)
        sig = signature(path, 3)
        oracle = brute_force_signature(path, 3, 10_000)
        for ls, lo in zip(sig.levels, oracle.levels):
            np.testing.assert_allclose(ls, lo, atol=1e-6)


class TestBruteForce:
    def test_straight_line_level_one(self):
        path = PathEmbedding(np.array([[0.0, 0.0], [1.0, 0.0]]))
        sig = brute_force_signature(path, 1, 500)
        np.testing.assert_allclose(sig.coefficient((1,)), 1.0, atol=1e-9)

    def test_level_zero_is_one(self):
        rng = np.random.default_rng(6)
        path = random_path(rng, 3, 3)
        sig = brute_force_signature(path, 2, 1000)
        assert sig.levels[0][0] == 1.0

    def test_quarter_square_against_exact(self):
        path = PathEmbedding(np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]]))
        exact = signature(path, 2)
        approx = brute_force_signature(path, 2, 10_000)
        worst = max(
            np.abs(le - la).max() for le, la in zip(exact.levels, approx.levels)
        )
        assert worst <= 1e-6

    def test_too_few_subdivisions_rejected(self):
        path = PathEmbedding(np.zeros((4, 2)) + np.arange(4)[:, None])
        with pytest.raises(ShapeError):
            brute_force_signature(path, 2, 300)


class TestFlatten:
    def test_dimension_law(self):
        rng = np.random.default_rng(7)
        for dim in range(2, 18):
            v = rng.standard_normal(dim)
            for depth in range(1, 6):
                sig = segment_signature(v, depth)
                n = flatten_values(sig).size
                assert n == (dim ** (depth + 1) - 1) // (dim - 1)
                assert n == flat_length(dim, depth)

    def test_paper_dimension_cases(self):
        assert flat_length(17, 2) == 307
        assert flat_length(2, 5) == 63

    def test_names_small_case(self):
        sig = segment_signature(np.array([1.0, 2.0]), 1)
        values, names = flatten(sig, "sig/ch00")
        assert len(values) == 3
        assert names == ["sig/ch00/0/()", "sig/ch00/1/(1)", "sig/ch00/1/(2)"]

    def test_names_match_values_order(self):
        sig = signature(PathEmbedding(np.array([[0.0, 0.0], [1.0, 2.0]])), 2)
        values, names = flatten(sig, "x")
        lookup = dict(zip(names, values))
        assert lookup["x/2/(1,2)"] == sig.coefficient((1, 2))
        assert lookup["x/0/()"] == 1.0


class TestInvariants:
    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(2, 3), st.integers(3, 5))
    def test_chen_associativity(self, seed, dim, depth):
        rng = np.random.default_rng(seed)
        a, b, c = (segment_signature(rng.standard_normal(dim), depth) for _ in range(3))
        left = chen_concatenate(chen_concatenate(a, b), c)
        right = chen_concatenate(a, chen_concatenate(b, c))
        for ll, lr in zip(left.levels, right.levels):
            np.testing.assert_allclose(ll, lr, atol=1e-12)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_midpoint_insertion_invariance(self, seed):
        rng = np.random.default_rng(seed)
        verts = rng.standard_normal((5, 2))
        k = int(rng.integers(0, 4))
        mid = 0.5 * (verts[k] + verts[k + 1])
        refined = np.insert(verts, k + 1, mid, axis=0)
        sig_a = signature(PathEmbedding(verts), 3)
        sig_b = signature(PathEmbedding(refined), 3)
        for la, lb in zip(sig_a.levels, sig_b.levels):
            np.testing.assert_allclose(la, lb, atol=1e-12)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_shuffle_identity_level_one(self, seed):
        # S_i * S_j = S_ij + S_ji for every letter pair.
        rng = np.random.default_rng(seed)
        sig = signature(PathEmbedding(rng.standard_normal((5, 3))), 2)
        for i in range(1, 4):
            for j in range(1, 4):
                lhs = sig.coefficient((i,)) * sig.coefficient((j,))
                rhs = sig.coefficient((i, j)) + sig.coefficient((j, i))
                assert abs(lhs - rhs) <= 1e-10

    def test_oracle_equivalence_twenty_paths(self):
        rng = np.random.default_rng(1234)
        for _ in range(20):
            dim = int(rng.integers(1, 4))
            n = int(rng.integers(2, 7))
            depth = int(rng.integers(1, 4))
            path = random_path(rng, dim, n)
            exact = signature(path, depth)
            approx = brute_force_signature(path, depth, 10_000)
            for le, la in zip(exact.levels, approx.levels):
                np.testing.assert_allclose(le, la, atol=1e-6)

    def test_level_zero_stays_one(self):
        rng = np.random.default_rng(8)
        sig = signature(PathEmbedding(rng.standard_normal((6, 2))), 3)
        sig = chen_concatenate(sig, segment_signature(rng.standard_normal(2), 3))
        assert sig.levels[0][0] == 1.0


def test_sigspec_validation():
    spec = sigcore.SigSpec(depth=2, channel_subset=(0, 3))
    assert spec.channel_subset == (0, 3)
    with pytest.raises(ShapeError):
        sigcore.SigSpec(depth=0)
    with pytest.raises(ShapeError):
        sigcore.SigSpec(depth=2, channel_subset=(1, 1))
