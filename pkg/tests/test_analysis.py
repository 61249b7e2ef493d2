import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from loggrad.analysis import (
    SimilarityReport,
    cumulative_abs_histogram,
    export_filter_gallery,
    filter_to_gray8,
    histogram,
    normalize_filters,
    similar_pairs,
    similarity_matrix,
)
from loggrad.sensor_io import load_pgm


def _params(filters):
    """Stack flat or kh x kw x cin filters into a conv0.w tensor."""
    w = np.stack([np.asarray(f, np.float64) for f in filters], axis=-1)
    while w.ndim < 4:
        w = w[None]
    return {"conv0.w": w, "conv0.b": np.zeros(w.shape[-1])}


class TestNormalize:
    def test_three_four_five(self):
        f = normalize_filters(_params([[3.0, 4.0]]), 0)[0]
        np.testing.assert_allclose(f.vector, [0.6, 0.8], atol=1e-15)
        assert (f.layer, f.index) == (0, 0)

    def test_scale_invariant(self):
        v = np.random.default_rng(0).normal(size=12)
        a = normalize_filters(_params([v]), 0)[0].vector
        b = normalize_filters(_params([7 * v]), 0)[0].vector
        np.testing.assert_allclose(a, b, atol=1e-15)

    @pytest.mark.parametrize("seed", range(5))
    def test_unit_norms(self, seed):
        w = np.random.default_rng(seed).normal(size=(5, 5, 3, 9))
        for f in normalize_filters({"conv0.w": w}, 0):
            assert abs(np.linalg.norm(f.vector) - 1) < 1e-12

    def test_zero_filter_named(self):
        with pytest.raises(ValueError, match="filter 1 "):
            normalize_filters(_params([[1.0, 0.0], [0.0, 0.0]]), 0)

    def test_missing_layer(self):
        with pytest.raises(KeyError):
            normalize_filters(_params([[1.0, 2.0]]), 3)

    def test_flattening_includes_input_channels(self):
        w = np.zeros((2, 2, 3, 1))
        w[..., 0] = np.arange(12).reshape(2, 2, 3)
        v = normalize_filters({"conv0.w": w}, 0)[0].vector
        assert v.shape == (12,)
        np.testing.assert_allclose(v, np.arange(12) / np.linalg.norm(np.arange(12)))


class TestSimilarity:
    def test_identical(self):
        s = similarity_matrix([[1.0, 2.0], [1.0, 2.0]])
        assert s[0, 1] == pytest.approx(1.0, abs=1e-15)

    def test_orthogonal(self):
        assert similarity_matrix([[1.0, 0.0], [0.0, 1.0]])[0, 1] == 0.0

    def test_scaled_copy(self):
        v = np.array([0.3, -1.2, 2.0])
        assert similarity_matrix([v, 2 * v])[0, 1] == pytest.approx(1.0, abs=1e-15)

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="length"):
            similarity_matrix([[1.0, 2.0], [1.0, 2.0, 3.0]])

    def test_single_filter_rejected(self):
        with pytest.raises(ValueError):
            similarity_matrix([[1.0, 2.0]])

    @pytest.mark.parametrize("seed", range(5))
    def test_report_invariants(self, seed):
        w = np.random.default_rng(seed).normal(size=(3, 3, 2, 20))
        rep = SimilarityReport.from_params({"conv0.w": w}, 0)
        rep.check()
        assert np.all(np.diag(rep.matrix) == 1.0)

    def test_positive_rescale_invariance(self):
        rng = np.random.default_rng(3)
        w = rng.normal(size=(3, 3, 1, 8))
        scaled = w * rng.uniform(0.1, 10, size=8)
        a = SimilarityReport.from_params({"conv0.w": w}, 0).matrix
        b = SimilarityReport.from_params({"conv0.w": scaled}, 0).matrix
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_against_loop_oracle(self):
        rng = np.random.default_rng(4)
        vecs = rng.normal(size=(6, 10))
        s = similarity_matrix(list(vecs))
        for i in range(6):
            for j in range(6):
                ref = sum(a * b for a, b in zip(vecs[i], vecs[j]))
                ref /= np.sqrt(sum(a * a for a in vecs[i]) * sum(b * b for b in vecs[j]))
                assert s[i, j] == pytest.approx(1.0 if i == j else ref, abs=1e-12)


class TestHistogram:
    def test_right_inclusive_last_bin(self):
        edges, counts = histogram([-1.0, 0.0, 1.0], 2, (-1, 1))
        np.testing.assert_array_equal(counts, [1, 2])
        np.testing.assert_array_equal(edges, [-1, 0, 1])

    def test_empty(self):
        with pytest.raises(ValueError, match="empty"):
            histogram([], 5)

    def test_zero_bins(self):
        with pytest.raises(ValueError):
            histogram([0.1], 0)

    @settings(max_examples=50)
    @given(vals=st.lists(st.floats(-1, 1), min_size=1, max_size=200),
           bins=st.integers(1, 60))
    def test_mass_conserved(self, vals, bins):
        _, counts = histogram(vals, bins)
        assert counts.sum() == len(vals)
        _, cum = cumulative_abs_histogram(vals, bins)
        assert np.all(np.diff(cum) >= 0)
        assert cum[-1] == len(vals)

    def test_sort_and_count_oracle(self):
        vals = np.random.default_rng(5).uniform(-1, 1, size=1000)
        edges, counts = histogram(vals, 20)
        srt = sorted(vals)
        expected = []
        for k in range(20):
            lo, hi = edges[k], edges[k + 1]
            last = k == 19
            expected.append(sum(1 for v in srt if lo <= v and (v < hi or (last and v <= hi))))
        np.testing.assert_array_equal(counts, expected)

    def test_cumulative_oracle(self):
        vals = np.random.default_rng(6).uniform(-1, 1, size=300)
        edges, cum = cumulative_abs_histogram(vals, 10)
        for k in range(9):
            assert cum[k] == np.sum(np.abs(vals) < edges[k + 1])
        assert cum[-1] == 300


class TestPairs:
    def test_duplicate_set(self):
        w, v = np.array([1.0, 2.0, 0.0]), np.array([-2.0, 1.0, 0.0])
        pairs = similar_pairs(similarity_matrix([w, w, v]))
        assert [(i, j) for i, j, _ in pairs] == [(0, 1)]

    def test_negative_similarity_counts(self):
        w = np.array([1.0, 2.0])
        pairs = similar_pairs(similarity_matrix([w, -w]))
        assert pairs[0][:2] == (0, 1) and pairs[0][2] == pytest.approx(-1.0)

    def test_threshold_above_one(self):
        w = np.array([1.0, 2.0])
        assert similar_pairs(similarity_matrix([w, w]), 1.0 + 1e-9) == []

    def test_sorted_descending(self):
        s = SimilarityReport.from_params(
            {"conv0.w": np.random.default_rng(8).normal(size=(1, 1, 2, 30))}, 0)
        mags = [abs(p[2]) for p in similar_pairs(s, 0.5)]
        assert mags == sorted(mags, reverse=True)

    @pytest.mark.parametrize("seed", range(3))
    def test_brute_force_count(self, seed):
        s = similarity_matrix(list(np.random.default_rng(seed).normal(size=(40, 3))))
        n = 0
        for i in range(40):
            for j in range(i + 1, 40):
                n += abs(s[i, j]) > 0.9
        assert len(similar_pairs(s, 0.9)) == n

    def test_nested_thresholds(self):
        s = similarity_matrix(list(np.random.default_rng(9).normal(size=(30, 3))))
        lo = {p[:2] for p in similar_pairs(s, 0.8)}
        hi = {p[:2] for p in similar_pairs(s, 0.95)}
        assert hi <= lo


class TestReportJSON:
    def test_roundtrip(self):
        w = np.random.default_rng(10).normal(size=(3, 3, 1, 12))
        rep = SimilarityReport.from_params({"conv0.w": w}, 0, threshold=0.3)
        back = SimilarityReport.from_json(rep.to_json())
        np.testing.assert_array_equal(back.matrix, rep.matrix)
        np.testing.assert_array_equal(back.cum_counts, rep.cum_counts)
        np.testing.assert_array_equal(back.hist_edges, rep.hist_edges)
        assert back.pairs == rep.pairs
        assert (back.layer, back.threshold, back.bins) == (0, 0.3, 50)

    def test_schema_keys(self):
        rep = SimilarityReport.from_params({"conv0.w": np.eye(3)[None, None]}, 0)
        d = json.loads(rep.to_json())
        assert set(d) == {"layer", "threshold", "bins", "matrix", "histogram",
                          "cumulative_abs", "pairs"}


class TestGallery:
    def test_constant_filter_mid_gray(self):
        assert np.all(filter_to_gray8(np.full((3, 3, 1), 0.4)) == 128)

    def test_linear_map(self):
        f = np.array([[-1.0, 0.0, 1.0]])[:, :, None]
        np.testing.assert_array_equal(filter_to_gray8(f), [[0, 128, 255]])

    def test_channels_tiled(self):
        assert filter_to_gray8(np.random.default_rng(0).normal(size=(5, 5, 3))).shape == (5, 15)

    def test_files_per_pair(self, tmp_path):
        w = np.random.default_rng(1).normal(size=(3, 3, 1, 4))
        w[..., 1] = 2 * w[..., 0]
        w[..., 3] = -w[..., 2]
        params = {"conv0.w": w}
        pairs = similar_pairs(SimilarityReport.from_params(params, 0))
        files = export_filter_gallery(params, 0, pairs, tmp_path / "g")
        assert len(pairs) == 2
        assert len(files) == 2 * len(pairs) == len(list((tmp_path / "g").iterdir()))
        assert {f.name for f in files} == {"L0_F0_pair0.pgm", "L0_F1_pair0.pgm",
                                           "L0_F2_pair1.pgm", "L0_F3_pair1.pgm"}
        # duplicated filters render identically
        np.testing.assert_array_equal(load_pgm(tmp_path / "g" / "L0_F0_pair0.pgm"),
                                      load_pgm(tmp_path / "g" / "L0_F1_pair0.pgm"))

    def test_unwritable(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises(OSError):
            export_filter_gallery({"conv0.w": np.ones((1, 1, 1, 2))}, 0, [(0, 1, 1.0)],
                                  blocker / "sub")
