import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from loggrad.sensor_io import (
    BayerRaw,
    DatasetError,
    LabeledDataset,
    PGMError,
    SplitSpec,
    demosaic_to_gray,
    load_pascal_raw,
    load_pgm,
    read_manifest,
    resize_bilinear,
    save_pgm,
    scale_brightness,
    split_dataset,
    split_indices,
    write_manifest,
)

gray_images = arrays(np.uint16, st.tuples(st.integers(1, 12), st.integers(1, 12)))


def _write_p5(path, width, height, maxval, payload: bytes, magic=b"P5"):
    path.write_bytes(magic + b"\n%d %d\n%d\n" % (width, height, maxval) + payload)


class TestPGM:
    def test_load_16bit(self, tmp_path):
        f = tmp_path / "a.pgm"
        _write_p5(f, 2, 2, 65535, np.array([0, 100, 200, 65535], ">u2").tobytes())
        np.testing.assert_array_equal(load_pgm(f), [[0, 100], [200, 65535]])

    def test_load_8bit_scales(self, tmp_path):
        f = tmp_path / "a.pgm"
        _write_p5(f, 1, 1, 255, b"\xff")
        assert load_pgm(f)[0, 0] == 65535

    def test_header_comments(self, tmp_path):
        f = tmp_path / "a.pgm"
        f.write_bytes(b"P5\n# made by hand\n1 2 # trailing\n255\n\x01\x02")
        np.testing.assert_array_equal(load_pgm(f), [[257], [514]])

    def test_ascii_rejected(self, tmp_path):
        f = tmp_path / "a.pgm"
        f.write_bytes(b"P2\n1 1\n255\n7\n")
        with pytest.raises(PGMError, match="unsupported format"):
            load_pgm(f)

    def test_truncated_payload(self, tmp_path):
        f = tmp_path / "a.pgm"
        _write_p5(f, 2, 2, 65535, b"\x00\x01\x00")
        with pytest.raises(PGMError, match="truncated"):
            load_pgm(f)

    @pytest.mark.parametrize("maxval", [1023, 4095, 0])
    def test_unsupported_maxval(self, tmp_path, maxval):
        f = tmp_path / "a.pgm"
        _write_p5(f, 1, 1, maxval, b"\x00\x00")
        with pytest.raises(PGMError, match="maxval"):
            load_pgm(f)

    def test_malformed_header(self, tmp_path):
        f = tmp_path / "a.pgm"
        f.write_bytes(b"P5\nfoo 1\n255\n\x00")
        with pytest.raises(PGMError):
            load_pgm(f)

    def test_save_16bit_maxval(self, tmp_path):
        f = tmp_path / "a.pgm"
        save_pgm(np.array([[0, 65535]], np.uint16), f)
        assert f.read_bytes().startswith(b"P5\n2 1\n65535\n")
        assert f.read_bytes().endswith(b"\x00\x00\xff\xff")

    def test_save_8bit_value(self, tmp_path):
        f = tmp_path / "a.pgm"
        save_pgm(np.array([[65535]], np.uint16), f, bit_depth=8)
        assert f.read_bytes() == b"P5\n1 1\n255\n\xff"

    def test_unwritable_path(self, tmp_path):
        with pytest.raises(OSError):
            save_pgm(np.zeros((2, 2), np.uint16), tmp_path / "missing" / "a.pgm")

    @settings(max_examples=50, deadline=None)
    @given(img=gray_images)
    def test_roundtrip_16bit(self, tmp_path_factory, img):
        f = tmp_path_factory.mktemp("pgm") / "r.pgm"
        save_pgm(img, f)
        np.testing.assert_array_equal(load_pgm(f), img)


class TestDemosaic:
    def test_uniform(self):
        raw = BayerRaw(np.full((4, 6), 1234, np.uint16))
        out = demosaic_to_gray(raw)
        assert out.shape == (2, 3)
        assert np.all(out == 1234)

    def test_quad_mean(self):
        raw = BayerRaw(np.array([[100, 200], [300, 400]], np.uint16), "BGGR")
        assert demosaic_to_gray(raw)[0, 0] == 250

    def test_odd_dimensions_rejected(self):
        with pytest.raises(ValueError):
            BayerRaw(np.zeros((3, 4), np.uint16))

    def test_bad_pattern_rejected(self):
        with pytest.raises(ValueError):
            BayerRaw(np.zeros((2, 2), np.uint16), "RGBG")

    @pytest.mark.parametrize("seed", range(5))
    def test_random_against_loop_oracle(self, seed):
        rng = np.random.default_rng(seed)
        mosaic = rng.integers(0, 65536, size=(4, 4)).astype(np.uint16)
        expected = np.zeros((2, 2), np.int64)
        for i in range(2):
            for j in range(2):
                q = [int(mosaic[2 * i + a, 2 * j + b]) for a in (0, 1) for b in (0, 1)]
                # round half up of the quad mean
                expected[i, j] = int(np.floor(sum(q) / 4 + 0.5))
        np.testing.assert_array_equal(demosaic_to_gray(BayerRaw(mosaic)), expected)


class TestBrightness:
    def test_identity(self):
        img = np.arange(12, dtype=np.uint16).reshape(3, 4) * 5000
        np.testing.assert_array_equal(scale_brightness(img, 1.0), img)

    def test_double_and_clamp(self):
        out = scale_brightness(np.array([[30000, 40000]], np.uint16), 2.0)
        np.testing.assert_array_equal(out, [[60000, 65535]])

    def test_dim(self):
        assert scale_brightness(np.array([[65535]], np.uint16), 2.0 ** -6)[0, 0] == 1024

    @pytest.mark.parametrize("b", [0.0, -1.0])
    def test_nonpositive_rejected(self, b):
        with pytest.raises(ValueError):
            scale_brightness(np.ones((2, 2), np.uint16), b)

    @given(p=st.integers(0, 65535), b1=st.floats(0.01, 100), b2=st.floats(0.01, 100))
    def test_monotone_in_b(self, p, b1, b2):
        lo, hi = sorted((b1, b2))
        img = np.array([[p]], np.uint16)
        assert scale_brightness(img, lo)[0, 0] <= scale_brightness(img, hi)[0, 0]

    @given(e1=st.integers(-3, 3), e2=st.integers(-3, 3), data=st.data())
    def test_composition_powers_of_two(self, e1, e2, data):
        b1, b2 = 2.0 ** e1, 2.0 ** e2
        # integer-exact and clamp-free: multiples of 8 below the joint limit
        limit = int(65536 / max(1.0, b1, b1 * b2)) // 8
        p = data.draw(st.integers(0, max(0, limit - 1))) * 8
        img = np.array([[p]], np.uint16)
        np.testing.assert_array_equal(scale_brightness(scale_brightness(img, b1), b2),
                                      scale_brightness(img, b1 * b2))


def _dataset(n, size=4):
    images = np.arange(n * size * size, dtype=np.uint16).reshape(n, size, size)
    return LabeledDataset(images, np.arange(n) % 3)


class TestSplit:
    def test_sizes_100(self):
        tr, va, te = split_dataset(_dataset(100), SplitSpec(seed=7))
        assert (len(tr), len(va), len(te)) == (70, 15, 15)

    def test_sizes_6550(self):
        tr, va, te = split_indices(6550, SplitSpec(seed=1))
        assert (len(tr), len(va), len(te)) == (4586, 982, 982)

    def test_deterministic(self):
        a = split_indices(50, SplitSpec(seed=3))
        b = split_indices(50, SplitSpec(seed=3))
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)

    def test_seed_changes_partition(self):
        a = split_indices(50, SplitSpec(seed=3))[0]
        b = split_indices(50, SplitSpec(seed=4))[0]
        assert not np.array_equal(a, b)

    @given(n=st.integers(7, 300), seed=st.integers(0, 2**63))
    def test_partition(self, n, seed):
        parts = split_indices(n, SplitSpec(seed=seed))
        merged = np.concatenate(parts)
        assert sorted(merged.tolist()) == list(range(n))

    def test_empty_split_rejected(self):
        with pytest.raises(DatasetError):
            split_indices(5, SplitSpec(seed=0))

    @pytest.mark.parametrize("fr", [(70, 20, 15), (100, 0, 0), (80, 25, -5)])
    def test_bad_fractions(self, fr):
        with pytest.raises(ValueError):
            SplitSpec(*fr)

    def test_manifest_roundtrip(self, tmp_path):
        f = tmp_path / "m.json"
        write_manifest(f, {"train": ["a.pgm"], "val": ["b.pgm"], "test": ["c.pgm"]}, seed=9)
        m = read_manifest(f)
        assert m == {"seed": 9, "train": ["a.pgm"], "val": ["b.pgm"], "test": ["c.pgm"]}
        assert json.loads(f.read_text())["seed"] == 9


class TestPascalLoader:
    def _make(self, root, counts=(2, 3, 1), shape=(8, 6)):
        for name, n in zip(("bicycle", "car", "person"), counts):
            (root / name).mkdir(parents=True)
            for i in range(n):
                save_pgm(np.full(shape, 1000 * (i + 1), np.uint16), root / name / f"{i}.pgm")

    def test_counts_and_labels(self, tmp_path):
        self._make(tmp_path)
        ds = load_pascal_raw(tmp_path, size=4)
        assert len(ds) == 6
        assert ds.images.shape == (6, 4, 4)
        np.testing.assert_array_equal(np.bincount(ds.labels), [2, 3, 1])

    def test_empty_class(self, tmp_path):
        self._make(tmp_path, counts=(2, 0, 1))
        with pytest.raises(DatasetError, match="empty"):
            load_pascal_raw(tmp_path)

    def test_missing_class(self, tmp_path):
        (tmp_path / "bicycle").mkdir()
        with pytest.raises(DatasetError, match="missing"):
            load_pascal_raw(tmp_path)

    def test_non_pgm(self, tmp_path):
        self._make(tmp_path)
        (tmp_path / "car" / "notes.txt").write_text("x")
        with pytest.raises(DatasetError, match="non-PGM"):
            load_pascal_raw(tmp_path)


class TestResize:
    def test_checkerboard_center(self):
        img = np.array([[0, 65535], [65535, 0]], np.uint16)
        # bilinear sample at the centre averages all four pixels: 32767.5
        assert resize_bilinear(img, 1)[0, 0] == 32768

    def test_identity_size(self):
        img = np.arange(20, dtype=np.uint16).reshape(4, 5)
        np.testing.assert_array_equal(resize_bilinear(img, (4, 5)), img)

    def test_constant_preserved(self):
        out = resize_bilinear(np.full((7, 9), 4242, np.uint16), 5)
        assert np.all(out == 4242)
