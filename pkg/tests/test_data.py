import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.ndimage import gaussian_filter
from skimage.measure import find_contours

from cganseg.data import (ManifestError, Raster, RasterError, SplitError, SplitSpec, binarize_mask,
                          load_dataset, preprocess, read_raster, resize_bilinear, split,
                          stratified_folds, synth_generate, synth_records, write_manifest,
                          write_raster)
from cganseg.data.preprocess import gaussian_smooth
from cganseg.data.rasters import decode_pgm, encode_pgm
from cganseg.shapes import ShapeLabel


def raster(values, maxval=255):
    return Raster(np.asarray(values, dtype=np.uint16 if maxval > 255 else np.uint8), maxval)


def isoperimetric_ratio(mask: np.ndarray) -> float:
    """4*pi*A/P^2 of the largest contour of the lightly smoothed mask."""
    padded = np.pad(mask.astype(float), 2)
    contours = find_contours(gaussian_filter(padded, 1.0), 0.5)
    c = max(contours, key=len)
    y, x = c[:, 0], c[:, 1]
    area = 0.5 * abs(np.dot(x, np.roll(y, 1)) - np.dot(y, np.roll(x, 1)))
    perim = np.sum(np.hypot(np.diff(x, append=x[0]), np.diff(y, append=y[0])))
    return 4 * math.pi * area / perim ** 2


class TestRasters:
    @pytest.mark.parametrize("maxval", [255, 1023, 65535])
    def test_pgm_round_trip(self, maxval, rng):
        r = raster(rng.integers(0, maxval + 1, (5, 7)), maxval)
        back = decode_pgm(encode_pgm(r))
        assert back.maxval == maxval and np.array_equal(back.pixels, r.pixels)

    def test_sixteen_bit_is_big_endian(self):
        assert encode_pgm(raster([[258]], 65535)).endswith(b"\x01\x02")

    def test_header_comments(self):
        buf = b"P5\n# made by hand\n2 1\n# depth\n255\n\x00\xff"
        assert decode_pgm(buf).pixels.tolist() == [[0, 255]]

    @pytest.mark.parametrize("buf,match", [
        (b"P2\n1 1\n255\n0", "P5"),
        (b"P5\n2 2\n255\n\x00", "truncated"),
        (b"P5\nx 2\n255\n", "header"),
        (b"P5\n1 1\n9\n\x0a", "exceeds"),
    ])
    def test_malformed(self, buf, match):
        with pytest.raises(RasterError, match=match):
            decode_pgm(buf)

    @pytest.mark.parametrize("suffix,maxval", [(".png", 255), (".png", 65535), (".pgm", 255)])
    def test_file_round_trip(self, suffix, maxval, tmp_path, rng):
        r = raster(rng.integers(0, maxval + 1, (6, 4)), maxval)
        path = tmp_path / f"r{suffix}"
        write_raster(path, r)
        back = read_raster(path)
        assert back.maxval == maxval and np.array_equal(back.pixels, r.pixels)

    def test_missing_file(self, tmp_path):
        with pytest.raises(RasterError, match="cannot read"):
            read_raster(tmp_path / "nope.pgm")


class TestPreprocess:
    @pytest.mark.parametrize("value,res", [(0, 16), (77, 8), (255, 32)])
    def test_constant_image_stays_constant(self, value, res):
        out = preprocess(raster(np.full((13, 21), value)), res).data
        assert out.shape == (1, res, res)
        np.testing.assert_allclose(out, value / 255, rtol=0, atol=1e-15)

    def test_endpoints(self):
        assert preprocess(raster(np.full((4, 4), 255)), 4).data.min() == 1.0
        assert preprocess(raster(np.zeros((4, 4))), 4).data.max() == 0.0
        assert preprocess(raster(np.full((4, 4), 65535), 65535), 4).data.min() == 1.0

    def test_impulse_matches_gaussian(self):
        img = np.zeros((9, 9))
        img[4, 4] = 1.0
        x = np.arange(-2, 3)
        g = np.exp(-x ** 2 / (2 * 0.5 ** 2))
        g /= g.sum()
        expected = np.zeros((9, 9))
        expected[2:7, 2:7] = np.outer(g, g)
        np.testing.assert_allclose(gaussian_smooth(img), expected, rtol=0, atol=1e-10)

    def test_smoothing_mirrors_borders(self):
        img = np.zeros((6, 6))
        img[0, 0] = 1.0
        # reflected copies fold back into the image, so the total mass is kept
        assert gaussian_smooth(img).sum() == pytest.approx(1.0, abs=1e-12)

    @given(st.integers(1, 20), st.integers(1, 20), st.integers(1, 24))
    @settings(max_examples=40, deadline=None)
    def test_output_in_unit_range(self, h, w, res):
        rng = np.random.default_rng(h * 100 + w)
        out = preprocess(raster(rng.integers(0, 256, (h, w))), res).data
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_deterministic(self, rng):
        r = raster(rng.integers(0, 256, (30, 30)))
        assert np.array_equal(preprocess(r, 16).data, preprocess(r, 16).data)


class TestResizeAndBinarize:
    CHECKER = np.array([[1.0, 0.0], [0.0, 1.0]])
    # half-pixel centres: source offsets 0, .25, .75, 1 (clamped) along each axis
    EXPECTED = np.array([
        [1.00, 0.750, 0.250, 0.00],
        [0.75, 0.625, 0.375, 0.25],
        [0.25, 0.375, 0.625, 0.75],
        [0.00, 0.250, 0.750, 1.00],
    ])

    def test_checkerboard_bilinear(self):
        np.testing.assert_allclose(resize_bilinear(self.CHECKER, 4), self.EXPECTED, atol=1e-15)

    def test_checkerboard_mask(self):
        out = binarize_mask(raster(self.CHECKER * 255), 4).data[0]
        assert out.tolist() == [[1, 1, 0, 0], [1, 1, 0, 0], [0, 0, 1, 1], [0, 0, 1, 1]]

    @pytest.mark.parametrize("value,expected", [(255, 1.0), (0, 0.0)])
    def test_uniform_masks(self, value, expected):
        out = binarize_mask(raster(np.full((10, 10), value)), 8).data
        assert np.all(out == expected)

    def test_threshold_inclusive(self):
        assert binarize_mask(raster([[128]], 256 - 1), 1, threshold=128 / 255).data.item() == 1.0

    def test_identity_resize(self, rng):
        img = rng.random((5, 5))
        assert np.array_equal(resize_bilinear(img, 5), img)

    def test_downsample_average(self):
        img = np.arange(16, dtype=float).reshape(4, 4)
        np.testing.assert_allclose(resize_bilinear(img, 2), [[2.5, 4.5], [10.5, 12.5]])


class TestSplit:
    def test_default_ratios(self):
        tr, va, te = split(list(range(100)), SplitSpec())
        assert (len(tr), len(va), len(te)) == (70, 15, 15)

    def test_degenerate(self):
        tr, va, te = split(list(range(9)), SplitSpec(1.0, 0.0, 0.0))
        assert tr == list(range(9)) and va == [] and te == []

    @given(st.integers(0, 60), st.integers(0, 1000))
    @settings(max_examples=60, deadline=None)
    def test_is_partition(self, n, seed):
        items = list(range(n))
        parts = split(items, SplitSpec(seed=seed))
        assert sorted(sum(parts, [])) == items

    def test_stratified_counts(self):
        labels = [i % 4 for i in range(40)]
        parts = split(list(range(40)), SplitSpec(0.5, 0.25, 0.25, seed=3), key=lambda i: labels[i])
        per = [Counter(labels[i] for i in p) for p in parts]
        assert [len(p) for p in parts] == [20, 10, 10]
        for c in range(4):
            assert per[0][c] == 5
            assert per[1][c] in (2, 3) and per[2][c] in (2, 3)
            assert per[1][c] + per[2][c] == 5

    def test_seed_changes_membership(self):
        a = split(list(range(50)), SplitSpec(seed=0))[0]
        b = split(list(range(50)), SplitSpec(seed=1))[0]
        assert a != b and len(a) == len(b)

    @pytest.mark.parametrize("fr", [(0.5, 0.5, 0.5), (1.2, -0.1, -0.1)])
    def test_bad_fractions(self, fr):
        with pytest.raises(SplitError):
            SplitSpec(*fr)


class TestFolds:
    def test_balanced(self):
        labels = [i % 4 for i in range(400)]
        folds = stratified_folds(labels, 10, seed=0)
        assert sorted(np.concatenate(folds).tolist()) == list(range(400))
        for f in folds:
            assert Counter(labels[i] for i in f) == {0: 10, 1: 10, 2: 10, 3: 10}

    def test_uneven_sizes_within_one(self):
        labels = [0] * 13 + [1] * 7
        folds = stratified_folds(labels, 3, seed=1)
        for c, n in ((0, 13), (1, 7)):
            counts = [sum(labels[i] == c for i in f) for f in folds]
            assert max(counts) - min(counts) <= 1 and sum(counts) == n

    def test_class_too_small(self):
        with pytest.raises(SplitError, match="fewer than"):
            stratified_folds([0] * 10 + [1] * 2, 3, seed=0)


class TestManifest:
    def _write_pair(self, root, name, mask_value=255):
        write_raster(root / f"{name}_img.pgm", raster(np.full((8, 8), 100)))
        m = np.zeros((8, 8))
        m[2:6, 2:6] = mask_value
        write_raster(root / f"{name}_mask.pgm", raster(m))

    def test_round_trip(self, tmp_path):
        rows = []
        for i, shape in enumerate(["round", "oval", ""]):
            self._write_pair(tmp_path, f"s{i}")
            rows.append({"id": f"s{i}", "image": f"s{i}_img.pgm", "mask": f"s{i}_mask.pgm",
                         "shape": shape, "subtype": "Her2" if i == 0 else ""})
        write_manifest(tmp_path / "m.csv", rows)
        pairs = load_dataset(tmp_path / "m.csv", resolution=8)
        assert [p.id for p in pairs] == ["s0", "s1", "s2"]
        assert [p.shape_label for p in pairs] == [ShapeLabel.ROUND, ShapeLabel.OVAL, None]
        assert pairs[0].subtype_label.value == "Her2"
        assert pairs[0].mask.data.sum() == 16

    def test_empty_file(self, tmp_path):
        (tmp_path / "m.csv").write_text("")
        assert load_dataset(tmp_path / "m.csv") == []

    def test_header_only(self, tmp_path):
        (tmp_path / "m.csv").write_text("id,image,mask\n")
        assert load_dataset(tmp_path / "m.csv") == []

    def test_missing_mask_names_row(self, tmp_path):
        self._write_pair(tmp_path, "a")
        (tmp_path / "m.csv").write_text("id,image,mask\na,a_img.pgm,a_mask.pgm\nb,a_img.pgm,gone.pgm\n")
        with pytest.raises(ManifestError, match=r"m\.csv:3: row 'b'.*missing mask"):
            load_dataset(tmp_path / "m.csv", resolution=8)

    def test_duplicate_id(self, tmp_path):
        self._write_pair(tmp_path, "a")
        (tmp_path / "m.csv").write_text("id,image,mask\na,a_img.pgm,a_mask.pgm\na,a_img.pgm,a_mask.pgm\n")
        with pytest.raises(ManifestError, match="duplicate"):
            load_dataset(tmp_path / "m.csv", resolution=8)

    def test_bad_header(self, tmp_path):
        (tmp_path / "m.csv").write_text("name,image\n")
        with pytest.raises(ManifestError, match=":1:"):
            load_dataset(tmp_path / "m.csv")

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(ManifestError, match="not found"):
            load_dataset(tmp_path / "nope.csv")


class TestSynth:
    def test_deterministic(self):
        a, b = synth_records(12, seed=5, resolution=32), synth_records(12, seed=5, resolution=32)
        for ra, rb in zip(a, b):
            assert encode_pgm(ra.image) == encode_pgm(rb.image)
            assert encode_pgm(ra.mask) == encode_pgm(rb.mask)

    def test_labels_balanced(self):
        labels = [s.shape_label for s in synth_generate(8, seed=0, resolution=32)]
        assert labels == [ShapeLabel(i % 4) for i in range(8)]

    @pytest.mark.parametrize("res", [16, 64])
    def test_masks_binary_nonempty_inside(self, res):
        for s in synth_generate(40, seed=2, resolution=res):
            m = s.mask.data[0]
            assert set(np.unique(m)) <= {0.0, 1.0}
            assert m.sum() > 0
            assert m[0].sum() == m[-1].sum() == m[:, 0].sum() == m[:, -1].sum() == 0

    def test_round_is_round(self):
        recs = synth_records(200, seed=1, resolution=64)
        ratios = [isoperimetric_ratio(r.mask.pixels > 0) for r in recs
                  if r.shape_label is ShapeLabel.ROUND]
        assert len(ratios) == 50 and min(ratios) >= 0.9

    def test_irregular_is_not(self):
        recs = synth_records(80, seed=1, resolution=64)
        ratios = [isoperimetric_ratio(r.mask.pixels > 0) for r in recs
                  if r.shape_label is ShapeLabel.IRREGULAR]
        assert max(ratios) < 0.9

    @pytest.mark.parametrize("kwargs", [{"count": 0, "seed": 0}, {"count": 2, "seed": 0, "resolution": 4}])
    def test_bad_args(self, kwargs):
        with pytest.raises(ValueError):
            synth_records(**kwargs)
