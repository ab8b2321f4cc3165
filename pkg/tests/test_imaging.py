import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from liquidseg.imaging import (
    BoundingBox,
    DatasetManifest,
    ImagingError,
    Record,
    bounding_box_of,
    color_jitter,
    crop,
    iou,
    load_image,
    load_mask,
    save_image,
    save_mask,
)

masks6 = arrays(bool, (6, 6))


def brute_iou(a, b):
    inter = union = 0
    for i in range(a.shape[0]):
        for j in range(a.shape[1]):
            inter += bool(a[i, j] and b[i, j])
            union += bool(a[i, j] or b[i, j])
    return 1.0 if union == 0 else inter / union


def test_iou_identical_and_disjoint():
    a = np.zeros((8, 8), bool)
    a[2:4, 2:4] = True
    b = np.zeros((8, 8), bool)
    b[5:7, 5:7] = True
    assert iou(a, a) == 1.0
    assert iou(a, b) == 0.0


def test_iou_partial_overlap():
    a = np.zeros((8, 8), bool)
    b = np.zeros((8, 8), bool)
    a[0, 0:4] = True
    b[0, 2:6] = True
    assert iou(a, b) == pytest.approx(2 / 6)


def test_iou_empty_pair_is_one():
    z = np.zeros((8, 8), bool)
    assert iou(z, z) == 1.0


def test_iou_shape_mismatch():
    with pytest.raises(ImagingError):
        iou(np.zeros((8, 8), bool), np.zeros((8, 9), bool))


@given(masks6, masks6)
def test_iou_symmetric_and_brute_force(a, b):
    assert iou(a, b) == iou(b, a)
    assert iou(a, b) == brute_iou(a, b)
    assert iou(a, a) == 1.0


def test_crop_identity_and_padding():
    img = np.random.default_rng(0).uniform(size=(10, 10, 3))
    assert np.array_equal(crop(img, BoundingBox(0, 0, 9, 9), 0), img)
    out = crop(img, BoundingBox(2, 2, 5, 5), 1)
    assert out.shape == (6, 6, 3)
    assert np.array_equal(out, img[1:7, 1:7])


def test_crop_clamps_at_corner():
    img = np.random.default_rng(1).uniform(size=(12, 12, 3))
    out = crop(img, BoundingBox(0, 0, 2, 2), 10)
    assert np.array_equal(out, img)
    out = crop(img, BoundingBox(9, 9, 11, 11), 10)
    assert np.array_equal(out, img)


def test_bounding_box_of_cases():
    m = np.zeros((10, 12), bool)
    assert bounding_box_of(m) is None
    m[7, 3] = True  # row 7, column 3 -> (x=3, y=7)
    assert bounding_box_of(m) == BoundingBox(3, 7, 3, 7)
    m[:] = False
    m[1, 1] = m[9, 5] = True
    assert bounding_box_of(m) == BoundingBox(1, 1, 5, 9)


@given(arrays(bool, (7, 9)))
def test_bounding_box_is_tight(m):
    box = bounding_box_of(m)
    if box is None:
        assert not m.any()
        return
    inner = m[box.region()]
    assert inner.sum() == m.sum()
    assert inner[0].any() and inner[-1].any() and inner[:, 0].any() and inner[:, -1].any()


def test_bounding_box_rejects_inversion():
    with pytest.raises(ImagingError):
        BoundingBox(5, 0, 4, 3)


def test_color_jitter_identity_and_determinism():
    img = np.random.default_rng(2).uniform(size=(8, 8, 3))
    assert np.array_equal(color_jitter(img, 0, 0, 0, seed=3), img)
    a = color_jitter(img, 0.4, 0.4, 0.2, seed=11)
    b = color_jitter(img, 0.4, 0.4, 0.2, seed=11)
    assert np.array_equal(a, b)
    assert a.min() >= 0 and a.max() <= 1


def test_color_jitter_fixed_brightness_scales():
    img = np.full((8, 8, 3), 0.3)
    np.testing.assert_allclose(color_jitter(img, brightness=(2.0, 2.0), seed=0), 0.6, atol=1e-12)


@pytest.mark.parametrize("kwargs", [{"hue": 0.7}, {"brightness": -1.0}, {"contrast": (2.0, 1.0)}])
def test_color_jitter_rejects_bad_ranges(kwargs):
    with pytest.raises(ImagingError):
        color_jitter(np.zeros((8, 8, 3)), **kwargs)


def test_png_round_trip(tmp_path):
    img = np.random.default_rng(3).integers(0, 256, size=(9, 11, 3)) / 255.0
    save_image(tmp_path / "a.png", img)
    assert np.array_equal(load_image(tmp_path / "a.png"), img)
    m = img[..., 0] > 0.5
    save_mask(tmp_path / "m.png", m)
    assert np.array_equal(load_mask(tmp_path / "m.png"), m)


def test_manifest_round_trip_ignores_unknown_fields(tmp_path):
    rec = Record("a", "images/a.png", BoundingBox(1, 2, 3, 4), "s0", mask_path="masks/a.png", fill_fraction=0.25)
    man = DatasetManifest("colored", [rec], meta={"seed": 4})
    path = man.save(tmp_path)
    text = path.read_text().replace('"image_id": "a"', '"image_id": "a", "extra_field": 1')
    path.write_text(text)
    back = DatasetManifest.load(tmp_path)
    assert back.records == [rec]
    assert back.meta == {"seed": 4}
    assert back.root == tmp_path


def test_manifest_rejects_duplicate_ids():
    rec = Record("a", "images/a.png", BoundingBox(0, 0, 1, 1), "s0")
    with pytest.raises(ImagingError):
        DatasetManifest("colored", [rec, rec])
