import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import ndimage

from liquidseg.imaging import BoundingBox, ImagingError
from liquidseg.postprocess import estimate_fill, largest_component, morphological_open

random_masks = arrays(bool, st.tuples(st.integers(8, 24), st.integers(8, 24)))


def test_open_kernel_one_is_identity():
    m = np.random.default_rng(0).uniform(size=(12, 12)) > 0.5
    assert np.array_equal(morphological_open(m, 1), m)


def test_open_removes_speck_keeps_block():
    m = np.zeros((40, 40), bool)
    m[5, 30] = True
    m[10:30, 5:25] = True
    out = morphological_open(m, 5)
    assert not out[5, 30]
    assert np.array_equal(out[10:30, 5:25], np.ones((20, 20), bool))
    assert out.sum() == 400


def test_open_rejects_even_kernel():
    with pytest.raises(ValueError):
        morphological_open(np.zeros((8, 8), bool), 4)


@settings(max_examples=1000, deadline=None)
@given(random_masks)
def test_open_anti_extensive_and_idempotent(m):
    once = morphological_open(m, 5)
    assert not (once & ~m).any()
    assert np.array_equal(morphological_open(once, 5), once)


def test_largest_component_cases():
    m = np.zeros((10, 10), bool)
    assert not largest_component(m).any()
    m[0, 0:3] = True  # 3 pixels
    m[4:6, 4:9] = True  # 10 pixels
    out = largest_component(m)
    assert out.sum() == 10 and out[4:6, 4:9].all()
    single = np.zeros((10, 10), bool)
    single[2:5, 2:5] = True
    assert np.array_equal(largest_component(single), single)


def test_largest_component_tie_prefers_first_in_raster_order():
    m = np.zeros((10, 10), bool)
    m[6, 0:4] = True
    m[1, 5:9] = True
    out = largest_component(m)
    assert out[1, 5:9].all() and not out[6].any()


def test_largest_component_is_four_connected():
    m = np.zeros((5, 5), bool)
    m[0, 0] = m[1, 1] = True  # diagonal neighbours are separate
    assert largest_component(m).sum() == 1


@settings(max_examples=1000, deadline=None)
@given(random_masks)
def test_largest_component_connected_subset(m):
    out = largest_component(m)
    assert not (out & ~m).any()
    if m.any():
        _, n = ndimage.label(out, structure=ndimage.generate_binary_structure(2, 1))
        assert n == 1


CUP = BoundingBox(10, 10, 29, 49)  # 40 rows tall


def fill_mask(level_rows, shape=(64, 64), box=CUP):
    m = np.zeros(shape, bool)
    if level_rows:
        m[box.y_max - level_rows + 1 : box.y_max + 1, box.x_min : box.x_max + 1] = True
    return m


def test_estimate_fill_half_and_empty():
    est = estimate_fill(fill_mask(20), CUP)
    assert est.level == 0.5 and est.liquid_height == 20 and est.cup_height == 40
    assert estimate_fill(np.zeros((64, 64), bool), CUP).level == 0.0


def test_estimate_fill_degenerate_cup():
    with pytest.raises(ImagingError):
        estimate_fill(np.zeros((64, 64), bool), BoundingBox(3, 5, 10, 5))


def isolated_speckles(body, rng, count=30):
    """Pixels outside ``body`` with no horizontal or vertical neighbour set."""
    m = body.copy()
    added = 0
    h, w = m.shape
    while added < count:
        y, x = rng.integers(0, h), rng.integers(0, w)
        nb = m[max(y - 1, 0) : y + 2, max(x - 1, 0) : x + 2]
        if nb.any():
            continue
        m[y, x] = True
        added += 1
    return m


@settings(max_examples=1000, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_speckles_do_not_change_estimate(seed):
    rng = np.random.default_rng(seed)
    clean = fill_mask(20)
    noisy = isolated_speckles(clean, rng)
    assert estimate_fill(noisy, CUP).level == estimate_fill(clean, CUP).level


@settings(max_examples=1000, deadline=None)
@given(st.integers(0, 40), st.integers(0, 40), st.integers(0, 2**32 - 1))
def test_estimate_fill_monotone_under_nesting(a, b, seed):
    lo, hi = sorted((a, b))
    rng = np.random.default_rng(seed)
    inner = fill_mask(lo)
    outer = fill_mask(hi)
    # random extra pixels inside the outer body keep the nesting intact
    extra = (rng.uniform(size=outer.shape) < 0.3) & outer
    inner = inner | (extra & fill_mask(lo))
    assert not (inner & ~outer).any()
    assert estimate_fill(inner, CUP).level <= estimate_fill(outer, CUP).level
    est = estimate_fill(outer, CUP)
    assert 0.0 <= est.level <= 1.0 and est.liquid_height <= est.cup_height
