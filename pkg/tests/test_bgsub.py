import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from liquidseg import bgsub, synth
from liquidseg.bgsub import VAR_FLOOR, fit_background_model, subtract
from liquidseg.imaging import DatasetManifest, ImagingError, iou


def scalar_em(xs, means, iters=200, floor=VAR_FLOOR):
    """Plain-python 1-D EM used as an independent oracle."""
    k = len(means)
    weights = [1.0 / k] * k
    var = [max(sum((x - sum(xs) / len(xs)) ** 2 for x in xs) / len(xs), floor)] * k
    means = list(means)
    for _ in range(iters):
        resp = []
        for x in xs:
            p = [w * math.exp(-0.5 * (x - m) ** 2 / v) / math.sqrt(2 * math.pi * v) for w, m, v in zip(weights, means, var)]
            s = sum(p)
            resp.append([q / s for q in p])
        for j in range(k):
            nj = sum(r[j] for r in resp)
            means[j] = sum(r[j] * x for r, x in zip(resp, xs)) / nj
            var[j] = max(sum(r[j] * (x - means[j]) ** 2 for r, x in zip(resp, xs)) / nj, floor)
            weights[j] = nj / len(xs)
    return means, var, weights


def frames_from_values(values, h=8, w=8):
    return [np.full((h, w, 3), v) for v in values]


def test_identical_frames_give_single_floor_component():
    frame = np.random.default_rng(0).uniform(size=(8, 8, 3))
    model = fit_background_model([frame] * 10, 3, seed=0)
    assert (model.n_components == 1).all()
    np.testing.assert_allclose(model.means[..., 0, :], frame, atol=1e-12)
    np.testing.assert_allclose(model.variances[..., 0, :], VAR_FLOOR)
    np.testing.assert_allclose(model.weights.sum(-1), 1.0, atol=1e-12)


def test_two_point_pixel_matches_scalar_em():
    values = [0.2, 0.8] * 5
    model = fit_background_model(frames_from_values(values), 3, seed=0)
    means, _, weights = scalar_em(values, [0.2, 0.8])
    assert (model.n_components == 2).all()
    got_means = model.means[0, 0, :2, 0]
    got_w = model.weights[0, 0, :2]
    order = np.argsort(got_means)
    np.testing.assert_allclose(got_means[order], sorted(means), atol=1e-6)
    np.testing.assert_allclose(got_w[order], [weights[0], weights[1]], atol=1e-6)
    np.testing.assert_allclose(got_w, 0.5, atol=1e-6)


def test_fit_is_deterministic():
    frames = synth.empty_frames(6, 1)
    a = fit_background_model(frames, 3, seed=4)
    b = fit_background_model(frames, 3, seed=4)
    for name in ("means", "variances", "weights", "n_components"):
        assert np.array_equal(getattr(a, name), getattr(b, name))


def test_fit_errors():
    with pytest.raises(ImagingError):
        fit_background_model([np.zeros((8, 8, 3))])
    with pytest.raises(ImagingError):
        fit_background_model([np.zeros((8, 8, 3)), np.zeros((8, 9, 3))])


def test_subtract_zero_and_far():
    values = np.linspace(0.4, 0.6, 10)
    model = fit_background_model(frames_from_values(values), 1)
    mean = model.means[0, 0, 0]
    sigma = np.sqrt(model.variances[0, 0, 0])
    assert not subtract(model, np.broadcast_to(mean, (8, 8, 3))).any()
    far = np.clip(mean + 10 * sigma, 0, 1)
    assert subtract(model, np.broadcast_to(far, (8, 8, 3))).all()
    with pytest.raises(ImagingError):
        subtract(model, np.zeros((9, 8, 3)))


@pytest.fixture(scope="module")
def scene_model():
    frames = synth.empty_frames(20, 11)
    return frames, fit_background_model(frames, 3, seed=0)


def test_weights_sum_to_one(scene_model):
    _, model = scene_model
    np.testing.assert_allclose(model.weights.sum(-1), 1.0, atol=1e-6)
    assert (model.variances >= VAR_FLOOR).all()
    assert ((model.n_components >= 1) & (model.n_components <= 3)).all()


def test_fitting_frames_are_mostly_background(scene_model):
    frames, model = scene_model
    for frame in frames:
        assert subtract(model, frame, 4.0).mean() <= 0.01


@settings(max_examples=20, deadline=None)
@given(st.floats(0.5, 8.0), st.floats(0.0, 4.0), st.integers(0, 5))
def test_threshold_monotone(scene_model, t, dt, seed):
    _, model = scene_model
    spec = replace(synth.scene_layout(0, 0), fill_fraction=0.5, seed=seed)
    img = synth.render_scene(spec, "colored")[0]
    low = subtract(model, img, t)
    high = subtract(model, img, t + dt)
    assert not (high & ~low).any()


def test_colored_scene_against_ground_truth(scene_model):
    _, model = scene_model
    spec = replace(synth.scene_layout(0, 0), fill_fraction=0.55, seed=123)
    img, truth, _ = synth.render_scene(spec, "colored")
    assert iou(subtract(model, img), truth) >= 0.95


def test_pseudo_label_dataset(tmp_path):
    colored = synth.make_dataset(6, 2, "colored", tmp_path / "colored")
    frames = synth.empty_frames(15, 3)
    out = bgsub.pseudo_label_dataset(colored, frames, tmp_path / "pl")
    assert [r.image_id for r in out] == [r.image_id for r in colored]
    reloaded = DatasetManifest.load(tmp_path / "pl")
    for a, b in zip(reloaded, colored):
        assert np.array_equal(reloaded.image(a), colored.image(b))
        assert iou(reloaded.mask(a), colored.mask(b)) >= 0.9


def test_pseudo_label_empty_cups_give_empty_masks(tmp_path):
    colored = synth.make_dataset(4, 5, "colored", tmp_path / "c", fill_range=(0.0, 0.0))
    frames = synth.empty_frames(15, 6)
    out = bgsub.pseudo_label_dataset(colored, frames, tmp_path / "pl")
    assert all(out.mask(r).sum() <= 0.01 * 64 * 64 for r in out)


def test_pseudo_label_needs_colored_domain(tmp_path):
    tra = synth.make_dataset(2, 5, "transparent", tmp_path / "t")
    with pytest.raises(ImagingError):
        bgsub.pseudo_label_dataset(tra, synth.empty_frames(3, 0), tmp_path / "pl")


def test_model_checkpoint_round_trip(tmp_path, scene_model):
    _, model = scene_model
    model.save(tmp_path / "bg.safetensors")
    back = bgsub.BackgroundModel.load(tmp_path / "bg.safetensors")
    assert np.array_equal(back.means, model.means)
    assert back.max_components == model.max_components and back.seed == model.seed
