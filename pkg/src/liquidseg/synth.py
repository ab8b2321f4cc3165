"""Procedural cup-of-liquid scenes with exact ground-truth masks.

A scene is a textured background, a trapezoidal glass cup and a liquid body
filling the bottom ``fill_fraction`` of the cup.  The same :class:`SceneSpec`
renders in two modes: ``colored`` (liquid alpha-blended toward a tint) and
``transparent`` (background refracted through the liquid, slightly brightened,
with a dark meniscus line at the surface).  Both modes share geometry, noise
and everything outside the liquid, so the colored mask is an exact label for
the transparent rendering.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .imaging import BoundingBox, DatasetManifest, ImagingError, Record, save_image, save_mask

MODES = ("colored", "transparent")
TINT_ALPHA = 0.75
TRANSPARENT_LIFT = 0.05
MENISCUS_GAIN = 0.55
WALL_ALPHA = 0.45
WALL_COLOR = 0.85
N_BACKGROUND_KINDS = 4  # gradient, stripes, noise, checker


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    height: int = 64
    width: int = 64
    base_width: float = 22.0
    top_width: float = 30.0
    cup_height: int = 40
    center_x: float = 32.0
    center_y: float = 34.0
    fill_fraction: float = 0.5
    background_id: int = 0
    liquid_tint: tuple[float, float, float] = (0.1, 0.75, 0.25)
    refraction_strength: float = 2.0
    noise_std: float = 0.01

    def __post_init__(self):
        if not 0.0 <= self.fill_fraction <= 1.0:
            raise ImagingError(f"fill_fraction {self.fill_fraction} outside [0, 1]")
        if self.cup_height < 2 or min(self.base_width, self.top_width) < 2:
            raise ImagingError("cup is too small")


def _cup_columns(spec: SceneSpec) -> tuple[int, np.ndarray, np.ndarray]:
    """Top row plus per-row inclusive [left, right] columns of the cup interior."""
    top = int(round(spec.center_y - spec.cup_height / 2))
    t = np.linspace(0.0, 1.0, spec.cup_height)
    widths = np.round(spec.top_width + (spec.base_width - spec.top_width) * t).astype(int)
    left = np.floor(spec.center_x - widths / 2 + 0.5).astype(int)
    right = left + widths - 1
    return top, left, right


def cup_interior(spec: SceneSpec) -> tuple[np.ndarray, BoundingBox]:
    top, left, right = _cup_columns(spec)
    bottom = top + spec.cup_height - 1
    # one-pixel wall on the sides and bottom must also fit
    if top < 0 or bottom + 1 >= spec.height or left.min() - 1 < 0 or right.max() + 1 >= spec.width:
        raise ImagingError("cup does not fit strictly inside the image")
    cols = np.arange(spec.width)
    inside = np.zeros((spec.height, spec.width), dtype=bool)
    inside[top : bottom + 1] = (cols >= left[:, None]) & (cols <= right[:, None])
    return inside, BoundingBox(int(left.min()), top, int(right.max()), bottom)


def liquid_rows(spec: SceneSpec) -> int:
    return int(round(spec.fill_fraction * spec.cup_height))


def liquid_mask(spec: SceneSpec) -> np.ndarray:
    inside, box = cup_interior(spec)
    surface = box.y_max - liquid_rows(spec) + 1
    rows = np.arange(spec.height)[:, None]
    return inside & (rows >= surface)


def background(background_id: int, height: int, width: int) -> np.ndarray:
    rng = np.random.default_rng([background_id, 7919])
    kind = background_id % N_BACKGROUND_KINDS
    c0, c1 = rng.uniform(0.15, 0.85, size=(2, 3))
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    if kind == 0:
        angle = rng.uniform(0, np.pi)
        s = xx * np.cos(angle) + yy * np.sin(angle)
        w = (s - s.min()) / max(np.ptp(s), 1e-9)
    elif kind == 1:
        period = rng.integers(4, 9)
        w = ((xx + rng.integers(0, period)) // (period / 2)) % 2
    elif kind == 2:
        coarse = rng.uniform(0, 1, size=(9, 9))
        gy = np.linspace(0, 8, height)
        gx = np.linspace(0, 8, width)
        w = np.array([np.interp(gx, np.arange(9), row) for row in coarse])
        w = np.array([np.interp(gy, np.arange(9), col) for col in w.T]).T
    else:
        cell = rng.integers(4, 9)
        w = ((xx // cell) + (yy // cell)) % 2
    return c0 * (1 - w[..., None]) + c1 * w[..., None]


def _refract(bg: np.ndarray, mask: np.ndarray, strength: float, seed_phase: float) -> np.ndarray:
    h, w = mask.shape
    ys, xs = np.nonzero(mask)
    shift = strength * np.sin(2 * np.pi * ys / 9.0 + seed_phase)
    src = np.clip(xs + shift, 0, w - 1)
    x0 = np.floor(src).astype(int)
    x1 = np.minimum(x0 + 1, w - 1)
    frac = (src - x0)[:, None]
    out = bg.copy()
    out[ys, xs] = bg[ys, x0] * (1 - frac) + bg[ys, x1] * frac
    return out


def render_scene(spec: SceneSpec, mode: str = "colored") -> tuple[np.ndarray, np.ndarray, BoundingBox]:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    inside, box = cup_interior(spec)
    mask = liquid_mask(spec)
    img = background(spec.background_id, spec.height, spec.width)

    wall = np.zeros_like(inside)
    wall[:, 1:] |= inside[:, :-1]
    wall[:, :-1] |= inside[:, 1:]
    wall[1:, :] |= inside[:-1, :]
    wall &= ~inside
    wall[: box.y_min] = False
    img[wall] = (1 - WALL_ALPHA) * img[wall] + WALL_ALPHA * WALL_COLOR

    if mask.any():
        if mode == "colored":
            tint = np.asarray(spec.liquid_tint, dtype=np.float64)
            img[mask] = (1 - TINT_ALPHA) * img[mask] + TINT_ALPHA * tint
        else:
            img = _refract(img, mask, spec.refraction_strength, spec.background_id * 0.7)
            img[mask] += TRANSPARENT_LIFT
            surface = np.flatnonzero(mask.any(axis=1))[0]
            img[surface][mask[surface]] *= MENISCUS_GAIN

    noise = np.random.default_rng(spec.seed).normal(0.0, spec.noise_std, size=img.shape)
    img = np.clip(img + noise, 0.0, 1.0)
    return img, mask, box


# --------------------------------------------------------------------------
# Datasets


def scene_layout(scene_seed: int, index: int, size: int = 64) -> SceneSpec:
    """Camera/cup/background arrangement shared by every frame of one scene."""
    rng = np.random.default_rng([scene_seed, index, 104729])
    s = size / 64.0
    return SceneSpec(
        height=size,
        width=size,
        cup_height=int(round(rng.uniform(34, 42) * s)),
        top_width=float(round(rng.uniform(28, 34) * s)),
        base_width=float(round(rng.uniform(20, 26) * s)),
        center_x=float(round(size / 2 + rng.uniform(-3, 3) * s)),
        center_y=float(round(size / 2 + rng.uniform(0, 4) * s)),
        background_id=int(rng.integers(0, 10_000)),
    )


def _derived_seeds(seed: int, n: int) -> list[int]:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


def dataset_specs(
    n: int,
    seed: int,
    *,
    num_scenes: int = 1,
    scene_seed: int = 0,
    size: int = 64,
    fill_range: tuple[float, float] = (0.0, 1.0),
) -> list[tuple[str, SceneSpec]]:
    """The ``(scene_id, spec)`` pairs that :func:`make_dataset` renders."""
    if n < 1:
        raise ValueError("n must be >= 1")
    lo, hi = fill_range
    rng = np.random.default_rng(seed)
    u = rng.uniform(0.0, 1.0, size=n)
    fills = lo + (hi - lo) * (np.arange(n) + u) / n
    fills = fills[rng.permutation(n)]
    layouts = [scene_layout(scene_seed, k, size) for k in range(num_scenes)]
    out = []
    for i, s in enumerate(_derived_seeds(seed, n)):
        k = i % num_scenes
        out.append((f"scene{k:02d}", replace(layouts[k], seed=s, fill_fraction=float(fills[i]))))
    return out


def empty_frames(n: int, seed: int, *, scene_index: int = 0, scene_seed: int = 0, size: int = 64) -> list[np.ndarray]:
    """Frames of the empty cup for one scene, differing only in sensor noise."""
    layout = scene_layout(scene_seed, scene_index, size)
    return [render_scene(replace(layout, seed=s, fill_fraction=0.0), "colored")[0] for s in _derived_seeds(seed, n)]


def make_dataset(
    n: int,
    seed: int,
    mode: str,
    out_dir,
    *,
    with_masks: Optional[bool] = None,
    split: str = "train",
    num_scenes: int = 1,
    scene_seed: int = 0,
    size: int = 64,
    fill_range: tuple[float, float] = (0.0, 1.0),
) -> DatasetManifest:
    """Render ``n`` scenes into ``out_dir`` (images/, masks/, manifest.json).

    Transparent datasets carry no masks unless ``with_masks`` is set, as real
    transparent footage is unlabeled.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if with_masks is None:
        with_masks = mode == "colored"
    out_dir = Path(out_dir)
    try:
        (out_dir / "images").mkdir(parents=True, exist_ok=True)
        if with_masks:
            (out_dir / "masks").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot write dataset to {out_dir}: {exc}") from exc

    records = []
    for i, (scene_id, spec) in enumerate(
        dataset_specs(n, seed, num_scenes=num_scenes, scene_seed=scene_seed, size=size, fill_range=fill_range)
    ):
        img, mask, box = render_scene(spec, mode)
        image_id = f"{mode}_{i:05d}"
        image_path = f"images/{image_id}.png"
        save_image(out_dir / image_path, img)
        mask_path = None
        if with_masks:
            mask_path = f"masks/{image_id}.png"
            save_mask(out_dir / mask_path, mask)
        records.append(
            Record(
                image_id=image_id,
                image_path=image_path,
                mask_path=mask_path,
                fill_fraction=liquid_rows(spec) / spec.cup_height,
                cup_bbox=box,
                scene_id=scene_id,
                split_tag=split,
            )
        )
    manifest = DatasetManifest(
        domain_tag=mode,
        records=records,
        meta={"generator": {"n": n, "seed": seed, "mode": mode, "num_scenes": num_scenes, "scene_seed": scene_seed, "size": size}},
    )
    manifest.save(out_dir)
    return manifest
