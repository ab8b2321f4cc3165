"""Image, mask and bounding-box primitives plus the on-disk dataset manifest.

Images are ``float64`` arrays of shape ``(H, W, 3)`` with values in ``[0, 1]``;
masks are ``bool`` arrays of shape ``(H, W)``.  Both are plain numpy arrays,
validated at module boundaries by :func:`as_image` and :func:`as_mask`.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
from matplotlib.colors import hsv_to_rgb, rgb_to_hsv
from PIL import Image as PILImage

MIN_SIDE = 8
DOMAIN_TAGS = ("colored", "transparent", "synthetic_transparent")
SPLIT_TAGS = ("train", "test")


class ImagingError(ValueError):
    pass


def as_image(data, *, min_side: int = MIN_SIDE) -> np.ndarray:
    img = np.asarray(data, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ImagingError(f"expected an (H, W, 3) image, got shape {img.shape}")
    if img.shape[0] < min_side or img.shape[1] < min_side:
        raise ImagingError(f"image sides must be >= {min_side}, got {img.shape[:2]}")
    if not np.all(np.isfinite(img)) or img.min() < 0.0 or img.max() > 1.0:
        raise ImagingError("image values must lie in [0, 1]")
    return img


def as_mask(data, shape: Optional[tuple[int, int]] = None) -> np.ndarray:
    mask = np.asarray(data)
    if mask.ndim != 2:
        raise ImagingError(f"expected an (H, W) mask, got shape {mask.shape}")
    mask = mask.astype(bool, copy=False)
    if shape is not None and mask.shape != tuple(shape):
        raise ImagingError(f"mask shape {mask.shape} does not match {tuple(shape)}")
    return mask


@dataclass(frozen=True)
class BoundingBox:
    """Inclusive pixel box; ``y`` grows downward so ``y_min`` is the top edge."""

    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self):
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ImagingError(f"inverted bounding box {self}")

    @property
    def width(self) -> int:
        return self.x_max - self.x_min + 1

    @property
    def height(self) -> int:
        return self.y_max - self.y_min + 1

    def fits(self, height: int, width: int) -> bool:
        return self.x_min >= 0 and self.y_min >= 0 and self.x_max < width and self.y_max < height

    def region(self) -> tuple[slice, slice]:
        return slice(self.y_min, self.y_max + 1), slice(self.x_min, self.x_max + 1)

    def to_list(self) -> list[int]:
        return [self.x_min, self.y_min, self.x_max, self.y_max]

    @classmethod
    def from_list(cls, values: Iterable[int]) -> "BoundingBox":
        x0, y0, x1, y1 = (int(v) for v in values)
        return cls(x0, y0, x1, y1)


def iou(a, b) -> float:
    a = as_mask(a)
    b = as_mask(b, a.shape)
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


def crop(img, bbox: BoundingBox, padding: int = 10) -> np.ndarray:
    """Sub-image covering ``bbox`` grown by ``padding`` pixels, clamped to the image."""
    img = np.asarray(img)
    h, w = img.shape[:2]
    if not bbox.fits(h, w):
        raise ImagingError(f"{bbox} lies outside a {h}x{w} image")
    y0 = max(bbox.y_min - padding, 0)
    x0 = max(bbox.x_min - padding, 0)
    y1 = min(bbox.y_max + padding, h - 1)
    x1 = min(bbox.x_max + padding, w - 1)
    return img[y0 : y1 + 1, x0 : x1 + 1].copy()


def bounding_box_of(mask) -> Optional[BoundingBox]:
    mask = as_mask(mask)
    rows = np.flatnonzero(mask.any(axis=1))
    if rows.size == 0:
        return None
    cols = np.flatnonzero(mask.any(axis=0))
    return BoundingBox(int(cols[0]), int(rows[0]), int(cols[-1]), int(rows[-1]))


def _factor_range(value, name: str) -> tuple[float, float]:
    # A scalar v means factors in [1 - v, 1 + v]; a pair is taken literally.
    if np.isscalar(value):
        v = float(value)
        if v < 0:
            raise ImagingError(f"{name} jitter must be non-negative, got {v}")
        lo, hi = max(1.0 - v, 0.0), 1.0 + v
    else:
        lo, hi = (float(x) for x in value)
    if lo > hi or lo < 0 or (lo == 0 and hi == 0):
        raise ImagingError(f"invalid {name} range ({lo}, {hi})")
    if lo <= 0:
        lo = np.nextafter(0.0, 1.0)
    return lo, hi


def _hue_range(value) -> tuple[float, float]:
    if np.isscalar(value):
        v = float(value)
        lo, hi = -v, v
    else:
        lo, hi = (float(x) for x in value)
    if lo > hi or lo < -0.5 or hi > 0.5:
        raise ImagingError(f"hue shift range ({lo}, {hi}) must lie within [-0.5, 0.5]")
    return lo, hi


def color_jitter(img, brightness=0.0, contrast=0.0, hue=0.0, seed: int = 0) -> np.ndarray:
    """Random brightness, contrast and hue perturbation, deterministic in ``seed``.

    Each argument is either a scalar spread ``v`` (factor drawn from
    ``[1 - v, 1 + v]``, hue shift from ``[-v, v]``) or an explicit ``(lo, hi)``
    range.  Transforms are applied in the order brightness, contrast, hue and
    the result is clipped to ``[0, 1]``.
    """
    img = as_image(img)
    b_lo, b_hi = _factor_range(brightness, "brightness")
    c_lo, c_hi = _factor_range(contrast, "contrast")
    h_lo, h_hi = _hue_range(hue)
    rng = np.random.default_rng(seed)
    b = rng.uniform(b_lo, b_hi)
    c = rng.uniform(c_lo, c_hi)
    dh = rng.uniform(h_lo, h_hi)

    out = img * b
    if c != 1.0:
        gray = out @ np.array([0.299, 0.587, 0.114])
        out = (out - gray.mean()) * c + gray.mean()
    out = np.clip(out, 0.0, 1.0)
    if dh != 0.0:
        hsv = rgb_to_hsv(out)
        hsv[..., 0] = np.mod(hsv[..., 0] + dh, 1.0)
        out = np.clip(hsv_to_rgb(hsv), 0.0, 1.0)
    return out


# --------------------------------------------------------------------------
# File I/O


def load_image(path) -> np.ndarray:
    with PILImage.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def save_image(path, img) -> None:
    img = np.asarray(img, dtype=np.float64)
    data = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    PILImage.fromarray(data, mode="RGB").save(path, format="PNG")


def load_mask(path) -> np.ndarray:
    with PILImage.open(path) as im:
        arr = np.asarray(im.convert("L"))
    return arr >= 128


def save_mask(path, mask) -> None:
    data = as_mask(mask).astype(np.uint8) * 255
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    PILImage.fromarray(data, mode="L").save(path, format="PNG")


@dataclass
class Record:
    image_id: str
    image_path: str
    cup_bbox: BoundingBox
    scene_id: str
    split_tag: str = "train"
    mask_path: Optional[str] = None
    fill_fraction: Optional[float] = None

    def __post_init__(self):
        if self.split_tag not in SPLIT_TAGS:
            raise ImagingError(f"split_tag must be one of {SPLIT_TAGS}, got {self.split_tag!r}")
        if self.fill_fraction is not None and not 0.0 <= self.fill_fraction <= 1.0:
            raise ImagingError(f"fill_fraction {self.fill_fraction} outside [0, 1]")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["cup_bbox"] = self.cup_bbox.to_list()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Record":
        return cls(
            image_id=str(d["image_id"]),
            image_path=str(d["image_path"]),
            cup_bbox=BoundingBox.from_list(d["cup_bbox"]),
            scene_id=str(d["scene_id"]),
            split_tag=d.get("split_tag", "train"),
            mask_path=d.get("mask_path"),
            fill_fraction=d.get("fill_fraction"),
        )


@dataclass
class DatasetManifest:
    """Index of a dataset directory; paths in records are relative to ``root``."""

    domain_tag: str
    records: list[Record] = field(default_factory=list)
    root: Optional[Path] = None
    # Free-form provenance (config echo, seeds); round-tripped but not interpreted.
    meta: dict = field(default_factory=dict)

    FILENAME = "manifest.json"

    def __post_init__(self):
        if self.domain_tag not in DOMAIN_TAGS:
            raise ImagingError(f"domain_tag must be one of {DOMAIN_TAGS}, got {self.domain_tag!r}")
        ids = [r.image_id for r in self.records]
        if len(set(ids)) != len(ids):
            raise ImagingError("image_ids in a manifest must be unique")

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def _resolve(self, rel: str) -> Path:
        return (self.root or Path(".")) / rel

    def image(self, record: Record) -> np.ndarray:
        return load_image(self._resolve(record.image_path))

    def mask(self, record: Record) -> np.ndarray:
        if record.mask_path is None:
            raise ImagingError(f"record {record.image_id} has no mask")
        mask = load_mask(self._resolve(record.mask_path))
        img_shape = self.image(record).shape[:2]
        return as_mask(mask, img_shape)

    def has_masks(self) -> bool:
        return all(r.mask_path is not None for r in self.records)

    def to_dict(self) -> dict:
        return {
            "domain_tag": self.domain_tag,
            "meta": self.meta,
            "records": [r.to_dict() for r in self.records],
        }

    def save(self, directory=None) -> Path:
        directory = Path(directory) if directory is not None else self.root
        if directory is None:
            raise ImagingError("no directory given for manifest")
        directory.mkdir(parents=True, exist_ok=True)
        self.root = directory
        path = directory / self.FILENAME
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        if path.is_dir():
            path = path / cls.FILENAME
        data = json.loads(path.read_text())
        return cls(
            domain_tag=data["domain_tag"],
            records=[Record.from_dict(r) for r in data["records"]],
            root=path.parent,
            meta=data.get("meta", {}),
        )
