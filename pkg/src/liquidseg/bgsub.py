"""Per-pixel Gaussian-mixture background model for pseudo-labelling colored liquid.

The model is fit in batch on frames of the empty cup: every pixel gets an
independent diagonal-covariance mixture of 1..K components, fit by EM, with
K picked by BIC.  Subtraction flags a pixel as foreground when it is far (in
Mahalanobis distance) from every component that carries real weight.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence, Union

import numpy as np
from scipy.special import logsumexp

from . import checkpoint
from .imaging import DatasetManifest, ImagingError, Record, as_image, save_mask

VAR_FLOOR = 1e-4
MIN_WEIGHT = 0.05
EM_ITERS = 60
CHECKPOINT_KIND = "background_model"


@dataclass(frozen=True)
class BackgroundModel:
    means: np.ndarray  # (H, W, K, 3)
    variances: np.ndarray  # (H, W, K, 3)
    weights: np.ndarray  # (H, W, K); unused components carry weight 0
    n_components: np.ndarray  # (H, W) chosen component count
    max_components: int
    frame_count: int
    seed: int

    @property
    def shape(self) -> tuple[int, int]:
        return self.weights.shape[:2]

    def save(self, path) -> None:
        checkpoint.save(
            path,
            CHECKPOINT_KIND,
            {"max_components": self.max_components, "frame_count": self.frame_count, "seed": self.seed},
            {
                "means": self.means,
                "variances": self.variances,
                "weights": self.weights,
                "n_components": self.n_components.astype(np.int64),
            },
        )

    @classmethod
    def load(cls, path) -> "BackgroundModel":
        config, arrays = checkpoint.load(path, CHECKPOINT_KIND)
        return cls(
            means=arrays["means"],
            variances=arrays["variances"],
            weights=arrays["weights"],
            n_components=arrays["n_components"],
            **config,
        )


def _log_gauss(x, means, variances):
    # x: (N, P, 3); means/variances: (P, K, 3) -> (N, P, K)
    diff = x[:, :, None, :] - means[None]
    return -0.5 * np.sum(np.log(2 * np.pi * variances)[None] + diff**2 / variances[None], axis=-1)


def _em(x, k, order):
    n, p, _ = x.shape
    picks = order[((np.arange(k) + 0.5) / k * n).astype(int)]  # (k, P) frame indices
    means = np.transpose(x[picks, np.arange(p)], (1, 0, 2)).copy()
    variances = np.broadcast_to(x.var(axis=0)[:, None, :] + VAR_FLOOR, (p, k, 3)).copy()
    weights = np.full((p, k), 1.0 / k)
    for _ in range(EM_ITERS):
        logp = np.log(weights)[None] + _log_gauss(x, means, variances)
        resp = np.exp(logp - logsumexp(logp, axis=2, keepdims=True))
        nk = resp.sum(axis=0)  # (P, K)
        live = nk > 1e-8
        safe = np.where(live, nk, 1.0)[..., None]
        new_means = np.einsum("npk,npc->pkc", resp, x) / safe
        means = np.where(live[..., None], new_means, means)
        diff2 = (x[:, :, None, :] - means[None]) ** 2
        new_var = np.einsum("npk,npkc->pkc", resp, diff2) / safe
        variances = np.maximum(np.where(live[..., None], new_var, VAR_FLOOR), VAR_FLOOR)
        weights = np.maximum(nk / n, 1e-300)
    logp = np.log(weights)[None] + _log_gauss(x, means, variances)
    loglik = logsumexp(logp, axis=2).sum(axis=0)
    weights = np.where(nk > 1e-8, nk / n, 0.0)
    weights /= weights.sum(axis=1, keepdims=True)
    return means, variances, weights, loglik


def fit_background_model(frames: Sequence, max_components: int = 3, seed: int = 0) -> BackgroundModel:
    if len(frames) < 2:
        raise ImagingError("background fitting needs at least 2 frames")
    if max_components < 1:
        raise ValueError("max_components must be >= 1")
    frames = [as_image(f) for f in frames]
    h, w = frames[0].shape[:2]
    if any(f.shape != frames[0].shape for f in frames):
        raise ImagingError("all background frames must share dimensions")
    x = np.stack(frames).reshape(len(frames), h * w, 3)
    n, p, _ = x.shape

    # Seeded permutation before a stable sort only decides ties between
    # equal-luminance frames; the quantile initialisation is otherwise fixed.
    perm = np.random.default_rng(seed).permutation(n)
    luminance = x[perm].mean(axis=2)
    order = perm[np.argsort(luminance, axis=0, kind="stable")]  # (N, P)

    kmax = max_components
    means = np.zeros((p, kmax, 3))
    variances = np.full((p, kmax, 3), VAR_FLOOR)
    weights = np.zeros((p, kmax))
    best_bic = np.full(p, np.inf)
    chosen = np.zeros(p, dtype=np.int64)
    for k in range(1, kmax + 1):
        m, v, wt, ll = _em(x, k, order)
        bic = -2.0 * ll + (7 * k - 1) * np.log(n)
        better = bic < best_bic - 1e-9
        best_bic = np.where(better, bic, best_bic)
        chosen = np.where(better, k, chosen)
        means[better] = 0.0
        variances[better] = VAR_FLOOR
        weights[better] = 0.0
        means[better, :k] = m[better]
        variances[better, :k] = v[better]
        weights[better, :k] = wt[better]

    return BackgroundModel(
        means=means.reshape(h, w, kmax, 3),
        variances=variances.reshape(h, w, kmax, 3),
        weights=weights.reshape(h, w, kmax),
        n_components=chosen.reshape(h, w),
        max_components=kmax,
        frame_count=n,
        seed=seed,
    )


def mahalanobis(model: BackgroundModel, img) -> np.ndarray:
    """Distance of each pixel to each component, shape (H, W, K)."""
    img = as_image(img)
    if img.shape[:2] != model.shape:
        raise ImagingError(f"image {img.shape[:2]} does not match background model {model.shape}")
    diff = img[:, :, None, :] - model.means
    return np.sqrt(np.sum(diff**2 / model.variances, axis=-1))


def subtract(model: BackgroundModel, img, threshold_sigma: float = 4.0) -> np.ndarray:
    dist = mahalanobis(model, img)
    significant = model.weights >= MIN_WEIGHT
    return np.all((dist > threshold_sigma) | ~significant, axis=-1)


def pseudo_label_dataset(
    colored: DatasetManifest,
    empty_frames: Union[Sequence, Mapping[str, Sequence]],
    out_dir,
    threshold_sigma: float = 4.0,
    max_components: int = 3,
    seed: int = 0,
) -> DatasetManifest:
    """Label every colored image by background subtraction and write the masks.

    ``empty_frames`` is either one list of frames shared by every record or a
    mapping from ``scene_id`` to that scene's frames, one model per scene.
    The returned manifest points at the original images and the new masks.
    """
    if colored.domain_tag != "colored":
        raise ImagingError(f"pseudo-labelling expects a colored dataset, got {colored.domain_tag!r}")
    out_dir = Path(out_dir)
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)

    if isinstance(empty_frames, Mapping):
        models = {sid: fit_background_model(fr, max_components, seed) for sid, fr in sorted(empty_frames.items())}
    else:
        shared = fit_background_model(empty_frames, max_components, seed)
        models = None

    records = []
    for rec in colored:
        model = shared if models is None else models.get(rec.scene_id)
        if model is None:
            raise ImagingError(f"no empty-cup frames for scene {rec.scene_id!r}")
        mask = subtract(model, colored.image(rec), threshold_sigma)
        mask_path = f"masks/{rec.image_id}.png"
        save_mask(out_dir / mask_path, mask)
        image_path = os.path.relpath(colored.root / rec.image_path, out_dir)
        records.append(
            Record(
                image_id=rec.image_id,
                image_path=image_path,
                mask_path=mask_path,
                fill_fraction=rec.fill_fraction,
                cup_bbox=rec.cup_bbox,
                scene_id=rec.scene_id,
                split_tag=rec.split_tag,
            )
        )
    manifest = DatasetManifest(
        domain_tag="colored",
        records=records,
        meta={**colored.meta, "pseudo_label": {"threshold_sigma": threshold_sigma, "max_components": max_components, "seed": seed}},
    )
    manifest.save(out_dir)
    return manifest
