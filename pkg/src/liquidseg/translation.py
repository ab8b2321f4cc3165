"""Contrastive unpaired translation (colored liquid -> transparent liquid).

Generator, patch discriminator and projection heads follow the CUT recipe at a
reduced width.  Training alternates a discriminator step with a joint
generator/head step on the adversarial loss plus two PatchNCE terms: one
between each source image and its translation, one identity term between a
target image and its own translation.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import checkpoint
from .imaging import DatasetManifest, ImagingError, Record, as_image, save_image

log = logging.getLogger(__name__)

PROB_EPS = 1e-7
CHECKPOINT_KIND = "translation_model"


@dataclass
class TranslationConfig:
    lambda_x: float = 1.0
    lambda_y: float = 1.0
    tau: float = 0.07
    num_patches: int = 64
    lr_g: float = 2e-4
    lr_d: float = 2e-4
    lr_h: float = 2e-4
    betas: tuple[float, float] = (0.5, 0.999)
    batch_size: int = 4
    epochs: int = 30
    seed: int = 0
    # "log" is the adversarial objective as written; "lsgan" is the
    # least-squares variant used by the reference CUT code.
    gan_mode: str = "log"
    # Network size. Full-scale CUT is ngf=ndf=64, n_res=9.
    ngf: int = 16
    ndf: int = 16
    n_res: int = 4
    stem_kernel: int = 7
    head_dim: int = 64
    nce_layers: tuple[int, ...] = (0, 1, 2)

    def __post_init__(self):
        self.betas = tuple(self.betas)
        self.nce_layers = tuple(self.nce_layers)
        if self.lambda_x < 0 or self.lambda_y < 0:
            raise ValueError("lambda_x and lambda_y must be non-negative")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.num_patches < 2:
            raise ValueError("num_patches must be >= 2")
        if self.gan_mode not in ("log", "lsgan"):
            raise ValueError(f"unknown gan_mode {self.gan_mode!r}")


# --------------------------------------------------------------------------
# Networks


def _conv_block(cin, cout, k, stride=1, reflect=False):
    pad = k // 2
    layers = []
    if reflect and pad:
        layers.append(nn.ReflectionPad2d(pad))
        pad = 0
    layers += [nn.Conv2d(cin, cout, k, stride, pad), nn.InstanceNorm2d(cout), nn.ReLU(True)]
    return nn.Sequential(*layers)


class ResBlock(nn.Module):
    def __init__(self, ch):
        super().__init__()
        self.body = nn.Sequential(
            nn.ReflectionPad2d(1), nn.Conv2d(ch, ch, 3), nn.InstanceNorm2d(ch), nn.ReLU(True),
            nn.ReflectionPad2d(1), nn.Conv2d(ch, ch, 3), nn.InstanceNorm2d(ch),
        )

    def forward(self, x):
        return x + self.body(x)


class Generator(nn.Module):
    """Encoder (stem + 2 downsamplings + residual blocks) and decoder."""

    def __init__(self, ngf=16, n_res=4, stem_kernel=7):
        super().__init__()
        self.encoder = nn.ModuleList(
            [
                _conv_block(3, ngf, stem_kernel, reflect=True),
                _conv_block(ngf, 2 * ngf, 3, stride=2),
                _conv_block(2 * ngf, 4 * ngf, 3, stride=2),
                *[ResBlock(4 * ngf) for _ in range(n_res)],
            ]
        )
        up = []
        for cin, cout in ((4 * ngf, 2 * ngf), (2 * ngf, ngf)):
            up += [
                nn.Upsample(scale_factor=2, mode="bilinear", align_corners=False),
                nn.Conv2d(cin, cout, 3, padding=1),
                nn.InstanceNorm2d(cout),
                nn.ReLU(True),
            ]
        pad = stem_kernel // 2
        up += [nn.ReflectionPad2d(pad), nn.Conv2d(ngf, 3, stem_kernel), nn.Sigmoid()]
        self.decoder = nn.Sequential(*up)
        self.layer_channels = [ngf, 2 * ngf, 4 * ngf] + [4 * ngf] * n_res

    def encode(self, x, layers: Optional[Sequence[int]] = None):
        """Run the encoder; with ``layers`` also return those intermediate maps."""
        feats = []
        for i, block in enumerate(self.encoder):
            x = block(x)
            if layers is not None and i in layers:
                feats.append(x)
        return x, feats

    def forward(self, x):
        h, w = x.shape[-2:]
        if h % 4 or w % 4:
            raise ImagingError(f"generator input sides must be divisible by 4, got {h}x{w}")
        return self.decoder(self.encode(x)[0])


class Discriminator(nn.Module):
    """PatchGAN: three stride-2 blocks then a 1-channel logit map."""

    def __init__(self, ndf=16):
        super().__init__()
        chans = [3, ndf, 2 * ndf, 4 * ndf]
        layers = []
        for i in range(3):
            layers.append(nn.Conv2d(chans[i], chans[i + 1], 4, 2, 1))
            if i > 0:
                layers.append(nn.InstanceNorm2d(chans[i + 1]))
            layers.append(nn.LeakyReLU(0.2, True))
        layers.append(nn.Conv2d(chans[-1], 1, 3, 1, 1))
        self.net = nn.Sequential(*layers)

    def forward(self, x):
        return self.net(x)


class ProjectionHeads(nn.Module):
    def __init__(self, in_channels: Sequence[int], dim=64):
        super().__init__()
        self.mlps = nn.ModuleList(
            nn.Sequential(nn.Linear(c, dim), nn.ReLU(), nn.Linear(dim, dim)) for c in in_channels
        )

    def forward(self, i: int, x):
        return F.normalize(self.mlps[i](x), dim=-1, eps=1e-12)


@dataclass
class TranslationModel:
    generator: Generator
    discriminator: Discriminator
    heads: ProjectionHeads
    config: TranslationConfig

    @classmethod
    def build(cls, config: TranslationConfig, dtype=torch.float32) -> "TranslationModel":
        torch.manual_seed(config.seed)
        g = Generator(config.ngf, config.n_res, config.stem_kernel)
        d = Discriminator(config.ndf)
        h = ProjectionHeads([g.layer_channels[i] for i in config.nce_layers], config.head_dim)
        return cls(g.to(dtype), d.to(dtype), h.to(dtype), config)

    def parameter_counts(self) -> dict:
        count = lambda m: sum(p.numel() for p in m.parameters())
        return {"generator": count(self.generator), "discriminator": count(self.discriminator), "heads": count(self.heads)}

    def save(self, path, echo: Optional[dict] = None) -> None:
        arrays = {}
        for prefix, module in (("G", self.generator), ("D", self.discriminator), ("H", self.heads)):
            for name, t in module.state_dict().items():
                arrays[f"{prefix}.{name}"] = t.detach().cpu().numpy()
        checkpoint.save(path, CHECKPOINT_KIND, asdict(self.config), arrays, echo)

    @classmethod
    def load(cls, path) -> "TranslationModel":
        config, arrays = checkpoint.load(path, CHECKPOINT_KIND)
        model = cls.build(TranslationConfig(**config))
        for prefix, module in (("G", model.generator), ("D", model.discriminator), ("H", model.heads)):
            state = {k[2:]: torch.from_numpy(v) for k, v in arrays.items() if k.startswith(prefix + ".")}
            module.load_state_dict(state)
        return model


# --------------------------------------------------------------------------
# Losses


def _check_finite(*tensors):
    for t in tensors:
        if not torch.isfinite(t).all():
            raise ValueError("non-finite logits")


def gan_loss(d_real_logits, d_fake_logits, mode: str = "log"):
    """Return ``(loss_D, loss_G)`` for the adversarial game.

    In ``log`` mode ``-loss_D`` is the objective ``E[log D(y)] + E[log(1 - D(G(x)))]``
    and ``loss_G`` is the non-saturating ``-E[log D(G(x))]``.
    """
    _check_finite(d_real_logits, d_fake_logits)
    if mode == "lsgan":
        loss_d = 0.5 * ((d_real_logits - 1) ** 2).mean() + 0.5 * (d_fake_logits**2).mean()
        loss_g = ((d_fake_logits - 1) ** 2).mean()
        return loss_d, loss_g
    p_real = torch.sigmoid(d_real_logits).clamp(PROB_EPS, 1 - PROB_EPS)
    p_fake = torch.sigmoid(d_fake_logits).clamp(PROB_EPS, 1 - PROB_EPS)
    loss_d = -(torch.log(p_real).mean() + torch.log(1 - p_fake).mean())
    loss_g = -torch.log(p_fake).mean()
    return loss_d, loss_g


def patchnce_loss(query, key, tau: float = 0.07):
    """PatchNCE with internal negatives.

    ``query`` and ``key`` are ``(N, D)`` or ``(B, N, D)`` embeddings (or lists of
    them, one per encoder layer).  Row ``i`` of ``key`` is the positive for row
    ``i`` of ``query``; the other rows of the same image are negatives.  The
    per-layer losses, each averaged over queries, are summed.
    """
    if isinstance(query, (list, tuple)):
        if len(query) != len(key):
            raise ValueError("query and key layer counts differ")
        return sum(patchnce_loss(q, k, tau) for q, k in zip(query, key))
    if query.shape != key.shape:
        raise ValueError(f"query {tuple(query.shape)} and key {tuple(key.shape)} shapes differ")
    if query.dim() == 2:
        query, key = query[None], key[None]
    n = query.shape[1]
    if n < 2:
        raise ValueError("PatchNCE needs at least 2 patches")
    q = F.normalize(query, dim=-1)
    k = F.normalize(key, dim=-1)
    logits = torch.bmm(q, k.transpose(1, 2)) / tau  # (B, N, N)
    target = torch.arange(n).expand(query.shape[0], n)
    return F.cross_entropy(logits.reshape(-1, n), target.reshape(-1))


def cut_total_loss(gan_term, nce_x, nce_y, config: TranslationConfig):
    return gan_term + config.lambda_x * nce_x + config.lambda_y * nce_y


def sample_locations(feats, num_patches: int, generator: torch.Generator) -> list:
    """Uniform flat indices per layer, without replacement where the grid allows."""
    out = []
    for f in feats:
        hw = f.shape[-2] * f.shape[-1]
        out.append(torch.randperm(hw, generator=generator)[: min(num_patches, hw)])
    return out


def sample_patch_features(G: Generator, H: ProjectionHeads, img, locations, layers: Sequence[int]):
    """Unit-norm head embeddings of ``img``'s encoder features at ``locations``.

    ``img`` is a ``(B, 3, H, W)`` tensor; ``locations[j]`` indexes the flattened
    grid of encoder layer ``layers[j]``.  Returns one ``(B, N_j, dim)`` tensor per layer.
    """
    _, feats = G.encode(img, layers)
    return embed_features(H, feats, locations)


def embed_features(H: ProjectionHeads, feats, locations):
    out = []
    for j, (f, loc) in enumerate(zip(feats, locations)):
        b, c, h, w = f.shape
        loc = torch.as_tensor(loc, dtype=torch.long)
        if loc.numel() and (loc.min() < 0 or loc.max() >= h * w):
            raise IndexError(f"patch location outside the {h}x{w} grid of layer {j}")
        flat = f.flatten(2).transpose(1, 2)  # (B, HW, C)
        out.append(H(j, flat[:, loc]))
    return out


# --------------------------------------------------------------------------
# Inference and training


def to_tensor(images, dtype=torch.float32):
    arr = np.stack([np.asarray(im, dtype=np.float64) for im in images])
    return torch.from_numpy(arr).permute(0, 3, 1, 2).to(dtype).contiguous()


def to_images(t) -> list[np.ndarray]:
    return list(t.detach().permute(0, 2, 3, 1).to(torch.float64).numpy())


def generate(G: Generator, x) -> np.ndarray:
    x = as_image(x)
    G.eval()
    with torch.no_grad():
        y = G(to_tensor([x], next(G.parameters()).dtype))
    return np.clip(to_images(y)[0], 0.0, 1.0)


def load_images(manifest: DatasetManifest) -> list[np.ndarray]:
    return [manifest.image(r) for r in manifest]


def _nce(model: TranslationModel, src, out, gen: torch.Generator):
    cfg = model.config
    _, feat_k = model.generator.encode(src, cfg.nce_layers)
    _, feat_q = model.generator.encode(out, cfg.nce_layers)
    locs = sample_locations(feat_k, cfg.num_patches, gen)
    keys = [k.detach() for k in embed_features(model.heads, feat_k, locs)]
    queries = embed_features(model.heads, feat_q, locs)
    return patchnce_loss(queries, keys, cfg.tau)


@dataclass
class TrainLog:
    records: list = field(default_factory=list)

    def append(self, **rec):
        self.records.append(rec)

    def write(self, path) -> None:
        with open(path, "w") as f:
            for rec in self.records:
                f.write(json.dumps(rec, sort_keys=True) + "\n")


def train_translation(
    colored: DatasetManifest,
    transparent: DatasetManifest,
    config: TranslationConfig,
    *,
    on_epoch=None,
) -> tuple[TranslationModel, TrainLog]:
    if len(colored) == 0 or len(transparent) == 0:
        raise ValueError("translation training needs non-empty colored and transparent datasets")
    xs = to_tensor(load_images(colored))
    ys = to_tensor(load_images(transparent))
    return train_translation_arrays(xs, ys, config, on_epoch=on_epoch)


def train_translation_arrays(xs, ys, config: TranslationConfig, *, on_epoch=None):
    model = TranslationModel.build(config)
    G, D, H = model.generator, model.discriminator, model.heads
    opt_d = torch.optim.Adam(D.parameters(), lr=config.lr_d, betas=config.betas)
    opt_g = torch.optim.Adam(
        [{"params": G.parameters(), "lr": config.lr_g}, {"params": H.parameters(), "lr": config.lr_h}],
        betas=config.betas,
    )
    rng = np.random.default_rng(config.seed)
    patch_gen = torch.Generator().manual_seed(config.seed)
    train_log = TrainLog()
    nx, ny, bs = len(xs), len(ys), config.batch_size
    step = 0
    G.train(), D.train(), H.train()
    for epoch in range(config.epochs):
        order_x = rng.permutation(nx)
        order_y = np.resize(rng.permutation(ny), nx)
        for start in range(0, nx, bs):
            x = xs[order_x[start : start + bs]]
            y = ys[order_y[start : start + bs]]

            fake = G(x)
            d_real = D(y)
            loss_d, _ = gan_loss(d_real, D(fake.detach()), config.gan_mode)
            opt_d.zero_grad(set_to_none=True)
            loss_d.backward()
            opt_d.step()

            _, loss_g = gan_loss(d_real.detach(), D(fake), config.gan_mode)
            nce_x = _nce(model, x, fake, patch_gen)
            nce_y = _nce(model, y, G(y), patch_gen) if config.lambda_y > 0 else torch.zeros(())
            total = cut_total_loss(loss_g, nce_x, nce_y, config)
            opt_g.zero_grad(set_to_none=True)
            total.backward()
            opt_g.step()

            train_log.append(
                step=step,
                epoch=epoch,
                loss_D=loss_d.item(),
                loss_G=loss_g.item(),
                nce_x=nce_x.item(),
                nce_y=nce_y.item(),
                total=total.item(),
            )
            step += 1
        if on_epoch is not None:
            on_epoch(epoch, model)
        log.info("translate epoch %d/%d loss_D=%.4f loss_G=%.4f nce_x=%.4f", epoch + 1, config.epochs,
                 train_log.records[-1]["loss_D"], train_log.records[-1]["loss_G"], train_log.records[-1]["nce_x"])
    G.eval(), D.eval(), H.eval()
    return model, train_log


def translate_dataset(colored_with_masks: DatasetManifest, model: TranslationModel, out_dir) -> DatasetManifest:
    """Translate every colored image and pair it with the colored image's mask."""
    out_dir = Path(out_dir)
    missing = [r.image_id for r in colored_with_masks if r.mask_path is None]
    if missing:
        raise ImagingError(f"records without masks cannot be translated: {missing[:5]}")
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    records = []
    for rec in colored_with_masks:
        y_hat = generate(model.generator, colored_with_masks.image(rec))
        image_path = f"images/{rec.image_id}.png"
        save_image(out_dir / image_path, y_hat)
        mask_path = os.path.relpath(colored_with_masks.root / rec.mask_path, out_dir)
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
    manifest = DatasetManifest(domain_tag="synthetic_transparent", records=records, meta=dict(colored_with_masks.meta))
    manifest.save(out_dir)
    return manifest
