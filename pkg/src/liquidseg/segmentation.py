"""UNet liquid segmentation trained with BCE on (synthetic transparent image, mask) pairs."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import checkpoint
from .imaging import DatasetManifest, ImagingError, as_image, as_mask
from .translation import to_tensor

log = logging.getLogger(__name__)

PROB_EPS = 1e-7
CHECKPOINT_KIND = "segmentation_model"


@dataclass
class SegTrainConfig:
    lr: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 4
    epochs: int = 50
    seed: int = 0
    threshold: float = 0.5
    width: int = 8  # 64 reproduces the full-size network
    depth: int = 4

    def __post_init__(self):
        if self.lr <= 0 or self.momentum < 0 or self.weight_decay < 0:
            raise ValueError("learning rate must be positive, momentum and weight decay non-negative")
        if self.batch_size < 1 or self.epochs < 0 or self.width < 1 or self.depth < 1:
            raise ValueError("batch_size, width and depth must be >= 1")


class DoubleConv(nn.Sequential):
    def __init__(self, cin, cout):
        super().__init__(
            nn.Conv2d(cin, cout, 3, padding=1, bias=False), nn.BatchNorm2d(cout), nn.ReLU(inplace=True),
            nn.Conv2d(cout, cout, 3, padding=1, bias=False), nn.BatchNorm2d(cout), nn.ReLU(inplace=True),
        )


class Down(nn.Sequential):
    def __init__(self, cin, cout):
        super().__init__(nn.MaxPool2d(2), DoubleConv(cin, cout))


class Up(nn.Module):
    def __init__(self, cin, cout):
        super().__init__()
        self.conv = DoubleConv(cin, cout)

    def forward(self, x, skip):
        x = F.interpolate(x, size=skip.shape[-2:], mode="bilinear", align_corners=True)
        return self.conv(torch.cat([skip, x], dim=1))


class UNet(nn.Module):
    def __init__(self, width: int = 8, depth: int = 4):
        super().__init__()
        self.depth = depth
        chans = [width * 2**i for i in range(depth)] + [width * 2 ** (depth - 1)]
        self.inc = DoubleConv(3, chans[0])
        self.downs = nn.ModuleList(Down(chans[i], chans[i + 1]) for i in range(depth))
        ups = []
        prev = chans[depth]
        for j in range(1, depth + 1):
            skip = chans[depth - j]
            out = chans[depth - j - 1] if j < depth else width
            ups.append(Up(prev + skip, out))
            prev = out
        self.ups = nn.ModuleList(ups)
        self.head = nn.Conv2d(width, 1, 1)

    def forward(self, x):
        h, w = x.shape[-2:]
        if h % 2**self.depth or w % 2**self.depth:
            raise ImagingError(f"UNet input sides must be divisible by {2 ** self.depth}, got {h}x{w}")
        skips = [self.inc(x)]
        for down in self.downs:
            skips.append(down(skips[-1]))
        x = skips.pop()
        for up in self.ups:
            x = up(x, skips.pop())
        return self.head(x)[:, 0]


@dataclass
class SegmentationModel:
    net: UNet
    config: SegTrainConfig

    @classmethod
    def build(cls, config: SegTrainConfig, dtype=torch.float32) -> "SegmentationModel":
        torch.manual_seed(config.seed)
        net = UNet(config.width, config.depth).to(dtype)
        model = cls(net, config)
        log.debug("UNet width=%d depth=%d: %d parameters", config.width, config.depth, model.parameter_count)
        return model

    @property
    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.net.parameters())

    def save(self, path, echo: Optional[dict] = None) -> None:
        arrays = {k: v.detach().cpu().numpy() for k, v in self.net.state_dict().items()}
        checkpoint.save(path, CHECKPOINT_KIND, asdict(self.config), arrays, echo)

    @classmethod
    def load(cls, path) -> "SegmentationModel":
        config, arrays = checkpoint.load(path, CHECKPOINT_KIND)
        model = cls.build(SegTrainConfig(**config))
        model.net.load_state_dict({k: torch.from_numpy(np.array(v)) for k, v in arrays.items()})
        model.net.eval()
        return model


def bce_loss(logits, target):
    target = torch.as_tensor(target, dtype=logits.dtype)
    if logits.shape != target.shape:
        raise ImagingError(f"logits {tuple(logits.shape)} and target {tuple(target.shape)} differ")
    p = torch.sigmoid(logits).clamp(PROB_EPS, 1 - PROB_EPS)
    return -(target * torch.log(p) + (1 - target) * torch.log(1 - p)).mean()


def forward(model: SegmentationModel, img) -> np.ndarray:
    """Per-pixel liquid probability for one image, clamped to [1e-7, 1 - 1e-7]."""
    return forward_batch(model, [as_image(img)])[0]


def forward_batch(model: SegmentationModel, images, batch_size: int = 32) -> np.ndarray:
    net = model.net
    net.eval()
    dtype = next(net.parameters()).dtype
    out = []
    with torch.no_grad():
        for i in range(0, len(images), batch_size):
            logits = net(to_tensor(images[i : i + batch_size], dtype))
            out.append(torch.sigmoid(logits.to(torch.float64)).clamp(PROB_EPS, 1 - PROB_EPS).numpy())
    return np.concatenate(out)


def predict_mask(model: SegmentationModel, img, threshold: Optional[float] = None) -> np.ndarray:
    t = model.config.threshold if threshold is None else threshold
    return forward(model, img) > t


def predict_masks(model: SegmentationModel, images, threshold: Optional[float] = None) -> np.ndarray:
    t = model.config.threshold if threshold is None else threshold
    return forward_batch(model, images) > t


@dataclass
class SegTrainLog:
    epoch_loss: list = field(default_factory=list)

    def write(self, path) -> None:
        with open(path, "w") as f:
            for epoch, loss in enumerate(self.epoch_loss):
                f.write(json.dumps({"epoch": epoch, "loss": loss}) + "\n")


def load_pairs(dataset: DatasetManifest):
    unmasked = [r.image_id for r in dataset if r.mask_path is None]
    if unmasked:
        raise ImagingError(f"segmentation training needs masks; missing for {unmasked[:5]}")
    images = [dataset.image(r) for r in dataset]
    masks = [dataset.mask(r) for r in dataset]
    return images, masks


def train_segmentation(dataset: DatasetManifest, config: SegTrainConfig, *, on_epoch=None):
    images, masks = load_pairs(dataset)
    return train_segmentation_arrays(images, masks, config, on_epoch=on_epoch)


def train_segmentation_arrays(images, masks, config: SegTrainConfig, *, on_epoch=None):
    if len(images) == 0:
        raise ValueError("no training pairs")
    model = SegmentationModel.build(config)
    net = model.net
    x_all = to_tensor(images)
    y_all = torch.from_numpy(np.stack([as_mask(m, x_all.shape[-2:]) for m in masks]).astype(np.float32))
    opt = torch.optim.SGD(net.parameters(), lr=config.lr, momentum=config.momentum, weight_decay=config.weight_decay)
    rng = np.random.default_rng(config.seed)
    train_log = SegTrainLog()
    n = len(images)
    net.train()
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            loss = bce_loss(net(x_all[idx]), y_all[idx])
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        train_log.epoch_loss.append(total / n)
        if on_epoch is not None:
            on_epoch(epoch, model)
        log.info("segment epoch %d/%d loss=%.4f", epoch + 1, config.epochs, train_log.epoch_loss[-1])
    net.eval()
    return model, train_log
