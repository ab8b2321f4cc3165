"""IoU-by-fill-level and pouring-error reports, plus the two ablations."""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .imaging import DatasetManifest, ImagingError, color_jitter, iou
from .segmentation import SegTrainConfig, load_pairs, predict_masks, train_segmentation_arrays

CATEGORIES = ("Low", "Medium", "High")


def fill_category(fill_fraction: float) -> str:
    if not 0.0 <= fill_fraction <= 1.0:
        raise ValueError(f"fill fraction {fill_fraction} outside [0, 1]")
    if fill_fraction < 1 / 3:
        return "Low"
    if fill_fraction < 2 / 3:
        return "Medium"
    return "High"


@dataclass
class SegEvalReport:
    per_record: list  # (image_id, fill_fraction, category, iou)
    label: str = ""

    def _ious(self, category: Optional[str] = None) -> list:
        return [r[3] for r in self.per_record if category is None or r[2] == category]

    def mean(self, category: Optional[str] = None) -> float:
        vals = self._ious(category)
        return float(np.mean(vals)) if vals else float("nan")

    @property
    def all_mean(self) -> float:
        return self.mean()

    def counts(self) -> dict:
        return {c: len(self._ious(c)) for c in CATEGORIES} | {"All": len(self.per_record)}

    def means(self) -> dict:
        return {c: self.mean(c) for c in CATEGORIES} | {"All": self.all_mean}

    def table(self) -> str:
        counts, means = self.counts(), self.means()
        cols = list(CATEGORIES) + ["All"]
        lines = [
            f"{'IoU' + (' (' + self.label + ')' if self.label else ''):<28}" + "".join(f"{c:>10}" for c in cols),
            f"{'mean':<28}" + "".join(f"{means[c]:>10.3f}" if counts[c] else f"{'-':>10}" for c in cols),
            f"{'n':<28}" + "".join(f"{counts[c]:>10d}" for c in cols),
        ]
        return "\n".join(lines)

    def to_records(self) -> list[dict]:
        rows = [
            {"kind": "record", "image_id": i, "fill_fraction": f, "category": c, "iou": v}
            for i, f, c, v in self.per_record
        ]
        summary = {"kind": "summary", "label": self.label, "means": self.means(), "counts": self.counts()}
        return rows + [summary]

    def write(self, directory, stem: str = "seg_eval") -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / f"{stem}.txt").write_text(self.table() + "\n")
        with open(directory / f"{stem}.jsonl", "w") as f:
            for rec in self.to_records():
                f.write(json.dumps(rec, sort_keys=True) + "\n")


def evaluate_masks(predictions: Sequence, truths: Sequence, fills: Sequence[float], ids: Sequence[str], label: str = "") -> SegEvalReport:
    rows = []
    for pred, truth, fill, image_id in zip(predictions, truths, fills, ids, strict=True):
        if fill is None:
            raise ImagingError(f"record {image_id} has no fill fraction")
        rows.append((image_id, float(fill), fill_category(fill), iou(pred, truth)))
    return SegEvalReport(rows, label)


def eval_segmentation(model, test: DatasetManifest, label: str = "") -> SegEvalReport:
    images, truths = load_pairs(test)
    preds = predict_masks(model, images)
    return evaluate_masks(preds, truths, [r.fill_fraction for r in test], [r.image_id for r in test], label)


@dataclass
class PourEvalReport:
    # (l_initial, l_target) -> percent errors
    scenarios: dict = field(default_factory=dict)

    @staticmethod
    def rmse(errors) -> float:
        return math.sqrt(sum(e * e for e in errors) / len(errors))

    @staticmethod
    def std(errors) -> float:
        return float(np.std(errors))

    def rows(self) -> list[dict]:
        out = []
        for (l0, lt), errs in sorted(self.scenarios.items()):
            out.append({"scenario": f"{l0:.0%} -> {lt:.0%}", "l_initial": l0, "l_target": lt, "n": len(errs),
                        "rmse_pct": self.rmse(errs), "mean_abs_pct": float(np.mean(errs)), "std_pct": self.std(errs)})
        every = [e for errs in self.scenarios.values() for e in errs]
        out.append({"scenario": "all", "l_initial": None, "l_target": None, "n": len(every),
                    "rmse_pct": self.rmse(every), "mean_abs_pct": float(np.mean(every)), "std_pct": self.std(every)})
        return out

    def table(self) -> str:
        lines = [f"{'scenario':<16}{'n':>5}{'RMSE %':>10}{'mean |e| %':>12}{'std %':>9}"]
        for r in self.rows():
            lines.append(f"{r['scenario']:<16}{r['n']:>5d}{r['rmse_pct']:>10.3f}{r['mean_abs_pct']:>12.3f}{r['std_pct']:>9.3f}")
        return "\n".join(lines)

    def write(self, directory, stem: str = "pour_eval") -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / f"{stem}.txt").write_text(self.table() + "\n")
        with open(directory / f"{stem}.jsonl", "w") as f:
            for r in self.rows():
                f.write(json.dumps(r, sort_keys=True) + "\n")


def eval_pouring(traces) -> PourEvalReport:
    traces = list(traces)
    if not traces:
        raise ValueError("no pour traces to evaluate")
    incomplete = [i for i, t in enumerate(traces) if not t.complete]
    if incomplete:
        raise ValueError(f"incomplete pour traces at positions {incomplete}")
    groups = defaultdict(list)
    for t in traces:
        groups[(t.l_initial, t.l_target)].append(100.0 * abs(t.final_level - t.l_target))
    return PourEvalReport(dict(groups))


@dataclass(frozen=True)
class JitterConfig:
    brightness: float = 0.4
    contrast: float = 0.4
    hue: float = 0.5
    seed: int = 0


def run_ablation_color_jitter(colored_with_masks: DatasetManifest, test: DatasetManifest, jitter: JitterConfig, seg_config: SegTrainConfig) -> SegEvalReport:
    """Train directly on jittered colored images and evaluate on transparent ones."""
    images, masks = load_pairs(colored_with_masks)
    seeds = np.random.SeedSequence(jitter.seed).spawn(len(images))
    jittered = [
        color_jitter(img, jitter.brightness, jitter.contrast, jitter.hue, seed=int(s.generate_state(1)[0]))
        for img, s in zip(images, seeds)
    ]
    model, _ = train_segmentation_arrays(jittered, masks, seg_config)
    return eval_segmentation(model, test, label="color jitter")


def subsample(manifest: DatasetManifest, fraction: float, seed: int) -> DatasetManifest:
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    n = int(round(fraction * len(manifest)))
    if n < 1:
        raise ValueError(f"fraction {fraction} of {len(manifest)} records leaves nothing to train on")
    if n == len(manifest):
        return manifest
    keep = np.sort(np.random.default_rng(seed).choice(len(manifest), size=n, replace=False))
    return replace(manifest, records=[manifest.records[i] for i in keep])


def run_ablation_fraction(synthetic_labeled: DatasetManifest, fraction: float, test: DatasetManifest, seg_config: SegTrainConfig, seed: int = 0):
    """Train on a seeded subset of the synthetic labeled set; returns ``(report, n_train)``."""
    subset = subsample(synthetic_labeled, fraction, seed)
    images, masks = load_pairs(subset)
    model, _ = train_segmentation_arrays(images, masks, seg_config)
    return eval_segmentation(model, test, label=f"{fraction:.0%} of synthetic"), len(subset)
