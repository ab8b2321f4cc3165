"""Pipeline commands over a workspace directory.

Each command reads the outputs of earlier commands, replaces its own output
directory wholesale and never writes anywhere else, so re-running a command
with the same config reproduces the same bytes.

Workspace layout::

    datasets/colored               synth-gen: colored images (+ ground-truth masks)
    datasets/transparent           synth-gen: unlabeled transparent images
    datasets/transparent_test      synth-gen: labeled held-out transparent images
    datasets/empty                 synth-gen: empty-cup frames per scene
    datasets/pseudo_labeled        pseudo-label
    datasets/synthetic_transparent translate
    models/translate, models/seg   train-translate, train-seg
    eval/segment, eval/seg, eval/ablate, eval/pour, eval/report
    traces/                        pour-sim
    logs/<command>.log
"""

from __future__ import annotations

import json
import logging
import shutil
from dataclasses import replace
from pathlib import Path
from typing import Callable

import numpy as np
import yaml

from . import bgsub, evaluation, synth
from .config import ConfigError, PipelineConfig
from .control import ControllerConfig, PourTrace, rendered_perception, simulate_pour
from .imaging import DatasetManifest, Record, iou, save_image, save_mask
from .postprocess import estimate_fill
from .segmentation import SegmentationModel, predict_masks, train_segmentation
from .translation import TranslationModel, train_translation, translate_dataset

log = logging.getLogger(__name__)

CONFIG_ECHO = "config.yaml"


class PrerequisiteError(RuntimeError):
    """An upstream artifact is missing; ``command`` names the stage that makes it."""

    def __init__(self, path: Path, command: str):
        super().__init__(f"missing {path}; run `liquidseg {command}` first")
        self.path = path
        self.command = command


class SeedMismatchError(RuntimeError):
    pass


def stage_seed(seed: int, stream: int) -> int:
    return int(np.random.SeedSequence([seed, stream]).generate_state(1)[0])


# Independent random streams under one pipeline seed.
COLORED, TRANSPARENT, TEST, EMPTY, SUBSAMPLE, POUR = range(1, 7)


class Workspace:
    def __init__(self, root):
        self.root = Path(root)

    def __truediv__(self, rel) -> Path:
        return self.root / rel

    datasets = property(lambda self: self.root / "datasets")
    models = property(lambda self: self.root / "models")
    eval = property(lambda self: self.root / "eval")
    traces = property(lambda self: self.root / "traces")
    logs = property(lambda self: self.root / "logs")


def _fresh(path: Path) -> Path:
    if path.exists():
        shutil.rmtree(path)
    path.mkdir(parents=True)
    return path


def _echo(directory: Path, cfg: PipelineConfig) -> None:
    (directory / CONFIG_ECHO).write_text(cfg.to_yaml())


def _require(path: Path, command: str) -> Path:
    if not path.exists():
        raise PrerequisiteError(path, command)
    return path


def _manifest(path: Path, command: str) -> DatasetManifest:
    return DatasetManifest.load(_require(path / DatasetManifest.FILENAME, command))


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# --------------------------------------------------------------------------
# Commands


def synth_gen(cfg: PipelineConfig, ws: Workspace, **_) -> None:
    s = cfg.synth
    common = dict(num_scenes=s.num_scenes, scene_seed=s.scene_seed, size=s.size, fill_range=s.fill_range)
    meta = {"config": cfg.to_dict()}
    specs = [
        ("colored", s.n_colored, COLORED, "colored", dict(with_masks=True)),
        ("transparent", s.n_transparent, TRANSPARENT, "transparent", dict(with_masks=False)),
        ("transparent_test", s.n_test, TEST, "transparent", dict(with_masks=True, split="test")),
    ]
    for name, n, stream, mode, extra in specs:
        out = _fresh(ws.datasets / name)
        manifest = synth.make_dataset(n, stage_seed(cfg.seed, stream), mode, out, **common, **extra)
        manifest.meta.update(meta)
        manifest.save(out)
        _echo(out, cfg)
        log.info("synth-gen: %d %s images -> %s", n, mode, out)

    out = _fresh(ws.datasets / "empty")
    records = []
    for k in range(s.num_scenes):
        scene_id = f"scene{k:02d}"
        layout = synth.scene_layout(s.scene_seed, k, s.size)
        box = synth.cup_interior(layout)[1]
        frames = synth.empty_frames(s.n_empty_frames, stage_seed(cfg.seed, EMPTY) + k, scene_index=k,
                                    scene_seed=s.scene_seed, size=s.size)
        for i, frame in enumerate(frames):
            image_id = f"{scene_id}_empty_{i:04d}"
            save_image(out / "images" / f"{image_id}.png", frame)
            records.append(Record(image_id=image_id, image_path=f"images/{image_id}.png", cup_bbox=box,
                                  scene_id=scene_id, fill_fraction=0.0))
    DatasetManifest("colored", records, meta=meta).save(out)
    _echo(out, cfg)


def pseudo_label(cfg: PipelineConfig, ws: Workspace, **_) -> None:
    colored = _manifest(ws.datasets / "colored", "synth-gen")
    empty = _manifest(ws.datasets / "empty", "synth-gen")
    frames: dict = {}
    for rec in empty:
        frames.setdefault(rec.scene_id, []).append(empty.image(rec))
    out = _fresh(ws.datasets / "pseudo_labeled")
    # ground-truth masks of the synthetic colored set are used only for the fidelity figure
    unlabeled = replace(colored, records=[replace(r, mask_path=None) for r in colored])
    labeled = bgsub.pseudo_label_dataset(unlabeled, frames, out, cfg.bgsub.threshold_sigma,
                                         cfg.bgsub.max_components, seed=cfg.seed)
    labeled.meta["config"] = cfg.to_dict()
    labeled.save(out)
    if colored.has_masks():
        scores = [iou(labeled.mask(a), colored.mask(b)) for a, b in zip(labeled, colored)]
        fidelity = {"mean_iou_vs_ground_truth": float(np.mean(scores)), "min_iou": float(np.min(scores)),
                    "n": len(scores)}
        _write_json(out / "fidelity.json", fidelity)
        log.info("pseudo-label: mean IoU vs ground truth %.4f", fidelity["mean_iou_vs_ground_truth"])
    _echo(out, cfg)


def train_translate(cfg: PipelineConfig, ws: Workspace, **_) -> None:
    colored = _manifest(ws.datasets / "colored", "synth-gen")
    transparent = _manifest(ws.datasets / "transparent", "synth-gen")
    model, train_log = train_translation(colored, transparent, cfg.translate)
    out = _fresh(ws.models / "translate")
    model.save(out / "model.safetensors", echo=cfg.to_dict())
    train_log.write(out / "train_log.jsonl")
    _write_json(out / "parameters.json", model.parameter_counts())
    _echo(out, cfg)


def translate(cfg: PipelineConfig, ws: Workspace, **_) -> None:
    model = TranslationModel.load(_require(ws.models / "translate" / "model.safetensors", "train-translate"))
    labeled = _manifest(ws.datasets / "pseudo_labeled", "pseudo-label")
    out = _fresh(ws.datasets / "synthetic_transparent")
    manifest = translate_dataset(labeled, model, out)
    manifest.meta["config"] = cfg.to_dict()
    manifest.save(out)
    _echo(out, cfg)


def train_seg(cfg: PipelineConfig, ws: Workspace, **_) -> None:
    data = _manifest(ws.datasets / "synthetic_transparent", "translate")
    model, train_log = train_segmentation(data, cfg.seg)
    out = _fresh(ws.models / "seg")
    model.save(out / "model.safetensors", echo=cfg.to_dict())
    train_log.write(out / "train_log.jsonl")
    _write_json(out / "parameters.json", {"unet": model.parameter_count})
    _echo(out, cfg)


def _seg_model(ws: Workspace) -> SegmentationModel:
    return SegmentationModel.load(_require(ws.models / "seg" / "model.safetensors", "train-seg"))


def segment(cfg: PipelineConfig, ws: Workspace, **_) -> None:
    """Segment the held-out transparent images and estimate their fill levels."""
    model = _seg_model(ws)
    test = _manifest(ws.datasets / "transparent_test", "synth-gen")
    out = _fresh(ws.eval / "segment")
    masks = predict_masks(model, [test.image(r) for r in test])
    rows = []
    for rec, mask in zip(test, masks):
        save_mask(out / "masks" / f"{rec.image_id}.png", mask)
        est = estimate_fill(mask, rec.cup_bbox, cfg.pour.kernel)
        rows.append({"image_id": rec.image_id, "l_hat": est.level, "l_true": rec.fill_fraction,
                     "liquid_height": est.liquid_height, "cup_height": est.cup_height})
    with open(out / "fill_estimates.jsonl", "w") as f:
        for r in rows:
            f.write(json.dumps(r, sort_keys=True) + "\n")
    err = [abs(r["l_hat"] - r["l_true"]) for r in rows]
    log.info("segment: mean |l_hat - l| = %.4f over %d images", float(np.mean(err)), len(err))
    _echo(out, cfg)


def eval_seg(cfg: PipelineConfig, ws: Workspace, **_) -> None:
    model = _seg_model(ws)
    test = _manifest(ws.datasets / "transparent_test", "synth-gen")
    report = evaluation.eval_segmentation(model, test, label="ours")
    out = _fresh(ws.eval / "seg")
    report.write(out)
    _echo(out, cfg)
    print(report.table())


def ablate(cfg: PipelineConfig, ws: Workspace, **_) -> None:
    labeled = _manifest(ws.datasets / "pseudo_labeled", "pseudo-label")
    synthetic = _manifest(ws.datasets / "synthetic_transparent", "translate")
    test = _manifest(ws.datasets / "transparent_test", "synth-gen")
    out = _fresh(ws.eval / "ablate")
    summary = {}
    jitter = evaluation.run_ablation_color_jitter(labeled, test, cfg.eval.jitter, cfg.seg)
    jitter.write(out, "color_jitter")
    summary["color_jitter"] = jitter.means()
    print(jitter.table())
    for fraction in cfg.eval.fractions:
        report, n_train = evaluation.run_ablation_fraction(synthetic, fraction, test, cfg.seg,
                                                           seed=stage_seed(cfg.seed, SUBSAMPLE))
        stem = f"fraction_{fraction:g}"
        report.write(out, stem)
        summary[stem] = {**report.means(), "n_train": n_train}
        print(report.table())
    _write_json(out / "ablate.json", summary)
    _echo(out, cfg)


def pour_sim(cfg: PipelineConfig, ws: Workspace, **_) -> None:
    p = cfg.pour
    if p.perception == "segmentation":
        model = _seg_model(ws)
        layout = synth.scene_layout(cfg.synth.scene_seed, 0, cfg.synth.size)
        perception = rendered_perception(model, layout, p.kernel)
    elif p.perception == "oracle":
        perception = None
    else:
        raise ConfigError(f"pour.perception: expected 'segmentation' or 'oracle', got {p.perception!r}")
    out = _fresh(ws.traces)
    traces = []
    for i, (l0, target) in enumerate(p.scenarios):
        ctrl = ControllerConfig(l_target=target, epsilon=p.epsilon, initial_pour_duration=p.initial_pour_duration,
                                loop_period=p.loop_period, tilt_rate=p.tilt_rate)
        for trial in range(p.trials):
            trace = simulate_pour(ctrl, l0, q_max=p.q_max, perception=perception, warmup=p.warmup,
                                  seed=stage_seed(cfg.seed, POUR) + 1000 * i + trial)
            trace.config["pipeline"] = cfg.to_dict()
            trace.write(out / f"pour_{i:02d}_{trial:02d}.jsonl")
            traces.append(trace)
            log.info("pour %.2f -> %.2f trial %d: final %.4f", l0, target, trial, trace.final_level)
    _echo(out, cfg)
    report = evaluation.eval_pouring(traces)
    eval_dir = _fresh(ws.eval / "pour")
    report.write(eval_dir)
    _echo(eval_dir, cfg)
    print(report.table())


REPORT_INPUTS = {"seg": "eval-seg", "ablate": "ablate", "pour": "pour-sim"}


def report(cfg: PipelineConfig, ws: Workspace, *, force: bool = False, **_) -> None:
    """Collate segmentation, ablation and pouring results into one summary."""
    sections = {}
    seeds = {"report": cfg.seed}
    for name, command in REPORT_INPUTS.items():
        directory = ws.eval / name
        echo = yaml.safe_load(_require(directory / CONFIG_ECHO, command).read_text())
        seeds[name] = echo["seed"]
        sections[name] = directory
    if len(set(seeds.values())) > 1 and not force:
        raise SeedMismatchError(f"artifacts were produced with different seeds {seeds}; pass --force to collate anyway")

    seg_summary = _last_jsonl(sections["seg"] / "seg_eval.jsonl")
    ablation = json.loads((sections["ablate"] / "ablate.json").read_text())
    pour_rows = [json.loads(line) for line in (sections["pour"] / "pour_eval.jsonl").read_text().splitlines()]
    summary = {"seeds": seeds, "segmentation": seg_summary["means"], "ablation": ablation, "pouring": pour_rows,
               "config": cfg.to_dict()}
    out = _fresh(ws.eval / "report")
    _write_json(out / "report.json", summary)
    lines = ["All-IoU by method"]
    lines.append(f"  {'ours':<24}{seg_summary['means']['All']:.3f}")
    for name, means in ablation.items():
        lines.append(f"  {name:<24}{means['All']:.3f}")
    lines.append("Pouring error (percent of cup height)")
    lines += ["  " + line for line in (sections["pour"] / "pour_eval.txt").read_text().splitlines()]
    text = "\n".join(lines) + "\n"
    (out / "report.txt").write_text(text)
    _echo(out, cfg)
    print(text, end="")


def _last_jsonl(path: Path) -> dict:
    return json.loads(path.read_text().splitlines()[-1])


COMMANDS: dict[str, Callable] = {
    "synth-gen": synth_gen,
    "pseudo-label": pseudo_label,
    "train-translate": train_translate,
    "translate": translate,
    "train-seg": train_seg,
    "segment": segment,
    "eval-seg": eval_seg,
    "ablate": ablate,
    "pour-sim": pour_sim,
    "report": report,
}

RUN_ALL = list(COMMANDS)


def run_command(name: str, cfg: PipelineConfig, *, force: bool = False) -> None:
    """Run one command (or ``run-all``) with a per-command log file under ``logs/``."""
    if name == "run-all":
        for sub in RUN_ALL:
            run_command(sub, cfg, force=force)
        return
    if name not in COMMANDS:
        raise ConfigError(f"<command>: unknown command {name!r}")
    ws = Workspace(cfg.workspace)
    ws.logs.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(ws.logs / f"{name}.log", mode="w")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("liquidseg")
    root.addHandler(handler)
    if root.level == logging.NOTSET or root.level > logging.INFO:
        root.setLevel(logging.INFO)
    try:
        log.info("%s: workspace %s seed %d", name, ws.root, cfg.seed)
        COMMANDS[name](cfg, ws, force=force)
        log.info("%s: done", name)
    finally:
        root.removeHandler(handler)
        handler.close()
