import filecmp
import json
import re
import shutil

import pytest
import yaml

from liquidseg.cli import EXIT_CONFIG, EXIT_OK, EXIT_PREREQ, EXIT_RUNTIME, main
from liquidseg.config import ConfigError, PipelineConfig, load_config
from liquidseg.pipeline import PrerequisiteError, run_command

TINY = [
    "synth.n_colored=8",
    "synth.n_transparent=8",
    "synth.n_test=4",
    "synth.n_empty_frames=6",
    "translate.epochs=1",
    "seg.epochs=1",
    "pour.trials=1",
    "eval.fractions=[0.5, 1.0]",
]


def tree_equal(a, b):
    cmp = filecmp.dircmp(a, b)
    if cmp.left_only or cmp.right_only or cmp.funny_files:
        return False
    _, mismatch, errors = filecmp.cmpfiles(a, b, cmp.common_files, shallow=False)
    if mismatch or errors:
        return False
    return all(tree_equal(a / d, b / d) for d in cmp.common_dirs)


def test_defaults_round_trip_through_yaml(tmp_path):
    cfg = PipelineConfig()
    path = tmp_path / "c.yaml"
    data = cfg.to_dict()
    for section in ("translate", "seg"):
        data[section].pop("seed")
    data["eval"]["jitter"].pop("seed")
    path.write_text(yaml.safe_dump(data))
    assert load_config(path).to_dict() == load_config().to_dict()


def test_override_precedence(tmp_path, monkeypatch):
    path = tmp_path / "c.yaml"
    path.write_text("seed: 3\ntranslate:\n  epochs: 7\n")
    monkeypatch.setenv("LIQUIDSEG_WORKSPACE", str(tmp_path / "env_ws"))
    cfg = load_config(path, ["translate.epochs=9"])
    assert cfg.translate.epochs == 9 and cfg.seed == 3
    assert cfg.seg.seed == 3 and cfg.translate.seed == 3
    assert cfg.workspace == str(tmp_path / "env_ws")
    assert load_config(path, seed=5, workspace="w").workspace == "w"
    assert load_config(path, seed=5).seed == 5


@pytest.mark.parametrize(
    "override, field",
    [
        ("translate.epochz=1", "translate.epochz"),
        ("seg.batch_size=two", "seg.batch_size"),
        ("pour.scenarios=[[0, 0.5, 1]]", "pour.scenarios[0]"),
        ("nosuch.key=1", "nosuch"),
        ("seg.seed=4", "seg.seed"),
    ],
)
def test_malformed_config_names_field(override, field):
    with pytest.raises(ConfigError, match=rf"^{re.escape(field)}"):
        load_config(overrides=[override])


def test_translate_before_training_names_prerequisite(tmp_path):
    cfg = load_config(overrides=TINY, workspace=tmp_path)
    with pytest.raises(PrerequisiteError) as err:
        run_command("translate", cfg)
    assert err.value.command == "train-translate"
    assert "train-translate" in str(err.value)
    assert main(["translate", "--workspace", str(tmp_path)]) == EXIT_PREREQ


def test_cli_exit_codes(tmp_path):
    assert main(["report", "--workspace", str(tmp_path), "--set", "seg.lr=-1"]) == EXIT_CONFIG
    assert main(["report", "--workspace", str(tmp_path), "--config", str(tmp_path / "missing.yaml")]) == EXIT_CONFIG
    with pytest.raises(SystemExit) as exc:
        main(["no-such-command"])
    assert exc.value.code == EXIT_CONFIG


def snapshot(ws, dest):
    for rel in ("datasets", "models", "eval", "traces"):
        if (ws / rel).exists():
            shutil.copytree(ws / rel, dest / rel)
    return dest


def same_artifacts(ws, snap):
    rels = [rel for rel in ("datasets", "models", "eval", "traces") if (snap / rel).exists()]
    return rels and all(tree_equal(ws / rel, snap / rel) for rel in rels)


def test_synth_gen_is_byte_identical(tmp_path):
    ws = tmp_path / "ws"
    args = ["synth-gen", "--workspace", str(ws), *sum((["--set", s] for s in TINY), [])]
    assert main(args) == EXIT_OK
    snap = snapshot(ws, tmp_path / "first")
    assert main(args) == EXIT_OK
    assert same_artifacts(ws, snap)
    manifest = json.loads((ws / "datasets/colored/manifest.json").read_text())
    assert manifest["meta"]["config"]["synth"]["n_colored"] == 8


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    ws = tmp_path_factory.mktemp("ws")
    cfg = load_config(overrides=TINY, workspace=ws)
    run_command("run-all", cfg)
    return ws, cfg


def test_run_all_layout_and_echo(tiny_run):
    ws, cfg = tiny_run
    for rel in (
        "datasets/colored", "datasets/transparent", "datasets/synthetic_transparent",
        "models/translate", "models/seg", "eval/seg", "eval/ablate", "eval/pour", "eval/report", "traces",
    ):
        echo = yaml.safe_load((ws / rel / "config.yaml").read_text())
        assert echo == cfg.to_dict()
    assert (ws / "logs" / "train-seg.log").read_text()
    report = json.loads((ws / "eval/report/report.json").read_text())
    assert set(report) >= {"segmentation", "ablation", "pouring"}


def test_rerun_reproduces_artifacts(tiny_run, tmp_path):
    ws, cfg = tiny_run
    snap = snapshot(ws, tmp_path)
    run_command("run-all", cfg)
    assert same_artifacts(ws, snap)


def test_report_refuses_mixed_seeds(tiny_run):
    ws, _ = tiny_run
    assert main(["report", "--workspace", str(ws), "--seed", "1"]) == EXIT_RUNTIME
    assert main(["report", "--workspace", str(ws), "--seed", "1", "--force"]) == EXIT_OK
