"""Pipeline configuration: nested dataclasses loaded from YAML plus ``--set`` overrides.

Every field has a default, and the defaults are the desk-scale run.  The
top-level ``seed`` is the only seed knob; stage seeds are derived from it.
"""

from __future__ import annotations

import dataclasses
import os
import typing
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from .evaluation import JitterConfig
from .segmentation import SegTrainConfig
from .translation import TranslationConfig

WORKSPACE_ENV = "LIQUIDSEG_WORKSPACE"


class ConfigError(ValueError):
    """Malformed configuration; the message starts with the offending field path."""


@dataclass
class SynthSettings:
    n_colored: int = 200
    n_transparent: int = 200
    n_test: int = 40
    n_empty_frames: int = 20  # per scene, for the background model
    num_scenes: int = 1
    scene_seed: int = 0
    size: int = 64
    fill_range: tuple[float, float] = (0.0, 1.0)


@dataclass
class BgSubSettings:
    threshold_sigma: float = 4.0
    max_components: int = 3


@dataclass
class PourSettings:
    scenarios: tuple[tuple[float, float], ...] = ((0.0, 0.25), (0.0, 0.5), (0.0, 0.75), (0.25, 0.75))
    trials: int = 3
    perception: str = "segmentation"  # or "oracle"
    epsilon: float = 0.01
    loop_period: float = 0.1
    initial_pour_duration: float = 1.0
    tilt_rate: float = 60.0
    q_max: float = 0.05
    kernel: int = 5
    warmup: float = 2.0


@dataclass
class EvalSettings:
    jitter: JitterConfig = field(default_factory=JitterConfig)
    fractions: tuple[float, ...] = (0.01, 0.1, 1.0)


@dataclass
class PipelineConfig:
    workspace: str = "workspace"
    seed: int = 0
    synth: SynthSettings = field(default_factory=SynthSettings)
    bgsub: BgSubSettings = field(default_factory=BgSubSettings)
    translate: TranslationConfig = field(default_factory=TranslationConfig)
    seg: SegTrainConfig = field(default_factory=SegTrainConfig)
    pour: PourSettings = field(default_factory=PourSettings)
    eval: EvalSettings = field(default_factory=EvalSettings)

    def to_dict(self) -> dict:
        return _plain(asdict(self))

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    @property
    def workspace_path(self) -> Path:
        return Path(self.workspace)


# Stage seeds are set from the pipeline seed, so they are not user fields.
DERIVED_FIELDS = {"translate.seed", "seg.seed", "eval.jitter.seed"}


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _coerce(value, hint, path: str):
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if dataclasses.is_dataclass(hint):
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected a mapping, got {type(value).__name__}")
        return build(hint, value, path)
    if origin is typing.Union:
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(value, inner[0], path)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list, got {type(value).__name__}")
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(v, args[0], f"{path}[{i}]") for i, v in enumerate(value))
        if len(value) != len(args):
            raise ConfigError(f"{path}: expected {len(args)} items, got {len(value)}")
        return tuple(_coerce(v, a, f"{path}[{i}]") for i, (v, a) in enumerate(zip(value, args)))
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    return value


def build(cls, data: dict, path: str = ""):
    """Instantiate dataclass ``cls`` from ``data``, rejecting unknown keys."""
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        sub = f"{path}.{key}" if path else key
        if key not in names:
            raise ConfigError(f"{sub}: unknown field")
        kwargs[key] = _coerce(value, hints[key], sub)
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or '<root>'}: {exc}") from exc


def _set_dotted(tree: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    node = tree
    for i, part in enumerate(parts[:-1]):
        child = node.get(part)
        if not isinstance(child, dict):
            raise ConfigError(f"{'.'.join(parts[: i + 1])}: unknown section")
        node = child
    if parts[-1] not in node:
        raise ConfigError(f"{dotted}: unknown field")
    node[parts[-1]] = value


def parse_override(item: str) -> tuple[str, Any]:
    if "=" not in item:
        raise ConfigError(f"{item}: overrides take the form key=value")
    key, raw = item.split("=", 1)
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{key}: cannot parse value {raw!r}") from exc
    return key.strip(), value


def load_config(
    path: Optional[os.PathLike] = None,
    overrides: typing.Sequence[str] = (),
    *,
    seed: Optional[int] = None,
    workspace: Optional[os.PathLike] = None,
) -> PipelineConfig:
    """Defaults, then the YAML file, then ``key=value`` overrides, then explicit flags.

    The workspace falls back to ``$LIQUIDSEG_WORKSPACE`` when neither the file,
    an override nor ``workspace`` names one.
    """
    tree = PipelineConfig().to_dict()
    explicit_ws = False
    if path is not None:
        try:
            loaded = yaml.safe_load(Path(path).read_text()) or {}
        except OSError as exc:
            raise ConfigError(f"<file>: cannot read {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"<file>: invalid YAML in {path}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError("<root>: config file must hold a mapping")
        _merge(tree, loaded, "")
        explicit_ws = "workspace" in loaded
    for item in overrides:
        key, value = parse_override(item)
        if key in DERIVED_FIELDS:
            raise ConfigError(f"{key}: stage seeds follow the top-level seed; set 'seed' instead")
        _set_dotted(tree, key, value)
        explicit_ws = explicit_ws or key == "workspace"
    if seed is not None:
        tree["seed"] = seed
    if workspace is not None:
        tree["workspace"] = str(workspace)
    elif not explicit_ws and os.environ.get(WORKSPACE_ENV):
        tree["workspace"] = os.environ[WORKSPACE_ENV]
    for dotted in DERIVED_FIELDS:
        _set_dotted(tree, dotted, tree["seed"])
    return build(PipelineConfig, tree)


def _merge(base: dict, new: dict, path: str) -> None:
    for key, value in new.items():
        sub = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"{sub}: unknown field")
        if sub in DERIVED_FIELDS:
            raise ConfigError(f"{sub}: stage seeds follow the top-level seed; set 'seed' instead")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{sub}: expected a mapping")
            _merge(base[key], value, sub)
        else:
            base[key] = value
