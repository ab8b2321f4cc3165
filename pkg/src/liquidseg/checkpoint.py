"""Versioned tensor container shared by every persisted model.

A checkpoint is a safetensors file whose metadata holds the format version,
the model kind and a JSON echo of the config that produced it.  Everything
sits under one metadata key: safetensors stores metadata in a hash map, so
several keys would be written in varying order and break byte stability.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from safetensors.numpy import load_file, save_file
from safetensors import safe_open

FORMAT_VERSION = "1"
META_KEY = "liquidseg"


class CheckpointError(ValueError):
    pass


def save(path, kind: str, config: dict, arrays: dict, echo: dict | None = None) -> None:
    """Write ``arrays``; ``echo`` is an optional pipeline-config copy kept for provenance."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tensors = {name: np.ascontiguousarray(np.asarray(a)) for name, a in arrays.items()}
    header = {"format_version": FORMAT_VERSION, "kind": kind, "config": config}
    if echo is not None:
        header["echo"] = echo
    save_file(tensors, str(path), metadata={META_KEY: json.dumps(header, sort_keys=True)})


def read_metadata(path) -> dict:
    with safe_open(str(path), framework="numpy") as f:
        meta = f.metadata() or {}
    if META_KEY not in meta:
        raise CheckpointError(f"{path}: not a liquidseg checkpoint")
    return json.loads(meta[META_KEY])


def load(path, kind: str) -> tuple[dict, dict]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    meta = read_metadata(path)
    if meta.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {meta.get('format_version')!r}")
    if meta.get("kind") != kind:
        raise CheckpointError(f"{path}: expected a {kind!r} checkpoint, found {meta.get('kind')!r}")
    return meta["config"], load_file(str(path))
