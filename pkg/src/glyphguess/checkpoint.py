"""Checkpoint files: versioned JSON with bit-exact float64 payloads.

One file carries the vocabulary, every named parameter tensor with its
partition label, a config echo, and optional trainer state (optimizer
velocities, RNG stream, epoch) so an interrupted run resumes exactly.
"""

from __future__ import annotations

import base64
import json
from pathlib import Path
from typing import Any

import numpy as np

from .params import ParamStore

FORMAT_VERSION = "glyphguess-checkpoint-1"


class CheckpointError(ValueError):
    """Unreadable or incompatible checkpoint file."""


def _encode_array(arr: np.ndarray) -> dict[str, Any]:
    data = np.ascontiguousarray(arr, dtype="<f8")
    return {
        "shape": list(arr.shape),
        "data": base64.b64encode(data.tobytes()).decode("ascii"),
    }


def _decode_array(obj: dict[str, Any]) -> np.ndarray:
    raw = base64.b64decode(obj["data"])
    arr = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    return arr.reshape(obj["shape"]).copy()


def save_checkpoint(
    path: str | Path,
    params: ParamStore,
    vocab: list[str],
    config_echo: dict[str, Any],
    extra: dict[str, Any] | None = None,
    optimizer_state: dict[str, np.ndarray] | None = None,
) -> None:
    doc: dict[str, Any] = {
        "format_version": FORMAT_VERSION,
        "vocab": list(vocab),
        "config": config_echo,
        "params": {
            name: dict(_encode_array(t.data), partition=params.partition_of(name))
            for name, t in params.items()
        },
    }
    if extra:
        doc["extra"] = extra
    if optimizer_state is not None:
        doc["optimizer"] = {name: _encode_array(v) for name, v in optimizer_state.items()}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n")


def load_checkpoint(path: str | Path) -> dict[str, Any]:
    """Returns {params, vocab, config, extra, optimizer}."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"unparseable checkpoint {path}: {exc}") from exc
    if doc.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint version {doc.get('format_version')!r} in {path}"
        )
    store = ParamStore()
    for name, obj in doc["params"].items():
        store.register(name, _decode_array(obj), obj["partition"])
    optimizer = None
    if "optimizer" in doc:
        optimizer = {name: _decode_array(obj) for name, obj in doc["optimizer"].items()}
    return {
        "params": store,
        "vocab": doc["vocab"],
        "config": doc.get("config", {}),
        "extra": doc.get("extra", {}),
        "optimizer": optimizer,
    }


def partition_payload(path: str | Path, partition: str) -> bytes:
    """Serialized bytes of one partition, for frozen-parameter comparisons."""
    doc = json.loads(Path(path).read_text())
    chunks = [
        obj["data"]
        for name, obj in sorted(doc["params"].items())
        if obj["partition"] == partition
    ]
    return "".join(chunks).encode("ascii")
