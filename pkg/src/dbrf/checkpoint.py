"""Versioned parameter checkpoints: one .npz holding arrays + JSON metadata.

Arrays round-trip bit-exactly (float64 in, float64 out). Metadata carries
the format version and whatever config dict produced the parameters.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ConfigurationError

FORMAT_VERSION = 1
_META_KEY = "__checkpoint_meta__"


def save_checkpoint(path, params: dict[str, np.ndarray], config: dict) -> None:
    """Write named arrays plus a config dict; refuses reserved names."""
    path = Path(path)
    if _META_KEY in params:
        raise ConfigurationError(f"{_META_KEY!r} is reserved for metadata")
    for name, arr in params.items():
        if not np.all(np.isfinite(arr)):
            raise ConfigurationError(f"parameter {name!r} contains non-finite values")
    meta = {"format_version": FORMAT_VERSION, "config": config,
            "shapes": {k: list(np.asarray(v).shape) for k, v in params.items()}}
    arrays = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}
    arrays[_META_KEY] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    """Return (params, config); validates version and recorded shapes."""
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"no checkpoint at {path}")
    with np.load(path) as data:
        if _META_KEY not in data:
            raise ConfigurationError(f"{path} is not a checkpoint (missing metadata)")
        meta = json.loads(bytes(data[_META_KEY]).decode())
        if meta.get("format_version") != FORMAT_VERSION:
            raise ConfigurationError(
                f"checkpoint format {meta.get('format_version')} != supported {FORMAT_VERSION}")
        params = {k: data[k].copy() for k in data.files if k != _META_KEY}
    for name, shape in meta["shapes"].items():
        if name not in params:
            raise ConfigurationError(f"checkpoint missing recorded array {name!r}")
        if list(params[name].shape) != shape:
            raise ConfigurationError(
                f"array {name!r} shape {params[name].shape} != recorded {shape}")
    return params, meta["config"]
