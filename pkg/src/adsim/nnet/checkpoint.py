"""Versioned npz checkpoints; arrays round-trip bit-exactly."""
from __future__ import annotations

import json

import numpy as np

FORMAT_VERSION = 1


def save_checkpoint(path, arrays: dict, meta: dict) -> None:
    """Write named float64/int64 arrays plus a JSON metadata block."""
    header = dict(meta)
    header["format_version"] = FORMAT_VERSION
    payload = {f"arr/{k}": np.asarray(v) for k, v in arrays.items()}
    payload["__meta__"] = np.frombuffer(
        json.dumps(header, sort_keys=True).encode("utf-8"), dtype=np.uint8
    )
    np.savez(path, **payload)


def load_checkpoint(path) -> tuple[dict, dict]:
    """Read a checkpoint; returns (arrays, meta)."""
    with np.load(path) as data:
        meta = json.loads(bytes(data["__meta__"]).decode("utf-8"))
        if meta.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('format_version')!r}")
        arrays = {k[4:]: data[k].copy() for k in data.files if k.startswith("arr/")}
    return arrays, meta
