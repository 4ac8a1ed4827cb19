"""JSON encoding helpers.

Complex matrices are stored as ``{"rows": r, "cols": c, "entries": [[[re, im], ...], ...]}``.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np


def encode_matrix(a: np.ndarray) -> dict:
    a = np.asarray(a, dtype=complex)
    if a.ndim != 2:
        raise ValueError("only 2-d arrays are encoded as matrices")
    entries = [[[float(z.real), float(z.imag)] for z in row] for row in a]
    return {"rows": a.shape[0], "cols": a.shape[1], "entries": entries}


def decode_matrix(data: dict) -> np.ndarray:
    arr = np.asarray(data["entries"], dtype=float).reshape(data["rows"], data["cols"], 2)
    return arr[..., 0] + 1j * arr[..., 1]


def encode_matrices(stack) -> list[dict]:
    return [encode_matrix(m) for m in stack]


def decode_matrices(items) -> np.ndarray:
    return np.array([decode_matrix(m) for m in items])


def _default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        if np.iscomplexobj(obj):
            raise TypeError("encode complex arrays explicitly")
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(data) -> str:
    return json.dumps(data, indent=1, sort_keys=True, default=_default) + "\n"


def write_json(path, data) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(data))


def read_json(path):
    return json.loads(Path(path).read_text())


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=_default).encode()
    return hashlib.sha256(blob).hexdigest()[:16]
