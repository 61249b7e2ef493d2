"""Checkpoint files.

Layout: 8-byte little-endian header length, UTF-8 JSON header, then every
tensor as raw little-endian float64 in the order listed by the header's
``tensors`` entry.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from .model import ModelSpec

MAGIC = "loggrad-checkpoint/1"


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, spec: ModelSpec, params, meta: dict | None = None) -> None:
    names = list(spec.param_shapes())
    header = {
        "format": MAGIC,
        "spec": spec.to_dict(),
        "tensors": [{"name": n, "shape": list(params[n].shape)} for n in names],
        "meta": meta or {},
    }
    head = json.dumps(header, sort_keys=True).encode()
    payload = b"".join(np.ascontiguousarray(params[n], dtype="<f8").tobytes() for n in names)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(struct.pack("<Q", len(head)) + head + payload)
    os.replace(tmp, path)


def load_checkpoint(path):
    """Return (spec, params, meta)."""
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    data = path.read_bytes()
    if len(data) < 8:
        raise CheckpointError(f"truncated checkpoint {path}")
    (n_head,) = struct.unpack("<Q", data[:8])
    try:
        header = json.loads(data[8:8 + n_head])
    except ValueError as exc:
        raise CheckpointError(f"corrupt checkpoint header in {path}") from exc
    if header.get("format") != MAGIC:
        raise CheckpointError(f"unknown checkpoint format {header.get('format')!r}")
    spec = ModelSpec.from_dict(header["spec"])
    params = {}
    offset = 8 + n_head
    for t in header["tensors"]:
        count = int(np.prod(t["shape"]))
        chunk = data[offset:offset + 8 * count]
        if len(chunk) != 8 * count:
            raise CheckpointError(f"truncated payload for tensor {t['name']}")
        params[t["name"]] = np.frombuffer(chunk, dtype="<f8").reshape(t["shape"]).astype(np.float64)
        offset += 8 * count
    expected = spec.param_shapes()
    for name, shape in expected.items():
        if name not in params or params[name].shape != tuple(shape):
            raise CheckpointError(f"tensor {name} missing or misshaped in {path}")
    return spec, params, header["meta"]
