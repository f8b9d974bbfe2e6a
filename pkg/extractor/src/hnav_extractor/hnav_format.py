"""Writer for the HNAV activation-dump container.

Layout: 4-byte magic "HNAV", little-endian uint32 format version, little-endian
uint64 header length, a UTF-8 JSON header record, then the raw little-endian
float32 payload in [probe][layer][dim] order. The writer is deliberately
self-contained so the consuming analysis side stays the only reader.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any, Mapping

import numpy as np

MAGIC = b"HNAV"
FORMAT_VERSION = 1
DTYPE = "float32"
LAYOUT = "probe_layer_dim"

_PREFIX = struct.Struct("<4sIQ")

_REQUIRED_FIELDS = ("model_id", "probe_set_id", "role", "num_probes", "num_layers", "hidden_dim")


class FormatError(Exception):
    pass


def header_record(
    model_id: str,
    probe_set_id: str,
    role: str,
    num_probes: int,
    num_layers: int,
    hidden_dim: int,
    cot_step: int | None = None,
) -> dict[str, Any]:
    return {
        "model_id": model_id,
        "probe_set_id": probe_set_id,
        "role": role,
        "cot_step": cot_step,
        "num_probes": num_probes,
        "num_layers": num_layers,
        "hidden_dim": hidden_dim,
        "dtype": DTYPE,
        "layout": LAYOUT,
    }


def write_dump(path: str | Path, header: Mapping[str, Any], tensor: np.ndarray) -> None:
    """Serialize `tensor` (N, L, d) under `header`; refuses bad shapes or NaN."""
    for field in _REQUIRED_FIELDS:
        if field not in header:
            raise FormatError(f"header is missing {field!r}")
    shape = (header["num_probes"], header["num_layers"], header["hidden_dim"])
    tensor = np.ascontiguousarray(np.asarray(tensor, dtype="<f4"))
    if tensor.shape != shape:
        raise FormatError(f"tensor shape {tensor.shape} does not match header {shape}")
    if not np.isfinite(tensor).all():
        raise FormatError("tensor contains non-finite values")
    header_bytes = json.dumps(
        dict(header), sort_keys=True, separators=(",", ":"), ensure_ascii=False
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(header_bytes)))
        fh.write(header_bytes)
        fh.write(tensor.tobytes())
