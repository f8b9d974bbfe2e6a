"""Bit-exact activation dump files.

Layout: 4-byte magic ``HNAV``, little-endian uint32 format version, a
little-endian uint64 header length, the UTF-8 header record (flat key-value
JSON, sorted keys), then the payload: exactly N*L*d little-endian 32-bit
floats in [probe][layer][dim] order. Readers validate shape and finiteness;
writers refuse to produce files that would fail those checks.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any

import numpy as np

from .lineio import dump_record

MAGIC = b"HNAV"
FORMAT_VERSION = 1
DTYPE = "float32"
LAYOUT = "probe_layer_dim"

_PREFIX = struct.Struct("<4sIQ")  # magic, version, header byte length


class DumpError(Exception):
    pass


class BadMagic(DumpError):
    def __init__(self, got: bytes):
        self.got = got
        super().__init__(f"not a dump file (magic {got!r})")


class VersionUnsupported(DumpError):
    def __init__(self, version: int):
        self.version = version
        super().__init__(f"format version {version} unsupported (have {FORMAT_VERSION})")


class HeaderInvalid(DumpError):
    def __init__(self, reason: str):
        self.reason = reason
        super().__init__(f"invalid header: {reason}")


class LengthMismatch(DumpError):
    def __init__(self, expected: int, actual: int):
        self.expected = expected
        self.actual = actual
        super().__init__(f"payload of {actual} bytes, header implies {expected}")


class NonFiniteValue(DumpError):
    def __init__(self, probe: int, layer: int, index: int):
        self.probe = probe
        self.layer = layer
        self.index = index
        super().__init__(
            f"non-finite value at probe {probe}, layer {layer}, dim {index}"
        )


class ProbeRole(str, Enum):
    QUESTION = "question"
    ANSWER = "answer"
    COT_STEP = "cot_step"


@dataclass(frozen=True)
class DumpHeader:
    model_id: str
    probe_set_id: str
    role: ProbeRole
    num_probes: int
    num_layers: int
    hidden_dim: int
    cot_step: int | None = None
    dtype: str = DTYPE
    layout: str = LAYOUT

    def __post_init__(self) -> None:
        if min(self.num_probes, self.num_layers, self.hidden_dim) <= 0:
            raise HeaderInvalid("num_probes, num_layers, hidden_dim must be positive")
        if self.dtype != DTYPE:
            raise HeaderInvalid(f"dtype must be {DTYPE!r}, got {self.dtype!r}")
        if self.layout != LAYOUT:
            raise HeaderInvalid(f"layout must be {LAYOUT!r}, got {self.layout!r}")
        if self.role is ProbeRole.COT_STEP:
            if self.cot_step is None or self.cot_step < 0:
                raise HeaderInvalid("cot_step role needs cot_step >= 0")
        elif self.cot_step is not None:
            raise HeaderInvalid(f"role {self.role.value} cannot carry cot_step")

    @property
    def payload_bytes(self) -> int:
        return self.num_probes * self.num_layers * self.hidden_dim * 4

    def to_record(self) -> dict[str, Any]:
        return {
            "model_id": self.model_id,
            "probe_set_id": self.probe_set_id,
            "role": self.role.value,
            "cot_step": self.cot_step,
            "num_probes": self.num_probes,
            "num_layers": self.num_layers,
            "hidden_dim": self.hidden_dim,
            "dtype": self.dtype,
            "layout": self.layout,
        }

    @classmethod
    def from_record(cls, record: dict[str, Any]) -> "DumpHeader":
        try:
            return cls(
                model_id=str(record["model_id"]),
                probe_set_id=str(record["probe_set_id"]),
                role=ProbeRole(record["role"]),
                cot_step=record.get("cot_step"),
                num_probes=int(record["num_probes"]),
                num_layers=int(record["num_layers"]),
                hidden_dim=int(record["hidden_dim"]),
                dtype=str(record.get("dtype", DTYPE)),
                layout=str(record.get("layout", LAYOUT)),
            )
        except (KeyError, ValueError, TypeError) as exc:
            if isinstance(exc, HeaderInvalid):
                raise
            raise HeaderInvalid(str(exc)) from exc


@dataclass(frozen=True)
class ActivationDump:
    header: DumpHeader
    tensor: np.ndarray  # (N, L, d) float32

    def vectors(self, layer: int) -> np.ndarray:
        return self.tensor[:, layer, :]


def _check_finite(tensor: np.ndarray) -> None:
    finite = np.isfinite(tensor)
    if not finite.all():
        probe, layer, index = np.argwhere(~finite)[0]
        raise NonFiniteValue(int(probe), int(layer), int(index))


def write_dump(path: str | Path, header: DumpHeader, tensor: np.ndarray) -> None:
    shape = (header.num_probes, header.num_layers, header.hidden_dim)
    tensor = np.asarray(tensor)
    if tensor.shape != shape:
        raise HeaderInvalid(f"tensor shape {tensor.shape} != header shape {shape}")
    _check_finite(tensor)
    payload = np.ascontiguousarray(tensor, dtype="<f4").tobytes()
    header_bytes = dump_record(header.to_record()).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(header_bytes)))
        fh.write(header_bytes)
        fh.write(payload)


def read_dump(path: str | Path) -> ActivationDump:
    with open(path, "rb") as fh:
        prefix = fh.read(_PREFIX.size)
        if len(prefix) < _PREFIX.size or prefix[:4] != MAGIC:
            raise BadMagic(prefix[:4])
        _, version, header_len = _PREFIX.unpack(prefix)
        if version != FORMAT_VERSION:
            raise VersionUnsupported(version)
        header_bytes = fh.read(header_len)
        if len(header_bytes) != header_len:
            raise HeaderInvalid("truncated header")
        try:
            record = json.loads(header_bytes.decode("utf-8"))
        except ValueError as exc:
            raise HeaderInvalid(f"header is not valid JSON: {exc}") from exc
        header = DumpHeader.from_record(record)
        payload = fh.read()
    if len(payload) != header.payload_bytes:
        raise LengthMismatch(header.payload_bytes, len(payload))
    tensor = np.frombuffer(payload, dtype="<f4").reshape(
        header.num_probes, header.num_layers, header.hidden_dim
    )
    _check_finite(tensor)
    return ActivationDump(header=header, tensor=tensor)
