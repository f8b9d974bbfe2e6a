"""Byte-level checks of the dump container against an independent parser."""

import json
import struct

import numpy as np
import pytest

from hnav_extractor.hnav_format import (
    FORMAT_VERSION,
    MAGIC,
    FormatError,
    header_record,
    write_dump,
)

PREFIX = struct.Struct("<4sIQ")


def tensor_2x3x4():
    return np.arange(24, dtype=np.float32).reshape(2, 3, 4) / 7.0


def header_2x3x4(**overrides):
    base = header_record(
        model_id="toy",
        probe_set_id="set-1",
        role="question",
        num_probes=2,
        num_layers=3,
        hidden_dim=4,
    )
    base.update(overrides)
    return base


def split_frame(raw):
    magic, version, header_len = PREFIX.unpack(raw[: PREFIX.size])
    header_end = PREFIX.size + header_len
    header = json.loads(raw[PREFIX.size : header_end].decode("utf-8"))
    return magic, version, header, raw[header_end:]


def test_frame_layout(tmp_path):
    path = tmp_path / "a.hnav"
    tensor = tensor_2x3x4()
    write_dump(path, header_2x3x4(), tensor)
    magic, version, header, payload = split_frame(path.read_bytes())
    assert magic == MAGIC == b"HNAV"
    assert version == FORMAT_VERSION == 1
    assert header["num_probes"] == 2
    assert header["num_layers"] == 3
    assert header["hidden_dim"] == 4
    assert header["dtype"] == "float32"
    assert header["layout"] == "probe_layer_dim"
    assert header["cot_step"] is None
    assert len(payload) == 2 * 3 * 4 * 4
    decoded = np.frombuffer(payload, dtype="<f4").reshape(2, 3, 4)
    assert np.array_equal(decoded, tensor)


def test_scalar_offset_formula(tmp_path):
    # value for (probe p, layer l, dim k) sits at 16 + header_len + ((p*L + l)*d + k)*4
    path = tmp_path / "a.hnav"
    tensor = tensor_2x3x4()
    write_dump(path, header_2x3x4(), tensor)
    raw = path.read_bytes()
    _, _, header_len = PREFIX.unpack(raw[: PREFIX.size])
    p, l, k = 1, 2, 3
    offset = 16 + header_len + ((p * 3 + l) * 4 + k) * 4
    (value,) = struct.unpack_from("<f", raw, offset)
    assert value == tensor[p, l, k]


def test_deterministic_bytes(tmp_path):
    a, b = tmp_path / "a.hnav", tmp_path / "b.hnav"
    write_dump(a, header_2x3x4(), tensor_2x3x4())
    write_dump(b, header_2x3x4(), tensor_2x3x4())
    assert a.read_bytes() == b.read_bytes()


def test_cot_step_recorded(tmp_path):
    path = tmp_path / "a.hnav"
    header = header_record(
        model_id="toy",
        probe_set_id="set-1",
        role="cot_step",
        num_probes=2,
        num_layers=3,
        hidden_dim=4,
        cot_step=2,
    )
    write_dump(path, header, tensor_2x3x4())
    _, _, parsed, _ = split_frame(path.read_bytes())
    assert parsed["role"] == "cot_step"
    assert parsed["cot_step"] == 2


def test_shape_mismatch_rejected(tmp_path):
    with pytest.raises(FormatError):
        write_dump(tmp_path / "a.hnav", header_2x3x4(), np.zeros((2, 3, 5), "f4"))


def test_non_finite_rejected(tmp_path):
    tensor = tensor_2x3x4()
    tensor[1, 0, 2] = np.nan
    with pytest.raises(FormatError):
        write_dump(tmp_path / "a.hnav", header_2x3x4(), tensor)
    tensor[1, 0, 2] = np.inf
    with pytest.raises(FormatError):
        write_dump(tmp_path / "b.hnav", header_2x3x4(), tensor)


def test_missing_header_field_rejected(tmp_path):
    header = header_2x3x4()
    del header["probe_set_id"]
    with pytest.raises(FormatError, match="probe_set_id"):
        write_dump(tmp_path / "a.hnav", header, tensor_2x3x4())
