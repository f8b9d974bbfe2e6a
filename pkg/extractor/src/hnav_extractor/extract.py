"""Run probe texts through a transformer and dump layer-wise hidden states.

One dump file per (model, role) or per reasoning step. Every layer's hidden
state at the final token position is captured, including the embedding output,
so a model with B transformer blocks yields B+1 layers. Probes run unbatched;
with no padding the final position is always the final content token.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from transformers import AutoModel, AutoTokenizer

from .hnav_format import header_record, write_dump
from .probes import CotSeries, Probe, load_probes, load_series


class ExtractorError(Exception):
    """Base class for extraction failures."""


class ModelLoadError(ExtractorError):
    pass


class DeviceUnavailable(ExtractorError):
    pass


class TokenizationError(ExtractorError):
    def __init__(self, probe_id: str, reason: str):
        self.probe_id = probe_id
        self.reason = reason
        super().__init__(f"probe {probe_id!r}: {reason}")


class StepCountMismatch(ExtractorError):
    def __init__(self, series_id: str, expected: int, got: int):
        self.series_id = series_id
        self.expected = expected
        self.got = got
        super().__init__(
            f"series {series_id!r} has {got} steps, expected {expected}"
        )


class ProbeMismatch(ExtractorError):
    def __init__(self, series_id: str):
        self.series_id = series_id
        super().__init__(f"series {series_id!r} matches no probe in the probe file")


class EmptyInput(ExtractorError):
    def __init__(self, what: str):
        self.what = what
        super().__init__(f"empty input: {what}")


_ROLE_FIELDS = {"question": "question", "answer": "answer_statement"}


@dataclass(frozen=True)
class ExtractionJob:
    model_ref: str
    probe_file: str | Path
    out_dir: str | Path
    roles: tuple[str, ...] = ("question", "answer")
    device: str = "cpu"
    batch_size: int = 1
    model_id: str | None = None
    chat_template: bool = False


def _resolve_device(hint: str) -> torch.device:
    try:
        device = torch.device(hint)
    except (RuntimeError, ValueError) as exc:
        raise DeviceUnavailable(f"unrecognized device {hint!r}") from exc
    if device.type == "cuda" and not torch.cuda.is_available():
        raise DeviceUnavailable("cuda requested but no cuda device is available")
    if device.type == "mps" and not torch.backends.mps.is_available():
        raise DeviceUnavailable("mps requested but no mps device is available")
    return device


def _effective_model_id(job: ExtractionJob) -> str:
    base = job.model_id or Path(str(job.model_ref)).name or str(job.model_ref)
    return f"{base}+chat" if job.chat_template else base


def _file_tag(model_id: str) -> str:
    return "".join(c if c.isalnum() or c in "._+-" else "-" for c in model_id)


def _probe_set_id(probe_file: str | Path, probes: Sequence[Probe]) -> str:
    digest = hashlib.sha256(":".join(p.id for p in probes).encode()).hexdigest()
    return f"{Path(probe_file).stem}-{digest[:12]}"


def _validate_job(job: ExtractionJob) -> None:
    if job.batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {job.batch_size}")
    for role in job.roles:
        if role not in _ROLE_FIELDS:
            raise ValueError(f"unknown role {role!r}")


def _load_model(job: ExtractionJob):
    device = _resolve_device(job.device)
    try:
        tokenizer = AutoTokenizer.from_pretrained(job.model_ref)
        model = AutoModel.from_pretrained(job.model_ref)
    except Exception as exc:
        raise ModelLoadError(f"cannot load {job.model_ref!r}: {exc}") from exc
    model.to(device)
    model.eval()
    limit = getattr(model.config, "max_position_embeddings", None) or getattr(
        model.config, "n_positions", None
    )
    return tokenizer, model, device, limit


def _wrap_chat(tokenizer, text: str, probe_id: str) -> str:
    try:
        return tokenizer.apply_chat_template(
            [{"role": "user", "content": text}],
            tokenize=False,
            add_generation_prompt=True,
        )
    except Exception as exc:
        raise TokenizationError(probe_id, f"chat template failed: {exc}") from exc


def _hidden_rows(model, tokenizer, device, text, probe_id, limit) -> np.ndarray:
    """(L, d) float32 rows for one text, final token position per layer."""
    try:
        encoded = tokenizer(text, return_tensors="pt")
    except Exception as exc:
        raise TokenizationError(probe_id, f"cannot tokenize: {exc}") from exc
    n_tokens = int(encoded["input_ids"].shape[1])
    if n_tokens == 0:
        raise TokenizationError(probe_id, "tokenizer produced no tokens")
    if limit is not None and n_tokens > limit:
        raise TokenizationError(
            probe_id, f"{n_tokens} tokens exceeds the context window of {limit}"
        )
    kwargs = {
        "input_ids": encoded["input_ids"].to(device),
        "output_hidden_states": True,
    }
    if "attention_mask" in encoded:
        kwargs["attention_mask"] = encoded["attention_mask"].to(device)
    with torch.no_grad():
        outputs = model(**kwargs)
    rows = [
        state[0, -1, :].to(torch.float32).cpu().numpy()
        for state in outputs.hidden_states
    ]
    return np.stack(rows, axis=0)


def _stack_probes(model, tokenizer, device, texts, probe_ids, limit) -> np.ndarray:
    rows = [
        _hidden_rows(model, tokenizer, device, text, probe_id, limit)
        for text, probe_id in zip(texts, probe_ids)
    ]
    return np.stack(rows, axis=0)


def _manifest_entry(path: Path, header: dict) -> dict:
    return {
        "file": path.name,
        "sha256": hashlib.sha256(path.read_bytes()).hexdigest(),
        "model_id": header["model_id"],
        "probe_set_id": header["probe_set_id"],
        "role": header["role"],
        "cot_step": header.get("cot_step"),
        "num_probes": header["num_probes"],
        "num_layers": header["num_layers"],
        "hidden_dim": header["hidden_dim"],
    }


def _update_manifest(out_dir: Path, entries: Sequence[dict]) -> Path:
    path = out_dir / "manifest.json"
    merged: dict[str, dict] = {}
    if path.exists():
        try:
            loaded = json.loads(path.read_text(encoding="utf-8"))
            for entry in loaded["dumps"]:
                merged[entry["file"]] = entry
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ExtractorError(f"unreadable manifest at {path}") from exc
    for entry in entries:
        merged[entry["file"]] = entry
    record = {"dumps": [merged[name] for name in sorted(merged)]}
    path.write_text(
        json.dumps(record, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return path


def _write(out_dir: Path, name: str, header: dict, tensor: np.ndarray) -> tuple[Path, dict]:
    path = out_dir / name
    write_dump(path, header, tensor)
    return path, _manifest_entry(path, header)


def extract(job: ExtractionJob) -> list[Path]:
    """One dump per requested role; returns the dump paths in role order."""
    _validate_job(job)
    if not job.roles:
        raise EmptyInput("roles")
    probes = load_probes(job.probe_file)
    if not probes:
        raise EmptyInput(f"probe file {job.probe_file}")

    tokenizer, model, device, limit = _load_model(job)
    torch.set_num_threads(1)

    model_id = _effective_model_id(job)
    tag = _file_tag(model_id)
    probe_set_id = _probe_set_id(job.probe_file, probes)
    out_dir = Path(job.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    written: list[Path] = []
    entries: list[dict] = []
    for role in job.roles:
        field = _ROLE_FIELDS[role]
        texts = [getattr(p, field) for p in probes]
        if job.chat_template:
            texts = [_wrap_chat(tokenizer, t, p.id) for t, p in zip(texts, probes)]
        tensor = _stack_probes(
            model, tokenizer, device, texts, [p.id for p in probes], limit
        )
        header = header_record(
            model_id=model_id,
            probe_set_id=probe_set_id,
            role=role,
            num_probes=tensor.shape[0],
            num_layers=tensor.shape[1],
            hidden_dim=tensor.shape[2],
        )
        path, entry = _write(out_dir, f"{tag}__{role}.hnav", header, tensor)
        written.append(path)
        entries.append(entry)
    _update_manifest(out_dir, entries)
    return written


def _aligned_series(
    probes: Sequence[Probe], series: Sequence[CotSeries]
) -> tuple[list[Probe], dict[str, CotSeries], int]:
    """Probe-file-order subset with a series, plus the shared step count."""
    by_id = {s.probe_id: s for s in series}
    probe_ids = {p.id for p in probes}
    for entry in series:
        if entry.probe_id not in probe_ids:
            raise ProbeMismatch(entry.probe_id)
    steps = series[0].step_count
    for entry in series:
        if entry.step_count != steps:
            raise StepCountMismatch(entry.probe_id, steps, entry.step_count)
    aligned = [p for p in probes if p.id in by_id]
    return aligned, by_id, steps


def extract_cot(job: ExtractionJob, series_file: str | Path) -> list[Path]:
    """One dump per reasoning step, step 0 being the bare question."""
    _validate_job(job)
    probes = load_probes(job.probe_file)
    if not probes:
        raise EmptyInput(f"probe file {job.probe_file}")
    series = load_series(series_file)
    if not series:
        raise EmptyInput(f"series file {series_file}")
    aligned, by_id, steps = _aligned_series(probes, series)

    tokenizer, model, device, limit = _load_model(job)
    torch.set_num_threads(1)

    model_id = _effective_model_id(job)
    tag = _file_tag(model_id)
    probe_set_id = _probe_set_id(job.probe_file, aligned)
    out_dir = Path(job.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    written: list[Path] = []
    entries: list[dict] = []
    for k in range(steps + 1):
        if k == 0:
            texts = [p.question for p in aligned]
        else:
            texts = [by_id[p.id].steps[k - 1] for p in aligned]
        if job.chat_template:
            texts = [_wrap_chat(tokenizer, t, p.id) for t, p in zip(texts, aligned)]
        tensor = _stack_probes(
            model, tokenizer, device, texts, [p.id for p in aligned], limit
        )
        header = header_record(
            model_id=model_id,
            probe_set_id=probe_set_id,
            role="cot_step",
            num_probes=tensor.shape[0],
            num_layers=tensor.shape[1],
            hidden_dim=tensor.shape[2],
            cot_step=k,
        )
        path, entry = _write(out_dir, f"{tag}__cot_step{k}.hnav", header, tensor)
        written.append(path)
        entries.append(entry)
    _update_manifest(out_dir, entries)
    return written
