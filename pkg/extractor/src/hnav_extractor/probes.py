"""Probe and reasoning-series input files.

Both are newline-delimited JSON records; blank lines and '#' comments are
skipped. A probe pairs a question with its declarative answer statement; a
series carries the cumulative reasoning texts for one probe.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterator


class ProbeFileError(Exception):
    def __init__(self, path: str | Path, lineno: int, reason: str):
        self.path = str(path)
        self.lineno = lineno
        self.reason = reason
        super().__init__(f"{path}:{lineno}: {reason}")


@dataclass(frozen=True)
class Probe:
    id: str
    system: str
    code: str
    question: str
    answer_statement: str


@dataclass(frozen=True)
class CotSeries:
    probe_id: str
    system: str
    code: str
    steps: tuple[str, ...]
    joiner: str

    @property
    def step_count(self) -> int:
        return len(self.steps)


def _iter_json_lines(path: str | Path) -> Iterator[tuple[int, dict[str, Any]]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ProbeFileError(path, lineno, f"bad JSON: {exc.msg}") from exc
            if not isinstance(record, dict):
                raise ProbeFileError(path, lineno, "record must be an object")
            yield lineno, record


def _field(path: str | Path, lineno: int, record: dict[str, Any], name: str) -> Any:
    try:
        return record[name]
    except KeyError:
        raise ProbeFileError(path, lineno, f"missing field {name!r}") from None


def load_probes(path: str | Path) -> list[Probe]:
    probes = []
    seen: set[str] = set()
    for lineno, record in _iter_json_lines(path):
        probe = Probe(
            id=str(_field(path, lineno, record, "id")),
            system=str(_field(path, lineno, record, "system")),
            code=str(_field(path, lineno, record, "code")),
            question=str(_field(path, lineno, record, "question")),
            answer_statement=str(_field(path, lineno, record, "answer_statement")),
        )
        if probe.id in seen:
            raise ProbeFileError(path, lineno, f"duplicate probe id {probe.id!r}")
        seen.add(probe.id)
        probes.append(probe)
    return probes


def load_series(path: str | Path) -> list[CotSeries]:
    series = []
    seen: set[str] = set()
    for lineno, record in _iter_json_lines(path):
        steps = _field(path, lineno, record, "steps")
        if not isinstance(steps, list) or not all(isinstance(s, str) for s in steps):
            raise ProbeFileError(path, lineno, "steps must be a list of strings")
        if not steps:
            raise ProbeFileError(path, lineno, "steps must be nonempty")
        entry = CotSeries(
            probe_id=str(_field(path, lineno, record, "probe_id")),
            system=str(_field(path, lineno, record, "system")),
            code=str(_field(path, lineno, record, "code")),
            steps=tuple(steps),
            joiner=str(record.get("joiner", ", and ")),
        )
        if entry.probe_id in seen:
            raise ProbeFileError(path, lineno, f"duplicate series for {entry.probe_id!r}")
        seen.add(entry.probe_id)
        series.append(entry)
    return series
