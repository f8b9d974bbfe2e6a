"""Line-delimited record files: one JSON object per line, UTF-8, "#" comments."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Iterable, Iterator


class LineParseError(Exception):
    """A line of a record file is not a valid flat JSON object."""

    def __init__(self, path: str | Path, lineno: int, reason: str):
        self.path = str(path)
        self.lineno = lineno
        self.reason = reason
        super().__init__(f"{path}:{lineno}: {reason}")


def iter_records(path: str | Path) -> Iterator[tuple[int, dict[str, Any]]]:
    """Yield (lineno, record) pairs, skipping blank lines and "#" comments."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            try:
                obj = json.loads(stripped)
            except json.JSONDecodeError as exc:
                raise LineParseError(path, lineno, f"invalid JSON: {exc.msg}") from exc
            if not isinstance(obj, dict):
                raise LineParseError(path, lineno, "record is not an object")
            yield lineno, obj


def read_records(path: str | Path) -> list[dict[str, Any]]:
    return [rec for _, rec in iter_records(path)]


def dump_record(record: dict[str, Any]) -> str:
    """Serialize one record deterministically (sorted keys, compact separators)."""
    return json.dumps(record, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def write_records(path: str | Path, records: Iterable[dict[str, Any]]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(dump_record(record))
            fh.write("\n")


def append_record(path: str | Path, record: dict[str, Any]) -> None:
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(dump_record(record))
        fh.write("\n")
