"""Aggregation of run records into report tables.

A ReportBundle holds five flat row lists (per-cell accuracy, paired-model
deltas, vote-category distributions, band-stratified aggregates, and
per-question detail) plus a metadata record carrying every convention the
numbers depend on. Emission formats: a human-readable text table, delimited
files that round-trip losslessly, and a single structured-records file.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .gateway import DEFAULT_MAX_TOKENS
from .metrics import (
    PathScore,
    ZERO_SCORE,
    accuracy_stats,
    majority_vote,
    pair_path_score,
    vote_category,
    vote_distribution,
    VoteCategory,
)
from .orchestrator import RunRecord, Task, ValidationError
from .prompts import AnswerKind, PromptTemplate, reference_digests
from .taskgen import COT_JOINER, McqTask, NcaTask
from .taxonomy import ComplexityBand, Taxonomy

RUNS = 3

TABULAR_TEXT = "tabular-text"
DELIMITED = "delimited"
STRUCTURED_RECORDS = "structured-records"
ALL_FORMATS = (TABULAR_TEXT, DELIMITED, STRUCTURED_RECORDS)


class ReportError(Exception):
    pass


class MissingRecords(ReportError):
    def __init__(self, cells: list[tuple[str, str, str, int]]):
        self.cells = cells
        preview = ", ".join(map(str, cells[:5]))
        suffix = "..." if len(cells) > 5 else ""
        super().__init__(f"{len(cells)} missing run records: {preview}{suffix}")


class TaxonomyRequired(ReportError):
    def __init__(self) -> None:
        super().__init__("path-template records cannot be scored without a taxonomy")


class IoError(ReportError):
    pass


@dataclass
class ReportBundle:
    accuracy_rows: list[dict[str, Any]]
    delta_rows: list[dict[str, Any]]
    vote_rows: list[dict[str, Any]]
    band_rows: list[dict[str, Any]]
    question_rows: list[dict[str, Any]]
    metadata: dict[str, Any] = field(default_factory=dict)

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "accuracy_rows": self.accuracy_rows,
            "delta_rows": self.delta_rows,
            "vote_rows": self.vote_rows,
            "band_rows": self.band_rows,
            "question_rows": self.question_rows,
            "metadata": self.metadata,
        }

    @classmethod
    def from_json_dict(cls, payload: Mapping[str, Any]) -> "ReportBundle":
        return cls(
            accuracy_rows=list(payload["accuracy_rows"]),
            delta_rows=list(payload["delta_rows"]),
            vote_rows=list(payload["vote_rows"]),
            band_rows=list(payload["band_rows"]),
            question_rows=list(payload["question_rows"]),
            metadata=dict(payload["metadata"]),
        )


def _is_path_template(template: PromptTemplate) -> bool:
    return template is PromptTemplate.NCA_PATH


def _eligible(template: PromptTemplate, task: Task) -> bool:
    if _is_path_template(template):
        return isinstance(task, NcaTask)
    return isinstance(task, McqTask)


def _mean_scores(scores: Sequence[PathScore]) -> PathScore:
    n = len(scores)
    return PathScore(
        precision=sum(s.precision for s in scores) / n,
        recall=sum(s.recall for s in scores) / n,
        f1=sum(s.f1 for s in scores) / n,
        css=sum(s.css for s in scores) / n,
        pms=sum(s.pms for s in scores) / n,
    )


def _check_taxonomy_truth(task: NcaTask, taxonomy: Taxonomy) -> tuple[list[str], list[str]]:
    truth_a = taxonomy.ancestors(task.code_a)
    truth_b = taxonomy.ancestors(task.code_b)
    fresh_nca = taxonomy.nearest_common_ancestor(task.code_a, task.code_b)
    if (
        fresh_nca != task.truth_nca
        or tuple(truth_a) != task.truth_path_a
        or tuple(truth_b) != task.truth_path_b
    ):
        raise ValidationError(
            [f"task {task.id!r} disagrees with the supplied taxonomy"]
        )
    return truth_a, truth_b


def score_experiment(
    records: Sequence[RunRecord],
    tasks: Sequence[Task],
    taxonomy: Taxonomy | None = None,
    *,
    partial: bool = False,
    pairs: Sequence[tuple[str, str]] = (),
    extra_metadata: Mapping[str, Any] | None = None,
) -> ReportBundle:
    """Aggregate run records into a ReportBundle.

    The expected grid is every (endpoint, template) seen in the records
    crossed with every eligible task and 3 runs; holes raise MissingRecords
    unless `partial`, in which case incomplete questions are skipped and
    counted in metadata.
    """
    if not records:
        raise ValidationError(["no run records to score"])
    task_map: dict[str, Task] = {task.id: task for task in tasks}
    unknown = sorted({r.question_id for r in records} - set(task_map))
    if unknown:
        raise ValidationError([f"records reference unknown tasks {unknown[:5]}"])
    experiment_ids = sorted({r.experiment_id for r in records})
    if len(experiment_ids) != 1:
        raise ValidationError([f"records mix experiments {experiment_ids}"])

    has_path_records = any(_is_path_template(r.template) for r in records)
    if has_path_records and taxonomy is None:
        raise TaxonomyRequired()

    by_cell: dict[tuple[str, str], dict[str, dict[int, RunRecord]]] = {}
    for record in records:
        cell = by_cell.setdefault((record.endpoint_id, record.template.value), {})
        cell.setdefault(record.question_id, {})[record.run_index] = record

    truth_paths: dict[str, tuple[list[str], list[str]]] = {}
    if taxonomy is not None:
        for task in tasks:
            if isinstance(task, NcaTask):
                truth_paths[task.id] = _check_taxonomy_truth(task, taxonomy)

    accuracy_rows: list[dict[str, Any]] = []
    vote_rows: list[dict[str, Any]] = []
    band_rows: list[dict[str, Any]] = []
    question_rows: list[dict[str, Any]] = []
    missing: list[tuple[str, str, str, int]] = []
    acc_index: dict[tuple[str, str], dict[str, float]] = {}

    for endpoint_id, template_value in sorted(by_cell):
        template = PromptTemplate(template_value)
        cell = by_cell[(endpoint_id, template_value)]
        eligible_ids = sorted(
            task_id for task_id, task in task_map.items() if _eligible(template, task)
        )
        complete_ids = []
        for task_id in eligible_ids:
            runs = cell.get(task_id, {})
            holes = [i for i in range(RUNS) if i not in runs]
            if holes:
                missing.extend(
                    (endpoint_id, template_value, task_id, i) for i in holes
                )
            else:
                complete_ids.append(task_id)
        if not complete_ids:
            continue

        correctness = []
        votes = []
        truths: list[str] = []
        categories = []
        unparseable = 0
        per_question_scores: dict[str, PathScore | None] = {}

        for task_id in complete_ids:
            task = task_map[task_id]
            runs = [cell[task_id][i] for i in range(RUNS)]
            unparseable += sum(
                1 for r in runs if r.parsed.kind is AnswerKind.UNPARSEABLE
            )
            correctness.append([r.correct for r in runs])
            if _is_path_template(template):
                assert isinstance(task, NcaTask)
                answers = [r.parsed.nca for r in runs]
                truth = task.truth_nca
                truth_a, truth_b = truth_paths[task_id]
                scores = [
                    pair_path_score(r.parsed.path_a, r.parsed.path_b, truth_a, truth_b)
                    if r.parsed.kind is AnswerKind.PATH
                    else ZERO_SCORE
                    for r in runs
                ]
                per_question_scores[task_id] = _mean_scores(scores)
            else:
                assert isinstance(task, McqTask)
                answers = [r.parsed.choice for r in runs]
                truth = task.answer_key
                per_question_scores[task_id] = None
            votes.append(majority_vote(answers))
            truths.append(truth)
            categories.append(vote_category(answers, truth))

        stats = accuracy_stats(correctness, votes, truths)
        n = len(complete_ids)
        accuracy_rows.append(
            {
                "endpoint_id": endpoint_id,
                "template": template_value,
                "n_questions": n,
                "accuracy_mean": stats.mean,
                "accuracy_std": stats.std,
                "accuracy_majority": stats.majority_vote,
                "accuracy_run0": stats.per_run[0],
                "accuracy_run1": stats.per_run[1],
                "accuracy_run2": stats.per_run[2],
                "unparseable_rate": unparseable / (RUNS * n),
            }
        )
        acc_index[(endpoint_id, template_value)] = {
            "mean": stats.mean,
            "majority": stats.majority_vote,
        }
        dist = vote_distribution(categories)
        vote_rows.append(
            {
                "endpoint_id": endpoint_id,
                "template": template_value,
                "all_incorrect": dist[VoteCategory.ALL_INCORRECT],
                "majority_incorrect": dist[VoteCategory.MAJORITY_INCORRECT],
                "majority_correct": dist[VoteCategory.MAJORITY_CORRECT],
                "all_correct": dist[VoteCategory.ALL_CORRECT],
                "total": n,
            }
        )

        banded: dict[str, list[str]] = {}
        for task_id in complete_ids:
            band = task_map[task_id].band
            if band is not None:
                banded.setdefault(band.value, []).append(task_id)
        for band_value in [b.value for b in ComplexityBand if b.value in banded]:
            ids = banded[band_value]
            positions = [complete_ids.index(i) for i in ids]
            band_stats = accuracy_stats(
                [correctness[pos] for pos in positions],
                [votes[pos] for pos in positions],
                [truths[pos] for pos in positions],
            )
            scores_in_band = [
                per_question_scores[i] for i in ids if per_question_scores[i]
            ]
            band_rows.append(
                {
                    "endpoint_id": endpoint_id,
                    "template": template_value,
                    "band": band_value,
                    "n_questions": len(ids),
                    "accuracy_mean": band_stats.mean,
                    "accuracy_majority": band_stats.majority_vote,
                    "pms_mean": (
                        sum(s.pms for s in scores_in_band) / len(scores_in_band)
                        if scores_in_band
                        else None
                    ),
                }
            )

        for pos, task_id in enumerate(complete_ids):
            task = task_map[task_id]
            score = per_question_scores[task_id]
            question_rows.append(
                {
                    "endpoint_id": endpoint_id,
                    "template": template_value,
                    "question_id": task_id,
                    "system": task.system,
                    "band": task.band.value if task.band is not None else None,
                    "p": score.precision if score else None,
                    "r": score.recall if score else None,
                    "f1": score.f1 if score else None,
                    "css": score.css if score else None,
                    "pms": score.pms if score else None,
                    "vote_category": int(categories[pos]),
                    "correct_run0": correctness[pos][0],
                    "correct_run1": correctness[pos][1],
                    "correct_run2": correctness[pos][2],
                }
            )

    if missing and not partial:
        raise MissingRecords(sorted(missing))

    delta_rows: list[dict[str, Any]] = []
    for endpoint_a, endpoint_b in pairs:
        templates = sorted(
            {t for (e, t) in acc_index if e == endpoint_a}
            & {t for (e, t) in acc_index if e == endpoint_b}
        )
        for template_value in templates:
            a = acc_index[(endpoint_a, template_value)]
            b = acc_index[(endpoint_b, template_value)]
            delta_rows.append(
                {
                    "endpoint_a": endpoint_a,
                    "endpoint_b": endpoint_b,
                    "template": template_value,
                    "delta_mean": b["mean"] - a["mean"],
                    "delta_majority": b["majority"] - a["majority"],
                }
            )

    metadata: dict[str, Any] = {
        "experiment_id": experiment_ids[0],
        "runs_per_question": RUNS,
        "std_convention": "population",
        "unresolved_votes": "scored incorrect",
        "duplicate_predicted_codes": "first occurrence kept for set metrics",
        "unparseable_responses": "scored zero and tallied",
        "nca_complexity_counts_common_node": True,
        "cot_joiner": COT_JOINER,
        "delta_direction": "second endpoint minus first",
        "max_tokens_defaults": {
            template.value: tokens for template, tokens in DEFAULT_MAX_TOKENS.items()
        },
        "template_digests": reference_digests(),
        "pairs": [list(pair) for pair in pairs],
        "partial": partial,
        "missing_cells": len(missing),
    }
    if extra_metadata:
        metadata.update(dict(extra_metadata))

    return ReportBundle(
        accuracy_rows=accuracy_rows,
        delta_rows=delta_rows,
        vote_rows=vote_rows,
        band_rows=band_rows,
        question_rows=question_rows,
        metadata=metadata,
    )


ACCURACY_COLUMNS: list[tuple[str, type]] = [
    ("endpoint_id", str), ("template", str), ("n_questions", int),
    ("accuracy_mean", float), ("accuracy_std", float),
    ("accuracy_majority", float), ("accuracy_run0", float),
    ("accuracy_run1", float), ("accuracy_run2", float),
    ("unparseable_rate", float),
]
DELTA_COLUMNS: list[tuple[str, type]] = [
    ("endpoint_a", str), ("endpoint_b", str), ("template", str),
    ("delta_mean", float), ("delta_majority", float),
]
VOTE_COLUMNS: list[tuple[str, type]] = [
    ("endpoint_id", str), ("template", str), ("all_incorrect", int),
    ("majority_incorrect", int), ("majority_correct", int),
    ("all_correct", int), ("total", int),
]
BAND_COLUMNS: list[tuple[str, type]] = [
    ("endpoint_id", str), ("template", str), ("band", str),
    ("n_questions", int), ("accuracy_mean", float),
    ("accuracy_majority", float), ("pms_mean", float),
]
QUESTION_COLUMNS: list[tuple[str, type]] = [
    ("endpoint_id", str), ("template", str), ("question_id", str),
    ("system", str), ("band", str), ("p", float), ("r", float),
    ("f1", float), ("css", float), ("pms", float), ("vote_category", int),
    ("correct_run0", bool), ("correct_run1", bool), ("correct_run2", bool),
]

TABLES: dict[str, list[tuple[str, type]]] = {
    "accuracy": ACCURACY_COLUMNS,
    "deltas": DELTA_COLUMNS,
    "votes": VOTE_COLUMNS,
    "bands": BAND_COLUMNS,
    "questions": QUESTION_COLUMNS,
}

_TABLE_ATTRS: dict[str, str] = {
    "accuracy": "accuracy_rows",
    "deltas": "delta_rows",
    "votes": "vote_rows",
    "bands": "band_rows",
    "questions": "question_rows",
}


def _encode_cell(value: Any, kind: type) -> str:
    if value is None:
        return ""
    if kind is bool:
        return "true" if value else "false"
    if kind is float:
        return repr(float(value))
    if kind is str:
        text = str(value)
        if not text or "\t" in text or "\n" in text:
            raise IoError(f"value {text!r} cannot be stored in a delimited cell")
        return text
    return str(value)


def _decode_cell(text: str, kind: type) -> Any:
    if text == "":
        return None
    if kind is bool:
        return text == "true"
    if kind is float:
        return float(text)
    if kind is int:
        return int(text)
    return text


def _write_delimited(bundle: ReportBundle, out_dir: Path) -> list[Path]:
    written = []
    for table, columns in TABLES.items():
        rows = getattr(bundle, _TABLE_ATTRS[table])
        path = out_dir / f"{table}.tsv"
        lines = ["\t".join(name for name, _ in columns)]
        for row in rows:
            lines.append(
                "\t".join(_encode_cell(row[name], kind) for name, kind in columns)
            )
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        written.append(path)
    meta_path = out_dir / "metadata.json"
    meta_path.write_text(
        json.dumps(bundle.metadata, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    written.append(meta_path)
    return written


def load_delimited(out_dir: str | Path) -> ReportBundle:
    out_dir = Path(out_dir)
    tables: dict[str, list[dict[str, Any]]] = {}
    for table, columns in TABLES.items():
        path = out_dir / f"{table}.tsv"
        lines = path.read_text(encoding="utf-8").splitlines()
        header = lines[0].split("\t")
        if header != [name for name, _ in columns]:
            raise IoError(f"{path} column header does not match the {table} schema")
        rows = []
        for line in lines[1:]:
            cells = line.split("\t")
            rows.append(
                {
                    name: _decode_cell(cell, kind)
                    for (name, kind), cell in zip(columns, cells)
                }
            )
        tables[table] = rows
    metadata = json.loads((out_dir / "metadata.json").read_text(encoding="utf-8"))
    return ReportBundle(
        accuracy_rows=tables["accuracy"],
        delta_rows=tables["deltas"],
        vote_rows=tables["votes"],
        band_rows=tables["bands"],
        question_rows=tables["questions"],
        metadata=metadata,
    )


def _write_structured(bundle: ReportBundle, out_dir: Path) -> list[Path]:
    path = out_dir / "bundle.json"
    path.write_text(
        json.dumps(bundle.to_json_dict(), sort_keys=True, indent=2) + "\n",
        encoding="utf-8",
    )
    return [path]


def load_bundle(path: str | Path) -> ReportBundle:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    return ReportBundle.from_json_dict(payload)


def _format_text_table(title: str, columns: list[tuple[str, type]], rows) -> str:
    headers = [name for name, _ in columns]
    rendered = [
        [_encode_cell(row[name], kind) or "-" for name, kind in columns]
        for row in rows
    ]
    widths = [
        max(len(headers[i]), *(len(r[i]) for r in rendered)) if rendered else len(headers[i])
        for i in range(len(headers))
    ]
    lines = [title, "  ".join(h.ljust(w) for h, w in zip(headers, widths))]
    for r in rendered:
        lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)))
    return "\n".join(lines)


def _write_tabular_text(bundle: ReportBundle, out_dir: Path) -> list[Path]:
    sections = []
    for table, columns in TABLES.items():
        rows = getattr(bundle, _TABLE_ATTRS[table])
        if rows:
            sections.append(_format_text_table(table.upper(), columns, rows))
    sections.append(
        "METADATA\n" + json.dumps(bundle.metadata, sort_keys=True, indent=2)
    )
    path = out_dir / "report.txt"
    path.write_text("\n\n".join(sections) + "\n", encoding="utf-8")
    return [path]


def emit_report(
    bundle: ReportBundle,
    out_dir: str | Path,
    formats: Iterable[str] = ALL_FORMATS,
) -> list[Path]:
    """Write the requested formats under `out_dir`; returns written paths."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        written: list[Path] = []
        for fmt in formats:
            if fmt == DELIMITED:
                written.extend(_write_delimited(bundle, out_dir))
            elif fmt == STRUCTURED_RECORDS:
                written.extend(_write_structured(bundle, out_dir))
            elif fmt == TABULAR_TEXT:
                written.extend(_write_tabular_text(bundle, out_dir))
            else:
                raise ValueError(f"unknown report format {fmt!r}")
        return written
    except OSError as exc:
        raise IoError(str(exc)) from exc
