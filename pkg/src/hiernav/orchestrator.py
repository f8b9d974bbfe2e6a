"""Experiment execution: tasks x templates x endpoints x 3 runs.

Run records land in an append-only line-delimited log, so an interrupted
experiment resumes by replaying the log into an index and executing only
the missing cells. The budget guard counts those missing cells up front and
refuses to start rather than die mid-flight.
"""

from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .gateway import (
    Completer,
    DEFAULT_MAX_TOKENS,
    GatewayError,
    ModelEndpoint,
    ResponseCache,
    SamplingConfig,
    cached_complete,
)
from .lineio import append_record, iter_records
from .prompts import (
    AnswerKind,
    ParsedAnswer,
    PromptTemplate,
    parse_choice,
    parse_path,
    render,
)
from .taskgen import McqTask, NcaTask

PROTOCOL_RUNS = 3

Task = McqTask | NcaTask


class OrchestratorError(Exception):
    pass


class ValidationError(OrchestratorError):
    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("; ".join(problems))


class BudgetExceeded(OrchestratorError):
    def __init__(self, missing: int, budget: int):
        self.missing = missing
        self.budget = budget
        super().__init__(f"{missing} live cells required, budget allows {budget}")


@dataclass(frozen=True)
class ExperimentSpec:
    id: str
    task_file: str
    templates: tuple[PromptTemplate, ...]
    endpoints: tuple[str, ...]
    runs: int = PROTOCOL_RUNS
    temperature: float = 0.8
    top_p: float = 0.7
    seed: int | None = None
    max_tokens: Mapping[PromptTemplate, int] | None = None
    systems: tuple[str, ...] | None = None
    bands: tuple[str, ...] | None = None
    budget: int | None = None
    allow_non_protocol_runs: bool = False

    def max_tokens_for(self, template: PromptTemplate) -> int:
        if self.max_tokens and template in self.max_tokens:
            return self.max_tokens[template]
        return DEFAULT_MAX_TOKENS[template]


def spec_from_record(record: Mapping[str, Any]) -> ExperimentSpec:
    problems = []
    templates = []
    for name in record.get("templates", []):
        try:
            templates.append(PromptTemplate(name))
        except ValueError:
            problems.append(f"unknown template {name!r}")
    if not templates:
        problems.append("no templates listed")
    endpoints = tuple(record.get("endpoints", []))
    if not endpoints:
        problems.append("no endpoints listed")
    if "id" not in record or "task_file" not in record:
        problems.append("id and task_file are required")
    if problems:
        raise ValidationError(problems)
    max_tokens = None
    if record.get("max_tokens"):
        max_tokens = {
            PromptTemplate(name): int(value)
            for name, value in record["max_tokens"].items()
        }
    return ExperimentSpec(
        id=str(record["id"]),
        task_file=str(record["task_file"]),
        templates=tuple(templates),
        endpoints=endpoints,
        runs=int(record.get("runs", PROTOCOL_RUNS)),
        temperature=float(record.get("temperature", 0.8)),
        top_p=float(record.get("top_p", 0.7)),
        seed=record.get("seed"),
        max_tokens=max_tokens,
        systems=tuple(record["systems"]) if record.get("systems") else None,
        bands=tuple(record["bands"]) if record.get("bands") else None,
        budget=record.get("budget"),
        allow_non_protocol_runs=bool(record.get("allow_non_protocol_runs", False)),
    )


def load_experiment_spec(path: str | Path) -> ExperimentSpec:
    records = [record for _, record in iter_records(path)]
    if len(records) != 1:
        raise ValidationError(
            [f"spec file must hold exactly one record, found {len(records)}"]
        )
    return spec_from_record(records[0])


def validate_spec(spec: ExperimentSpec, tasks: Sequence[Task]) -> None:
    problems = []
    if spec.runs != PROTOCOL_RUNS and not spec.allow_non_protocol_runs:
        problems.append(
            f"runs = {spec.runs} breaks the 3-run protocol; "
            "set allow_non_protocol_runs to override"
        )
    if spec.runs < 1 or spec.runs > PROTOCOL_RUNS:
        problems.append(f"runs must be in [1, {PROTOCOL_RUNS}]")
    mcq_templates = [t for t in spec.templates if t is not PromptTemplate.NCA_PATH]
    has_mcq = any(isinstance(t, McqTask) for t in tasks)
    has_nca = any(isinstance(t, NcaTask) for t in tasks)
    if mcq_templates and not has_mcq and has_nca:
        problems.append("choice templates listed but the task file has no MCQs")
    if PromptTemplate.NCA_PATH in spec.templates and not has_nca:
        problems.append("nca_path template listed but the task file has no NCA tasks")
    if not tasks:
        problems.append("task file is empty after filtering")
    if problems:
        raise ValidationError(problems)


def filter_tasks(spec: ExperimentSpec, tasks: Iterable[Task]) -> list[Task]:
    kept = []
    for task in tasks:
        if spec.systems is not None and task.system not in spec.systems:
            continue
        if spec.bands is not None:
            band = task.band.value if task.band is not None else None
            if band not in spec.bands:
                continue
        kept.append(task)
    return kept


def _templates_for(task: Task, spec: ExperimentSpec) -> list[PromptTemplate]:
    if isinstance(task, NcaTask):
        return [t for t in spec.templates if t is PromptTemplate.NCA_PATH]
    return [t for t in spec.templates if t is not PromptTemplate.NCA_PATH]


@dataclass(frozen=True)
class RunRecord:
    experiment_id: str
    question_id: str
    system: str
    endpoint_id: str
    template: PromptTemplate
    run_index: int
    prompt_digest: str
    response: str
    parsed: ParsedAnswer
    correct: bool
    latency_ms: float
    retries: int

    @property
    def key(self) -> tuple[str, str, str, int]:
        return (self.question_id, self.endpoint_id, self.template.value, self.run_index)

    def to_record(self) -> dict[str, Any]:
        return {
            "experiment_id": self.experiment_id,
            "question_id": self.question_id,
            "system": self.system,
            "endpoint_id": self.endpoint_id,
            "template": self.template.value,
            "run_index": self.run_index,
            "prompt_digest": self.prompt_digest,
            "response": self.response,
            "parsed_kind": self.parsed.kind.value,
            "choice": self.parsed.choice,
            "nca": self.parsed.nca,
            "path_a": list(self.parsed.path_a),
            "path_b": list(self.parsed.path_b),
            "correct": self.correct,
            "latency_ms": self.latency_ms,
            "retries": self.retries,
        }

    @classmethod
    def from_record(cls, record: Mapping[str, Any]) -> "RunRecord":
        kind = AnswerKind(record["parsed_kind"])
        parsed = ParsedAnswer(
            kind=kind,
            raw=str(record["response"]),
            choice=record.get("choice"),
            nca=record.get("nca"),
            path_a=tuple(record.get("path_a") or ()),
            path_b=tuple(record.get("path_b") or ()),
        )
        return cls(
            experiment_id=str(record["experiment_id"]),
            question_id=str(record["question_id"]),
            system=str(record["system"]),
            endpoint_id=str(record["endpoint_id"]),
            template=PromptTemplate(record["template"]),
            run_index=int(record["run_index"]),
            prompt_digest=str(record["prompt_digest"]),
            response=str(record["response"]),
            parsed=parsed,
            correct=bool(record["correct"]),
            latency_ms=float(record["latency_ms"]),
            retries=int(record["retries"]),
        )


class RecordLog:
    """Append-only run-record store with an in-memory key index."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._index: dict[tuple[str, str, str, int], RunRecord] = {}
        if self.path.exists():
            for _, raw in iter_records(self.path):
                record = RunRecord.from_record(raw)
                if record.key in self._index:
                    raise ValidationError(
                        [f"duplicate run record for cell {record.key}"]
                    )
                self._index[record.key] = record

    def __len__(self) -> int:
        return len(self._index)

    def __contains__(self, key: tuple[str, str, str, int]) -> bool:
        return key in self._index

    def records(self) -> list[RunRecord]:
        return sorted(self._index.values(), key=lambda r: r.key)

    def append(self, record: RunRecord) -> None:
        if record.key in self._index:
            raise ValidationError([f"cell {record.key} already recorded"])
        self.path.parent.mkdir(parents=True, exist_ok=True)
        append_record(self.path, record.to_record())
        self._index[record.key] = record


def load_run_records(path: str | Path) -> list[RunRecord]:
    return [RunRecord.from_record(raw) for _, raw in iter_records(path)]


@dataclass(frozen=True)
class CellFailure:
    question_id: str
    endpoint_id: str
    template: str
    run_index: int
    error: str


@dataclass
class RunSummary:
    executed: int
    resumed: int
    failures: list[CellFailure] = field(default_factory=list)

    @property
    def partial(self) -> bool:
        return bool(self.failures)


def _judge(task: Task, template: PromptTemplate, text: str) -> tuple[ParsedAnswer, bool]:
    if isinstance(task, NcaTask):
        parsed = parse_path(text)
        return parsed, parsed.nca == task.truth_nca
    parsed = parse_choice(template, text)
    return parsed, parsed.choice == task.answer_key


def run_experiment(
    spec: ExperimentSpec,
    tasks: Sequence[Task],
    completers: Mapping[str, tuple[ModelEndpoint, Completer]],
    log: RecordLog,
    cache: ResponseCache | None = None,
    parallel: int = 1,
) -> RunSummary:
    """Execute every missing cell of the experiment grid.

    Existing log entries are never re-executed. When `cache` is given, all
    calls go through it, so a re-run of a completed grid costs zero live
    calls. Per-cell gateway failures are collected, not fatal.
    """
    tasks = filter_tasks(spec, tasks)
    validate_spec(spec, tasks)
    missing_endpoints = [e for e in spec.endpoints if e not in completers]
    if missing_endpoints:
        raise ValidationError([f"no completer for endpoints {missing_endpoints}"])

    cells = []
    resumed = 0
    for task in tasks:
        for endpoint_id in spec.endpoints:
            for template in _templates_for(task, spec):
                for run_index in range(spec.runs):
                    key = (task.id, endpoint_id, template.value, run_index)
                    if key in log:
                        resumed += 1
                    else:
                        cells.append((task, endpoint_id, template, run_index))

    if spec.budget is not None and len(cells) > spec.budget:
        raise BudgetExceeded(len(cells), spec.budget)

    def execute(cell) -> RunRecord:
        task, endpoint_id, template, run_index = cell
        endpoint, completer = completers[endpoint_id]
        prompt = render(template, task)
        sampling = SamplingConfig(
            temperature=spec.temperature,
            top_p=spec.top_p,
            max_tokens=spec.max_tokens_for(template),
            run_index=run_index,
            seed=spec.seed,
        )
        if cache is not None:
            completion = cached_complete(completer, endpoint, prompt, sampling, cache)
        else:
            completion = completer.complete(endpoint, prompt, sampling)
        parsed, correct = _judge(task, template, completion.text)
        return RunRecord(
            experiment_id=spec.id,
            question_id=task.id,
            system=task.system,
            endpoint_id=endpoint_id,
            template=template,
            run_index=run_index,
            prompt_digest=hashlib.sha256(prompt.encode("utf-8")).hexdigest(),
            response=completion.text,
            parsed=parsed,
            correct=correct,
            latency_ms=completion.latency_ms,
            retries=completion.retries,
        )

    failures: list[CellFailure] = []
    executed = 0

    def note_failure(cell, error: Exception) -> None:
        task, endpoint_id, template, run_index = cell
        failures.append(
            CellFailure(
                question_id=task.id,
                endpoint_id=endpoint_id,
                template=template.value,
                run_index=run_index,
                error=str(error),
            )
        )

    if parallel <= 1:
        for cell in cells:
            try:
                log.append(execute(cell))
                executed += 1
            except GatewayError as exc:
                note_failure(cell, exc)
    else:
        with ThreadPoolExecutor(max_workers=parallel) as pool:
            futures = [(cell, pool.submit(execute, cell)) for cell in cells]
            for cell, future in futures:
                try:
                    log.append(future.result())
                    executed += 1
                except GatewayError as exc:
                    note_failure(cell, exc)

    return RunSummary(executed=executed, resumed=resumed, failures=failures)
