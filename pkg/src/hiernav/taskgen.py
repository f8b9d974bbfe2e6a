"""Evaluation item construction.

Four item families: multiple-choice description questions (loaded from disk
or synthesized from a taxonomy), nearest-common-ancestor tasks stratified by
complexity band, description probes, and cumulative chain-of-thought step
series. All generation is seeded and reproducible bit-for-bit.
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .lineio import LineParseError, iter_records, write_records
from .taxonomy import ComplexityBand, Taxonomy, band_of

CHOICE_LETTERS = ("A", "B", "C", "D")

PROBE_QUESTION = "What is the description of the medical code {code} in {system}?"
PROBE_ANSWER = "The description of the medical code {code} in {system} is {description}."

COT_LEAD_IN = "hmm let me think."
COT_JOINER = ", and "

# Pair enumeration switches from exhaustive scan to rejection sampling above
# this node count; below it every quota failure is provable.
EXHAUSTIVE_PAIR_LIMIT = 2000

_QUESTION_CODE_RE = re.compile(
    r"^What is the description of the medical code (.+) in (.+)\?$"
)


class TaskGenError(Exception):
    pass


class ParseError(TaskGenError):
    def __init__(self, lineno: int, reason: str):
        self.lineno = lineno
        self.reason = reason
        super().__init__(f"line {lineno}: {reason}")


class MissingOption(TaskGenError):
    def __init__(self, task_id: str, letter: str):
        self.task_id = task_id
        self.letter = letter
        super().__init__(f"task {task_id!r} lacks option {letter}")


class BadAnswerKey(TaskGenError):
    def __init__(self, task_id: str, key: Any):
        self.task_id = task_id
        self.key = key
        super().__init__(f"task {task_id!r} has answer key {key!r}")


class InsufficientNodes(TaskGenError):
    pass


class QuotaUnsatisfiable(TaskGenError):
    def __init__(self, band: ComplexityBand, available: int, wanted: int):
        self.band = band
        self.available = available
        self.wanted = wanted
        super().__init__(
            f"band {band.value}: {available} eligible pairs, quota {wanted}"
        )


class InsufficientItems(TaskGenError):
    def __init__(self, system: str, available: int, wanted: int):
        self.system = system
        super().__init__(
            f"system {system!r}: {available} items available, {wanted} requested"
        )


class DepthMismatch(TaskGenError):
    def __init__(self, code: str, have: int, need: int):
        self.code = code
        self.have = have
        self.need = need
        super().__init__(
            f"code {code!r} has a chain of {have} nodes, series needs {need}"
        )


@dataclass(frozen=True)
class McqTask:
    id: str
    system: str
    question: str
    options: dict[str, str]
    answer_key: str
    band: ComplexityBand | None = None

    def to_record(self) -> dict[str, Any]:
        record: dict[str, Any] = {
            "id": self.id,
            "system": self.system,
            "question": self.question,
            "options": dict(self.options),
            "answer_key": self.answer_key,
        }
        if self.band is not None:
            record["band"] = self.band.value
        return record


@dataclass(frozen=True)
class NcaTask:
    id: str
    system: str
    code_a: str
    code_b: str
    truth_nca: str
    truth_path_a: tuple[str, ...]
    truth_path_b: tuple[str, ...]
    complexity: int
    band: ComplexityBand

    def to_record(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "system": self.system,
            "code_a": self.code_a,
            "code_b": self.code_b,
            "truth_nca": self.truth_nca,
            "truth_path_a": list(self.truth_path_a),
            "truth_path_b": list(self.truth_path_b),
            "complexity": self.complexity,
            "band": self.band.value,
        }


@dataclass(frozen=True)
class Probe:
    id: str
    system: str
    code: str
    question: str
    answer_statement: str

    def to_record(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "system": self.system,
            "code": self.code,
            "question": self.question,
            "answer_statement": self.answer_statement,
        }


@dataclass(frozen=True)
class CotSeries:
    probe_id: str
    system: str
    code: str
    steps: tuple[str, ...]
    joiner: str = COT_JOINER

    @property
    def step_count(self) -> int:
        return len(self.steps)

    def to_record(self) -> dict[str, Any]:
        return {
            "probe_id": self.probe_id,
            "system": self.system,
            "code": self.code,
            "steps": list(self.steps),
            "joiner": self.joiner,
        }


def mcq_from_record(record: Mapping[str, Any], lineno: int = 0) -> McqTask:
    try:
        task_id = str(record["id"])
        system = str(record["system"])
        question = str(record["question"])
        raw_options = record["options"]
        answer_key = record["answer_key"]
    except KeyError as missing:
        raise ParseError(lineno, f"missing field {missing.args[0]!r}") from None
    if not isinstance(raw_options, Mapping):
        raise ParseError(lineno, "options must be a mapping")
    options: dict[str, str] = {}
    for letter in CHOICE_LETTERS:
        if letter not in raw_options:
            raise MissingOption(task_id, letter)
        options[letter] = str(raw_options[letter])
    extras = set(raw_options) - set(CHOICE_LETTERS)
    if extras:
        raise ParseError(lineno, f"unexpected option letters {sorted(extras)}")
    if len(set(options.values())) != len(CHOICE_LETTERS):
        raise ParseError(lineno, "option texts must be pairwise distinct")
    if answer_key not in CHOICE_LETTERS:
        raise BadAnswerKey(task_id, answer_key)
    band_value = record.get("band")
    band = ComplexityBand(band_value) if band_value is not None else None
    return McqTask(
        id=task_id,
        system=system,
        question=question,
        options=options,
        answer_key=answer_key,
        band=band,
    )


def load_mcq_dataset(path: str | Path) -> list[McqTask]:
    """Load one task per line, validating structure as it goes."""
    tasks = []
    try:
        for lineno, record in iter_records(path):
            tasks.append(mcq_from_record(record, lineno))
    except LineParseError as err:
        raise ParseError(err.lineno, err.reason) from err
    return tasks


def by_system(tasks: Iterable[McqTask]) -> dict[str, list[McqTask]]:
    grouped: dict[str, list[McqTask]] = {}
    for task in tasks:
        grouped.setdefault(task.system, []).append(task)
    return grouped


def nca_from_record(record: Mapping[str, Any]) -> NcaTask:
    return NcaTask(
        id=str(record["id"]),
        system=str(record["system"]),
        code_a=str(record["code_a"]),
        code_b=str(record["code_b"]),
        truth_nca=str(record["truth_nca"]),
        truth_path_a=tuple(record["truth_path_a"]),
        truth_path_b=tuple(record["truth_path_b"]),
        complexity=int(record["complexity"]),
        band=ComplexityBand(record["band"]),
    )


def probe_from_record(record: Mapping[str, Any]) -> Probe:
    return Probe(
        id=str(record["id"]),
        system=str(record["system"]),
        code=str(record["code"]),
        question=str(record["question"]),
        answer_statement=str(record["answer_statement"]),
    )


def cot_from_record(record: Mapping[str, Any]) -> CotSeries:
    return CotSeries(
        probe_id=str(record["probe_id"]),
        system=str(record["system"]),
        code=str(record["code"]),
        steps=tuple(record["steps"]),
        joiner=str(record.get("joiner", COT_JOINER)),
    )


def save_tasks(path: str | Path, tasks: Iterable[Any]) -> None:
    write_records(path, (task.to_record() for task in tasks))


def load_nca_tasks(path: str | Path) -> list[NcaTask]:
    return [nca_from_record(record) for _, record in iter_records(path)]


def load_probes(path: str | Path) -> list[Probe]:
    return [probe_from_record(record) for _, record in iter_records(path)]


def load_cot_series(path: str | Path) -> list[CotSeries]:
    return [cot_from_record(record) for _, record in iter_records(path)]


def _distractor_tiers(taxonomy: Taxonomy, code: str) -> list[list[str]]:
    node = taxonomy.node(code)
    siblings = [
        c for c in (taxonomy.children(node.parent) if node.parent else taxonomy.roots)
        if c != code
    ]
    same_depth = [
        c
        for c, n in taxonomy.nodes.items()
        if n.depth == node.depth and c != code and c not in siblings
    ]
    rest = [
        c
        for c in taxonomy.nodes
        if c != code and c not in siblings and c not in same_depth
    ]
    return [sorted(siblings), sorted(same_depth), sorted(rest)]


def gen_description_mcq(
    taxonomy: Taxonomy,
    rng_seed: int,
    n: int,
    distractor_policy: str = "sibling-first",
) -> list[McqTask]:
    """Synthesize `n` description questions over the taxonomy's leaves.

    Distractors are other nodes' descriptions, preferring siblings, then
    same-depth nodes, then anything else. Answer letters are assigned
    round-robin before the final order shuffle, so any n divisible by 4
    carries a perfectly balanced key distribution.
    """
    if distractor_policy != "sibling-first":
        raise ValueError(f"unknown distractor policy {distractor_policy!r}")
    leaves = taxonomy.leaves()
    if len(leaves) < 4:
        raise InsufficientNodes(f"need at least 4 leaves, have {len(leaves)}")
    if n > len(leaves):
        raise InsufficientNodes(f"requested {n} tasks from {len(leaves)} leaves")
    rng = random.Random(rng_seed)
    targets = rng.sample(leaves, n)

    tasks = []
    for index, code in enumerate(targets):
        answer_text = taxonomy.node(code).description
        taken = {answer_text}
        distractors: list[str] = []
        for tier in _distractor_tiers(taxonomy, code):
            rng.shuffle(tier)
            for candidate in tier:
                text = taxonomy.node(candidate).description
                if text in taken:
                    continue
                taken.add(text)
                distractors.append(text)
                if len(distractors) == 3:
                    break
            if len(distractors) == 3:
                break
        if len(distractors) < 3:
            raise InsufficientNodes(
                f"only {len(distractors)} distinct distractor texts for {code!r}"
            )
        answer_key = CHOICE_LETTERS[index % 4]
        options = dict.fromkeys(CHOICE_LETTERS, "")
        options[answer_key] = answer_text
        filler = iter(distractors)
        for letter in CHOICE_LETTERS:
            if letter != answer_key:
                options[letter] = next(filler)
        tasks.append(
            McqTask(
                id=f"mcq-{taxonomy.system.id}-{index:05d}",
                system=taxonomy.system.id,
                question=PROBE_QUESTION.format(code=code, system=taxonomy.system.id),
                options=options,
                answer_key=answer_key,
            )
        )
    rng.shuffle(tasks)
    return tasks


def _make_nca_task(taxonomy: Taxonomy, code_a: str, code_b: str) -> NcaTask:
    complexity = taxonomy.retrieval_complexity(code_a, code_b)
    return NcaTask(
        id=f"nca-{taxonomy.system.id}-{code_a}-{code_b}",
        system=taxonomy.system.id,
        code_a=code_a,
        code_b=code_b,
        truth_nca=taxonomy.nearest_common_ancestor(code_a, code_b),
        truth_path_a=tuple(taxonomy.ancestors(code_a)),
        truth_path_b=tuple(taxonomy.ancestors(code_b)),
        complexity=complexity,
        band=band_of(complexity),
    )


def _pair_eligible(taxonomy: Taxonomy, a: str, b: str) -> bool:
    if a == b:
        return False
    if taxonomy.is_ancestor(a, b) or taxonomy.is_ancestor(b, a):
        return False
    try:
        taxonomy.nearest_common_ancestor(a, b)
    except Exception:
        return False
    return True


def gen_nca_tasks(
    taxonomy: Taxonomy,
    rng_seed: int,
    quota_per_band: Mapping[ComplexityBand, int],
) -> list[NcaTask]:
    """Draw per-band quotas of code pairs, excluding degenerate relations.

    Self pairs and ancestor/descendant pairs never appear. On taxonomies
    small enough for an exhaustive pair scan an unsatisfiable quota is
    provable; larger ones fall back to capped rejection sampling.
    """
    rng = random.Random(rng_seed)
    codes = sorted(taxonomy.nodes)
    pools: dict[ComplexityBand, list[tuple[str, str]]] = {
        band: [] for band in ComplexityBand
    }
    wanted = {band: int(quota_per_band.get(band, 0)) for band in ComplexityBand}

    if len(codes) <= EXHAUSTIVE_PAIR_LIMIT:
        for i, a in enumerate(codes):
            for b in codes[i + 1:]:
                if _pair_eligible(taxonomy, a, b):
                    complexity = taxonomy.retrieval_complexity(a, b)
                    pools[band_of(complexity)].append((a, b))
        for band, quota in wanted.items():
            if len(pools[band]) < quota:
                raise QuotaUnsatisfiable(band, len(pools[band]), quota)
        chosen = [
            pair
            for band, quota in wanted.items()
            for pair in rng.sample(pools[band], quota)
        ]
    else:
        # Rejection sampling with a generous cap; a cap hit is reported as
        # unsatisfiable even though a pair might exist in principle.
        need = dict(wanted)
        seen: set[tuple[str, str]] = set()
        attempts = 0
        cap = 200 * max(1, sum(wanted.values()))
        while any(count > 0 for count in need.values()) and attempts < cap:
            attempts += 1
            a, b = rng.choice(codes), rng.choice(codes)
            if a > b:
                a, b = b, a
            if (a, b) in seen or not _pair_eligible(taxonomy, a, b):
                continue
            complexity = taxonomy.retrieval_complexity(a, b)
            band = band_of(complexity)
            if need[band] > 0:
                seen.add((a, b))
                pools[band].append((a, b))
                need[band] -= 1
        for band, remaining in need.items():
            if remaining > 0:
                raise QuotaUnsatisfiable(band, len(pools[band]), wanted[band])
        chosen = [pair for band in ComplexityBand for pair in pools[band]]

    return [_make_nca_task(taxonomy, a, b) for a, b in chosen]


def _probe_items_from_taxonomy(taxonomy: Taxonomy) -> dict[str, list[tuple[str, str]]]:
    items = [
        (code, taxonomy.node(code).description) for code in taxonomy.leaves()
    ]
    return {taxonomy.system.id: items}


def _probe_items_from_mcqs(tasks: Iterable[McqTask]) -> dict[str, list[tuple[str, str]]]:
    items: dict[str, list[tuple[str, str]]] = {}
    for task in tasks:
        match = _QUESTION_CODE_RE.match(task.question)
        if not match:
            continue
        code = match.group(1)
        items.setdefault(task.system, []).append((code, task.options[task.answer_key]))
    for pairs in items.values():
        pairs.sort()
    return items


def build_probes(
    source: Taxonomy | Iterable[McqTask],
    per_system: int,
    rng_seed: int,
) -> list[Probe]:
    """Sample `per_system` description probes from each system in `source`.

    Each system draws from its own seeded stream, so adding a system leaves
    the other systems' samples untouched.
    """
    if isinstance(source, Taxonomy):
        items_by_system = _probe_items_from_taxonomy(source)
    else:
        items_by_system = _probe_items_from_mcqs(source)
    probes = []
    for system in sorted(items_by_system):
        items = items_by_system[system]
        if len(items) < per_system:
            raise InsufficientItems(system, len(items), per_system)
        rng = random.Random(f"{rng_seed}:{system}")
        for code, description in sorted(rng.sample(items, per_system)):
            probes.append(
                Probe(
                    id=f"probe-{system}-{code}",
                    system=system,
                    code=code,
                    question=PROBE_QUESTION.format(code=code, system=system),
                    answer_statement=PROBE_ANSWER.format(
                        code=code, system=system, description=description
                    ),
                )
            )
    return probes


def required_steps_for(system: str) -> int:
    """Fixed series length per system; one deeper for ICD10PROC."""
    return 6 if system == "ICD10PROC" else 5


def eligible_cot_codes(taxonomy: Taxonomy, required_steps: int) -> list[str]:
    """Codes whose ancestor-or-self chain has exactly `required_steps` nodes."""
    return sorted(
        code
        for code, node in taxonomy.nodes.items()
        if node.depth + 1 == required_steps
    )


def build_cot_series(
    taxonomy: Taxonomy, probe: Probe, required_steps: int
) -> CotSeries:
    """Cumulative reasoning prompts walking the probe code's chain root-down.

    Step k appends the k-th chain node's clause, so every step is a strict
    prefix-extension of the one before it.
    """
    chain = taxonomy.ancestors(probe.code) + [probe.code]
    if len(chain) != required_steps:
        raise DepthMismatch(probe.code, len(chain), required_steps)
    clauses = [
        f"{code} refers to {taxonomy.node(code).description.lower()}"
        for code in chain
    ]
    steps = tuple(
        f"{probe.question} {COT_LEAD_IN} " + COT_JOINER.join(clauses[: k + 1])
        for k in range(required_steps)
    )
    return CotSeries(
        probe_id=probe.id,
        system=probe.system,
        code=probe.code,
        steps=steps,
    )
