"""Prompt rendering and response parsing.

Template texts live as package assets under ``templates/`` so their bytes
can be audited and digest-pinned; nothing here inlines prompt prose. Parsing
is a per-template cascade of extraction rules; anything the cascade cannot
resolve becomes an Unparseable value rather than an error.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from importlib import resources
from typing import Any, Mapping

CHOICE_LETTERS = ("A", "B", "C", "D")

QUESTION_SLOT = "[... Insert Question Text Here ...]"

# The two-code path-elicitation contract is not one of the fixed MCQ texts;
# bump this when its wording or required response lines change, so stored
# run records remain comparable.
NCA_PATH_CONTRACT_VERSION = 1


class PromptError(Exception):
    pass


class TaskTemplateMismatch(PromptError):
    def __init__(self, template: "PromptTemplate", task: Any):
        self.template = template
        super().__init__(
            f"template {template.value!r} cannot render {type(task).__name__}"
        )


class PromptTemplate(Enum):
    DIRECT_QA = "direct_qa"
    CHAIN_OF_THOUGHT = "chain_of_thought"
    STRUCTURED = "structured"
    NCA_PATH = "nca_path"


MCQ_TEMPLATES = (
    PromptTemplate.DIRECT_QA,
    PromptTemplate.CHAIN_OF_THOUGHT,
    PromptTemplate.STRUCTURED,
)


@lru_cache(maxsize=None)
def template_text(template: PromptTemplate) -> str:
    ref = resources.files("hiernav") / "templates" / f"{template.value}.txt"
    return ref.read_text(encoding="utf-8")


def template_digest(template: PromptTemplate) -> str:
    data = template_text(template).encode("utf-8")
    return hashlib.sha256(data).hexdigest()


@lru_cache(maxsize=None)
def reference_digests() -> dict[str, str]:
    """Pinned digests shipped with the package, keyed by template name."""
    ref = resources.files("hiernav") / "templates" / "digests.json"
    return json.loads(ref.read_text(encoding="utf-8"))


def mcq_block(question: str, options: Mapping[str, str]) -> str:
    """Question text plus the four lettered options, one per line."""
    lines = [question]
    for letter in CHOICE_LETTERS:
        lines.append(f"{letter}. {options[letter]}")
    return "\n".join(lines)


def render(template: PromptTemplate, task: Any) -> str:
    """Fill `template` with `task`; pure, so equal inputs give equal bytes."""
    if template in MCQ_TEMPLATES:
        question = getattr(task, "question", None)
        options = getattr(task, "options", None)
        if question is None or options is None:
            raise TaskTemplateMismatch(template, task)
        return template_text(template).replace(
            QUESTION_SLOT, mcq_block(question, options)
        )
    system = getattr(task, "system", None)
    code_a = getattr(task, "code_a", None)
    code_b = getattr(task, "code_b", None)
    if system is None or code_a is None or code_b is None:
        raise TaskTemplateMismatch(template, task)
    return template_text(template).format(
        system=system, code_a=code_a, code_b=code_b
    )


class AnswerKind(Enum):
    CHOICE = "choice"
    PATH = "path"
    UNPARSEABLE = "unparseable"


@dataclass(frozen=True)
class ParsedAnswer:
    kind: AnswerKind
    raw: str
    choice: str | None = None
    nca: str | None = None
    path_a: tuple[str, ...] = field(default=())
    path_b: tuple[str, ...] = field(default=())

    @classmethod
    def of_choice(cls, letter: str, raw: str) -> "ParsedAnswer":
        return cls(kind=AnswerKind.CHOICE, raw=raw, choice=letter.upper())

    @classmethod
    def of_path(
        cls, nca: str, path_a: tuple[str, ...], path_b: tuple[str, ...], raw: str
    ) -> "ParsedAnswer":
        return cls(
            kind=AnswerKind.PATH, raw=raw, nca=nca, path_a=path_a, path_b=path_b
        )

    @classmethod
    def unparseable(cls, raw: str) -> "ParsedAnswer":
        return cls(kind=AnswerKind.UNPARSEABLE, raw=raw)


# A letter only counts when not glued to a word or to the A/B/C/D scaffold
# that the templates themselves echo ("[A/B/C/D]", "<A/B/C/D>").
_FINAL_RE = re.compile(
    r"final\s+answer\s*[:\-]?\s*\**\[?\s*([A-Da-d])(?![\w/])", re.IGNORECASE
)
_ANSWER_RE = re.compile(
    r"\banswer\s*[:\-]\s*\**[<\[]?\s*([A-Da-d])(?![\w/])", re.IGNORECASE
)
_STANDALONE_RE = re.compile(r"(?<![\w/])([A-Da-d])(?![\w/])")

_THINK_RE = re.compile(r"<think>.*?</think>", re.IGNORECASE | re.DOTALL)
_OPEN_THINK_RE = re.compile(r"<think>.*\Z", re.IGNORECASE | re.DOTALL)
_FENCE_RE = re.compile(r"^\s*```[^\n]*$", re.MULTILINE)
_ROLE_RE = re.compile(r"\A\s*(assistant|ai|model)\s*:\s*", re.IGNORECASE)

_CASCADES: dict[PromptTemplate, tuple[re.Pattern[str], ...]] = {
    PromptTemplate.STRUCTURED: (_FINAL_RE, _ANSWER_RE),
    PromptTemplate.CHAIN_OF_THOUGHT: (_ANSWER_RE, _FINAL_RE),
    PromptTemplate.DIRECT_QA: (_STANDALONE_RE, _ANSWER_RE, _FINAL_RE),
}


def _preprocess(raw: str) -> str:
    text = _THINK_RE.sub("", raw)
    text = _OPEN_THINK_RE.sub("", text)
    text = _FENCE_RE.sub("", text)
    text = _ROLE_RE.sub("", text)
    return text


def parse_choice(template: PromptTemplate, raw: str) -> ParsedAnswer:
    """Extract an A-D choice; first match of the template's cascade wins."""
    if template not in _CASCADES:
        raise TaskTemplateMismatch(template, raw)
    text = _preprocess(raw)
    for pattern in _CASCADES[template]:
        match = pattern.search(text)
        if match:
            return ParsedAnswer.of_choice(match.group(1), raw)
    return ParsedAnswer.unparseable(raw)


_NCA_LINE_RE = re.compile(r"^\s*NCA\s*:\s*(.+?)\s*$", re.IGNORECASE | re.MULTILINE)
_PATH_LINE_RES = {
    "a": re.compile(r"^\s*PATH_A\s*:\s*(.+?)\s*$", re.IGNORECASE | re.MULTILINE),
    "b": re.compile(r"^\s*PATH_B\s*:\s*(.+?)\s*$", re.IGNORECASE | re.MULTILINE),
}


def _split_path(value: str) -> tuple[str, ...]:
    # Trim around the ">" separators only; internal spaces stay part of the
    # code token.
    return tuple(tok for tok in (piece.strip() for piece in value.split(">")) if tok)


def _first_real_value(pattern: re.Pattern[str], text: str) -> str | None:
    # Responses sometimes echo the "<placeholder>"-style scaffold lines
    # before answering; skip values that still look like placeholders.
    for match in pattern.finditer(text):
        value = match.group(1).strip()
        if value and not value.startswith("<"):
            return value
    return None


def parse_path(raw: str) -> ParsedAnswer:
    """Extract the NCA line and both PATH lines; all three are required."""
    text = _preprocess(raw)
    nca = _first_real_value(_NCA_LINE_RE, text)
    value_a = _first_real_value(_PATH_LINE_RES["a"], text)
    value_b = _first_real_value(_PATH_LINE_RES["b"], text)
    if nca is None or value_a is None or value_b is None:
        return ParsedAnswer.unparseable(raw)
    path_a = _split_path(value_a)
    path_b = _split_path(value_b)
    if not path_a or not path_b:
        return ParsedAnswer.unparseable(raw)
    return ParsedAnswer.of_path(nca, path_a, path_b, raw)
