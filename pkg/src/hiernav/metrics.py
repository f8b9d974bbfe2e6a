"""Path matching scores, majority voting, and accuracy statistics.

All functions here are pure and total over inputs that satisfy their stated
preconditions; harmonic means use the 0-when-both-zero convention so no
output is ever NaN.
"""

from __future__ import annotations

import statistics
from collections import Counter
from dataclasses import dataclass
from enum import IntEnum
from typing import Hashable, Sequence

Label = Hashable

RUNS = 3


class MetricsError(Exception):
    pass


class EmptyTruth(MetricsError):
    def __init__(self) -> None:
        super().__init__("ground truth must be nonempty")


class WrongArity(MetricsError):
    def __init__(self, got: int):
        self.got = got
        super().__init__(f"expected exactly {RUNS} entries, got {got}")


class ShapeMismatch(MetricsError):
    pass


def _harmonic(x: float, y: float) -> float:
    if x + y == 0:
        return 0.0
    return 2.0 * x * y / (x + y)


def ancestor_f1(
    predicted: set[str], truth: set[str]
) -> tuple[float, float, float]:
    """Precision, recall and F1 of a predicted ancestor set against truth."""
    if not truth:
        raise EmptyTruth()
    hits = len(predicted & truth)
    precision = hits / len(predicted) if predicted else 0.0
    recall = hits / len(truth)
    return precision, recall, _harmonic(precision, recall)


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    """Longest-common-subsequence length via the two-row DP recurrence."""
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for item in a:
        row = [0]
        for j, other in enumerate(b, start=1):
            if item == other:
                row.append(prev[j - 1] + 1)
            else:
                row.append(max(prev[j], row[j - 1]))
        prev = row
    return prev[-1]


def css(predicted: Sequence[str], truth: Sequence[str]) -> float:
    """Common-subsequence score: LCS length over the truth length."""
    if not truth:
        raise EmptyTruth()
    return lcs_length(predicted, truth) / len(truth)


@dataclass(frozen=True)
class PathScore:
    precision: float
    recall: float
    f1: float
    css: float
    pms: float


ZERO_SCORE = PathScore(0.0, 0.0, 0.0, 0.0, 0.0)


def _dedup(seq: Sequence[str]) -> list[str]:
    # Keep first occurrences only; order is irrelevant for the set step but
    # a stable rule makes behaviour reproducible.
    seen: set[str] = set()
    out: list[str] = []
    for item in seq:
        if item not in seen:
            seen.add(item)
            out.append(item)
    return out


def path_matching_score(
    predicted: Sequence[str], truth: Sequence[str]
) -> PathScore:
    """Score a predicted ancestor path against the ground-truth path.

    F1 is computed over the deduplicated code sets, CSS over the raw
    sequences, and PMS is their harmonic mean.
    """
    if not truth:
        raise EmptyTruth()
    precision, recall, f1 = ancestor_f1(set(_dedup(predicted)), set(truth))
    sequence_score = css(predicted, truth)
    return PathScore(
        precision=precision,
        recall=recall,
        f1=f1,
        css=sequence_score,
        pms=_harmonic(f1, sequence_score),
    )


def pair_path_score(
    predicted_a: Sequence[str],
    predicted_b: Sequence[str],
    truth_a: Sequence[str],
    truth_b: Sequence[str],
) -> PathScore:
    """Pooled score for a two-path answer (one path per query code).

    Set components pool the union of both ancestor sets; the sequence
    component sums LCS lengths over the summed truth lengths. With one path
    empty on both sides this reduces to :func:`path_matching_score`.
    """
    if not truth_a and not truth_b:
        raise EmptyTruth()
    pred_union = set(_dedup(predicted_a)) | set(_dedup(predicted_b))
    truth_union = set(truth_a) | set(truth_b)
    precision, recall, f1 = ancestor_f1(pred_union, truth_union)
    lcs_total = lcs_length(predicted_a, truth_a) + lcs_length(predicted_b, truth_b)
    sequence_score = lcs_total / (len(truth_a) + len(truth_b))
    return PathScore(
        precision=precision,
        recall=recall,
        f1=f1,
        css=sequence_score,
        pms=_harmonic(f1, sequence_score),
    )


def majority_vote(answers: Sequence[Label | None]) -> Label | None:
    """Label held by at least 2 of the 3 runs; None when unresolved.

    Unparseable runs are passed as None and can never win the vote.
    """
    if len(answers) != RUNS:
        raise WrongArity(len(answers))
    counts = Counter(a for a in answers if a is not None)
    for label, count in counts.most_common(1):
        if count >= 2:
            return label
    return None


class VoteCategory(IntEnum):
    """Number of runs (out of 3) that answered correctly."""

    ALL_INCORRECT = 0
    MAJORITY_INCORRECT = 1
    MAJORITY_CORRECT = 2
    ALL_CORRECT = 3


def vote_category(answers: Sequence[Label | None], truth: Label) -> VoteCategory:
    if len(answers) != RUNS:
        raise WrongArity(len(answers))
    return VoteCategory(sum(1 for a in answers if a == truth))


def vote_distribution(
    categories: Sequence[VoteCategory],
) -> dict[VoteCategory, int]:
    """Counts per category; every category key is present, possibly zero."""
    counts = Counter(categories)
    return {cat: counts.get(cat, 0) for cat in VoteCategory}


@dataclass(frozen=True)
class AccuracyStats:
    mean: float
    std: float
    majority_vote: float
    per_run: tuple[float, float, float]


def accuracy_stats(
    correctness: Sequence[Sequence[bool]],
    votes: Sequence[Label | None],
    truths: Sequence[Label],
) -> AccuracyStats:
    """Aggregate per-run and majority-voted accuracy over a question set.

    `correctness` holds one row per question with exactly 3 booleans;
    `votes` holds each question's majority-voted label (None when
    unresolved, which scores as incorrect) aligned with `truths`.
    """
    n = len(correctness)
    if n == 0:
        raise ShapeMismatch("no questions")
    if len(votes) != n or len(truths) != n:
        raise ShapeMismatch(
            f"rows={n} votes={len(votes)} truths={len(truths)}"
        )
    for row in correctness:
        if len(row) != RUNS:
            raise WrongArity(len(row))
    per_run = tuple(
        sum(1 for row in correctness if row[run]) / n for run in range(RUNS)
    )
    majority = sum(
        1 for vote, truth in zip(votes, truths) if vote is not None and vote == truth
    ) / n
    return AccuracyStats(
        mean=statistics.fmean(per_run),
        std=statistics.pstdev(per_run),
        majority_vote=majority,
        per_run=per_run,  # type: ignore[arg-type]
    )
