"""Layer-wise similarity curves over activation dumps.

Cosine and L2 statistics are aggregated per layer across aligned probe
pairs. Arithmetic runs in float64; bitwise-identical vector pairs short-cut
to an exact cosine of 1.0 so self-comparison is noise-free, and zero-norm
vectors (for which cosine is undefined) are excluded from that layer's
aggregate with the exclusion visible in ``n_included``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .dumps import ActivationDump

COSINE_SIMILARITY = "cosine_similarity"
COSINE_DISTANCE = "cosine_distance"
L2 = "l2"

ALL_METRICS = (COSINE_SIMILARITY, COSINE_DISTANCE, L2)


class AnalysisError(Exception):
    pass


class ShapeMismatch(AnalysisError):
    def __init__(self, a: tuple, b: tuple):
        super().__init__(f"dump shapes differ: {a} vs {b}")


class ProbeSetMismatch(AnalysisError):
    def __init__(self, a: str, b: str):
        super().__init__(f"probe sets differ: {a!r} vs {b!r}")


class ZeroVector(AnalysisError):
    def __init__(self, layer: int):
        self.layer = layer
        super().__init__(f"every probe pair at layer {layer} has a zero vector")


class MissingSource(AnalysisError):
    def __init__(self, label: str):
        self.label = label
        super().__init__(f"comparison plan references unknown dump {label!r}")


@dataclass(frozen=True)
class SimilarityCurve:
    vocabulary: str
    comparison: str
    metric: str
    values: tuple[float, ...]
    n_included: tuple[int, ...]
    statistic: str = "mean"


def _check_aligned(a: ActivationDump, b: ActivationDump) -> None:
    if a.tensor.shape != b.tensor.shape:
        raise ShapeMismatch(a.tensor.shape, b.tensor.shape)
    if a.header.probe_set_id != b.header.probe_set_id:
        raise ProbeSetMismatch(a.header.probe_set_id, b.header.probe_set_id)


def _aggregate(values: np.ndarray, statistic: str) -> float:
    if statistic == "mean":
        return float(np.mean(values))
    if statistic == "median":
        return float(np.median(values))
    raise ValueError(f"unknown statistic {statistic!r}")


def _comparison_label(a: ActivationDump, b: ActivationDump) -> str:
    return f"{a.header.model_id}:{a.header.role.value}~{b.header.model_id}:{b.header.role.value}"


def layer_cosine(
    a: ActivationDump,
    b: ActivationDump,
    statistic: str = "mean",
    comparison: str | None = None,
) -> tuple[SimilarityCurve, SimilarityCurve]:
    """Per-layer aggregate cosine, as (similarity, one-minus-similarity).

    Both orientations of the same numbers are reported because downstream
    tables plot similarity while the distance form is what subtraction-style
    summaries consume.
    """
    _check_aligned(a, b)
    label = comparison if comparison is not None else _comparison_label(a, b)
    x = a.tensor.astype(np.float64)
    y = b.tensor.astype(np.float64)
    layers = x.shape[1]

    norms_x = np.linalg.norm(x, axis=2)
    norms_y = np.linalg.norm(y, axis=2)
    included = (norms_x > 0.0) & (norms_y > 0.0)  # (N, L)
    identical = np.all(a.tensor == b.tensor, axis=2)

    dots = np.einsum("nld,nld->nl", x, y)
    values = []
    counts = []
    for layer in range(layers):
        mask = included[:, layer]
        if not mask.any():
            raise ZeroVector(layer)
        cos = dots[mask, layer] / (norms_x[mask, layer] * norms_y[mask, layer])
        # Bitwise-equal pairs are definitionally at similarity 1; overwrite
        # to remove sqrt round-off from self-comparisons.
        cos[identical[mask, layer]] = 1.0
        values.append(_aggregate(cos, statistic))
        counts.append(int(mask.sum()))

    similarity = SimilarityCurve(
        vocabulary=a.header.probe_set_id,
        comparison=label,
        metric=COSINE_SIMILARITY,
        values=tuple(values),
        n_included=tuple(counts),
        statistic=statistic,
    )
    distance = SimilarityCurve(
        vocabulary=similarity.vocabulary,
        comparison=label,
        metric=COSINE_DISTANCE,
        values=tuple(1.0 - v for v in values),
        n_included=similarity.n_included,
        statistic=statistic,
    )
    return similarity, distance


def layer_l2(
    a: ActivationDump,
    b: ActivationDump,
    statistic: str = "mean",
    comparison: str | None = None,
) -> SimilarityCurve:
    """Per-layer aggregate Euclidean distance between aligned probe pairs."""
    _check_aligned(a, b)
    label = comparison if comparison is not None else _comparison_label(a, b)
    diff = a.tensor.astype(np.float64) - b.tensor.astype(np.float64)
    dists = np.linalg.norm(diff, axis=2)  # (N, L)
    n, layers = dists.shape
    return SimilarityCurve(
        vocabulary=a.header.probe_set_id,
        comparison=label,
        metric=L2,
        values=tuple(_aggregate(dists[:, layer], statistic) for layer in range(layers)),
        n_included=(n,) * layers,
        statistic=statistic,
    )


def compare_suite(
    dumps: Mapping[str, ActivationDump],
    plan: Sequence[tuple[str, str]],
    metrics: Sequence[str] = ALL_METRICS,
    statistic: str = "mean",
) -> list[SimilarityCurve]:
    """Run every planned (label_a, label_b) comparison, in plan order.

    Each pair contributes one curve per requested metric; cosine similarity
    and distance come from a single computation.
    """
    unknown = [m for m in metrics if m not in ALL_METRICS]
    if unknown:
        raise ValueError(f"unknown metrics {unknown}")
    curves: list[SimilarityCurve] = []
    for label_a, label_b in plan:
        for label in (label_a, label_b):
            if label not in dumps:
                raise MissingSource(label)
        a, b = dumps[label_a], dumps[label_b]
        pair_label = f"{label_a}~{label_b}"
        if COSINE_SIMILARITY in metrics or COSINE_DISTANCE in metrics:
            similarity, distance = layer_cosine(
                a, b, statistic=statistic, comparison=pair_label
            )
            if COSINE_SIMILARITY in metrics:
                curves.append(similarity)
            if COSINE_DISTANCE in metrics:
                curves.append(distance)
        if L2 in metrics:
            curves.append(layer_l2(a, b, statistic=statistic, comparison=pair_label))
    return curves


def curves_to_rows(curves: Iterable[SimilarityCurve]) -> list[dict]:
    """Flatten curves to one row per layer for delimited output."""
    rows = []
    for curve in curves:
        for layer, (value, count) in enumerate(zip(curve.values, curve.n_included)):
            rows.append(
                {
                    "vocabulary": curve.vocabulary,
                    "comparison": curve.comparison,
                    "metric": curve.metric,
                    "layer": layer,
                    "value": value,
                    "n_included": count,
                    "statistic": curve.statistic,
                }
            )
    return rows
