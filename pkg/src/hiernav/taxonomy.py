"""Coded hierarchies (ICD, ATC, IPC, synthetic) and their structural queries.

A taxonomy is a forest: every node has at most one parent and parent links are
acyclic. All downstream task generation and path scoring is phrased in terms
of the queries defined here: ancestor chains, nearest common ancestors, and
the retrieval complexity of a node pair.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping

from .lineio import iter_records, write_records


class TaxonomyError(Exception):
    """Base class for taxonomy ingestion and query failures."""


class EmptyInput(TaxonomyError):
    def __init__(self) -> None:
        super().__init__("no taxonomy records supplied")


class DuplicateCode(TaxonomyError):
    def __init__(self, code: str):
        self.code = code
        super().__init__(f"duplicate code {code!r}")


class DanglingParent(TaxonomyError):
    def __init__(self, code: str, parent: str):
        self.code = code
        self.parent = parent
        super().__init__(f"code {code!r} references missing parent {parent!r}")


class CycleDetected(TaxonomyError):
    def __init__(self, path: list[str]):
        self.path = path
        super().__init__("parent links form a cycle: " + " -> ".join(path))


class MixedSystems(TaxonomyError):
    def __init__(self, seen: str, other: str):
        super().__init__(f"records mix code systems {seen!r} and {other!r}")


class UnknownCode(TaxonomyError):
    def __init__(self, code: str):
        self.code = code
        super().__init__(f"unknown code {code!r}")


class NoCommonAncestor(TaxonomyError):
    def __init__(self, a: str, b: str):
        super().__init__(f"codes {a!r} and {b!r} lie in different trees")


class ComplexityBand(str, Enum):
    """Retrieval-complexity stratum of a code pair.

    MEMORY_LIGHT covers complexities below 3, MEMORY_HEAVY 5 and above, and
    MEDIUM the remaining {3, 4} so that the banding is total.
    """

    MEMORY_LIGHT = "MemoryLight"
    MEDIUM = "Medium"
    MEMORY_HEAVY = "MemoryHeavy"


def band_of(complexity: int) -> ComplexityBand:
    """Band a retrieval complexity; total for every nonnegative integer."""
    if complexity < 0:
        raise ValueError(f"complexity must be nonnegative, got {complexity}")
    if complexity < 3:
        return ComplexityBand.MEMORY_LIGHT
    if complexity >= 5:
        return ComplexityBand.MEMORY_HEAVY
    return ComplexityBand.MEDIUM


@dataclass(frozen=True)
class CodeSystem:
    """Identifier of a code system, e.g. ICD9CM or IPC. Ids are case-sensitive."""

    id: str
    display_name: str = ""

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("code system id must be nonempty")
        if not self.display_name:
            object.__setattr__(self, "display_name", self.id)


@dataclass(frozen=True)
class TaxNode:
    code: str
    description: str
    parent: str | None
    depth: int


@dataclass
class Taxonomy:
    """Validated, immutable-after-construction forest of coded nodes.

    Construct via :func:`ingest_taxonomy`; direct construction skips
    validation and is intended for internal use only.
    """

    system: CodeSystem
    nodes: dict[str, TaxNode]
    roots: list[str]

    def __contains__(self, code: str) -> bool:
        return code in self.nodes

    def __len__(self) -> int:
        return len(self.nodes)

    def node(self, code: str) -> TaxNode:
        try:
            return self.nodes[code]
        except KeyError:
            raise UnknownCode(code) from None

    def children(self, code: str) -> list[str]:
        self.node(code)
        return self._children_index().get(code, [])

    def leaves(self) -> list[str]:
        index = self._children_index()
        return sorted(code for code in self.nodes if not index.get(code))

    def _children_index(self) -> dict[str, list[str]]:
        index = getattr(self, "_children", None)
        if index is None:
            index = {}
            for code, node in self.nodes.items():
                if node.parent is not None:
                    index.setdefault(node.parent, []).append(code)
            for siblings in index.values():
                siblings.sort()
            object.__setattr__(self, "_children", index)
        return index

    def ancestors(self, code: str) -> list[str]:
        """Strict ancestors of `code`, root first; empty for roots."""
        chain: list[str] = []
        parent = self.node(code).parent
        while parent is not None:
            chain.append(parent)
            parent = self.nodes[parent].parent
        chain.reverse()
        return chain

    def nearest_common_ancestor(self, a: str, b: str) -> str:
        """Deepest node that is an ancestor-or-self of both `a` and `b`."""
        self.node(a)
        self.node(b)
        on_a_chain = {a}
        cursor: str | None = self.nodes[a].parent
        while cursor is not None:
            on_a_chain.add(cursor)
            cursor = self.nodes[cursor].parent
        cursor = b
        while cursor is not None:
            if cursor in on_a_chain:
                return cursor
            cursor = self.nodes[cursor].parent
        raise NoCommonAncestor(a, b)

    def retrieval_complexity(self, a: str, b: str, *, count_nca: bool = True) -> int:
        """Number of unique ancestor nodes recalled to reach the common node.

        Counts the union of the two chains running from each query code
        (exclusive) up to the nearest common ancestor. By default the common
        ancestor itself is a member of any nonempty chain and is counted
        exactly once; pass ``count_nca=False`` for the stricter stratification
        that excludes it.
        """
        nca = self.nearest_common_ancestor(a, b)
        recalled: set[str] = set()
        for start in (a, b):
            cursor = self.nodes[start].parent
            while cursor is not None and start != nca:
                recalled.add(cursor)
                if cursor == nca:
                    break
                cursor = self.nodes[cursor].parent
        if not count_nca:
            recalled.discard(nca)
        return len(recalled)

    def is_ancestor(self, candidate: str, code: str) -> bool:
        """True when `candidate` is a strict ancestor of `code`."""
        cursor = self.node(code).parent
        while cursor is not None:
            if cursor == candidate:
                return True
            cursor = self.nodes[cursor].parent
        return False


def ingest_taxonomy(records: Iterable[Mapping[str, Any]]) -> Taxonomy:
    """Build a validated Taxonomy from raw records.

    Each record carries ``code``, ``description``, optional ``parent`` and
    ``system``; all records must name the same system. The whole input is
    rejected on the first violation.
    """
    staged: dict[str, tuple[str, str | None]] = {}
    system_id: str | None = None
    for record in records:
        code = str(record["code"])
        system = str(record["system"])
        if system_id is None:
            system_id = system
        elif system != system_id:
            raise MixedSystems(system_id, system)
        if code in staged:
            raise DuplicateCode(code)
        parent = record.get("parent")
        staged[code] = (str(record.get("description", "")), parent if parent else None)
    if not staged or system_id is None:
        raise EmptyInput()

    for code, (_, parent) in staged.items():
        if parent is not None and parent not in staged:
            raise DanglingParent(code, parent)

    children: dict[str, list[str]] = {}
    roots = sorted(code for code, (_, parent) in staged.items() if parent is None)
    for code, (_, parent) in staged.items():
        if parent is not None:
            children.setdefault(parent, []).append(code)

    depths: dict[str, int] = {root: 0 for root in roots}
    queue = deque(roots)
    while queue:
        current = queue.popleft()
        for child in children.get(current, ()):
            depths[child] = depths[current] + 1
            queue.append(child)

    if len(depths) != len(staged):
        raise CycleDetected(_find_cycle(staged, depths))

    nodes = {
        code: TaxNode(code=code, description=desc, parent=parent, depth=depths[code])
        for code, (desc, parent) in sorted(staged.items())
    }
    return Taxonomy(system=CodeSystem(system_id), nodes=nodes, roots=roots)


def _find_cycle(
    staged: dict[str, tuple[str, str | None]], reachable: dict[str, int]
) -> list[str]:
    start = next(code for code in staged if code not in reachable)
    seen: dict[str, int] = {}
    path: list[str] = []
    cursor: str | None = start
    while cursor is not None and cursor not in seen:
        seen[cursor] = len(path)
        path.append(cursor)
        cursor = staged[cursor][1]
    assert cursor is not None  # an unreachable chain cannot end at a root
    return path[seen[cursor]:] + [cursor]


def taxonomy_records(taxonomy: Taxonomy) -> Iterator[dict[str, Any]]:
    """Canonical record stream (sorted by code) for serialization."""
    for code in sorted(taxonomy.nodes):
        node = taxonomy.nodes[code]
        yield {
            "code": node.code,
            "description": node.description,
            "parent": node.parent,
            "system": taxonomy.system.id,
        }


def save_taxonomy(taxonomy: Taxonomy, path: str | Path) -> None:
    write_records(path, taxonomy_records(taxonomy))


def load_taxonomy(path: str | Path) -> Taxonomy:
    """Ingest a taxonomy from a line-delimited record file."""
    return ingest_taxonomy(record for _, record in iter_records(path))
