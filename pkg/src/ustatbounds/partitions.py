"""Set partitions of axis subsets and the refinement order between them.

Axes are labelled 1..d throughout the public API. A :class:`Partition`
stores its blocks in canonical form: each block sorted ascending, blocks
ordered by their smallest element. Two partitions of the same ground set
are equal iff their canonical blocks are equal.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from itertools import combinations
from typing import Iterable, Iterator, Sequence

from .exceptions import DomainError, InvalidPartitionError


@dataclass(frozen=True, order=False)
class Partition:
    """A partition of an axis set into nonempty disjoint blocks."""

    blocks: tuple[tuple[int, ...], ...]

    def __init__(self, blocks: Iterable[Iterable[int]] = ()):
        canon = []
        seen: set[int] = set()
        for block in blocks:
            b = tuple(sorted(int(a) for a in block))
            if not b:
                raise InvalidPartitionError("partition blocks must be nonempty")
            if len(set(b)) != len(b) or seen.intersection(b):
                raise InvalidPartitionError("blocks not disjoint")
            if b[0] < 1:
                raise InvalidPartitionError("axis labels start at 1")
            seen.update(b)
            canon.append(b)
        canon.sort()
        object.__setattr__(self, "blocks", tuple(canon))

    @classmethod
    def singletons(cls, axes: Iterable[int]) -> "Partition":
        return cls([a] for a in axes)

    @classmethod
    def whole(cls, axes: Iterable[int]) -> "Partition":
        axes = list(axes)
        return cls([axes] if axes else [])

    @classmethod
    def parse(cls, text: str) -> "Partition":
        """Parse ``"{1,3}|{2}"``; ``"{}"`` or ``""`` is the empty partition."""
        text = text.strip()
        if text in ("", "{}", "∅"):
            return cls([])
        blocks = []
        for part in text.split("|"):
            m = re.fullmatch(r"\s*\{\s*(\d+(?:\s*,\s*\d+)*)\s*\}\s*", part)
            if m is None:
                raise InvalidPartitionError(f"malformed partition block {part!r}")
            blocks.append([int(x) for x in m.group(1).split(",")])
        return cls(blocks)

    @property
    def ground(self) -> tuple[int, ...]:
        return tuple(sorted(a for b in self.blocks for a in b))

    @property
    def deg(self) -> int:
        return len(self.blocks)

    def __len__(self) -> int:
        return len(self.blocks)

    def __iter__(self) -> Iterator[tuple[int, ...]]:
        return iter(self.blocks)

    def __str__(self) -> str:
        if not self.blocks:
            return "{}"
        return "|".join("{" + ",".join(map(str, b)) + "}" for b in self.blocks)

    def __repr__(self) -> str:
        return f"Partition({str(self)!r})"

    def sort_key(self) -> tuple:
        """Deterministic tie-breaking key: ground size first, then blocks."""
        return (len(self.ground), self.blocks)

    def to_json(self) -> list[list[int]]:
        return [list(b) for b in self.blocks]


def partition_coarsens(P: Partition, Q: Partition) -> bool:
    """Return True iff every block of ``P`` lies inside some block of ``Q``.

    This is the refinement order: ``P`` is finer than (or equal to) ``Q``.
    """
    if P.ground != Q.ground:
        raise DomainError(
            f"partitions have different ground sets {P.ground} and {Q.ground}"
        )
    return all(any(set(b) <= set(c) for c in Q.blocks) for b in P.blocks)


def _set_partitions(items: Sequence[int]) -> Iterator[list[list[int]]]:
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for sub in _set_partitions(rest):
        for k in range(len(sub)):
            yield sub[:k] + [[first] + sub[k]] + sub[k + 1:]
        yield [[first]] + sub


def enumerate_partitions(axes: Iterable[int]) -> list[Partition]:
    """All set partitions of ``axes``, coarsest first.

    The empty axis set has exactly one partition, the empty one.
    """
    items = sorted(set(int(a) for a in axes))
    return [Partition(blocks) for blocks in _set_partitions(items)]


def axis_subsets(order: int) -> list[tuple[int, ...]]:
    """All subsets of ``1..order`` ordered by size, then lexicographically."""
    axes = range(1, order + 1)
    return [c for k in range(order + 1) for c in combinations(axes, k)]


def complement(axes: Iterable[int], order: int) -> tuple[int, ...]:
    s = set(axes)
    return tuple(a for a in range(1, order + 1) if a not in s)
