"""Whole-video decision from the per-frame label census.

Three tiers: (1) a strict majority class wins outright; (2) otherwise a
mixed type is marked when the pooled count of its pure components plus
itself exceeds half the list; (3) otherwise the most represented class
wins. Ties resolve by canonical class order at every tier.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

from .core import CANONICAL_ORDER, DecisionPath, MorphClass
from .errors import EmptyList, ValidationError

_UNION_MEMBERS = {
    MorphClass.IA_IIB: (MorphClass.IA, MorphClass.IIB, MorphClass.IA_IIB),
    MorphClass.IA_IIIB: (MorphClass.IA, MorphClass.IIIB, MorphClass.IA_IIIB),
}


@dataclass(frozen=True)
class LabelCensus:
    """Counts of per-frame predicted labels over one video."""

    counts: Mapping[MorphClass, int]

    def __post_init__(self) -> None:
        full = {c: 0 for c in CANONICAL_ORDER}
        for c, n in self.counts.items():
            if n < 0:
                raise ValidationError(f"negative count for {c.tag}")
            full[c] = int(n)
        if sum(full.values()) < 1:
            raise ValidationError("census must count at least one label")
        object.__setattr__(self, "counts", full)

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    @classmethod
    def from_labels(cls, labels: Iterable[MorphClass]) -> "LabelCensus":
        counts = {c: 0 for c in CANONICAL_ORDER}
        n = 0
        for label in labels:
            counts[label] += 1
            n += 1
        if n == 0:
            raise EmptyList("no labels to aggregate")
        return cls(counts=counts)


def decide(census: LabelCensus) -> tuple[MorphClass, DecisionPath]:
    """Collapse a census into the final class; integer arithmetic only."""
    counts = census.counts
    total = census.total

    for c in CANONICAL_ORDER:
        if 2 * counts[c] > total:
            return c, DecisionPath.MAJORITY

    union_hits: list[tuple[int, MorphClass]] = []
    for mixed in (MorphClass.IA_IIB, MorphClass.IA_IIIB):
        pooled = sum(counts[m] for m in _UNION_MEMBERS[mixed])
        if 2 * pooled > total:
            union_hits.append((pooled, mixed))
    if union_hits:
        best = max(n for n, _ in union_hits)
        winners = [mixed for n, mixed in union_hits if n == best]
        return min(winners, key=lambda c: c.rank), DecisionPath.MIXED_UNION

    best_count = max(counts.values())
    for c in CANONICAL_ORDER:
        if counts[c] == best_count:
            return c, DecisionPath.FALLBACK
    raise AssertionError("unreachable")


def decide_labels(labels: Iterable[MorphClass]) -> tuple[MorphClass, DecisionPath]:
    """Convenience: build the census from a label list and decide."""
    return decide(LabelCensus.from_labels(labels))
