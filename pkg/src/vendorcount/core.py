"""Domain types shared by every estimator: partitions, survey records and counts."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from statistics import NormalDist
from typing import Iterable, Mapping, Sequence

UNKNOWN = "UNKNOWN"

VENDOR_CLASSES = ("food", "merchandise", "first_amendment", "other")
ESTIMATION_CLASSES = ("food", "merchandise-nonveteran")

# Citywide caps on permits (food) and non-veteran licenses (merchandise).
DEFAULT_CAPS = {"food": 5100, "merchandise-nonveteran": 853}
VETERAN_ADDON = 1000


class ValidationError(ValueError):
    """Malformed input: bad ids, negative counts, inconsistent totals."""


class EstimationError(ArithmeticError):
    """The requested estimate is undefined for the supplied counts."""


@dataclass(frozen=True)
class Partition:
    """Ordered, named cells covering the study area.

    ``cells`` holds the user-defined cells only; the reserved ``UNKNOWN`` cell
    is always appended and is reachable through :attr:`all_cells`.
    """

    cells: tuple[str, ...]

    def __post_init__(self) -> None:
        cells = tuple(str(c) for c in self.cells)
        object.__setattr__(self, "cells", cells)
        if not cells:
            raise ValidationError("partition needs at least one cell")
        if len(set(cells)) != len(cells):
            dupes = sorted({c for c in cells if cells.count(c) > 1})
            raise ValidationError(f"duplicate cell ids: {dupes}")
        if UNKNOWN in cells:
            raise ValidationError(f"{UNKNOWN!r} is reserved and cannot be a partition cell")

    @property
    def all_cells(self) -> tuple[str, ...]:
        return self.cells + (UNKNOWN,)

    def index(self, cell: str) -> int:
        try:
            return self.all_cells.index(cell)
        except ValueError:
            raise ValidationError(f"cell {cell!r} is not in the partition") from None

    def subregion(self, cells: Iterable[str]) -> frozenset[str]:
        """Validate a subregion selection. ``UNKNOWN`` is never selectable."""
        chosen = frozenset(cells)
        if UNKNOWN in chosen:
            raise ValidationError(f"{UNKNOWN!r} cannot be part of a subregion")
        missing = sorted(chosen - set(self.cells))
        if missing:
            raise ValidationError(f"subregion cells not in partition: {missing}")
        return chosen

    def complement(self, cells: Iterable[str]) -> frozenset[str]:
        """Non-UNKNOWN cells outside the subregion."""
        chosen = self.subregion(cells)
        return frozenset(c for c in self.cells if c not in chosen)


@dataclass(frozen=True)
class SurveyRecord:
    id: str
    vendor_class: str
    has_credential: bool
    veteran: bool = False
    cell: str = UNKNOWN
    weight_inputs: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.vendor_class not in VENDOR_CLASSES:
            raise ValidationError(
                f"record {self.id!r}: vendor_class {self.vendor_class!r} not in {VENDOR_CLASSES}"
            )
        if not self.cell:
            object.__setattr__(self, "cell", UNKNOWN)

    def estimation_class(self) -> str | None:
        """Class this record contributes to, or None when excluded from estimation."""
        if self.vendor_class == "food":
            return "food"
        if self.vendor_class == "merchandise" and not self.veteran:
            return "merchandise-nonveteran"
        return None


@dataclass(frozen=True)
class CountTable:
    """Respondent counts by cell and credential status for one vendor class.

    ``n0`` and ``n1`` are aligned with ``partition.all_cells`` (UNKNOWN last).
    """

    vendor_class: str
    partition: Partition
    n0: tuple[int, ...]
    n1: tuple[int, ...]
    N1_total: int
    veteran_tally: int = 0
    excluded_tally: int = 0

    def __post_init__(self) -> None:
        if self.vendor_class not in ESTIMATION_CLASSES:
            raise ValidationError(f"unknown estimation class {self.vendor_class!r}")
        size = len(self.partition.all_cells)
        n0 = tuple(int(v) for v in self.n0)
        n1 = tuple(int(v) for v in self.n1)
        if len(n0) != size or len(n1) != size:
            raise ValidationError(f"count vectors must have {size} entries (cells + UNKNOWN)")
        if min(n0 + n1) < 0:
            raise ValidationError("counts must be nonnegative")
        if int(self.N1_total) <= 0:
            raise ValidationError("N1_total must be a positive integer")
        if sum(n1) > self.N1_total:
            raise ValidationError(
                f"{self.vendor_class}: n1(A)={sum(n1)} exceeds the citywide total {self.N1_total}"
            )
        object.__setattr__(self, "n0", n0)
        object.__setattr__(self, "n1", n1)

    @classmethod
    def from_mapping(
        cls,
        vendor_class: str,
        partition: Partition,
        n0: Mapping[str, int],
        n1: Mapping[str, int],
        N1_total: int,
    ) -> "CountTable":
        for name, counts in (("n0", n0), ("n1", n1)):
            for cell in counts:
                partition.index(cell)
        return cls(
            vendor_class,
            partition,
            tuple(n0.get(c, 0) for c in partition.all_cells),
            tuple(n1.get(c, 0) for c in partition.all_cells),
            N1_total,
        )

    def _sum(self, counts: Sequence[int], cells: Iterable[str]) -> int:
        return sum(counts[self.partition.index(c)] for c in cells)

    def n0_of(self, cells: Iterable[str]) -> int:
        return self._sum(self.n0, self.partition.subregion(cells))

    def n1_of(self, cells: Iterable[str]) -> int:
        return self._sum(self.n1, self.partition.subregion(cells))

    @property
    def n0_total(self) -> int:
        """n0(A), including respondents with no recorded location."""
        return sum(self.n0)

    @property
    def n1_total(self) -> int:
        return sum(self.n1)

    @property
    def respondents(self) -> int:
        return self.n0_total + self.n1_total


def aggregate(
    records: Iterable[SurveyRecord],
    partition: Partition,
    vendor_class: str,
    N1_total: int | None = None,
) -> CountTable:
    """Count respondents of one estimation class by cell and credential.

    Merchandise records flagged as veterans land in ``veteran_tally``; first
    amendment and other vendors land in ``excluded_tally``. Both tallies are
    computed over all records regardless of the requested class.
    """
    if vendor_class not in ESTIMATION_CLASSES:
        raise ValidationError(f"vendor_class must be one of {ESTIMATION_CLASSES}")
    if N1_total is None:
        N1_total = DEFAULT_CAPS[vendor_class]
    size = len(partition.all_cells)
    n0 = [0] * size
    n1 = [0] * size
    veterans = excluded = 0
    for rec in records:
        try:
            idx = partition.index(rec.cell)
        except ValidationError:
            raise ValidationError(f"record {rec.id!r}: cell {rec.cell!r} is not in the partition") from None
        cls = rec.estimation_class()
        if cls is None:
            if rec.vendor_class == "merchandise":
                veterans += 1
            else:
                excluded += 1
            continue
        if cls != vendor_class:
            continue
        if rec.has_credential:
            n1[idx] += 1
        else:
            n0[idx] += 1
    return CountTable(vendor_class, partition, tuple(n0), tuple(n1), N1_total, veterans, excluded)


def subregion_counts(table: CountTable, cells: Iterable[str]) -> tuple[int, int, int]:
    """Return ``(n0(B), n1(B), n1(A) - n1(B))``; UNKNOWN respondents fall in the complement."""
    chosen = table.partition.subregion(cells)
    n1B = table.n1_of(chosen)
    return table.n0_of(chosen), n1B, table.n1_total - n1B


@dataclass(frozen=True)
class Estimate:
    """Point estimate with a plug-in standard error.

    ``se`` is None when the plug-in formula is undefined (``degenerate``);
    ``flags`` carries any other diagnostics raised while computing it.
    """

    value: float
    se: float | None
    level: float = 0.95
    degenerate: bool = False
    flags: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not 0.0 < self.level < 1.0:
            raise ValidationError("confidence level must lie in (0, 1)")
        if self.degenerate and self.se is not None:
            object.__setattr__(self, "se", None)
        if self.se is not None and (self.se < 0 or not math.isfinite(self.se)):
            raise ValidationError(f"standard error must be finite and nonnegative, got {self.se}")

    @property
    def moe(self) -> float | None:
        """Margin of error, two standard errors."""
        return None if self.se is None else 2.0 * self.se

    @property
    def z(self) -> float:
        return NormalDist().inv_cdf(0.5 + self.level / 2.0)

    @property
    def ci(self) -> tuple[float, float] | None:
        if self.se is None:
            return None
        half = self.z * self.se
        return max(0.0, self.value - half), max(0.0, self.value + half)

    def shifted(self, offset: float) -> "Estimate":
        """Same uncertainty, value moved by a constant (e.g. a fixed stratum total)."""
        return Estimate(self.value + offset, self.se, self.level, self.degenerate, self.flags)

    def as_dict(self) -> dict:
        ci = self.ci
        return {
            "value": self.value,
            "se": self.se,
            "moe": self.moe,
            "ci_lower": None if ci is None else ci[0],
            "ci_upper": None if ci is None else ci[1],
            "level": self.level,
            "degenerate": self.degenerate,
            "flags": list(self.flags),
        }
