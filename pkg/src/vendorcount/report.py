"""Area-by-area population tables: respondents, population and margin of error.

Rows come in three kinds: subregion rows (one per subregion label of the
partition map), borough rows, and one citywide row. Respondents without a
location only enter the citywide row. Each row carries per-class estimates
and two combined margins: quadrature (independent classes) and linear (the
sum of the per-class standard errors).
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

from .core import (
    DEFAULT_CAPS,
    ESTIMATION_CLASSES,
    VETERAN_ADDON,
    CountTable,
    Estimate,
    EstimationError,
    Partition,
    SurveyRecord,
    ValidationError,
    aggregate,
    subregion_counts,
)
from .estimators import RatioInputs, combine, subtotal_tau, total_tau

CITY = "New York City"


@dataclass(frozen=True)
class AreaLayout:
    """How cells group into reported areas.

    ``subregions`` and ``boroughs`` map a label to its cells, in display
    order. A cell may belong to one subregion and one borough.
    """

    partition: Partition
    subregions: Mapping[str, tuple[str, ...]]
    boroughs: Mapping[str, tuple[str, ...]]
    city_label: str = CITY

    @classmethod
    def from_rows(cls, rows: Sequence[tuple[str, str, str]], city_label: str = CITY) -> "AreaLayout":
        """Build from ``(cell, subregion, borough)`` rows; blank labels fall back to the cell."""
        cells = tuple(r[0] for r in rows)
        partition = Partition(cells)
        subregions: dict[str, list[str]] = {}
        boroughs: dict[str, list[str]] = {}
        for cell, sub, boro in rows:
            subregions.setdefault(sub or cell, []).append(cell)
            if boro:
                boroughs.setdefault(boro, []).append(cell)
        return cls(
            partition,
            {k: tuple(v) for k, v in subregions.items()},
            {k: tuple(v) for k, v in boroughs.items()},
            city_label,
        )


@dataclass(frozen=True)
class AreaRow:
    area: str
    kind: str
    respondents: int
    by_class: dict[str, Estimate]
    quadrature: Estimate
    linear: Estimate
    flags: tuple[str, ...] = ()

    def as_dict(self) -> dict:
        return {
            "area": self.area,
            "kind": self.kind,
            "respondents": self.respondents,
            "population": _num(self.quadrature.value),
            "moe_quadrature": _num(self.quadrature.moe),
            "moe_linear": _num(self.linear.moe),
            "classes": {k: _estimate_dict(e) for k, e in self.by_class.items()},
            "flags": list(self.flags),
        }


@dataclass(frozen=True)
class PopulationReport:
    rows: list[AreaRow]
    caps: dict[str, int]
    veteran_addon: float
    level: float
    tallies: dict[str, int] = field(default_factory=dict)
    flags: tuple[str, ...] = ()
    overdispersed: dict[str, Estimate] = field(default_factory=dict)

    @property
    def citywide(self) -> AreaRow:
        return self.rows[-1]

    @property
    def degenerate(self) -> bool:
        """True when a citywide class estimate is undefined or lacks a standard error."""
        return any(e.degenerate or math.isnan(e.value) for e in self.citywide.by_class.values())

    @property
    def total_with_veterans(self) -> float:
        return self.citywide.quadrature.value + self.veteran_addon

    def as_dict(self) -> dict:
        total = self.total_with_veterans
        return {
            "level": self.level,
            "caps": dict(self.caps),
            "veteran_addon": self.veteran_addon,
            "rows": [r.as_dict() for r in self.rows],
            "total_with_veterans": _num(total),
            "total_with_veterans_rounded": None if math.isnan(total) else int(round(total, -3)),
            "overdispersed": {k: _estimate_dict(e) for k, e in self.overdispersed.items()},
            "tallies": dict(self.tallies),
            "flags": list(self.flags),
        }

    def with_overdispersion(self, estimates: Mapping[str, Estimate]) -> "PopulationReport":
        """Attach citywide totals whose standard errors allow for market clustering."""
        return replace(self, overdispersed=dict(estimates))

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, allow_nan=False) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        header = ["area", "kind", "respondents", "population", "moe_quadrature", "moe_linear"]
        for cls in self.caps:
            header += [f"{cls}_estimate", f"{cls}_se"]
        header.append("flags")
        writer.writerow(header)
        for r in self.rows:
            line = [r.area, r.kind, r.respondents, _fmt(r.quadrature.value),
                    _fmt(r.quadrature.moe), _fmt(r.linear.moe)]
            for cls in self.caps:
                est = r.by_class[cls]
                line += [_fmt(est.value), _fmt(est.se)]
            line.append(";".join(r.flags))
            writer.writerow(line)
        for cls, est in self.overdispersed.items():
            line = [f"{self.citywide.area} {cls} overdispersed", "city_overdispersed", "",
                    _fmt(est.value), _fmt(est.moe), ""]
            for other in self.caps:
                line += [_fmt(est.value), _fmt(est.se)] if other == cls else ["", ""]
            line.append(";".join(est.flags))
            writer.writerow(line)
        return buf.getvalue()

    def to_markdown(self) -> str:
        lines = [
            "| Area | Respondents | Population | Margin of error | Linear MOE |",
            "|:--|--:|--:|--:|--:|",
        ]
        for r in self.rows:
            name = r.area if r.kind == "subregion" else f"**{r.area}**"
            lines.append(
                f"| {name} | {r.respondents:,} | {_rounded(r.quadrature.value)} | "
                f"{_rounded(r.quadrature.moe)} | {_rounded(r.linear.moe)} |"
            )
        total = self.total_with_veterans
        lines.append("")
        lines.append(
            f"Including {self.veteran_addon:,.0f} veteran merchandise vendors: "
            f"{_rounded(total)} (approximately {_rounded(round(total, -3) if not math.isnan(total) else total)})."
        )
        for cls, est in self.overdispersed.items():
            lines.append(
                f"{cls} with market clustering: {_rounded(est.value)} "
                f"(margin of error {_rounded(est.moe)})."
            )
        for flag in self.flags:
            lines.append(f"- {flag}")
        return "\n".join(lines) + "\n"

    def render(self, fmt: str) -> str:
        if fmt == "json":
            return self.to_json()
        if fmt == "csv":
            return self.to_csv()
        if fmt == "md":
            return self.to_markdown()
        raise ValidationError(f"unknown output format {fmt!r}")


def _num(x: float | None) -> float | None:
    if x is None or math.isnan(x):
        return None
    return x


def _fmt(x: float | None) -> str:
    x = _num(x)
    return "" if x is None else repr(float(x))


def _rounded(x: float | None) -> str:
    x = _num(x)
    return "n/a" if x is None else f"{x:,.0f}"


def _estimate_dict(e: Estimate) -> dict:
    d = e.as_dict()
    return {k: (_num(v) if isinstance(v, float) else v) for k, v in d.items()}


def _undefined(level: float, reason: str) -> Estimate:
    return Estimate(math.nan, None, level, degenerate=True, flags=(reason,))


def area_estimate(table: CountTable, cells: Iterable[str] | None, level: float = 0.95) -> Estimate:
    """Total vendors of one class in ``cells`` (None: citywide, unlocated included)."""
    try:
        if cells is None:
            inputs = RatioInputs(table.N1_total, table.n0_total, table.n1_total)
            return total_tau(inputs, level)
        n0B, n1B, n1c = subregion_counts(table, cells)
        return subtotal_tau(table.N1_total, n0B, n1B, n1c, level)
    except EstimationError:
        return _undefined(level, "no_credentialed_respondents")


def _combined_row(
    area: str, kind: str, tables: Mapping[str, CountTable], cells: Sequence[str] | None, level: float
) -> AreaRow:
    by_class = {}
    respondents = 0
    parts = []
    flags: list[str] = []
    for cls, table in tables.items():
        est = area_estimate(table, cells, level)
        by_class[cls] = est
        if cells is None:
            respondents += table.respondents
        else:
            respondents += table.n0_of(cells) + table.n1_of(cells)
        if est.se is None and not math.isnan(est.value):
            # no uncredentialed respondents here: the class adds its value with no spread
            flags.append(f"{cls}:se_undefined")
            est = Estimate(est.value, 0.0, level)
        parts.append(est)
    if any(math.isnan(p.value) for p in parts):
        quad = lin = _undefined(level, "undefined_class_estimate")
    else:
        quad = combine(parts, "quadrature", level=level)
        lin = combine(parts, "linear", level=level)
    return AreaRow(area, kind, respondents, by_class, quad, lin, tuple(flags))


def build_report(
    records: Iterable[SurveyRecord],
    layout: AreaLayout,
    caps: Mapping[str, int] | None = None,
    veteran_addon: float = VETERAN_ADDON,
    level: float = 0.95,
) -> PopulationReport:
    caps = dict(DEFAULT_CAPS if caps is None else caps)
    if set(caps) != set(ESTIMATION_CLASSES):
        raise ValidationError(f"caps must be given for exactly {ESTIMATION_CLASSES}")
    if any(int(v) != v or v <= 0 for v in caps.values()):
        raise ValidationError("caps must be positive integers")
    if not veteran_addon >= 0:
        raise ValidationError("veteran add-on must be nonnegative")
    records = list(records)
    tables = {cls: aggregate(records, layout.partition, cls, int(caps[cls])) for cls in ESTIMATION_CLASSES}
    return report_from_tables(tables, layout, veteran_addon, level)


def report_from_tables(
    tables: Mapping[str, CountTable],
    layout: AreaLayout,
    veteran_addon: float = VETERAN_ADDON,
    level: float = 0.95,
) -> PopulationReport:
    rows = [_combined_row(name, "subregion", tables, cells, level) for name, cells in layout.subregions.items()]
    rows += [_combined_row(name, "borough", tables, cells, level) for name, cells in layout.boroughs.items()]
    rows.append(_combined_row(layout.city_label, "city", tables, None, level))

    any_table = next(iter(tables.values()))
    unlocated = sum(t.n0[-1] + t.n1[-1] for t in tables.values())
    flags = []
    if unlocated:
        flags.append(f"{unlocated} respondents without a location are counted in the citywide row only")
    report = PopulationReport(
        rows,
        {cls: t.N1_total for cls, t in tables.items()},
        float(veteran_addon),
        level,
        {
            "unlocated": int(unlocated),
            "veteran_merchandise": any_table.veteran_tally,
            "excluded_other": any_table.excluded_tally,
        },
        tuple(flags),
    )
    if report.degenerate:
        report = replace(report, flags=report.flags + ("citywide estimate undefined for at least one class",))
    return report
