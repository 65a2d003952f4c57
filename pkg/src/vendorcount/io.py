"""File formats for survey records, partition maps, weights, markets and configs.

Every reader raises :class:`ValidationError` naming the file and the 1-based
line number of the offending row (the header is line 1).
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Any, Iterator

from .core import UNKNOWN, VENDOR_CLASSES, Partition, SurveyRecord, ValidationError
from .overdispersed import MarketModel
from .weighted import WeightModel

RECORD_COLUMNS = ("id", "vendor_class", "has_credential", "veteran", "cell")
PARTITION_COLUMNS = ("cell", "subregion", "borough")
WEIGHT_COLUMNS = ("cell", "status", "w_mean", "w_second_moment")
COVARIANCE_COLUMNS = ("cell_a", "cell_b", "status_a", "status_b", "cov")
MARKET_COLUMNS = ("cell", "markets")

_TRUE = {"1", "true", "yes", "y", "t"}
_FALSE = {"0", "false", "no", "n", "f", ""}


def _rows(path: Path, required: tuple[str, ...]) -> Iterator[tuple[int, dict[str, str]]]:
    try:
        handle = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise ValidationError(f"{path}: cannot open ({exc.strerror})") from None
    with handle:
        reader = csv.DictReader(handle)
        header = reader.fieldnames or []
        missing = [c for c in required if c not in header]
        if missing:
            raise ValidationError(f"{path}: line 1: missing columns {missing}")
        for row in reader:
            if None in row:
                raise ValidationError(f"{path}: line {reader.line_num}: too many fields")
            yield reader.line_num, {k: (v or "").strip() for k, v in row.items()}


def _bool(value: str, where: str) -> bool:
    v = value.lower()
    if v in _TRUE:
        return True
    if v in _FALSE:
        return False
    raise ValidationError(f"{where}: expected a boolean, got {value!r}")


def _float(value: str, where: str) -> float:
    try:
        x = float(value)
    except ValueError:
        raise ValidationError(f"{where}: expected a number, got {value!r}") from None
    if not math.isfinite(x):
        raise ValidationError(f"{where}: number must be finite, got {value!r}")
    return x


def read_records(path: str | Path, partition: Partition | None = None) -> list[SurveyRecord]:
    """Read the respondent CSV.

    Extra columns become numeric weight covariates. An empty cell means the
    location is unknown. With a partition, unmatched cells are errors.
    """
    path = Path(path)
    records = []
    seen: dict[str, int] = {}
    for line, row in _rows(path, RECORD_COLUMNS):
        where = f"{path}: line {line}"
        rid = row["id"]
        if not rid:
            raise ValidationError(f"{where}: empty id")
        if rid in seen:
            raise ValidationError(f"{where}: duplicate id {rid!r} (first on line {seen[rid]})")
        seen[rid] = line
        if row["vendor_class"] not in VENDOR_CLASSES:
            raise ValidationError(f"{where}: vendor_class {row['vendor_class']!r} not in {VENDOR_CLASSES}")
        cell = row["cell"] or UNKNOWN
        if partition is not None and cell not in partition.all_cells:
            raise ValidationError(f"{where}: cell {cell!r} is not in the partition map")
        extras = {
            k: _float(v, f"{where}, column {k!r}")
            for k, v in row.items()
            if k not in RECORD_COLUMNS and v != ""
        }
        records.append(
            SurveyRecord(
                rid,
                row["vendor_class"],
                _bool(row["has_credential"], f"{where}, has_credential"),
                _bool(row["veteran"], f"{where}, veteran"),
                cell,
                extras,
            )
        )
    return records


def write_records(path: str | Path, records: list[SurveyRecord]) -> None:
    covariates = sorted({k for r in records for k in r.weight_inputs})
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(RECORD_COLUMNS + tuple(covariates))
        for r in records:
            cell = "" if r.cell == UNKNOWN else r.cell
            writer.writerow(
                [r.id, r.vendor_class, int(r.has_credential), int(r.veteran), cell]
                + [repr(r.weight_inputs[k]) if k in r.weight_inputs else "" for k in covariates]
            )


def read_partition(path: str | Path) -> list[tuple[str, str, str]]:
    """Rows of ``(cell, subregion, borough)`` in file order."""
    path = Path(path)
    rows = []
    seen: dict[str, int] = {}
    for line, row in _rows(path, ("cell",)):
        cell = row["cell"]
        where = f"{path}: line {line}"
        if not cell:
            raise ValidationError(f"{where}: empty cell id")
        if cell == UNKNOWN:
            raise ValidationError(f"{where}: {UNKNOWN!r} is reserved")
        if cell in seen:
            raise ValidationError(f"{where}: duplicate cell {cell!r} (first on line {seen[cell]})")
        seen[cell] = line
        rows.append((cell, row.get("subregion", ""), row.get("borough", "")))
    if not rows:
        raise ValidationError(f"{path}: no cells")
    return rows


def write_partition(path: str | Path, rows: list[tuple[str, str, str]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(PARTITION_COLUMNS)
        writer.writerows(rows)


def _status_list(value: str, where: str) -> tuple[int, ...]:
    v = value.lower()
    if v in ("0", "1"):
        return (int(v),)
    if v in ("both", ""):
        return (0, 1)
    raise ValidationError(f"{where}: status must be 0, 1 or both, got {value!r}")


def read_weights(
    path: str | Path,
    covariance_path: str | Path | None = None,
    partition: Partition | None = None,
) -> WeightModel:
    """Per-(cell, status) weight moments, plus an optional pair-covariance file.

    A row whose cell is ``*`` sets the default for every unlisted cell.
    """
    path = Path(path)
    moments: dict[tuple[str, int], tuple[float, float]] = {}
    default = None
    for line, row in _rows(path, WEIGHT_COLUMNS):
        where = f"{path}: line {line}"
        cell = row["cell"] or UNKNOWN
        mean = _float(row["w_mean"], f"{where}, w_mean")
        second = _float(row["w_second_moment"], f"{where}, w_second_moment")
        if cell == "*":
            default = (mean, second)
            continue
        if partition is not None and cell not in partition.all_cells:
            raise ValidationError(f"{where}: cell {cell!r} is not in the partition map")
        for status in _status_list(row["status"], where):
            if (cell, status) in moments:
                raise ValidationError(f"{where}: duplicate weight for cell {cell!r} status {status}")
            try:
                WeightModel({(cell, status): (mean, second)})
            except ValidationError as exc:
                raise ValidationError(f"{where}: {exc}") from None
            moments[(cell, status)] = (mean, second)
    covariance = {}
    if covariance_path is not None:
        covariance_path = Path(covariance_path)
        for line, row in _rows(covariance_path, COVARIANCE_COLUMNS):
            where = f"{covariance_path}: line {line}"
            key = (
                row["cell_a"] or UNKNOWN,
                row["cell_b"] or UNKNOWN,
                _status01(row["status_a"], where),
                _status01(row["status_b"], where),
            )
            covariance[key] = _float(row["cov"], f"{where}, cov")
    try:
        return WeightModel(moments, default=default, covariance=covariance)
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from None


def _status01(value: str, where: str) -> int:
    if value not in ("0", "1"):
        raise ValidationError(f"{where}: covariance status must be 0 or 1, got {value!r}")
    return int(value)


def write_weights(path: str | Path, moments: dict[tuple[str, int], tuple[float, float]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(WEIGHT_COLUMNS)
        for (cell, status), (mean, second) in moments.items():
            writer.writerow(["" if cell == UNKNOWN else cell, status, repr(mean), repr(second)])


def read_markets(path: str | Path) -> dict[str, float]:
    """``cell -> markets``; an optional ``status`` column (0/1) splits the table."""
    path = Path(path)
    out: dict[str, float] = {}
    for line, row in _rows(path, MARKET_COLUMNS):
        where = f"{path}: line {line}"
        cell = row["cell"]
        if not cell:
            raise ValidationError(f"{where}: empty cell id")
        m = _float(row["markets"], f"{where}, markets")
        if m <= 0:
            raise ValidationError(f"{where}: markets must be positive")
        key = cell if not row.get("status") else f"{cell}\t{row['status']}"
        if key in out:
            raise ValidationError(f"{where}: duplicate market row for cell {cell!r}")
        out[key] = m
    return out


def market_model(table: dict[str, float]) -> MarketModel:
    """Split a market table read by :func:`read_markets` into the two statuses.

    Rows without a status apply to both.
    """
    s0: dict[str, float] = {}
    s1: dict[str, float] = {}
    for key, m in table.items():
        cell, _, status = key.partition("\t")
        if status in ("", "0"):
            s0[cell] = m
        if status in ("", "1"):
            s1[cell] = m
        if status not in ("", "0", "1"):
            raise ValidationError(f"market status for cell {cell!r} must be 0 or 1")
    return MarketModel(s0, s1)


def read_json(path: str | Path) -> dict[str, Any]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ValidationError(f"{path}: cannot open ({exc.strerror})") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: line {exc.lineno}: invalid JSON ({exc.msg})") from None
    if not isinstance(data, dict):
        raise ValidationError(f"{path}: top level must be an object")
    return data


def dump_json(data: Any) -> str:
    """Canonical JSON text: fixed key order from the caller, two-space indent, no NaN."""
    return json.dumps(data, indent=2, allow_nan=False) + "\n"
