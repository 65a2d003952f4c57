import csv
import io
import json
import math

import pytest

from vendorcount.core import UNKNOWN, CountTable, Partition, SurveyRecord, ValidationError
from vendorcount.report import AreaLayout, area_estimate, build_report, report_from_tables

ROWS = [("a", "north", "East"), ("b", "north", "East"), ("c", "", "West")]
LAYOUT = AreaLayout.from_rows(ROWS, "Town")


def tables(food_n0, food_n1, merch_n0, merch_n1):
    part = LAYOUT.partition
    return {
        "food": CountTable("food", part, tuple(food_n0), tuple(food_n1), 100),
        "merchandise-nonveteran": CountTable("merchandise-nonveteran", part, tuple(merch_n0), tuple(merch_n1), 40),
    }


def test_layout_from_rows():
    assert LAYOUT.subregions == {"north": ("a", "b"), "c": ("c",)}
    assert LAYOUT.boroughs == {"East": ("a", "b"), "West": ("c",)}
    assert LAYOUT.partition.cells == ("a", "b", "c")


def test_rows_and_kinds():
    rep = report_from_tables(tables([4, 3, 5, 2], [2, 1, 3, 1], [2, 2, 1, 0], [1, 1, 2, 1]), LAYOUT)
    assert [(r.area, r.kind) for r in rep.rows] == [
        ("north", "subregion"), ("c", "subregion"), ("East", "borough"), ("West", "borough"), ("Town", "city"),
    ]
    assert rep.citywide.respondents == (14 + 7) + (5 + 5)
    assert rep.tallies["unlocated"] == (2 + 1) + (0 + 1)
    assert any("without a location" in f for f in rep.flags)
    # citywide values add the classes; quadrature <= linear
    city = rep.citywide
    assert city.quadrature.value == pytest.approx(sum(e.value for e in city.by_class.values()))
    assert city.quadrature.se <= city.linear.se


def test_area_without_uncredentialed_respondents_is_flagged():
    a_only = AreaLayout.from_rows([("a", "", ""), ("b", "", ""), ("c", "", "")], "Town")
    rep = report_from_tables(tables([0, 3, 5, 2], [2, 1, 3, 1], [0, 2, 1, 0], [1, 1, 2, 1]), a_only)
    row = rep.rows[0]
    assert "food:se_undefined" in row.flags
    assert math.isfinite(row.quadrature.value)
    assert not rep.degenerate


def test_citywide_degeneracy():
    rep = report_from_tables(tables([4, 3, 5, 2], [0, 0, 0, 0], [2, 2, 1, 0], [1, 1, 2, 1]), LAYOUT)
    assert rep.degenerate
    assert math.isnan(rep.citywide.quadrature.value)
    assert any("undefined" in f for f in rep.flags)
    text = rep.to_markdown()
    assert "n/a" in text
    json.loads(rep.to_json())  # NaN never reaches the JSON text


def test_area_estimate_matches_direct_formula():
    t = tables([4, 3, 5, 2], [2, 1, 3, 1], [2, 2, 1, 0], [1, 1, 2, 1])["food"]
    city = area_estimate(t, None)
    assert city.value == pytest.approx(100 * 14 / 7 + 100)
    north = area_estimate(t, ["a", "b"])
    assert north.value == pytest.approx(100 * 7 / 7 + 100 * 3 / 7)


def test_formats():
    rep = report_from_tables(tables([4, 3, 5, 2], [2, 1, 3, 1], [2, 2, 1, 0], [1, 1, 2, 1]), LAYOUT)
    rows = list(csv.DictReader(io.StringIO(rep.render("csv"))))
    assert [r["area"] for r in rows] == ["north", "c", "East", "West", "Town"]
    assert float(rows[-1]["population"]) == pytest.approx(rep.citywide.quadrature.value)
    md = rep.render("md")
    assert md.splitlines()[0].startswith("| Area | Respondents")
    assert "**Town**" in md
    data = json.loads(rep.render("json"))
    assert data["rows"][-1]["respondents"] == 31
    with pytest.raises(ValidationError):
        rep.render("xml")


def test_build_report_from_records_and_caps():
    recs = [
        SurveyRecord("1", "food", True, False, "a"),
        SurveyRecord("2", "food", False, False, "a"),
        SurveyRecord("3", "merchandise", True, False, "c"),
        SurveyRecord("4", "merchandise", False, False, UNKNOWN),
        SurveyRecord("5", "merchandise", True, True, "b"),
    ]
    rep = build_report(recs, LAYOUT, caps={"food": 10, "merchandise-nonveteran": 5}, veteran_addon=7)
    assert rep.caps == {"food": 10, "merchandise-nonveteran": 5}
    assert rep.tallies["veteran_merchandise"] == 1
    assert rep.total_with_veterans == pytest.approx(rep.citywide.quadrature.value + 7)
    with pytest.raises(ValidationError):
        build_report(recs, LAYOUT, caps={"food": 10})
    with pytest.raises(ValidationError):
        build_report(recs, LAYOUT, caps={"food": 10, "merchandise-nonveteran": 0})
    with pytest.raises(ValidationError):
        build_report(recs, LAYOUT, veteran_addon=-1)
