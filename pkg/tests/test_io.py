import json

import pytest

from vendorcount import nyc
from vendorcount.core import UNKNOWN, Partition, SurveyRecord, ValidationError
from vendorcount.io import (
    dump_json,
    market_model,
    read_json,
    read_markets,
    read_partition,
    read_records,
    read_weights,
    write_partition,
    write_records,
    write_weights,
)

PART = Partition(("a", "b"))


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_records_round_trip(tmp_path):
    recs = list(nyc.records())[:50] + [
        SurveyRecord("x1", "food", True, False, UNKNOWN, {"hours": 6.5}),
    ]
    path = tmp_path / "records.csv"
    write_records(path, recs)
    back = read_records(path, nyc.partition())
    assert back == recs


def test_records_parsing_rules(tmp_path):
    path = write(tmp_path / "r.csv",
                 "id,vendor_class,has_credential,veteran,cell,hours\n"
                 "1,food,yes,no,a,3\n"
                 "2,merchandise,0,1,,\n")
    a, b = read_records(path, PART)
    assert a.has_credential and not a.veteran and a.weight_inputs == {"hours": 3.0}
    assert b.cell == UNKNOWN and b.veteran and b.weight_inputs == {}


@pytest.mark.parametrize(
    "body, message",
    [
        ("1,food,1,0,a\n1,food,1,0,b\n", "line 3: duplicate id"),
        ("1,food,1,0,a\n2,fish,1,0,b\n", "line 3: vendor_class"),
        ("1,food,maybe,0,a\n", "line 2, has_credential"),
        ("1,food,1,0,zz\n", "line 2: cell 'zz'"),
        ("1,food,1,0,a,extra\n", "line 2: too many fields"),
    ],
)
def test_record_errors_name_the_line(tmp_path, body, message):
    path = write(tmp_path / "bad.csv", "id,vendor_class,has_credential,veteran,cell\n" + body)
    with pytest.raises(ValidationError, match=message):
        read_records(path, PART)


def test_missing_columns_and_files(tmp_path):
    with pytest.raises(ValidationError, match="line 1: missing columns"):
        read_records(write(tmp_path / "h.csv", "id,cell\n1,a\n"))
    with pytest.raises(ValidationError, match="cannot open"):
        read_records(tmp_path / "absent.csv")


def test_partition_round_trip_and_errors(tmp_path):
    path = tmp_path / "p.csv"
    write_partition(path, nyc.layout_rows())
    assert read_partition(path) == nyc.layout_rows()
    with pytest.raises(ValidationError, match="line 3: duplicate cell"):
        read_partition(write(tmp_path / "d.csv", "cell\na\na\n"))
    with pytest.raises(ValidationError, match="reserved"):
        read_partition(write(tmp_path / "u.csv", f"cell\n{UNKNOWN}\n"))
    with pytest.raises(ValidationError, match="no cells"):
        read_partition(write(tmp_path / "e.csv", "cell\n"))


def test_weights_round_trip(tmp_path):
    moments = nyc.scenario_weights("workforce-inverse", nyc.FOOD)
    path = tmp_path / "w.csv"
    write_weights(path, moments)
    model = read_weights(path, partition=nyc.partition())
    assert dict(model.cell_moments) == moments


def test_weights_default_status_and_covariance(tmp_path):
    w = write(tmp_path / "w.csv",
              "cell,status,w_mean,w_second_moment\n"
              "*,both,1.0,1.0\n"
              "a,both,2.0,5.0\n"
              "b,1,3.0,9.0\n")
    c = write(tmp_path / "c.csv", "cell_a,cell_b,status_a,status_b,cov\na,b,0,1,0.25\n")
    model = read_weights(w, c, PART)
    def rec(cell, cred):
        return SurveyRecord("r", "food", cred, False, cell)

    assert model.moments_for(rec("a", False)) == (2.0, 5.0)
    assert model.moments_for(rec("a", True)) == (2.0, 5.0)
    assert model.moments_for(rec("b", True)) == (3.0, 9.0)
    assert model.moments_for(rec("b", False)) == (1.0, 1.0)
    assert model.cov("a", "b", 0, 1) == 0.25
    assert model.cov("b", "a", 1, 0) == 0.25


@pytest.mark.parametrize(
    "body, message",
    [
        ("a,2,1.0,1.0\n", "status must be 0, 1 or both"),
        ("a,0,1.0,1.0\na,both,1.0,1.0\n", "line 3: duplicate weight"),
        ("a,0,nan,1.0\n", "line 2, w_mean"),
        ("zz,0,1.0,1.0\n", "line 2: cell 'zz'"),
    ],
)
def test_weight_errors(tmp_path, body, message):
    path = write(tmp_path / "w.csv", "cell,status,w_mean,w_second_moment\n" + body)
    with pytest.raises(ValidationError, match=message):
        read_weights(path, partition=PART)


def test_second_moment_below_square_is_rejected(tmp_path):
    path = write(tmp_path / "w.csv", "cell,status,w_mean,w_second_moment\na,0,2.0,1.0\n")
    with pytest.raises(ValidationError, match="line 2"):
        read_weights(path, partition=PART)


def test_markets(tmp_path):
    path = write(tmp_path / "m.csv", "cell,markets,status\na,10,\nb,4,0\nb,2,1\n")
    table = read_markets(path)
    model = market_model(table)
    assert model.status0 == {"a": 10.0, "b": 4.0}
    assert model.status1 == {"a": 10.0, "b": 2.0}
    with pytest.raises(ValidationError, match="line 2: markets must be positive"):
        read_markets(write(tmp_path / "z.csv", "cell,markets\na,0\n"))


def test_json_helpers(tmp_path):
    path = write(tmp_path / "c.json", '{\n  "a": 1,\n  "b": [1, 2,]\n}\n')
    with pytest.raises(ValidationError, match="line 3: invalid JSON"):
        read_json(path)
    with pytest.raises(ValidationError, match="top level"):
        read_json(write(tmp_path / "l.json", "[1]"))
    assert json.loads(dump_json({"b": 1, "a": 2})) == {"b": 1, "a": 2}
    with pytest.raises(ValueError):
        dump_json({"x": float("nan")})
