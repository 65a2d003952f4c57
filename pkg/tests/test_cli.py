import csv
import json

import pytest

from vendorcount import nyc
from vendorcount.cli import EXIT_DEGENERATE, EXIT_INVALID, EXIT_OK, main


def run(tmp_path, *args, name="out.json"):
    out = tmp_path / name
    code = main([*args, "--out", str(out)])
    return code, out


def config(tmp_path, data, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return str(path)


SCENARIO = {
    "model": 1, "cells": ["a", "b", "c"], "lambda0": [300, 200, 100], "lambda1": [100, 100, 50],
    "N1": 250, "p": 0.3, "replicates": 100, "seed": 9, "subregion": ["a"],
}


# ------------------------------------------------------------------ estimate


def test_estimate_builtin_json(tmp_path):
    code, out = run(tmp_path, "estimate")
    assert code == EXIT_OK
    data = json.loads(out.read_text())
    city = data["rows"][-1]
    assert city["respondents"] == 1905
    assert round(city["population"]) == 21857
    assert data["total_with_veterans_rounded"] == 23000
    assert (tmp_path / "out_estimates.png").stat().st_size > 0


def test_estimate_outputs_are_byte_stable(tmp_path):
    for fmt in ("json", "csv", "md"):
        main(["estimate", "--format", fmt, "--out", str(tmp_path / f"one.{fmt}")])
        main(["estimate", "--format", fmt, "--out", str(tmp_path / f"two.{fmt}")])
        assert (tmp_path / f"one.{fmt}").read_bytes() == (tmp_path / f"two.{fmt}").read_bytes()
    assert (tmp_path / "one_estimates.png").read_bytes() == (tmp_path / "two_estimates.png").read_bytes()


def test_estimate_with_market_clustering(tmp_path):
    code, out = run(tmp_path, "estimate", "--vendors-per-market", "5")
    assert code == EXIT_OK
    od = json.loads(out.read_text())["overdispersed"]
    assert od["food"]["moe"] == pytest.approx(3695, abs=1)


def test_export_then_estimate_round_trips(tmp_path):
    folder = tmp_path / "survey"
    assert main(["export", "--out", str(folder)]) == EXIT_OK
    code, out = run(tmp_path, "estimate", "--config", str(folder / "estimate.json"))
    assert code == EXIT_OK
    rows = json.loads(out.read_text())["rows"]
    by_area = {(r["area"], r["kind"] == "borough"): r for r in rows}
    for area, (respondents, _, _) in nyc.REPORTED.items():
        key = (area, area in nyc.BOROUGHS and area != "Staten Island")
        assert by_area[key]["respondents"] == respondents
    builtin = tmp_path / "builtin.json"
    main(["estimate", "--out", str(builtin)])
    assert json.loads(builtin.read_text())["rows"] == rows


def test_estimate_empty_records_is_degenerate(tmp_path, capsys):
    records = tmp_path / "records.csv"
    records.write_text("id,vendor_class,has_credential,veteran,cell\n")
    partition = tmp_path / "partition.csv"
    partition.write_text("cell,subregion,borough\na,,\n")
    cfg = config(tmp_path, {"records": "records.csv", "partition": "partition.csv"})
    code, out = run(tmp_path, "estimate", "--config", cfg, "--format", "md", name="r.md")
    assert code == EXIT_DEGENERATE
    assert "n/a" in out.read_text()
    assert "undefined" in capsys.readouterr().err


def test_estimate_invalid_record_row(tmp_path, capsys):
    records = tmp_path / "records.csv"
    records.write_text("id,vendor_class,has_credential,veteran,cell\n1,food,1,0,a\n2,fish,1,0,a\n")
    partition = tmp_path / "partition.csv"
    partition.write_text("cell\na\n")
    cfg = config(tmp_path, {"records": "records.csv", "partition": "partition.csv"})
    code, out = run(tmp_path, "estimate", "--config", cfg)
    assert code == EXIT_INVALID
    assert "line 3" in capsys.readouterr().err
    assert not out.exists()


def test_unknown_config_key(tmp_path, capsys):
    cfg = config(tmp_path, {"recrods": "x.csv"})
    assert main(["estimate", "--config", cfg]) == EXIT_INVALID
    assert "recrods" in capsys.readouterr().err


# ------------------------------------------------------------------ weighted


def test_weighted_builtin(tmp_path):
    code, out = run(tmp_path, "weighted")
    assert code == EXIT_OK
    data = json.loads(out.read_text())
    first = data["scenarios"][0]
    assert first["classes"]["food"]["bias_factor"] == pytest.approx(1.472, abs=1e-3)
    assert first["classes"]["merchandise-nonveteran"]["bias_factor"] == pytest.approx(1.09, abs=0.01)
    assert data["range"]["min"] <= data["unweighted_total"] <= data["range"]["max"]
    assert (tmp_path / "out_bias_factors.png").exists()


def test_weighted_identity_weights_give_factor_one(tmp_path):
    folder = tmp_path / "survey"
    main(["export", "--out", str(folder)])
    (folder / "ones.csv").write_text("cell,status,w_mean,w_second_moment\n*,both,1,1\n")
    cfg = config(folder, {
        "records": "records.csv", "partition": "partition.csv",
        "scenarios": [{"name": "flat", "weights": {"food": "ones.csv", "merchandise-nonveteran": "ones.csv"}}],
    }, name="ones.json")
    code, out = run(tmp_path, "weighted", "--config", cfg)
    assert code == EXIT_OK
    classes = json.loads(out.read_text())["scenarios"][0]["classes"]
    for cls in classes.values():
        assert cls["bias_factor"] == pytest.approx(1.0, rel=1e-12)
        assert cls["weighted_estimate"]["value"] == pytest.approx(cls["unweighted_total"], rel=1e-12)


def test_weighted_exported_scenarios_match_builtin(tmp_path):
    folder = tmp_path / "survey"
    main(["export", "--out", str(folder)])
    _, exported = run(tmp_path, "weighted", "--config", str(folder / "weighted.json"), name="a.json")
    _, builtin = run(tmp_path, "weighted", name="b.json")
    a, b = json.loads(exported.read_text()), json.loads(builtin.read_text())
    assert a["range"]["min"] == pytest.approx(b["range"]["min"], rel=1e-9)
    assert a["range"]["max"] == pytest.approx(b["range"]["max"], rel=1e-9)


# ------------------------------------------------------------------ simulate / coverage


def test_simulate_csv(tmp_path):
    cfg = config(tmp_path, SCENARIO)
    code, out = run(tmp_path, "simulate", "--config", cfg, "--format", "csv", name="counts.csv")
    assert code == EXIT_OK
    rows = list(csv.DictReader(out.open()))
    assert len(rows) == 100 * 3
    assert set(rows[0]) == {"replicate", "cell", "n0", "n1"}
    assert (tmp_path / "counts_counts.png").exists()
    again = tmp_path / "again.csv"
    main(["simulate", "--config", cfg, "--format", "csv", "--out", str(again)])
    assert again.read_bytes() == out.read_bytes()
    main(["simulate", "--config", cfg, "--format", "csv", "--seed", "10", "--out", str(again)])
    assert again.read_bytes() != out.read_bytes()


def test_coverage_report(tmp_path):
    cfg = config(tmp_path, dict(SCENARIO, replicates=300))
    code, out = run(tmp_path, "coverage", "--config", cfg)
    assert code == EXIT_OK
    data = json.loads(out.read_text())
    for summary in data["estimators"].values():
        assert 0.0 <= summary["coverage"] <= 1.0
    assert (tmp_path / "out_coverage.png").exists()


def test_coverage_model3_markets(tmp_path):
    cfg = config(tmp_path, dict(
        SCENARIO, model=3, replicates=200,
        markets={"status0": {"a": 60, "b": 40, "c": 20}, "status1": {"a": 20, "b": 20, "c": 10}},
    ))
    code, out = run(tmp_path, "coverage", "--config", cfg)
    assert code == EXIT_OK
    assert "ratio_od" in json.loads(out.read_text())["estimators"]


@pytest.mark.parametrize(
    "change",
    [{"model": 7}, {"p": 1.5}, {"N1": 2.5}, {"replicates": 10}, {"lambda0": [1, 2]}],
)
def test_invalid_scenarios(tmp_path, change):
    cfg = config(tmp_path, dict(SCENARIO, **change))
    assert main(["coverage", "--config", cfg]) == EXIT_INVALID


# ------------------------------------------------------------------ fit


def test_fit_writes_summary_and_draws(tmp_path):
    cfg = config(tmp_path, {
        "model": 4, "n0": [30, 12, 50], "n1": [10, 4, 20], "N1": 150,
        "chains": 2, "warmup": 500, "iters": 500, "thin": 1, "seed": 3,
    })
    code, out = run(tmp_path, "fit", "--config", cfg)
    assert code == EXIT_OK
    summary = json.loads(out.read_text())
    assert "data" in json.dumps(summary)
    draws = list(csv.DictReader((tmp_path / "out_draws.csv").open()))
    assert len(draws) == 2 * 500
    assert float(draws[0]["total"]) >= 150
    assert (tmp_path / "out_posterior.png").exists()


def test_fit_impossible_data_is_degenerate(tmp_path):
    cfg = config(tmp_path, {
        "model": 5, "n0": [5, 5], "n1": [0, 3], "N1": 20, "rho": [2.0, 2.0],
        "chains": 1, "warmup": 10, "iters": 10,
    })
    assert main(["fit", "--config", cfg]) == EXIT_DEGENERATE


def test_seed_must_be_u64(capsys):
    with pytest.raises(SystemExit):
        main(["simulate", "--seed", "-1"])
