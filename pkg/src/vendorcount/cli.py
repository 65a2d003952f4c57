"""Command-line entry point: ``vendorcount <subcommand> [--config PATH] ...``.

Without ``--config`` the estimate, weighted and fit subcommands run on the
builtin New York City tabulation. Relative paths inside a config file are
resolved against the config file's folder.

Exit codes: 0 success, 2 invalid input, 3 an estimate was undefined (the
partial report is still written).
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import math
import sys
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from . import nyc
from .core import (
    DEFAULT_CAPS,
    ESTIMATION_CLASSES,
    VETERAN_ADDON,
    Estimate,
    EstimationError,
    Partition,
    ValidationError,
    aggregate,
)
from .estimators import RatioInputs
from .harness import ESTIMATORS, ExperimentConfig, run_experiment
from .hierarchical import FitConfig, HierData, HyperPrior, InitializationError, fit, split_rhat, summarize
from .io import dump_json, market_model, read_json, read_markets, read_partition, read_records, read_weights
from .io import write_partition, write_records, write_weights
from .overdispersed import MarketModel, od_se_ratio
from .plotting import (
    figure_path,
    plot_area_estimates,
    plot_bias_factors,
    plot_counts,
    plot_coverage,
    plot_posterior,
)
from .report import AreaLayout, PopulationReport, build_report
from .simulator import (
    IntensityModel,
    ResponseModel,
    RngStream,
    simulate_model1,
    simulate_model2,
    simulate_model3,
)
from .weighted import WeightedCounts, WeightModel, bias_factor, weighted_counts, weighted_ratio

EXIT_OK, EXIT_INVALID, EXIT_DEGENERATE = 0, 2, 3

log = logging.getLogger("vendorcount")


class Outcome:
    """Rendered output of a subcommand plus side files written next to ``--out``."""

    def __init__(self, text: str, degenerate: bool = False) -> None:
        self.text = text
        self.degenerate = degenerate
        self.figures: list[Callable[[Path], Path]] = []
        self.side_files: dict[str, str] = {}


# ------------------------------------------------------------------ config


class Config:
    def __init__(self, data: dict[str, Any], base: Path, allowed: Sequence[str]) -> None:
        unknown = sorted(set(data) - set(allowed))
        if unknown:
            raise ValidationError(f"unknown config keys {unknown}; allowed: {sorted(allowed)}")
        self.data = data
        self.base = base

    def get(self, key: str, default: Any = None) -> Any:
        return self.data.get(key, default)

    def path(self, key: str) -> Path | None:
        value = self.data.get(key)
        if value is None:
            return None
        if not isinstance(value, str):
            raise ValidationError(f"config key {key!r} must be a path string")
        return self.resolve(value)

    def resolve(self, value: str) -> Path:
        p = Path(value)
        return p if p.is_absolute() else self.base / p

    def require(self, key: str) -> Any:
        if key not in self.data:
            raise ValidationError(f"config is missing {key!r}")
        return self.data[key]


def _load(path: str | None, allowed: Sequence[str]) -> Config | None:
    if path is None:
        return None
    return Config(read_json(path), Path(path).resolve().parent, allowed)


def _caps(cfg: Config | None) -> dict[str, int]:
    caps = dict(DEFAULT_CAPS)
    if cfg is not None and cfg.get("caps") is not None:
        given = cfg.get("caps")
        if not isinstance(given, dict) or set(given) - set(ESTIMATION_CLASSES):
            raise ValidationError(f"caps must map a subset of {ESTIMATION_CLASSES} to integers")
        caps.update(given)
    for cls, v in caps.items():
        if not isinstance(v, int) or isinstance(v, bool) or v <= 0:
            raise ValidationError(f"cap for {cls} must be a positive integer, got {v!r}")
    return caps


def _level(cfg: Config | None) -> float:
    level = 0.95 if cfg is None else cfg.get("level", 0.95)
    if not isinstance(level, (int, float)) or not 0 < level < 1:
        raise ValidationError(f"level must lie in (0, 1), got {level!r}")
    return float(level)


def _addon(cfg: Config | None) -> float:
    addon = VETERAN_ADDON if cfg is None else cfg.get("veteran_addon", VETERAN_ADDON)
    if not isinstance(addon, (int, float)) or addon < 0:
        raise ValidationError(f"veteran_addon must be a nonnegative number, got {addon!r}")
    return float(addon)


def _survey(cfg: Config | None):
    """Records and layout from the config, or the builtin tabulation."""
    if cfg is None or cfg.get("records") is None:
        return list(nyc.records()), AreaLayout.from_rows(nyc.layout_rows())
    rows = read_partition(cfg.path("partition")) if cfg.get("partition") else None
    if rows is None:
        raise ValidationError("config with records needs a partition map")
    layout = AreaLayout.from_rows(rows, cfg.get("city_label", "New York City"))
    return read_records(cfg.path("records"), layout.partition), layout


# ------------------------------------------------------------------ estimate

ESTIMATE_KEYS = ("records", "partition", "caps", "veteran_addon", "level", "markets",
                 "vendors_per_market", "city_label")


def _overdispersed(report: PopulationReport, records, layout: AreaLayout, cfg: Config | None,
                   vpm: float | None, level: float) -> dict[str, Estimate]:
    market_paths = {} if cfg is None else (cfg.get("markets") or {})
    if not isinstance(market_paths, dict):
        raise ValidationError("markets must map a vendor class to a markets CSV")
    if vpm is None and not market_paths:
        return {}
    out = {}
    for cls in ESTIMATION_CLASSES:
        table = aggregate(records, layout.partition, cls, report.caps[cls])
        try:
            inputs = RatioInputs(table.N1_total, table.n0_total, table.n1_total)
        except ValidationError:
            continue
        if cls in market_paths:
            markets = market_model(read_markets(cfg.resolve(market_paths[cls])))
            markets = MarketModel.citywide(markets.m0(), markets.m1())
        elif vpm is not None:
            if table.n1_total == 0 or table.n0_total == 0:
                continue
            lam0 = inputs.N1 * inputs.n0 / inputs.n1
            markets = MarketModel.from_vendors_per_market({"A": lam0}, {"A": inputs.N1}, vpm)
        else:
            continue
        try:
            out[cls] = od_se_ratio(inputs, markets, level).shifted(inputs.N1)
        except EstimationError:
            continue
    return out


def cmd_estimate(args: argparse.Namespace) -> Outcome:
    cfg = _load(args.config, ESTIMATE_KEYS)
    records, layout = _survey(cfg)
    level = _level(cfg)
    report = build_report(records, layout, _caps(cfg), _addon(cfg), level)
    vpm = args.vendors_per_market
    if vpm is None and cfg is not None:
        vpm = cfg.get("vendors_per_market")
    if vpm is not None and not (isinstance(vpm, (int, float)) and vpm > 0):
        raise ValidationError(f"vendors per market must be positive, got {vpm!r}")
    extra = _overdispersed(report, records, layout, cfg, vpm, level)
    if extra:
        report = report.with_overdispersion(extra)
    outcome = Outcome(report.render(args.format), report.degenerate)
    rows = [r for r in report.rows if r.kind == "subregion"]
    outcome.figures.append(
        lambda out: plot_area_estimates(
            [r.area for r in rows],
            [r.quadrature.value for r in rows],
            [np.nan if r.quadrature.moe is None else r.quadrature.moe for r in rows],
            figure_path(out, "estimates"),
            f"{report.citywide.area}: estimated vendors by area",
        )
    )
    return outcome


# ------------------------------------------------------------------ weighted

WEIGHTED_KEYS = ("records", "partition", "caps", "veteran_addon", "level", "scenarios", "city_label")


def _scenario_counts(entry: dict, cfg: Config | None, records, partition: Partition, cls: str,
                     n0: int, n1: int) -> WeightedCounts | None:
    if "weights" in entry:
        paths = entry["weights"]
        if cls not in paths:
            return None
        cov = (entry.get("covariance") or {}).get(cls)
        model = read_weights(cfg.resolve(paths[cls]), cfg.resolve(cov) if cov else None, partition)
        return weighted_counts(records, model, partition, cls)
    pairs = entry.get("weighted_counts", {})
    if cls not in pairs:
        return None
    pair = pairs[cls]
    if not (isinstance(pair, list) and len(pair) == 2 and all(isinstance(v, (int, float)) for v in pair)):
        raise ValidationError(f"scenario {entry.get('name')!r}: weighted_counts for {cls} must be [n0w, n1w]")
    return WeightedCounts.single_region(float(pair[0]), float(pair[1]), n0=n0, n1=n1)


def _builtin_scenarios() -> list[dict]:
    return [{"name": name, "weighted_counts": {c: list(v) for c, v in pairs.items()}}
            for name, pairs in nyc.WEIGHTING_SCENARIOS.items()]


def cmd_weighted(args: argparse.Namespace) -> Outcome:
    cfg = _load(args.config, WEIGHTED_KEYS)
    records, layout = _survey(cfg)
    caps, level, addon = _caps(cfg), _level(cfg), _addon(cfg)
    scenarios = _builtin_scenarios() if cfg is None or cfg.get("scenarios") is None else cfg.get("scenarios")
    if not isinstance(scenarios, list) or not scenarios:
        raise ValidationError("scenarios must be a nonempty list")
    base = build_report(records, layout, caps, addon, level)
    unweighted = {cls: base.citywide.by_class[cls].value for cls in ESTIMATION_CLASSES}
    tables = {cls: aggregate(records, layout.partition, cls, caps[cls]) for cls in ESTIMATION_CLASSES}
    degenerate = base.degenerate

    results = []
    for i, entry in enumerate(scenarios):
        if not isinstance(entry, dict) or "name" not in entry:
            raise ValidationError(f"scenario {i}: needs a name")
        if ("weights" in entry) == ("weighted_counts" in entry):
            raise ValidationError(f"scenario {entry['name']!r}: give exactly one of weights or weighted_counts")
        if "weights" in entry and cfg is None:
            raise ValidationError("weight files need a config file")
        classes = {}
        adjusted_sum = addon
        for cls in ESTIMATION_CLASSES:
            t = tables[cls]
            wc = _scenario_counts(entry, cfg, records, layout.partition, cls, t.n0_total, t.n1_total)
            if wc is None:
                factor, n0w, n1w, west = 1.0, None, None, None
            else:
                sums = wc.region(wc.mask(None))
                n0w, n1w = sums["n0w"], sums["n1w"]
                try:
                    factor = bias_factor(n0w, n1w, t.n0_total, t.n1_total)
                    west = weighted_ratio(t.N1_total, wc, level).shifted(t.N1_total)
                except (EstimationError, ValidationError) as exc:
                    log.warning("scenario %s, %s: %s", entry["name"], cls, exc)
                    factor, west, degenerate = math.nan, None, True
            adjusted = factor * unweighted[cls]
            adjusted_sum += adjusted
            classes[cls] = {
                "n0w": n0w,
                "n1w": n1w,
                "n0": t.n0_total,
                "n1": t.n1_total,
                "bias_factor": None if math.isnan(factor) else factor,
                "unweighted_total": None if math.isnan(unweighted[cls]) else unweighted[cls],
                "adjusted_total": None if math.isnan(adjusted) else adjusted,
                "weighted_estimate": None if west is None else west.as_dict(),
            }
        results.append({
            "name": entry["name"],
            "classes": classes,
            "adjusted_total": None if math.isnan(adjusted_sum) else adjusted_sum,
        })

    valid = [r for r in results if r["adjusted_total"] is not None]
    baseline = base.total_with_veterans
    summary = {
        "level": level,
        "veteran_addon": addon,
        "unweighted_total": None if math.isnan(baseline) else baseline,
        "scenarios": results,
        "range": None if not valid else {
            "min": min(r["adjusted_total"] for r in valid),
            "max": max(r["adjusted_total"] for r in valid),
            "min_scenario": min(valid, key=lambda r: r["adjusted_total"])["name"],
            "max_scenario": max(valid, key=lambda r: r["adjusted_total"])["name"],
        },
    }
    outcome = Outcome(_render_weighted(summary, args.format), degenerate)
    factors = {r["name"]: {c: v["bias_factor"] for c, v in r["classes"].items() if v["bias_factor"] is not None}
               for r in results}
    outcome.figures.append(lambda out: plot_bias_factors(factors, figure_path(out, "bias_factors")))
    return outcome


def _render_weighted(summary: dict, fmt: str) -> str:
    if fmt == "json":
        return dump_json(summary)
    cols = ("n0w", "n1w", "bias_factor", "unweighted_total", "adjusted_total")
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("scenario", "vendor_class") + cols)
        for r in summary["scenarios"]:
            for cls, v in r["classes"].items():
                w.writerow([r["name"], cls] + ["" if v[c] is None else repr(v[c]) for c in cols])
            w.writerow([r["name"], "all_with_veterans", "", "", "", "",
                        "" if r["adjusted_total"] is None else repr(r["adjusted_total"])])
        return buf.getvalue()
    lines = ["| Scenario | Class | Bias factor | Change | Adjusted total |", "|:--|:--|--:|--:|--:|"]
    for r in summary["scenarios"]:
        for cls, v in r["classes"].items():
            f = v["bias_factor"]
            change = "n/a" if f is None else f"{(f - 1) * 100:+.0f}%"
            fs = "n/a" if f is None else f"{f:.3f}"
            adj = "n/a" if v["adjusted_total"] is None else f"{v['adjusted_total']:,.0f}"
            lines.append(f"| {r['name']} | {cls} | {fs} | {change} | {adj} |")
    rng = summary["range"]
    lines.append("")
    if rng is not None:
        lines.append(
            f"Range across scenarios, veterans included: {rng['min']:,.0f} ({rng['min_scenario']}) "
            f"to {rng['max']:,.0f} ({rng['max_scenario']})."
        )
    return "\n".join(lines) + "\n"


# ------------------------------------------------------------------ simulate / coverage

SCENARIO_KEYS = ("model", "cells", "lambda0", "lambda1", "N1", "p", "epsilon0", "epsilon1",
                 "markets", "replicates", "seed", "mnh_method", "subregion", "estimators", "level")


def _scenario(cfg: Config):
    model = cfg.require("model")
    if model not in (1, 2, 3):
        raise ValidationError(f"model must be 1, 2 or 3, got {model!r}")
    intensity = IntensityModel(tuple(cfg.require("cells")), tuple(cfg.require("lambda0")),
                               tuple(cfg.require("lambda1")))
    response = ResponseModel(float(cfg.require("p")), dict(cfg.get("epsilon0") or {}),
                             dict(cfg.get("epsilon1") or {}))
    markets = None
    if cfg.get("markets") is not None:
        m = cfg.get("markets")
        if isinstance(m, str):
            markets = market_model(read_markets(cfg.resolve(m)))
        elif isinstance(m, dict) and {"status0", "status1"} <= set(m):
            markets = MarketModel(m["status0"], m["status1"])
        else:
            raise ValidationError("markets must be a CSV path or {status0: {...}, status1: {...}}")
    N1 = cfg.require("N1")
    if not isinstance(N1, int) or isinstance(N1, bool):
        raise ValidationError(f"N1 must be an integer, got {N1!r}")
    return model, intensity, response, markets, N1


def _seed(args: argparse.Namespace, cfg: Config | None) -> int:
    if args.seed is not None:
        return args.seed
    seed = 0 if cfg is None else cfg.get("seed", 0)
    if not isinstance(seed, int) or not 0 <= seed < 2**64:
        raise ValidationError(f"seed must be an unsigned 64-bit integer, got {seed!r}")
    return seed


def cmd_simulate(args: argparse.Namespace) -> Outcome:
    cfg = _load(args.config, SCENARIO_KEYS)
    if cfg is None:
        raise ValidationError("simulate needs --config")
    model, intensity, response, markets, N1 = _scenario(cfg)
    reps = cfg.get("replicates", 1)
    if not isinstance(reps, int) or reps < 1:
        raise ValidationError("replicates must be a positive integer")
    rng = RngStream(_seed(args, cfg))
    method = cfg.get("mnh_method", "dirichlet")
    sims = []
    for rep in range(reps):
        if model == 1:
            sims.append(simulate_model1(intensity, response, N1, rng, rep))
        elif model == 2:
            sims.append(simulate_model2(intensity, response, N1, rng, rep))
        else:
            if markets is None:
                raise ValidationError("model 3 needs markets")
            sims.append(simulate_model3(intensity, response, N1, markets, rng, rep, method))
    cells = intensity.cells
    if args.format == "json":
        text = dump_json({
            "model": model, "seed": rng.seed, "N1": N1, "cells": list(cells),
            "replicates": [{"n0": s.n0.tolist(), "n1": s.n1.tolist(), "remainder": s.remainder,
                            "flags": list(s.flags)} for s in sims],
        })
    else:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        if args.format == "csv":
            w.writerow(("replicate", "cell", "n0", "n1"))
            for rep, s in enumerate(sims):
                for c, a, b in zip(cells, s.n0, s.n1):
                    w.writerow((rep, c, int(a), int(b)))
            text = buf.getvalue()
        else:
            n0m = np.mean([s.n0 for s in sims], axis=0)
            n1m = np.mean([s.n1 for s in sims], axis=0)
            lines = [f"Model {model}, {reps} replicate(s), seed {rng.seed}", "",
                     "| Cell | Mean n0 | Mean n1 |", "|:--|--:|--:|"]
            lines += [f"| {c} | {a:.2f} | {b:.2f} |" for c, a, b in zip(cells, n0m, n1m)]
            text = "\n".join(lines) + "\n"
    outcome = Outcome(text)
    n0m = np.mean([s.n0 for s in sims], axis=0)
    n1m = np.mean([s.n1 for s in sims], axis=0)
    outcome.figures.append(lambda out: plot_counts(cells, n0m, n1m, figure_path(out, "counts")))
    return outcome


def cmd_coverage(args: argparse.Namespace) -> Outcome:
    cfg = _load(args.config, SCENARIO_KEYS)
    if cfg is None:
        raise ValidationError("coverage needs --config")
    model, intensity, response, markets, N1 = _scenario(cfg)
    exp = ExperimentConfig(
        model, intensity, response, N1, cfg.get("replicates", 1000), _seed(args, cfg),
        tuple(cfg.get("subregion", ())), markets, tuple(cfg.get("estimators", ESTIMATORS)), _level(cfg),
    )
    report = run_experiment(exp)
    summaries = report.as_dict()
    if args.format == "json":
        text = dump_json(summaries)
    elif args.format == "csv":
        buf = io.StringIO()
        w = csv.DictWriter(buf, ("replicate", "estimator", "value", "se", "covered", "degenerate"),
                           lineterminator="\n")
        w.writeheader()
        for row in report.rows:
            w.writerow({k: ("" if v is None else repr(v) if isinstance(v, float) else v) for k, v in row.items()})
        text = buf.getvalue()
    else:
        lines = [f"Model {report.model}, {report.replicates} replicates, seed {report.seed}", "",
                 "| Estimator | Coverage | Empirical SD | Mean SE | SE error | Degenerate |",
                 "|:--|--:|--:|--:|--:|--:|"]
        for s in report.summaries.values():
            lines.append(f"| {s.name} | {s.coverage:.3f} | {s.empirical_sd:.2f} | {s.mean_se:.2f} | "
                         f"{s.relative_se_error:+.3f} | {s.degenerate} |")
        text = "\n".join(lines) + "\n"
    outcome = Outcome(text)
    cov = {k: v.coverage for k, v in report.summaries.items()}
    outcome.figures.append(lambda out: plot_coverage(cov, report.level, figure_path(out, "coverage")))
    return outcome


# ------------------------------------------------------------------ fit

FIT_KEYS = ("model", "K", "n0", "n1", "N1", "rho", "chains", "warmup", "iters", "thin", "seed",
            "level", "prior", "step_scale")


def _prior(choice: Any) -> HyperPrior:
    if choice in (None, "flat"):
        return HyperPrior()
    if choice == "proper":
        return HyperPrior(mu_p=(math.log(0.3 / 0.7), 0.5), mu_0=(math.log(300.0), 0.5),
                          sigma_p=0.5, sigma_0=0.5, sigma_1=0.5)
    if isinstance(choice, dict):
        try:
            return HyperPrior(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in choice.items()})
        except TypeError as exc:
            raise ValidationError(f"prior: {exc}") from None
    raise ValidationError(f"prior must be 'flat', 'proper' or an object, got {choice!r}")


def _fit_datasets(cfg: Config | None) -> dict[str, HierData]:
    if cfg is None or cfg.get("n0") is None:
        out = {}
        for cls in ESTIMATION_CLASSES:
            t = nyc.count_table(cls)
            out[cls] = HierData(np.array(t.n0), np.array(t.n1), t.N1_total)
        return out
    data = HierData(np.array(cfg.require("n0")), np.array(cfg.require("n1")), cfg.require("N1"),
                    None if cfg.get("rho") is None else np.array(cfg.get("rho"), dtype=float))
    K = cfg.get("K")
    if K is not None and K != data.K:
        raise ValidationError(f"K = {K} but the count vectors have {data.K} entries")
    return {"data": data}


def cmd_fit(args: argparse.Namespace) -> Outcome:
    cfg = _load(args.config, FIT_KEYS)
    get = (lambda k, d: d) if cfg is None else cfg.get
    model = get("model", 4)
    if model not in (4, 5):
        raise ValidationError(f"model must be 4 or 5, got {model!r}")
    datasets = _fit_datasets(cfg)
    if model == 5 and any(d.rho is None for d in datasets.values()):
        raise ValidationError("model 5 needs rho (vendors per market per cell)")
    seed = _seed(args, cfg)
    level = _level(cfg)
    fit_cfg = FitConfig(
        chains=get("chains", 4), warmup=get("warmup", 8000), iters=get("iters", 16000),
        seed=seed, step_scale=get("step_scale", 1.0), thin=get("thin", 8), prior=_prior(get("prior", None)),
    )
    draws = {}
    for i, (name, data) in enumerate(datasets.items()):
        cfg_i = FitConfig(fit_cfg.chains, fit_cfg.warmup, fit_cfg.iters, seed + i, fit_cfg.step_scale,
                          fit_cfg.thin, fit_cfg.prior)
        try:
            draws[name] = fit(model, data, cfg_i)
        except InitializationError as exc:
            raise EstimationError(str(exc)) from None

    summary: dict[str, Any] = {"model": model, "seed": seed, "level": level, "fits": {}}
    for name, d in draws.items():
        s = summarize(d, level)
        s["ci"] = list(s["ci"])
        s["split_rhat"] = split_rhat(d)
        summary["fits"][name] = s
    first = next(iter(draws.values()))
    combined_total = sum(d.total for d in draws.values())
    if len(draws) > 1:
        lo, hi = np.quantile(combined_total, [(1 - level) / 2, (1 + level) / 2])
        summary["combined"] = {"mean": float(combined_total.mean()), "ci": [float(lo), float(hi)]}

    if args.format == "json":
        text = dump_json(summary)
    elif args.format == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("fit", "mean", "sd", "ci_lower", "ci_upper", "split_rhat"))
        for name, s in summary["fits"].items():
            w.writerow((name, repr(s["mean"]), repr(s["sd"]), repr(s["ci"][0]), repr(s["ci"][1]),
                        repr(s["split_rhat"])))
        if "combined" in summary:
            c = summary["combined"]
            w.writerow(("combined", repr(c["mean"]), "", repr(c["ci"][0]), repr(c["ci"][1]), ""))
        text = buf.getvalue()
    else:
        lines = [f"Model {model} posterior for the vendor total ({level:.0%} interval)", "",
                 "| Fit | Mean | Interval | Split R-hat |", "|:--|--:|--:|--:|"]
        for name, s in summary["fits"].items():
            lines.append(f"| {name} | {s['mean']:,.0f} | {s['ci'][0]:,.0f} to {s['ci'][1]:,.0f} | "
                         f"{s['split_rhat']:.3f} |")
        if "combined" in summary:
            c = summary["combined"]
            lines.append(f"| combined | {c['mean']:,.0f} | {c['ci'][0]:,.0f} to {c['ci'][1]:,.0f} | |")
        text = "\n".join(lines) + "\n"

    outcome = Outcome(text)
    outcome.side_files["draws.csv"] = _draws_csv(draws)
    outcome.figures.append(lambda out: plot_posterior(combined_total, first.chain, figure_path(out, "posterior")))
    return outcome


def _draws_csv(draws: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for k, (name, d) in enumerate(draws.items()):
        if k == 0:
            w.writerow(("fit", "chain", "iteration", "total") + d.names)
        for i in range(d.total.size):
            w.writerow([name, int(d.chain[i]), int(d.iteration[i]), repr(float(d.total[i]))]
                       + [repr(float(v)) for v in d.values[i]])
    return buf.getvalue()


# ------------------------------------------------------------------ export


def cmd_export(args: argparse.Namespace) -> Outcome:
    """Write the builtin tabulation and a ready-to-run config into a folder."""
    if args.out is None:
        raise ValidationError("export needs --out <folder>")
    folder = Path(args.out)
    folder.mkdir(parents=True, exist_ok=True)
    write_records(folder / "records.csv", list(nyc.records()))
    write_partition(folder / "partition.csv", nyc.layout_rows())
    scenarios = []
    for name in nyc.WEIGHTING_SCENARIOS:
        paths = {}
        for cls in ESTIMATION_CLASSES:
            fname = f"weights_{name}_{cls}.csv"
            write_weights(folder / fname, nyc.scenario_weights(name, cls))
            paths[cls] = fname
        scenarios.append({"name": name, "weights": paths})
    (folder / "estimate.json").write_text(dump_json({"records": "records.csv", "partition": "partition.csv"}))
    (folder / "weighted.json").write_text(dump_json(
        {"records": "records.csv", "partition": "partition.csv", "scenarios": scenarios}))
    return Outcome("")


# ------------------------------------------------------------------ main

COMMANDS = {
    "estimate": (cmd_estimate, "population table with margins of error"),
    "weighted": (cmd_weighted, "sensitivity of the totals to response weighting"),
    "simulate": (cmd_simulate, "simulate survey counts from a scenario"),
    "coverage": (cmd_coverage, "Monte Carlo coverage of the confidence intervals"),
    "fit": (cmd_fit, "hierarchical Bayesian fit of per-cell counts"),
    "export": (cmd_export, "write the builtin survey files and configs to --out"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vendorcount", description="Street-vendor population estimates.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, helptext) in COMMANDS.items():
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", help="JSON config (default: builtin data where supported)")
        p.add_argument("--seed", type=_u64, help="unsigned 64-bit seed, overrides the config")
        p.add_argument("--out", help="output file; figures and side files go next to it")
        p.add_argument("--format", choices=("json", "csv", "md"), default="json")
        if name == "estimate":
            p.add_argument("--vendors-per-market", type=float, dest="vendors_per_market",
                           help="add clustering-aware citywide standard errors")
    return parser


def _u64(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be in [0, 2**64)")
    return value


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handler = COMMANDS[args.command][0]
    try:
        outcome = handler(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except EstimationError as exc:
        print(f"estimation failed: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE

    if args.command != "export":
        if args.out is None:
            sys.stdout.write(outcome.text)
        else:
            out = Path(args.out)
            out.parent.mkdir(parents=True, exist_ok=True)
            out.write_text(outcome.text, encoding="utf-8")
            for suffix, text in outcome.side_files.items():
                out.with_name(f"{out.stem}_{suffix}").write_text(text, encoding="utf-8")
            for make in outcome.figures:
                make(out)
    if outcome.degenerate:
        print("warning: at least one estimate is undefined; see the report flags", file=sys.stderr)
        return EXIT_DEGENERATE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
