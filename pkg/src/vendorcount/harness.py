"""Monte Carlo checks of the analytic standard errors and a numeric MLE oracle."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import minimize

from .core import Estimate, EstimationError, Partition, ValidationError
from .estimators import RatioInputs, ratio_lambda0, subregion_lambda0, subtotal_tau
from .overdispersed import MarketModel, od_se_ratio, od_se_subregion, od_se_subtotal
from .simulator import (
    IntensityModel,
    ResponseModel,
    RngStream,
    SimCounts,
    simulate_model1,
    simulate_model2,
    simulate_model3,
)
from .weighted import WeightedCounts, weighted_ratio, weighted_subregion, weighted_subtotal

ESTIMATORS = ("ratio", "subregion", "subtotal")
SE_TOLERANCE = {1: 0.05, 2: 0.05, 3: 0.07}


@dataclass(frozen=True)
class ExperimentConfig:
    """One Monte Carlo experiment.

    ``subregion`` lists the cells of B for the subregion and subtotal
    estimators. Model 2 runs the weighted estimators with inverse-response
    weights; Model 3 runs both the Poisson-model and the overdispersed SEs.
    """

    model: int
    intensity: IntensityModel
    response: ResponseModel
    N1: int
    replicates: int
    seed: int
    subregion: tuple[str, ...] = ()
    markets: MarketModel | None = None
    estimators: tuple[str, ...] = ESTIMATORS
    level: float = 0.95

    def __post_init__(self) -> None:
        if self.model not in (1, 2, 3):
            raise ValidationError("model must be 1, 2 or 3")
        if self.replicates < 100:
            raise ValidationError("at least 100 replicates are required")
        if self.model == 3 and self.markets is None:
            raise ValidationError("Model 3 needs a market model")
        unknown = set(self.estimators) - set(ESTIMATORS)
        if unknown:
            raise ValidationError(f"unknown estimators {sorted(unknown)}")
        if set(self.estimators) - {"ratio"} and not self.subregion:
            raise ValidationError("subregion and subtotal estimators need a subregion")
        Partition(self.intensity.cells).subregion(self.subregion)
        object.__setattr__(self, "subregion", tuple(self.subregion))
        object.__setattr__(self, "estimators", tuple(self.estimators))

    def truth(self, estimator: str) -> float:
        I = self.intensity
        if estimator == "ratio":
            return I.lambda0_of()
        if estimator == "subregion":
            return I.lambda0_of(self.subregion)
        return I.lambda0_of(self.subregion) + I.q_of(self.subregion) * self.N1


@dataclass(frozen=True)
class EstimatorSummary:
    name: str
    truth: float
    coverage: float
    empirical_sd: float
    mean_se: float
    relative_se_error: float
    mean_estimate: float
    relative_bias: float
    used: int
    degenerate: int

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass(frozen=True)
class ExperimentReport:
    """Summaries per estimator plus the per-replicate rows behind them."""

    model: int
    replicates: int
    seed: int
    level: float
    summaries: dict[str, EstimatorSummary]
    rows: list[dict] = field(repr=False, default_factory=list)

    def __getitem__(self, name: str) -> EstimatorSummary:
        return self.summaries[name]

    def within_tolerance(self, name: str, tolerance: float | None = None) -> bool:
        tol = SE_TOLERANCE[self.model] if tolerance is None else tolerance
        return abs(self.summaries[name].relative_se_error) <= tol

    def as_dict(self) -> dict:
        return {
            "model": self.model,
            "replicates": self.replicates,
            "seed": self.seed,
            "level": self.level,
            "estimators": {k: v.as_dict() for k, v in self.summaries.items()},
        }


def _estimates(cfg: ExperimentConfig, sim: SimCounts) -> dict[str, Estimate]:
    cells = sim.cells
    inB = np.array([c in set(cfg.subregion) for c in cells])
    n0A, n1A = int(sim.n0.sum()), int(sim.n1.sum())
    n0B, n1B = int(sim.n0[inB].sum()), int(sim.n1[inB].sum())
    N1, level = cfg.N1, cfg.level
    out: dict[str, Estimate] = {}

    if cfg.model == 2:
        p0, _ = cfg.response.probabilities(cells, 0)
        p1, _ = cfg.response.probabilities(cells, 1)
        part = Partition(cells)
        wc = WeightedCounts.from_counts(
            part,
            list(sim.n0) + [0],
            list(sim.n1) + [0],
            list(cfg.response.p / p0) + [1.0],
            list(cfg.response.p / p1) + [1.0],
        )
        for name in cfg.estimators:
            if name == "ratio":
                out[name] = weighted_ratio(N1, wc, level)
            elif name == "subregion":
                out[name] = weighted_subregion(N1, wc, cfg.subregion, level)
            else:
                out[name] = weighted_subtotal(N1, wc, cfg.subregion, level)
        return out

    for name in cfg.estimators:
        if name == "ratio":
            out[name] = ratio_lambda0(RatioInputs(N1, n0A, n1A), level)
        elif name == "subregion":
            out[name] = subregion_lambda0(N1, n0B, n1A, level)
        else:
            out[name] = subtotal_tau(N1, n0B, n1B, n1A - n1B, level)
    if cfg.model == 3:
        m = cfg.markets
        for name in cfg.estimators:
            if name == "ratio":
                out["ratio_od"] = od_se_ratio(RatioInputs(N1, n0A, n1A), m, level)
            elif name == "subregion":
                out["subregion_od"] = od_se_subregion(N1, n0B, n1A, m, cfg.subregion, level)
            else:
                out["subtotal_od"] = od_se_subtotal(N1, n0B, n1B, n1A - n1B, m, cfg.subregion, level)
    return out


def _simulate(cfg: ExperimentConfig, rng: RngStream, rep: int) -> SimCounts:
    if cfg.model == 1:
        return simulate_model1(cfg.intensity, cfg.response, cfg.N1, rng, rep)
    if cfg.model == 2:
        return simulate_model2(cfg.intensity, cfg.response, cfg.N1, rng, rep)
    return simulate_model3(cfg.intensity, cfg.response, cfg.N1, cfg.markets, rng, rep)


def run_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    """Simulate ``cfg.replicates`` data sets and summarize every estimator.

    Replicates whose estimate is undefined or has no standard error are
    counted as degenerate and left out of the coverage and SE summaries.
    """
    rng = RngStream(cfg.seed)
    rows: list[dict] = []
    for rep in range(cfg.replicates):
        sim = _simulate(cfg, rng, rep)
        try:
            ests = _estimates(cfg, sim)
        except EstimationError:
            ests = {}
        names = _names(cfg)
        for name in names:
            est = ests.get(name)
            truth = cfg.truth(name.removesuffix("_od"))
            if est is None or est.se is None:
                rows.append({"replicate": rep, "estimator": name, "value": None, "se": None,
                             "covered": None, "degenerate": True})
                continue
            lo, hi = est.value - est.z * est.se, est.value + est.z * est.se
            rows.append({"replicate": rep, "estimator": name, "value": est.value, "se": est.se,
                         "covered": bool(lo <= truth <= hi), "degenerate": False})

    summaries = {}
    for name in _names(cfg):
        mine = [r for r in rows if r["estimator"] == name]
        good = [r for r in mine if not r["degenerate"]]
        truth = cfg.truth(name.removesuffix("_od"))
        values = np.array([r["value"] for r in good], dtype=float)
        ses = np.array([r["se"] for r in good], dtype=float)
        if values.size < 2:
            raise EstimationError(f"{name}: fewer than two usable replicates")
        sd = float(values.std(ddof=1))
        mean_se = float(ses.mean())
        summaries[name] = EstimatorSummary(
            name=name,
            truth=truth,
            coverage=float(np.mean([r["covered"] for r in good])),
            empirical_sd=sd,
            mean_se=mean_se,
            relative_se_error=(mean_se - sd) / sd if sd > 0 else math.nan,
            mean_estimate=float(values.mean()),
            relative_bias=float(values.mean() / truth - 1.0) if truth > 0 else math.nan,
            used=len(good),
            degenerate=len(mine) - len(good),
        )
    return ExperimentReport(cfg.model, cfg.replicates, cfg.seed, cfg.level, summaries, rows)


def _names(cfg: ExperimentConfig) -> list[str]:
    names = list(cfg.estimators)
    if cfg.model == 3:
        names += [f"{n}_od" for n in cfg.estimators]
    return names


def run_coverage(cfg: ExperimentConfig) -> ExperimentReport:
    """Empirical coverage of the nominal confidence intervals."""
    return run_experiment(cfg)


def se_vs_empirical(cfg: ExperimentConfig) -> ExperimentReport:
    """Mean plug-in SE against the Monte Carlo SD; see ``within_tolerance``."""
    return run_experiment(cfg)


# ---------------------------------------------------------------- MLE oracle


@dataclass(frozen=True)
class MLEResult:
    lambda0_hat: np.ndarray
    p_hat: float
    q_hat: np.ndarray
    loglik: float
    converged: bool


def model1_loglik(n0, n1, N1: int, lambda0, p: float, q) -> float:
    """Representative-survey log-likelihood, constants dropped."""
    n0, n1 = np.asarray(n0, float), np.asarray(n1, float)
    lambda0, q = np.asarray(lambda0, float), np.asarray(q, float)
    n1A = n1.sum()
    with np.errstate(divide="ignore", invalid="ignore"):
        ll = np.sum(np.where(n0 > 0, n0 * np.log(p * lambda0), 0.0) - p * lambda0)
        ll += np.sum(np.where(n1 > 0, n1 * np.log(p * q), 0.0))
        ll += (N1 - n1A) * math.log1p(-p) if N1 > n1A else 0.0
    return float(ll)


def oracle_mle(n0: Sequence[int], n1: Sequence[int], N1: int) -> MLEResult:
    """Maximize the representative-survey likelihood numerically.

    Interior coordinates are optimized with BFGS on log-intensities, logit p
    and softmax logits for q. Coordinates whose partial derivative keeps one
    sign over the whole feasible range (no uncredentialed respondents in a
    cell, no credentialed respondents in a cell, or every credential holder
    responding) sit on the boundary and are fixed there.
    """
    n0 = np.asarray(n0, dtype=float)
    n1 = np.asarray(n1, dtype=float)
    if n0.shape != n1.shape or n0.ndim != 1:
        raise ValidationError("n0 and n1 must be equal-length vectors")
    n1A = n1.sum()
    if n1A < 1:
        raise EstimationError("no credentialed respondents")
    if n1A > N1:
        raise ValidationError("sum(n1) exceeds N1")

    free0 = n0 > 0          # d/dlambda0 = n0/lambda0 - p < 0 when n0 = 0
    free1 = np.flatnonzero(n1 > 0)  # q_j = 0 maximizes when n1_j = 0
    p_free = n1A < N1       # otherwise the likelihood increases in p up to 1
    k0 = int(free0.sum())
    kq = free1.size - 1

    def unpack(x):
        a = x[:k0]
        logit_p = x[k0] if p_free else None
        z = np.append(x[k0 + p_free :], 0.0)
        return a, logit_p, z

    def negll(x):
        a, logit_p, z = unpack(x)
        log_p = -np.logaddexp(0.0, -logit_p) if p_free else 0.0
        log_1mp = -np.logaddexp(0.0, logit_p) if p_free else -np.inf
        p = math.exp(log_p)
        log_q = z - np.logaddexp.reduce(z)
        ll = np.sum(n0[free0] * (log_p + a) - p * np.exp(a))
        ll += np.sum(n1[free1] * (log_p + log_q))
        if p_free:
            ll += (N1 - n1A) * log_1mp
        g_a = n0[free0] - p * np.exp(a)
        grads = [g_a]
        if p_free:
            # d/dlogit p of each term
            g_p = (n0[free0].sum() + n1A) * (1 - p) - p * np.exp(a).sum() * (1 - p) - (N1 - n1A) * p
            grads.append([g_p])
        qv = np.exp(log_q)
        g_z = n1[free1] - n1A * qv
        grads.append(g_z[:-1])
        return -ll, -np.concatenate([np.asarray(g, float) for g in grads])

    p0 = min(max(n1A / N1 * 0.7, 1e-3), 0.99)
    x0 = np.concatenate(
        [
            np.log(n0[free0] / p0) + 0.3,
            [math.log(p0 / (1 - p0))] if p_free else [],
            np.zeros(kq),
        ]
    )
    res = minimize(negll, x0, jac=True, method="BFGS", options={"gtol": 1e-11, "maxiter": 10000})
    x = res.x
    # Newton polish with a finite-difference Hessian of the analytic gradient
    for _ in range(5):
        _, g = negll(x)
        h = np.empty((x.size, x.size))
        eps = 1e-6
        for i in range(x.size):
            e = np.zeros(x.size)
            e[i] = eps
            h[:, i] = (negll(x + e)[1] - negll(x - e)[1]) / (2 * eps)
        h = 0.5 * (h + h.T)
        try:
            x = x - np.linalg.solve(h, g)
        except np.linalg.LinAlgError:
            break
    a, logit_p, z = unpack(x)
    p = 1.0 / (1.0 + math.exp(-logit_p)) if p_free else 1.0
    lam = np.zeros_like(n0)
    lam[free0] = np.exp(a)
    q = np.zeros_like(n1)
    q[free1] = np.exp(z - np.logaddexp.reduce(z))
    grad_norm = float(np.abs(negll(x)[1]).max()) if x.size else 0.0
    return MLEResult(lam, p, q, model1_loglik(n0, n1, N1, lam, p, q), grad_norm < 1e-6)
