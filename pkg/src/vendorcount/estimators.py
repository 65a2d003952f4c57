"""Closed-form ratio, subregion and subtotal estimators.

All estimators anchor on the citywide credentialed total ``N1`` (fixed by law)
and the respondent counts ``n0`` (no credential) and ``n1`` (credential).
Standard errors are delta-method plug-ins under the thinned Poisson model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Literal

from .core import Estimate, EstimationError, ValidationError


@dataclass(frozen=True)
class RatioInputs:
    N1: int
    n0: int
    n1: int

    def __post_init__(self) -> None:
        if self.N1 <= 0:
            raise ValidationError("N1 must be positive")
        if self.n0 < 0 or self.n1 < 0:
            raise ValidationError("respondent counts must be nonnegative")
        if self.n1 > self.N1:
            raise ValidationError(f"n1={self.n1} exceeds N1={self.N1}")


def _require_credentialed(n1A: int) -> None:
    if n1A < 1:
        raise EstimationError("no credentialed respondents: the ratio is undefined")


def _plugin(value: float, radicand: float, level: float, degenerate: bool) -> Estimate:
    if degenerate:
        return Estimate(value, None, level, degenerate=True, flags=("zero_count",))
    flags: tuple[str, ...] = ()
    if radicand < 0:
        radicand, flags = 0.0, ("negative_radicand",)
    return Estimate(value, value * math.sqrt(radicand), level, flags=flags)


def p_hat(inputs: RatioInputs) -> float:
    """Estimated response probability ``n1 / N1``."""
    _require_credentialed(inputs.n1)
    return inputs.n1 / inputs.N1


def ratio_lambda0(inputs: RatioInputs, level: float = 0.95) -> Estimate:
    """Expected number of uncredentialed vendors citywide, ``N1 n0 / n1``."""
    N1, n0, n1 = inputs.N1, inputs.n0, inputs.n1
    _require_credentialed(n1)
    value = N1 * n0 / n1
    if n0 == 0:
        return _plugin(0.0, 0.0, level, True)
    return _plugin(value, 1.0 / n0 + 1.0 / n1 - 1.0 / N1, level, False)


def total_tau(inputs: RatioInputs, level: float = 0.95) -> Estimate:
    """Expected total (both statuses); the fixed ``N1`` adds no variance."""
    return ratio_lambda0(inputs, level).shifted(inputs.N1)


def subregion_lambda0(N1: int, n0B: int, n1A: int, level: float = 0.95) -> Estimate:
    """Uncredentialed vendors in a subregion, calibrated by the citywide ``n1(A)``."""
    RatioInputs(N1, n0B, n1A)
    _require_credentialed(n1A)
    if n0B == 0:
        return _plugin(0.0, 0.0, level, True)
    value = N1 * n0B / n1A
    return _plugin(value, 1.0 / n0B + 1.0 / n1A - 1.0 / N1, level, False)


def subtotal_tau(
    N1: int, n0B: int, n1B: int, n1_complement: int, level: float = 0.95
) -> Estimate:
    """Total vendors (both statuses) in subregion B.

    The credentialed part of B is estimated as ``N1 n1(B) / n1(A)``, so the
    standard error carries an extra term for the split of ``n1(A)`` between
    B and its complement. When ``n0(B) == 0`` the plug-in is undefined and
    the estimate is returned without a standard error.
    """
    if min(n0B, n1B, n1_complement) < 0:
        raise ValidationError("respondent counts must be nonnegative")
    n1A = n1B + n1_complement
    RatioInputs(N1, n0B, n1A)
    _require_credentialed(n1A)
    value = N1 * (n0B + n1B) / n1A
    if n0B == 0:
        return Estimate(value, None, level, degenerate=True, flags=("zero_count",))
    lam = N1 * n0B / n1A
    radicand = 1.0 / n0B + 1.0 / n1A - 1.0 / N1 + n1B * n1_complement / (n1A * n0B**2)
    return Estimate(value, lam * math.sqrt(radicand), level)


def q_hat(n1B: int, n1A: int) -> float:
    """Share of credentialed respondents located in B."""
    _require_credentialed(n1A)
    if not 0 <= n1B <= n1A:
        raise ValidationError("need 0 <= n1(B) <= n1(A)")
    return n1B / n1A


def _poisson_quantile(rate: float, target: float) -> int:
    # smallest k with CDF(k) >= target, by direct summation of the mass function
    if rate == 0.0:
        return 0
    log_rate = math.log(rate)
    cdf = 0.0
    k = 0
    while True:
        cdf += math.exp(k * log_rate - rate - math.lgamma(k + 1))
        if cdf >= target:
            return k
        k += 1
        if k > rate + 50.0 * math.sqrt(rate) + 100:
            return k


def poisson_prediction_interval(rate: float, level: float = 0.95) -> tuple[int, int]:
    """Central prediction interval for a Poisson count with the given mean."""
    if rate < 0 or not math.isfinite(rate):
        raise ValidationError("rate must be finite and nonnegative")
    if not 0.0 < level < 1.0:
        raise ValidationError("level must lie in (0, 1)")
    alpha = 1.0 - level
    return _poisson_quantile(rate, alpha / 2.0), _poisson_quantile(rate, 1.0 - alpha / 2.0)


def combine(
    estimates: Iterable[Estimate],
    method: Literal["quadrature", "linear"] = "quadrature",
    constant: float = 0.0,
    level: float = 0.95,
) -> Estimate:
    """Sum estimates for independent strata (e.g. vendor classes).

    ``quadrature`` treats the components as independent; ``linear`` adds the
    standard errors, the conservative bound under perfect correlation.
    ``constant`` is added to the value with zero variance.
    """
    parts = list(estimates)
    value = sum(e.value for e in parts) + constant
    if any(e.se is None for e in parts):
        return Estimate(value, None, level, degenerate=True, flags=("zero_count",))
    ses = [e.se for e in parts]
    if method == "quadrature":
        se = math.sqrt(sum(s * s for s in ses))
    elif method == "linear":
        se = sum(ses)
    else:
        raise ValidationError(f"unknown combination method {method!r}")
    flags = tuple(sorted({f for e in parts for f in e.flags}))
    return Estimate(value, se, level, flags=flags)
