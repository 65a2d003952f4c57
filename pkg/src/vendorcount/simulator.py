"""Cell-level generators for the representative, differential-response and
market-clustering survey models.

Every draw comes from a counter-based substream keyed by
``(seed, replicate, cell, status)`` so results do not depend on the order in
which replicates or cells are simulated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Mapping, Sequence

import numpy as np

from .core import CountTable, Partition, ValidationError
from .overdispersed import MarketModel

JOINT = -1  # cell index of the joint multinomial stream


@dataclass(frozen=True)
class RngStream:
    """Deterministic substreams from one 64-bit seed.

    ``generator(rep, cell, status)`` seeds a Philox generator whose counter
    starts at ``[0, rep, cell + 1, status]``; cell ``-1`` addresses streams
    that span all cells.
    """

    seed: int

    def __post_init__(self) -> None:
        if not 0 <= int(self.seed) < 2**64:
            raise ValidationError("seed must be an unsigned 64-bit integer")

    def generator(self, replicate: int, cell: int = JOINT, status: int = 0) -> np.random.Generator:
        if replicate < 0 or cell < JOINT or status < 0:
            raise ValidationError("substream indices must be nonnegative (cell may be -1)")
        bitgen = np.random.Philox(key=int(self.seed), counter=[0, replicate, cell + 1, status])
        return np.random.Generator(bitgen)


@dataclass(frozen=True)
class IntensityModel:
    """Expected vendor counts per cell for each credential status."""

    cells: tuple[str, ...]
    lambda0: tuple[float, ...]
    lambda1: tuple[float, ...]

    def __post_init__(self) -> None:
        cells = tuple(self.cells)
        lam0 = tuple(float(v) for v in self.lambda0)
        lam1 = tuple(float(v) for v in self.lambda1)
        if not cells or len(lam0) != len(cells) or len(lam1) != len(cells):
            raise ValidationError("intensity vectors must match the cell list")
        if min(lam0 + lam1) < 0 or not all(map(math.isfinite, lam0 + lam1)):
            raise ValidationError("intensities must be finite and nonnegative")
        if sum(lam1) <= 0:
            raise ValidationError("credentialed intensity must be positive somewhere")
        Partition(cells)
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "lambda0", lam0)
        object.__setattr__(self, "lambda1", lam1)

    @property
    def size(self) -> int:
        return len(self.cells)

    @property
    def q(self) -> np.ndarray:
        lam1 = np.array(self.lambda1)
        return lam1 / lam1.sum()

    def lambda0_of(self, cells: Sequence[str] | None = None) -> float:
        if cells is None:
            return float(sum(self.lambda0))
        chosen = set(cells)
        return float(sum(v for c, v in zip(self.cells, self.lambda0) if c in chosen))

    def q_of(self, cells: Sequence[str]) -> float:
        chosen = set(cells)
        return float(sum(v for c, v in zip(self.cells, self.q) if c in chosen))


@dataclass(frozen=True)
class ResponseModel:
    """Baseline response probability with optional per-cell deviations by status.

    Effective probabilities ``p + eps`` are clamped into ``(0, 1]``;
    :meth:`probabilities` reports whether that happened.
    """

    p: float
    epsilon0: Mapping[str, float] = field(default_factory=dict)
    epsilon1: Mapping[str, float] = field(default_factory=dict)

    FLOOR = 1e-9

    def __post_init__(self) -> None:
        if not 0.0 < self.p <= 1.0:
            raise ValidationError(f"response probability must lie in (0, 1], got {self.p}")

    def probabilities(self, cells: Sequence[str], status: int) -> tuple[np.ndarray, bool]:
        eps = self.epsilon0 if status == 0 else self.epsilon1
        unknown = set(eps) - set(cells)
        if unknown:
            raise ValidationError(f"response deviations for unknown cells {sorted(unknown)}")
        raw = np.array([self.p + float(eps.get(c, 0.0)) for c in cells])
        probs = np.clip(raw, self.FLOOR, 1.0)
        return probs, bool(np.any(probs != raw))

    @property
    def representative(self) -> bool:
        return not any(self.epsilon0.values()) and not any(self.epsilon1.values())


@dataclass(frozen=True)
class SimCounts:
    """Simulated respondent counts per cell; ``remainder`` = N1 - n1(A)."""

    cells: tuple[str, ...]
    n0: np.ndarray
    n1: np.ndarray
    N1: int
    flags: tuple[str, ...] = ()

    @property
    def remainder(self) -> int:
        return int(self.N1 - self.n1.sum())

    def to_table(self, vendor_class: str = "food") -> CountTable:
        part = Partition(self.cells)
        return CountTable(
            vendor_class, part, tuple(self.n0) + (0,), tuple(self.n1) + (0,), self.N1
        )


def _check_N1(N1: int) -> int:
    if int(N1) != N1 or N1 <= 0:
        raise ValidationError("N1 must be a positive integer")
    return int(N1)


def _thinned_poisson(rates: np.ndarray, rng: RngStream, replicate: int) -> np.ndarray:
    return np.array(
        [rng.generator(replicate, i, 0).poisson(rate) for i, rate in enumerate(rates)],
        dtype=np.int64,
    )


def _multinomial_cells(N1: int, cell_probs: np.ndarray, rng: RngStream, replicate: int) -> np.ndarray:
    total = float(cell_probs.sum())
    if total > 1.0 + 1e-12:
        raise ValidationError(f"cell response probabilities sum to {total} > 1")
    probs = np.append(cell_probs, max(0.0, 1.0 - total))
    draw = rng.generator(replicate, JOINT, 1).multinomial(N1, probs / probs.sum())
    return draw[:-1].astype(np.int64)


def simulate_model2(
    intensity: IntensityModel,
    response: ResponseModel,
    N1: int,
    rng: RngStream,
    replicate: int = 0,
) -> SimCounts:
    """Counts under status- and cell-specific response probabilities.

    Uncredentialed counts are Poisson with mean ``p0(B) L0(B)``; credentialed
    counts given ``N1`` are multinomial with cell probabilities
    ``p1(B) L1(B) / L1(A)`` and the non-responding remainder.
    """
    N1 = _check_N1(N1)
    p0, clamp0 = response.probabilities(intensity.cells, 0)
    p1, clamp1 = response.probabilities(intensity.cells, 1)
    n0 = _thinned_poisson(p0 * np.array(intensity.lambda0), rng, replicate)
    n1 = _multinomial_cells(N1, p1 * intensity.q, rng, replicate)
    flags = ("response_clamped",) if clamp0 or clamp1 else ()
    return SimCounts(intensity.cells, n0, n1, N1, flags)


def simulate_model1(
    intensity: IntensityModel,
    response: ResponseModel | float,
    N1: int,
    rng: RngStream,
    replicate: int = 0,
) -> SimCounts:
    """Representative survey: one response probability everywhere.

    Deviation fields on ``response`` are ignored. Draws coincide exactly with
    :func:`simulate_model2` on a response model without deviations.
    """
    p = response.p if isinstance(response, ResponseModel) else float(response)
    return simulate_model2(intensity, ResponseModel(p), N1, rng, replicate)


def nb_params(mean: float, variance: float) -> tuple[float, float]:
    """Map (mean, variance) to ``(r, q)`` for the trials-until-r-successes form.

    The count is ``r`` plus the number of failures before the ``r``-th success,
    each trial failing with probability ``q``; then ``mean = r / (1 - q)`` and
    ``variance = r q / (1 - q)^2``, solved by ``r = mean^2 / (mean + variance)``
    and ``q = variance / (mean + variance)``.
    """
    if not (math.isfinite(mean) and math.isfinite(variance)):
        raise ValidationError("negative binomial moments must be finite")
    if mean < 0 or variance < 0:
        raise ValidationError(f"infeasible negative binomial moments ({mean}, {variance})")
    if mean == 0:
        if variance > 0:
            raise ValidationError("zero mean requires zero variance")
        return 0.0, 0.0
    return mean * mean / (mean + variance), variance / (mean + variance)


def _round_stochastic(x: np.ndarray | float, gen: np.random.Generator) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    base = np.floor(x)
    frac = x - base
    near = np.isclose(frac, 0.0, atol=1e-9) | np.isclose(frac, 1.0, atol=1e-9)
    bump = np.where(near, 0.0, gen.random(x.shape) < frac)
    return np.where(near, np.round(x), base + bump).astype(np.int64)


def draw_negative_binomial(
    mean: float,
    variance: float,
    gen: np.random.Generator,
    size: int | None = None,
) -> int | np.ndarray:
    """Trials needed for ``r`` successes, parameterized by mean and variance.

    With integer ``r`` this is ``r`` plus a negative binomial failure count.
    Otherwise ``r`` is rounded stochastically and the failure distribution is
    re-fitted so that the first two moments stay exact; if the remaining
    variance is too small for a negative binomial, Poisson failures are used
    and the variance exceeds the target by at most ``frac(r) (1 - frac(r))``.
    """
    r, q = nb_params(mean, variance)
    shape = () if size is None else (size,)
    if r == 0:
        out = np.zeros(shape, dtype=np.int64)
    elif abs(r - round(r)) < 1e-9:
        out = round(r) + gen.negative_binomial(round(r), 1.0 - q, shape)
    else:
        frac = r - math.floor(r)
        r_int = _round_stochastic(np.full(shape, r), gen)
        fail_mean = mean - r
        fail_var = variance - frac * (1.0 - frac)
        if fail_mean <= 0:
            failures = np.zeros(shape, dtype=np.int64)
        elif fail_var > fail_mean * (1.0 + 1e-12):
            success = fail_mean / fail_var
            failures = gen.negative_binomial(fail_mean * success / (1.0 - success), success, shape)
        else:
            failures = gen.poisson(fail_mean, shape)
        out = r_int + failures
    out = np.asarray(out, dtype=np.int64)
    return int(out) if size is None else out


def _integer_weights(weights: np.ndarray, gen: np.random.Generator) -> np.ndarray:
    if np.allclose(weights, np.round(weights), rtol=0.0, atol=1e-9):
        return np.round(weights).astype(np.int64)
    return np.maximum(_round_stochastic(weights, gen), 1)


def draw_mnh(
    N1: int,
    weights: Sequence[float],
    gen: np.random.Generator,
    method: Literal["dirichlet", "urn"] = "dirichlet",
) -> np.ndarray:
    """Multivariate negative hypergeometric counts under the trials convention.

    ``weights`` holds the success targets for every category, including the
    remainder category last. Returns integer counts ``n_j >= r_j`` summing to
    ``N1``, with probability ``prod_j C(n_j - 1, r_j - 1) / C(N1 - 1, R - 1)``.

    ``urn`` simulates the Polya urn directly: start with ``r_j`` balls of each
    colour and draw ``N1 - R`` times, returning each drawn ball with a copy.
    ``dirichlet`` draws the same distribution through its Dirichlet-multinomial
    representation and is much faster. Non-integer weights are rounded
    stochastically first.
    """
    N1 = _check_N1(N1)
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.size == 0 or np.any(~np.isfinite(w)) or np.any(w <= 0):
        raise ValidationError("MNH weights must be positive and finite")
    r = _integer_weights(w, gen)
    R = int(r.sum())
    if R > N1:
        raise ValidationError(f"MNH targets sum to {R}, more than the {N1} trials available")
    extra = N1 - R
    if method == "dirichlet":
        if extra == 0:
            return r.copy()
        probs = gen.dirichlet(r.astype(float))
        return r + gen.multinomial(extra, probs)
    if method == "urn":
        balls = r.astype(np.int64).copy()
        total = R
        u = gen.random(extra)
        for t in range(extra):
            j = int(np.searchsorted(np.cumsum(balls), u[t] * total, side="right"))
            balls[j] += 1
            total += 1
        return balls
    raise ValidationError(f"unknown MNH method {method!r}")


def simulate_model3(
    intensity: IntensityModel,
    response: ResponseModel | float,
    N1: int,
    markets: MarketModel,
    rng: RngStream,
    replicate: int = 0,
    method: Literal["dirichlet", "urn"] = "dirichlet",
) -> SimCounts:
    """Counts when vendors cluster in markets.

    Uncredentialed counts per cell are negative binomial with mean
    ``p L0(B)`` and variance ``u0(B) p L0(B)``, ``u0(B) = (L0(B) - M0(B)) / M0(B)``.
    Credentialed counts given ``N1`` are multivariate negative hypergeometric
    with targets ``p M1(B)`` per cell and ``(1 - p) M1(A)`` for the remainder.
    """
    N1 = _check_N1(N1)
    p = response.p if isinstance(response, ResponseModel) else float(response)
    ResponseModel(p)
    cells = intensity.cells
    m0 = np.array([markets.status0.get(c, 0.0) for c in cells])
    m1 = np.array([markets.status1.get(c, 0.0) for c in cells])
    lam0 = np.array(intensity.lambda0)
    if np.any(m1 <= 0):
        raise ValidationError("every cell needs a positive credentialed market count")
    if not np.allclose(m1 / m1.sum(), intensity.q, rtol=1e-9, atol=1e-12):
        raise ValidationError("credentialed markets must be proportional to the credentialed intensity")
    if np.any((lam0 > 0) & (m0 <= 0)):
        raise ValidationError("cells with uncredentialed vendors need a positive market count")
    if np.any(lam0 < m0 * (1.0 - 1e-12)):
        raise ValidationError("expected vendors below market count: negative variance")
    M1A = float(m1.sum())
    if M1A > N1:
        raise ValidationError(f"credentialed markets {M1A} exceed N1 = {N1}")

    n0 = np.zeros(len(cells), dtype=np.int64)
    for i in range(len(cells)):
        if lam0[i] == 0:
            continue
        u0 = max(0.0, (lam0[i] - m0[i]) / m0[i])
        mean = p * lam0[i]
        n0[i] = draw_negative_binomial(mean, u0 * mean, rng.generator(replicate, i, 0))
    targets = np.append(p * m1, (1.0 - p) * M1A)
    if p == 1.0:
        targets = targets[:-1]
    draw = draw_mnh(N1, targets, rng.generator(replicate, JOINT, 1), method)
    n1 = draw[: len(cells)]
    return SimCounts(cells, n0, n1.astype(np.int64), N1)
