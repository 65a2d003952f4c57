"""Weighted counts and weighted ratio, subregion and subtotal estimators.

Each respondent carries a random weight with known mean and second moment,
and distinct respondents may have correlated weights through a cell-pair
covariance lookup. Variances follow from Campbell's theorem; the plug-ins
replace expected moments by sums over the observed respondents.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Literal, Mapping

import numpy as np

from .core import (
    Estimate,
    EstimationError,
    Partition,
    SurveyRecord,
    ValidationError,
)

CellStatus = tuple[str, int]
PairKey = tuple[str, str, int, int]

WEIGHT_BOUNDS = (1e-6, 1e6)


@dataclass(frozen=True)
class WeightModel:
    """Weight moments per (cell, status) plus an optional pair covariance kernel.

    Attributes:
        cell_moments: ``(cell, status) -> (E[w], E[w^2])``. Status is 0 or 1.
        default: moments used for (cell, status) pairs absent from
            ``cell_moments``; None makes a missing pair an error.
        record_column: when set, each record's ``weight_inputs[record_column]``
            is its deterministic weight and overrides ``cell_moments``.
        covariance: ``(cell_a, cell_b, status_a, status_b) -> cov`` for
            distinct respondents. Missing entries are zero; the kernel is
            symmetrized on construction.
        bounds: admissible range for every E[w].
    """

    cell_moments: Mapping[CellStatus, tuple[float, float]] = field(default_factory=dict)
    default: tuple[float, float] | None = None
    record_column: str | None = None
    covariance: Mapping[PairKey, float] = field(default_factory=dict)
    bounds: tuple[float, float] = WEIGHT_BOUNDS

    def __post_init__(self) -> None:
        lo, hi = self.bounds
        if not 0 < lo <= hi:
            raise ValidationError("weight bounds must satisfy 0 < wmin <= wmax")
        for key, moments in self.cell_moments.items():
            if key[1] not in (0, 1):
                raise ValidationError(f"weight status must be 0 or 1, got {key[1]!r}")
            self._check_moments(moments, f"cell {key[0]!r} status {key[1]}")
        if self.default is not None:
            self._check_moments(self.default, "default weight")
        sym: dict[PairKey, float] = {}
        for (a, b, sa, sb), cov in self.covariance.items():
            mirror = (b, a, sb, sa)
            if mirror in self.covariance and not math.isclose(
                self.covariance[mirror], cov, rel_tol=1e-12, abs_tol=0.0
            ):
                raise ValidationError(f"asymmetric covariance for {(a, b, sa, sb)}")
            sym[(a, b, sa, sb)] = float(cov)
            sym[mirror] = float(cov)
        object.__setattr__(self, "covariance", sym)

    def _check_moments(self, moments: tuple[float, float], where: str) -> None:
        mean, second = moments
        lo, hi = self.bounds
        if not lo <= mean <= hi:
            raise ValidationError(f"{where}: E[w]={mean} outside [{lo}, {hi}]")
        # tolerate rounding in files that store E[w]^2 for deterministic weights
        if second < mean * mean * (1.0 - 1e-12):
            raise ValidationError(f"{where}: E[w^2]={second} below E[w]^2={mean * mean}")

    @classmethod
    def identity(cls) -> "WeightModel":
        return cls(default=(1.0, 1.0))

    @classmethod
    def deterministic(cls, weights: Mapping[CellStatus, float], **kwargs) -> "WeightModel":
        """Fixed per-(cell, status) weights: E[w^2] = w^2 and zero covariance."""
        return cls({k: (float(w), float(w) ** 2) for k, w in weights.items()}, **kwargs)

    def moments_for(self, record: SurveyRecord) -> tuple[float, float]:
        status = int(record.has_credential)
        if self.record_column is not None:
            if self.record_column not in record.weight_inputs:
                raise ValidationError(
                    f"record {record.id!r}: missing weight covariate {self.record_column!r}"
                )
            w = float(record.weight_inputs[self.record_column])
            self._check_moments((w, w * w), f"record {record.id!r}")
            return w, w * w
        moments = self.cell_moments.get((record.cell, status), self.default)
        if moments is None:
            raise ValidationError(
                f"record {record.id!r}: no weight for cell {record.cell!r} status {status}"
            )
        return moments

    def cov(self, cell_a: str, cell_b: str, status_a: int, status_b: int) -> float:
        return self.covariance.get((cell_a, cell_b, status_a, status_b), 0.0)


@dataclass(frozen=True)
class WeightedCounts:
    """Per-cell weighted accumulators aligned with ``partition.all_cells``.

    ``sigma[k, l, i, j]`` sums the weight covariance over distinct respondent
    pairs with status ``k`` in cell ``i`` and status ``l`` in cell ``j``.
    """

    partition: Partition
    n0w: np.ndarray
    n1w: np.ndarray
    mu2_0: np.ndarray
    mu2_1: np.ndarray
    sigma: np.ndarray

    def __post_init__(self) -> None:
        size = len(self.partition.all_cells)
        for name in ("n0w", "n1w", "mu2_0", "mu2_1"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (size,):
                raise ValidationError(f"{name} must have {size} entries")
            if np.any(arr < 0):
                raise ValidationError(f"{name} must be nonnegative")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        sigma = np.asarray(self.sigma, dtype=float)
        if sigma.shape != (2, 2, size, size):
            raise ValidationError(f"sigma must have shape (2, 2, {size}, {size})")
        if not np.allclose(sigma, sigma.transpose(1, 0, 3, 2), rtol=1e-12, atol=0.0):
            raise ValidationError("sigma accumulators must be symmetric")
        sigma.setflags(write=False)
        object.__setattr__(self, "sigma", sigma)

    @classmethod
    def single_region(
        cls,
        n0w: float,
        n1w: float,
        mu2_0: float | None = None,
        mu2_1: float | None = None,
        n0: int | None = None,
        n1: int | None = None,
        sigma: Mapping[tuple[int, int], float] | None = None,
        cell: str = "A",
    ) -> "WeightedCounts":
        """Citywide summary as a one-cell partition.

        Missing second moments are filled assuming equal deterministic weights
        within each status, which needs the raw counts ``n0`` and ``n1``.
        """

        def fill(total: float, mu2: float | None, count: int | None, label: str) -> float:
            if mu2 is not None:
                return float(mu2)
            if total == 0:
                return 0.0
            if not count:
                raise ValidationError(f"{label}: need either the second moment or the raw count")
            return total * total / count

        partition = Partition((cell,))
        sig = np.zeros((2, 2, 2, 2))
        for (k, l), v in (sigma or {}).items():
            sig[k, l, 0, 0] = sig[l, k, 0, 0] = v
        return cls(
            partition,
            np.array([n0w, 0.0]),
            np.array([n1w, 0.0]),
            np.array([fill(n0w, mu2_0, n0, "status 0"), 0.0]),
            np.array([fill(n1w, mu2_1, n1, "status 1"), 0.0]),
            sig,
        )

    @classmethod
    def from_counts(
        cls,
        partition: Partition,
        n0: Iterable[int],
        n1: Iterable[int],
        w0: Iterable[float],
        w1: Iterable[float],
    ) -> "WeightedCounts":
        """Deterministic per-cell weights applied to integer counts (zero covariance)."""
        n0, n1, w0, w1 = (np.asarray(list(v), dtype=float) for v in (n0, n1, w0, w1))
        size = len(partition.all_cells)
        return cls(partition, n0 * w0, n1 * w1, n0 * w0**2, n1 * w1**2, np.zeros((2, 2, size, size)))

    def mask(self, cells: Iterable[str] | None) -> np.ndarray:
        """Boolean selector over ``all_cells``; None selects the whole region."""
        if cells is None:
            return np.ones(len(self.partition.all_cells), dtype=bool)
        chosen = self.partition.subregion(cells)
        return np.array([c in chosen for c in self.partition.all_cells])

    def region(self, sel: np.ndarray) -> dict[str, float]:
        return {
            "n0w": float(self.n0w[sel].sum()),
            "n1w": float(self.n1w[sel].sum()),
            "mu2_0": float(self.mu2_0[sel].sum()),
            "mu2_1": float(self.mu2_1[sel].sum()),
        }

    def sig(self, k: int, l: int, rows: np.ndarray, cols: np.ndarray) -> float:
        return float(self.sigma[k, l][np.ix_(rows, cols)].sum())


def weighted_counts(
    records: Iterable[SurveyRecord],
    weights: WeightModel,
    partition: Partition,
    vendor_class: str,
) -> WeightedCounts:
    """Accumulate weighted counts, second moments and pair covariances."""
    cells = partition.all_cells
    size = len(cells)
    nw = np.zeros((2, size))
    mu2 = np.zeros((2, size))
    counts = np.zeros((2, size), dtype=np.int64)
    for rec in records:
        try:
            idx = partition.index(rec.cell)
        except ValidationError:
            raise ValidationError(f"record {rec.id!r}: cell {rec.cell!r} is not in the partition") from None
        if rec.estimation_class() != vendor_class:
            continue
        status = int(rec.has_credential)
        mean, second = weights.moments_for(rec)
        nw[status, idx] += mean
        mu2[status, idx] += second
        counts[status, idx] += 1

    sigma = np.zeros((2, 2, size, size))
    if weights.covariance:
        for (a, b, sa, sb), cov in weights.covariance.items():
            if a not in cells or b not in cells:
                continue
            i, j = cells.index(a), cells.index(b)
            pairs = counts[sa, i] * counts[sb, j]
            if sa == sb and i == j:
                pairs -= counts[sa, i]  # a respondent is not paired with itself
            sigma[sa, sb, i, j] = cov * pairs
    return WeightedCounts(partition, nw[0], nw[1], mu2[0], mu2[1], sigma)


def _finish(value: float, radicand: float, level: float, scale: float | None = None) -> Estimate:
    # se = scale * sqrt(radicand); scale defaults to the value itself
    if radicand < 0:
        return Estimate(value, 0.0, level, flags=("negative_radicand",))
    scale = value if scale is None else scale
    return Estimate(value, scale * math.sqrt(radicand), level)


def _degenerate(value: float, level: float) -> Estimate:
    return Estimate(value, None, level, degenerate=True, flags=("zero_count",))


def _require_n1w(n1w: float) -> None:
    if not n1w > 0:
        raise EstimationError("weighted credentialed count is zero: the ratio is undefined")


def weighted_ratio(N1: int, wc: WeightedCounts, level: float = 0.95) -> Estimate:
    """Weighted analogue of the citywide ratio estimator."""
    everything = wc.mask(None)
    r = wc.region(everything)
    _require_n1w(r["n1w"])
    if r["n0w"] == 0:
        return _degenerate(0.0, level)
    n0w, n1w = r["n0w"], r["n1w"]
    value = N1 * n0w / n1w
    radicand = (
        (r["mu2_0"] + wc.sig(0, 0, everything, everything)) / n0w**2
        + r["mu2_1"] / n1w**2
        + (N1 - 1) * wc.sig(1, 1, everything, everything) / (N1 * n1w**2)
        - 1.0 / N1
        - 2.0 * wc.sig(0, 1, everything, everything) / (n0w * n1w)
    )
    return _finish(value, radicand, level)


def weighted_subregion(
    N1: int, wc: WeightedCounts, cells: Iterable[str], level: float = 0.95
) -> Estimate:
    """Uncredentialed vendors in B, calibrated by the citywide weighted n1."""
    B = wc.mask(cells)
    everything = wc.mask(None)
    rB, rA = wc.region(B), wc.region(everything)
    _require_n1w(rA["n1w"])
    if rB["n0w"] == 0:
        return _degenerate(0.0, level)
    n0w, n1w = rB["n0w"], rA["n1w"]
    value = N1 * n0w / n1w
    radicand = (
        (rB["mu2_0"] + wc.sig(0, 0, B, B)) / n0w**2
        + rA["mu2_1"] / n1w**2
        + (N1 - 1) * wc.sig(1, 1, everything, everything) / (N1 * n1w**2)
        - 1.0 / N1
        - 2.0 * wc.sig(0, 1, B, everything) / (n0w * n1w)
    )
    return _finish(value, radicand, level)


def weighted_subtotal(
    N1: int,
    wc: WeightedCounts,
    cells: Iterable[str],
    level: float = 0.95,
    formula: Literal["corrected", "printed"] = "corrected",
) -> Estimate:
    """Total vendors in B from weighted counts.

    ``corrected`` is the delta method applied to
    ``N1 (x + y) / (y + z)`` with ``x = n0w(B)``, ``y = n1w(B)`` and
    ``z = n1w(complement)``, including the multinomial covariance between
    ``y`` and ``z``. It reduces exactly to the unweighted subtotal SE when all
    weights are 1. ``printed`` keeps the published plug-in term by term; it
    does not have that reduction property and is kept for comparison.
    """
    B = wc.mask(cells)
    C = ~B
    rB, rC = wc.region(B), wc.region(C)
    x, y, z = rB["n0w"], rB["n1w"], rC["n1w"]
    n1A = y + z
    _require_n1w(n1A)
    value = N1 * (x + y) / n1A
    if x == 0:
        return _degenerate(value, level)
    lam = N1 * x / n1A

    if formula == "corrected":
        gx = N1 / n1A
        gy = N1 * (z - x) / n1A**2
        gz = -N1 * (x + y) / n1A**2
        vx = rB["mu2_0"] + wc.sig(0, 0, B, B)
        vy = rB["mu2_1"] - y * y / N1 + (N1 - 1) * wc.sig(1, 1, B, B) / N1
        vz = rC["mu2_1"] - z * z / N1 + (N1 - 1) * wc.sig(1, 1, C, C) / N1
        cyz = -y * z / N1 + (N1 - 1) * wc.sig(1, 1, B, C) / N1
        cxy = wc.sig(0, 1, B, B)
        cxz = wc.sig(0, 1, B, C)
        var = (
            gx * gx * vx
            + gy * gy * vy
            + gz * gz * vz
            + 2.0 * (gx * gy * cxy + gx * gz * cxz + gy * gz * cyz)
        )
        return _finish(value, var / lam**2, level, scale=lam)

    if formula != "printed":
        raise ValidationError(f"unknown subtotal formula {formula!r}")
    scale = N1 / n1A
    v1 = (z - x) ** 2 * scale**2 * (rB["mu2_1"] + ((N1 - 1) * wc.sig(1, 1, B, B) - y * y) / N1)
    v2 = (x + y) ** 2 * scale**2 * (rC["mu2_1"] + ((N1 - 1) * wc.sig(1, 1, C, C) - z * z) / N1)
    v3 = scale * (
        (z - x) * wc.sig(0, 1, B, B)
        - (x + z) * wc.sig(0, 1, B, C)
        - (z - x) * (x + z) * (N1 - 1) * wc.sig(1, 1, B, C) / n1A
    )
    radicand = (
        (rB["mu2_0"] + wc.sig(0, 0, B, B)) / x**2
        + wc.region(wc.mask(None))["mu2_1"] / n1A**2
        + (v1 + v2 + 2.0 * N1 * v3) / (x**2 * N1**2)
    )
    return _finish(value, radicand, level, scale=lam)


def bias_factor(n0w: float, n1w: float, n0: int, n1: int) -> float:
    """Multiplicative adjustment of the unweighted total implied by the weights.

    Ratio of the average weight over all respondents to the average weight
    among credentialed respondents.
    """
    if n1w <= 0 or n1 <= 0 or n0 + n1 <= 0:
        raise EstimationError("bias factor needs positive credentialed counts")
    return ((n0w + n1w) / (n0 + n1)) / (n1w / n1)
