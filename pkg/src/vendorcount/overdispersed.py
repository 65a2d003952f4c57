"""Standard errors when vendors cluster in markets.

Each uncredentialed (status 0) and credentialed (status 1) vendor joins a
market, and market sizes grow by preferential attachment, so cell counts are
negative binomial rather than Poisson. The dispersion weights ``u0`` and
``u1`` inflate the Poisson-model variance terms; ``u = 1`` recovers them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping

from .core import UNKNOWN, Estimate, ValidationError
from .estimators import RatioInputs, ratio_lambda0, subregion_lambda0, subtotal_tau


@dataclass(frozen=True)
class MarketModel:
    """Market counts per cell, separately for each credential status.

    ``status0`` holds M(B) for uncredentialed vendors and ``status1`` the
    same for credentialed vendors. Region totals sum the listed cells; an
    ``UNKNOWN`` entry only enters citywide totals.
    """

    status0: Mapping[str, float]
    status1: Mapping[str, float]

    def __post_init__(self) -> None:
        for label, table in (("status0", self.status0), ("status1", self.status1)):
            if not table:
                raise ValidationError(f"{label} market table is empty")
            for cell, m in table.items():
                if not m > 0 or not math.isfinite(m):
                    raise ValidationError(f"{label} markets for cell {cell!r} must be positive, got {m}")
        object.__setattr__(self, "status0", dict(self.status0))
        object.__setattr__(self, "status1", dict(self.status1))

    @staticmethod
    def _total(table: Mapping[str, float], cells: Iterable[str] | None) -> float:
        if cells is None:
            return float(sum(table.values()))
        chosen = list(cells)
        if UNKNOWN in chosen:
            raise ValidationError(f"{UNKNOWN!r} cannot be part of a subregion")
        missing = [c for c in chosen if c not in table]
        if missing:
            raise ValidationError(f"no market count for cells {sorted(missing)}")
        total = float(sum(table[c] for c in chosen))
        if total <= 0:
            raise ValidationError("market count of the subregion must be positive")
        return total

    def m0(self, cells: Iterable[str] | None = None) -> float:
        return self._total(self.status0, cells)

    def m1(self, cells: Iterable[str] | None = None) -> float:
        return self._total(self.status1, cells)

    @classmethod
    def citywide(cls, m0: float, m1: float) -> "MarketModel":
        return cls({"A": m0}, {"A": m1})

    @classmethod
    def from_vendors_per_market(
        cls,
        lambda0: Mapping[str, float],
        lambda1: Mapping[str, float],
        vendors_per_market: float,
    ) -> "MarketModel":
        """Markets implied by a fixed average market size.

        ``lambda0`` and ``lambda1`` are expected (or estimated) vendor counts
        per cell; each cell gets ``count / vendors_per_market`` markets.
        """
        if not vendors_per_market > 0:
            raise ValidationError("vendors per market must be positive")
        return cls(
            {c: v / vendors_per_market for c, v in lambda0.items()},
            {c: v / vendors_per_market for c, v in lambda1.items()},
        )


def u0_hat(N1: int, n0B: int, n1A: int, MB: float) -> float:
    """Estimated status-0 dispersion weight of a region with ``MB`` markets."""
    if not MB > 0:
        raise ValidationError("market count must be positive")
    return (subregion_lambda0(N1, n0B, n1A).value - MB) / MB


def u1(N1A: int, MA: float) -> float:
    """Status-1 dispersion weight; nonpositive when markets outnumber vendors."""
    if not MA > 0:
        raise ValidationError("market count must be positive")
    return (N1A - MA) / (MA + 1.0)


def _weights(N1: int, n0B: int, n1A: int, M0B: float, M1A: float) -> tuple[float, float, tuple[str, ...]]:
    w0 = u0_hat(N1, n0B, n1A, M0B)
    w1 = u1(N1, M1A)
    flags = []
    if w0 < 0:
        w0 = 0.0
        flags.append("underdispersed_input")
    if w1 < 0:
        w1 = 0.0
        flags.append("markets_exceed_vendors")
    return w0, w1, tuple(flags)


def _od(base: Estimate, lam: float, radicand: float, flags: tuple[str, ...]) -> Estimate:
    if base.degenerate:
        return base
    return Estimate(base.value, lam * math.sqrt(radicand), base.level, flags=base.flags + flags)


def od_se_ratio(inputs: RatioInputs, markets: MarketModel, level: float = 0.95) -> Estimate:
    """Citywide ratio estimate with the overdispersed standard error."""
    base = ratio_lambda0(inputs, level)
    if base.degenerate:
        return base
    N1, n0, n1 = inputs.N1, inputs.n0, inputs.n1
    w0, w1, flags = _weights(N1, n0, n1, markets.m0(), markets.m1())
    return _od(base, base.value, w0 / n0 + w1 * (1.0 / n1 - 1.0 / N1), flags)


def od_se_subregion(
    N1: int,
    n0B: int,
    n1A: int,
    markets: MarketModel,
    cells: Iterable[str] | None = None,
    level: float = 0.95,
) -> Estimate:
    """Subregion estimate; ``cells`` selects M(B) (None uses every listed cell)."""
    base = subregion_lambda0(N1, n0B, n1A, level)
    if base.degenerate:
        return base
    w0, w1, flags = _weights(N1, n0B, n1A, markets.m0(cells), markets.m1())
    return _od(base, base.value, w0 / n0B + w1 * (1.0 / n1A - 1.0 / N1), flags)


def od_se_subtotal(
    N1: int,
    n0B: int,
    n1B: int,
    n1_complement: int,
    markets: MarketModel,
    cells: Iterable[str] | None = None,
    level: float = 0.95,
) -> Estimate:
    base = subtotal_tau(N1, n0B, n1B, n1_complement, level)
    if base.degenerate:
        return base
    n1A = n1B + n1_complement
    w0, w1, flags = _weights(N1, n0B, n1A, markets.m0(cells), markets.m1())
    lam = N1 * n0B / n1A
    radicand = w0 / n0B + w1 * (
        1.0 / n1A - 1.0 / N1 + n1B * n1_complement / (n1A * n0B**2)
    )
    return _od(base, lam, radicand, flags)
