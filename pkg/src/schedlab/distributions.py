"""Output-length families: two-point, truncated geometric and linearly
weighted geometric (LG).

Bounded families live on ``[low, high]``; for ``low > 1`` the base mass is
shifted so that ``low`` plays the role of 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class DistributionError(ValueError):
    pass


@dataclass(frozen=True)
class TwoPoint:
    low: int
    high: int
    p_long: float

    def __post_init__(self):
        if not 1 <= self.low <= self.high:
            raise DistributionError("two-point needs 1 <= low <= high")
        if not 0 <= self.p_long <= 1:
            raise DistributionError("p_long must lie in [0, 1]")

    @property
    def support(self) -> np.ndarray:
        return np.arange(self.low, self.high + 1)

    def masses(self) -> np.ndarray:
        m = np.zeros(self.high - self.low + 1)
        m[0] += 1 - self.p_long
        m[-1] += self.p_long
        return m


@dataclass(frozen=True)
class GeometricTruncated:
    p: float
    high: int
    low: int = 1

    def __post_init__(self):
        if not 0 < self.p <= 1:
            raise DistributionError("p must lie in (0, 1]")
        if not 1 <= self.low <= self.high:
            raise DistributionError("need 1 <= low <= high")

    @property
    def q(self) -> float:
        return 1 - self.p

    @property
    def support(self) -> np.ndarray:
        return np.arange(self.low, self.high + 1)

    def masses(self) -> np.ndarray:
        k = np.arange(1, self.high - self.low + 2)
        m = self.p * self.q ** (k - 1)
        return m / m.sum()


@dataclass(frozen=True)
class LinWeightedGeometric:
    """Mass ``k p^2 q^(k-1)``; ``high=None`` keeps the untruncated law."""

    p: float
    high: int | None = None
    low: int = 1

    def __post_init__(self):
        if not 0 < self.p <= 1:
            raise DistributionError("p must lie in (0, 1]")
        if self.high is not None and not 1 <= self.low <= self.high:
            raise DistributionError("need 1 <= low <= high")
        if self.high is None and self.low != 1:
            raise DistributionError("the untruncated law starts at 1")

    @property
    def q(self) -> float:
        return 1 - self.p

    @property
    def support(self) -> np.ndarray:
        if self.high is None:
            raise DistributionError("untruncated LG has infinite support")
        return np.arange(self.low, self.high + 1)

    def masses(self) -> np.ndarray:
        k = np.arange(1, len(self.support) + 1)
        m = k * self.p**2 * self.q ** (k - 1)
        return m / m.sum()


LengthDistribution = TwoPoint | GeometricTruncated | LinWeightedGeometric


def pmf(dist: LengthDistribution, k: int) -> float:
    if isinstance(dist, LinWeightedGeometric) and dist.high is None:
        if k < 1:
            raise DistributionError(f"{k} is outside the support")
        return k * dist.p**2 * dist.q ** (k - 1)
    lo = dist.low
    hi = dist.high
    if not lo <= k <= hi:
        raise DistributionError(f"{k} is outside the support [{lo}, {hi}]")
    return float(dist.masses()[k - lo])


def mean(dist: LengthDistribution) -> float:
    if isinstance(dist, LinWeightedGeometric) and dist.high is None:
        # sum of two independent geometrics on {1, 2, ...}, minus one
        return 2 / dist.p - 1
    return float(dist.support @ dist.masses())


def lg_mode(p: float) -> int:
    """Most likely value of the untruncated LG law.

    Consecutive masses have ratio ``(k+1) q / k``, which is at least one
    exactly when ``k <= q/p``. When ``q/p`` is an integer ``m`` the values
    ``m`` and ``m+1`` tie and the smaller one is returned.
    """
    if not 0 < p <= 1:
        raise DistributionError("p must lie in (0, 1]")
    r = (1 - p) / p
    m = math.floor(r + 1e-12)
    return max(1, m if abs(r - round(r)) < 1e-12 else m + 1)


def lg_continuous_mode(q: float) -> float:
    """Maximizer of ``k q^(k-1)`` over real ``k``: ``1 / log(1/q)``."""
    return 1 / math.log(1 / q)


def sample_workload(dist: LengthDistribution, n: int, seed: int | np.random.Generator) -> np.ndarray:
    """``n`` i.i.d. lengths by inverse CDF (reproducible per seed).

    The untruncated LG law is drawn as the sum of two geometrics minus one.
    """
    if n < 1:
        raise DistributionError("n must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if isinstance(dist, LinWeightedGeometric) and dist.high is None:
        return rng.geometric(dist.p, n) + rng.geometric(dist.p, n) - 1
    cdf = np.cumsum(dist.masses())
    idx = np.searchsorted(cdf, rng.random(n) * cdf[-1], side="right")
    return dist.support[np.minimum(idx, len(cdf) - 1)].astype(np.int64)


def parse_distribution(text: str) -> LengthDistribution:
    """Parse ``name:key=value,...``.

    Examples: ``twopoint:low=1,high=4,p_long=0.5``, ``geom:p=0.1,high=200``,
    ``lg:p=0.1,high=200``.
    """
    name, _, rest = text.partition(":")
    kw: dict[str, float] = {}
    for part in filter(None, rest.split(",")):
        key, eq, val = part.partition("=")
        if not eq:
            raise DistributionError(f"bad parameter {part!r}")
        kw[key.strip()] = float(val)
    ints = {"low", "high"}
    args = {k: int(v) if k in ints else v for k, v in kw.items()}
    try:
        if name == "twopoint":
            return TwoPoint(**args)
        if name == "geom":
            return GeometricTruncated(**args)
        if name == "lg":
            return LinWeightedGeometric(**args)
    except TypeError as exc:
        raise DistributionError(str(exc)) from None
    raise DistributionError(f"unknown distribution {name!r}")
