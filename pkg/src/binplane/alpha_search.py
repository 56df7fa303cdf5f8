"""Indicator matrices, prefix-rank profiles and the search for the scale ``alpha``.

Sorting the normalized magnitudes in descending order into ``v``, choosing
``alpha = 1 / v[p]`` makes exactly the top ``p`` entries reach ``>= 1``.
Setting one more entry to 1 changes the GF(2) rank by at most one, so the
rank profile over ``p`` takes every integer value between its extremes and
a bisection over ``p`` can land on a prefix whose rank is exactly ``c``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import List, Sequence

import numpy as np

from .gf2 import Gf2Matrix, _rank_of_rows, rank_gf2
from .quantizer import DegenerateInputError, quantize_codes

DEFAULT_C0 = 0.2
DEFAULT_C1 = 0.05
DEFAULT_BOTTLENECK = 0.3


@dataclass(frozen=True)
class IndicatorParams:
    beta: float
    C0: float = DEFAULT_C0
    C1: float = DEFAULT_C1

    def __post_init__(self):
        if not 0.0 <= self.C1 <= self.C0 <= 1.0:
            raise ValueError("need 0 <= C1 <= C0 <= 1")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")


@dataclass(frozen=True)
class AlphaResult:
    alpha: float
    achieved_rank: int
    c_target: int
    exact: bool
    prefix: int  # number of entries with alpha * w >= 1

    def to_dict(self) -> dict:
        return asdict(self)


def _check_mag(Wmag) -> np.ndarray:
    Wmag = np.asarray(Wmag, dtype=np.float64)
    if Wmag.ndim != 2:
        raise ValueError(f"expected a matrix, got shape {Wmag.shape}")
    if np.any(Wmag < 0):
        raise ValueError("magnitude matrix has negative entries")
    return Wmag


def indicator(Wmag, beta: float, strict: bool = True) -> Gf2Matrix:
    """Bit is set where ``Wmag > beta`` (or ``>=`` with ``strict=False``)."""
    Wmag = _check_mag(Wmag)
    return Gf2Matrix.from_dense(Wmag > beta if strict else Wmag >= beta)


def descending_order(Wmag: np.ndarray) -> np.ndarray:
    """Flat indices sorted by value, largest first; ties broken by position."""
    flat = Wmag.reshape(-1)
    return np.lexsort((np.arange(flat.size), -flat))


def rank_prefix_profile(Wmag) -> List[int]:
    """Ranks of the indicators holding the top ``0, 1, ..., N`` entries."""
    Wmag = _check_mag(Wmag)
    h, w = Wmag.shape
    rows = [0] * h
    profile = [0]
    for flat in descending_order(Wmag):
        x, y = divmod(int(flat), w)
        rows[x] |= 1 << y
        profile.append(_rank_of_rows(rows))
    return profile


def _prefix_levels(Wmag: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Distinct positive values (descending) and the prefix length each one closes."""
    flat = Wmag.reshape(-1)
    vals = np.unique(flat[flat > 0])[::-1]
    # number of entries >= each level
    counts = np.searchsorted(np.sort(flat), vals, side="left")
    counts = flat.size - counts
    return vals, counts


def _prefix_rank(Wmag: np.ndarray, level: float) -> int:
    return rank_gf2(Gf2Matrix.from_dense(Wmag >= level))


def search_alpha(Wmag, c: int) -> AlphaResult:
    """Bisect over thresholds so that ``rank(I[alpha * w >= 1])`` equals ``c``.

    ``Wmag`` must already be scaled so its largest entry is 1. Equal values
    always enter the indicator together. When no probed prefix hits ``c``
    exactly, the upper end of the closed window is returned, stepped down
    if needed so the rank never exceeds ``c``.
    """
    Wmag = _check_mag(Wmag)
    if c < 1:
        raise ValueError(f"rank target must be >= 1, got {c}")
    levels, counts = _prefix_levels(Wmag)
    if levels.size < 2:
        raise DegenerateInputError("matrix has fewer than two distinct nonzero magnitudes")

    ranks: dict[int, int] = {}

    def rank_at(j: int) -> int:
        if j not in ranks:
            ranks[j] = _prefix_rank(Wmag, levels[j])
        return ranks[j]

    lo, hi = 0, levels.size - 1
    while lo <= hi:
        center = (lo + hi) // 2
        r = rank_at(center)
        if r > c:
            hi = center - 1
        elif r < c:
            lo = center + 1
        else:
            return _result(levels, counts, center, r, c)
    j = max(hi, 0)
    while j > 0 and rank_at(j) > c:
        j -= 1
    return _result(levels, counts, j, rank_at(j), c)


def _result(levels, counts, j: int, r: int, c: int) -> AlphaResult:
    alpha = max(1.0, 1.0 / float(levels[j]))
    return AlphaResult(alpha=alpha, achieved_rank=r, c_target=c, exact=(r == c), prefix=int(counts[j]))


def bottleneck_rank(b: float, rows: int, cols: int) -> int:
    """Rank budget ``floor(b * min(rows, cols))`` of the flattened layer."""
    if not b > 0:
        raise ValueError(f"bottleneck ratio must be positive, got {b}")
    return int(math.floor(b * min(rows, cols)))


def shifted_threshold_ranks(mag, J: int, q: int, alpha: float) -> List[int]:
    """``rank(I[w + dw >= i])`` for ``i = 1 .. ceil(alpha)`` on normalized magnitudes.

    Evaluated on the same integer codes the bit planes are cut from, so the
    thresholds agree exactly with the expansion.
    """
    codes = quantize_codes(np.asarray(mag, dtype=np.float64), J, q)
    # exact dyadic values, also when J - q - 2 is negative
    grid = np.ldexp(codes.astype(np.float64), -(J - q - 2))
    return [rank_gf2(Gf2Matrix.from_dense(grid >= i)) for i in range(1, math.ceil(alpha) + 1)]


def rank_ratios(ranks: Sequence[int]) -> tuple[float, float]:
    """Measured ``(C0, C1)``: ``r2 / r1`` and ``max(r_i / r1, i >= 3)``."""
    if not ranks or ranks[0] == 0:
        return 0.0, 0.0
    r1 = ranks[0]
    c0 = ranks[1] / r1 if len(ranks) > 1 else 0.0
    c1 = max((r / r1 for r in ranks[2:]), default=0.0)
    return c0, c1


def estimate_rank_bound(rank_ge1: int, alpha: float, C0: float = DEFAULT_C0, C1: float = DEFAULT_C1) -> float:
    """Upper estimate ``((alpha - 2)+ * C1 + C0 + 1) * rank_ge1`` for the rank of plane 0."""
    if alpha < 1:
        raise ValueError(f"alpha must be >= 1, got {alpha}")
    return (max(alpha - 2.0, 0.0) * C1 + C0 + 1.0) * rank_ge1
