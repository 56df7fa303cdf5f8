"""Power-of-two bit-plane expansion of weight matrices.

A normalized magnitude ``w`` in ``[0, alpha]`` is represented with ``J - 1``
binary planes of weight ``2**-i`` for ``i = -q .. J-q-2``, where
``q = ceil(log2(alpha))``. Bits are taken from ``floor(w + dw)`` at each
scale with ``dw = 2**(-J+q+1)``, i.e. round-half-up onto a grid of spacing
``2 * dw``, so the per-element error never exceeds ``dw``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .gf2 import Gf2Matrix, rank_gf2

SIGN_PLANE = "sign_plane"
SIGNED_SPLIT = "signed_split"
SIGN_MODES = (SIGN_PLANE, SIGNED_SPLIT)

DEFAULT_J = 7


class DegenerateInputError(ValueError):
    """Raised when a tensor carries no usable scale (e.g. all zeros)."""


def ceil_log2(alpha: float) -> int:
    """Exact ``ceil(log2(alpha))`` for ``alpha >= 1``."""
    if not alpha >= 1.0 or not math.isfinite(alpha):
        raise ValueError(f"alpha must be a finite value >= 1, got {alpha!r}")
    mant, exp = math.frexp(alpha)
    return exp - 1 if mant == 0.5 else exp


def quant_step(J: int, q: int) -> float:
    """Largest discarded power-of-two term, ``2**(-J+q+1)``."""
    return math.ldexp(1.0, -J + q + 1)


@dataclass(frozen=True)
class NormalizedTensor:
    values: np.ndarray
    w_max: float
    alpha: float
    q: int


@dataclass
class BitPlaneSet:
    """Magnitude planes per sign group plus the scalars needed to invert them.

    ``groups`` maps ``"mag"`` (sign_plane mode) or ``"pos"``/``"neg"``
    (signed_split mode) to ``J - 1`` planes ordered by index ``-q .. J-q-2``.
    ``shape`` is the original tensor shape; planes hold its 2-D view.
    """

    J: int
    q: int
    alpha: float
    w_max: float
    sign_mode: str
    shape: tuple
    groups: Dict[str, List[Gf2Matrix]]
    sign: Optional[Gf2Matrix] = None

    @property
    def indices(self) -> list[int]:
        return list(range(-self.q, self.J - self.q - 1))

    @property
    def matrix_shape(self) -> tuple[int, int]:
        return as_matrix(np.empty(self.shape, dtype=np.uint8)).shape


@dataclass
class PlaneStats:
    group: List[str] = field(default_factory=list)
    index: List[int] = field(default_factory=list)
    sparsity: List[float] = field(default_factory=list)
    rank: List[Optional[int]] = field(default_factory=list)

    def to_rows(self) -> list[dict]:
        return [
            {"group": g, "plane_index": i, "sparsity": s, "rank": r}
            for g, i, s, r in zip(self.group, self.index, self.sparsity, self.rank)
        ]

    def lookup(self, index: int, group: str = "mag") -> float:
        for g, i, s in zip(self.group, self.index, self.sparsity):
            if g == group and i == index:
                return s
        raise KeyError((group, index))


def as_matrix(a: np.ndarray) -> np.ndarray:
    """2-D view used for plane storage: vectors become one row, N-D keeps axis 0."""
    a = np.asarray(a)
    if a.ndim == 2:
        return a
    if a.ndim < 2:
        return a.reshape(1, -1)
    return a.reshape(a.shape[0], -1)


def normalize(W, alpha: float = 1.0) -> NormalizedTensor:
    W = np.asarray(W, dtype=np.float64)
    if W.size == 0 or not np.any(W != 0):
        raise DegenerateInputError("all-zero tensor has no scale")
    if not np.all(np.isfinite(W)):
        raise ValueError("tensor contains NaN or Inf")
    q = ceil_log2(alpha)
    w_max = float(np.max(np.abs(W)))
    return NormalizedTensor(values=alpha * W / w_max, w_max=w_max, alpha=float(alpha), q=q)


def quantize_codes(mag: np.ndarray, J: int, q: int) -> np.ndarray:
    """Integer codes ``floor(mag * 2**s + 1/2)`` with ``s = J - q - 2``, computed exactly."""
    y = np.ldexp(np.asarray(mag, dtype=np.float64), J - q - 2)
    whole = np.floor(y)
    # y - floor(y) is exact in binary floating point.
    codes = whole.astype(np.int64) + (y - whole >= 0.5)
    if codes.size and int(codes.max()) >= (1 << (J - 1)):
        raise AssertionError("magnitude exceeds 2**(q+1) after rounding")
    return codes


def _planes_from_codes(codes: np.ndarray, J: int, q: int) -> list[Gf2Matrix]:
    s = J - q - 2
    return [Gf2Matrix.from_dense((codes >> (s - i)) & 1) for i in range(-q, J - q - 1)]


def expand(N: NormalizedTensor, J: int = DEFAULT_J, sign_mode: str = SIGN_PLANE) -> BitPlaneSet:
    if J < 2:
        raise ValueError(f"J must be >= 2, got {J}")
    if sign_mode not in SIGN_MODES:
        raise ValueError(f"unknown sign mode {sign_mode!r}")
    vals = as_matrix(N.values)
    if np.max(np.abs(vals)) > math.ldexp(1.0, N.q):
        raise ValueError("normalized magnitudes exceed 2**q")
    sign = None
    if sign_mode == SIGN_PLANE:
        codes = quantize_codes(np.abs(vals), J, N.q)
        groups = {"mag": _planes_from_codes(codes, J, N.q)}
        # entries that round to zero carry no sign
        sign = Gf2Matrix.from_dense((vals < 0) & (codes > 0))
    else:
        groups = {
            "pos": _planes_from_codes(quantize_codes(np.maximum(vals, 0.0), J, N.q), J, N.q),
            "neg": _planes_from_codes(quantize_codes(np.maximum(-vals, 0.0), J, N.q), J, N.q),
        }
    return BitPlaneSet(
        J=J, q=N.q, alpha=N.alpha, w_max=N.w_max, sign_mode=sign_mode,
        shape=tuple(np.shape(N.values)), groups=groups, sign=sign,
    )


def _group_sum(planes: List[Gf2Matrix], q: int) -> np.ndarray:
    acc = None
    for i, p in zip(range(-q, -q + len(planes)), planes):
        term = p.to_dense().astype(np.float64) * math.ldexp(1.0, -i)
        acc = term if acc is None else acc + term
    return acc


def reconstruct(B: BitPlaneSet, dtype=np.float32) -> np.ndarray:
    """De-normalized tensor; summed in float64, then cast to ``dtype``."""
    if B.sign_mode == SIGN_PLANE:
        mag = _group_sum(B.groups["mag"], B.q)
        signs = np.where(B.sign.to_dense() != 0, -1.0, 1.0)
        normed = signs * mag
    else:
        normed = _group_sum(B.groups["pos"], B.q) - _group_sum(B.groups["neg"], B.q)
    out = normed * (B.w_max / B.alpha)
    return out.reshape(B.shape).astype(dtype)


def plane_sparsity(B: BitPlaneSet, with_rank: bool = False) -> PlaneStats:
    """Fraction of ones in every plane, optionally with its GF(2) rank."""
    stats = PlaneStats()
    for g, planes in B.groups.items():
        for i, p in zip(B.indices, planes):
            total = p.rows * p.cols
            stats.group.append(g)
            stats.index.append(i)
            stats.sparsity.append(p.count_ones() / total if total else 0.0)
            stats.rank.append(rank_gf2(p) if with_rank else None)
    return stats


def reconstruction_error(W, R) -> dict:
    W = np.asarray(W, dtype=np.float64)
    R = np.asarray(R, dtype=np.float64)
    if W.shape != R.shape:
        raise ValueError(f"shape mismatch {W.shape} vs {R.shape}")
    if W.size == 0:
        return {"max_abs": 0.0, "mse": 0.0}
    d = np.abs(W - R)
    return {"max_abs": float(d.max()), "mse": float(np.mean(d * d))}
