"""Bit-packed binary matrices over GF(2): rank, products and lossless factorization.

Rows are stored as little-endian 64-bit words; column ``j`` lives in word
``j // 64`` at bit ``j % 64``. Elimination converts each row to a Python int
so that a row XOR is a single word-parallel operation.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Iterable, List, Sequence

import numpy as np

WORD_BITS = 64


def _n_words(cols: int) -> int:
    return (cols + WORD_BITS - 1) // WORD_BITS


class Gf2Matrix:
    """Immutable binary matrix with row-major bit-packed storage."""

    __slots__ = ("rows", "cols", "_words")

    def __init__(self, rows: int, cols: int, words: np.ndarray | None = None):
        if rows < 0 or cols < 0:
            raise ValueError(f"negative shape ({rows}, {cols})")
        nw = _n_words(cols)
        if words is None:
            words = np.zeros((rows, nw), dtype="<u8")
        else:
            words = np.array(words, dtype="<u8", copy=True).reshape(rows, nw)
            tail = cols % WORD_BITS
            if tail and rows:
                words[:, -1] &= np.uint64((1 << tail) - 1)
        words.flags.writeable = False
        self.rows = rows
        self.cols = cols
        self._words = words

    # construction -------------------------------------------------------

    @classmethod
    def from_dense(cls, a) -> "Gf2Matrix":
        a = np.asarray(a)
        if a.ndim != 2:
            raise ValueError(f"expected a 2-D array, got shape {a.shape}")
        rows, cols = a.shape
        nw = _n_words(cols)
        if rows == 0 or cols == 0:
            return cls(rows, cols)
        bits = np.zeros((rows, nw * WORD_BITS), dtype=np.uint8)
        bits[:, :cols] = (a != 0)
        packed = np.packbits(bits, axis=1, bitorder="little")
        return cls(rows, cols, packed.view("<u8"))

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "Gf2Matrix":
        return cls(rows, cols)

    @classmethod
    def identity(cls, n: int) -> "Gf2Matrix":
        return cls.from_dense(np.eye(n, dtype=np.uint8))

    @classmethod
    def from_row_ints(cls, row_ints: Sequence[int], cols: int) -> "Gf2Matrix":
        nbytes = _n_words(cols) * 8
        buf = b"".join(int(x).to_bytes(nbytes, "little") for x in row_ints)
        words = np.frombuffer(buf, dtype="<u8").reshape(len(row_ints), _n_words(cols))
        return cls(len(row_ints), cols, words)

    # views --------------------------------------------------------------

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    @property
    def words(self) -> np.ndarray:
        return self._words

    def to_dense(self) -> np.ndarray:
        """Unpack into a ``uint8`` array of zeros and ones."""
        if self.rows == 0 or self.cols == 0:
            return np.zeros((self.rows, self.cols), dtype=np.uint8)
        raw = np.ascontiguousarray(self._words).view(np.uint8)
        bits = np.unpackbits(raw, axis=1, bitorder="little")
        return bits[:, : self.cols].copy()

    def row_ints(self) -> List[int]:
        nbytes = _n_words(self.cols) * 8
        raw = np.ascontiguousarray(self._words).tobytes()
        return [int.from_bytes(raw[i * nbytes:(i + 1) * nbytes], "little") for i in range(self.rows)]

    def count_ones(self) -> int:
        return int(np.bitwise_count(self._words).sum())

    def __getitem__(self, idx: tuple[int, int]) -> int:
        r, c = idx
        if not (0 <= r < self.rows and 0 <= c < self.cols):
            raise IndexError(idx)
        return int(self._words[r, c // WORD_BITS] >> np.uint64(c % WORD_BITS)) & 1

    @property
    def T(self) -> "Gf2Matrix":
        return Gf2Matrix.from_dense(self.to_dense().T)

    def __xor__(self, other: "Gf2Matrix") -> "Gf2Matrix":
        if self.shape != other.shape:
            raise ValueError(f"shape mismatch {self.shape} vs {other.shape}")
        return Gf2Matrix(self.rows, self.cols, self._words ^ other._words)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Gf2Matrix):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self._words, other._words))

    def __hash__(self) -> int:
        return hash((self.rows, self.cols, self._words.tobytes()))

    def __repr__(self) -> str:
        return f"Gf2Matrix({self.rows}x{self.cols}, ones={self.count_ones()})"

    # serialization ------------------------------------------------------

    def to_bytes(self) -> bytes:
        """``rows`` and ``cols`` as u64, then the packed row words, all little-endian."""
        return struct.pack("<QQ", self.rows, self.cols) + np.ascontiguousarray(self._words).tobytes()

    @classmethod
    def from_bytes(cls, buf: bytes, offset: int = 0) -> tuple["Gf2Matrix", int]:
        """Parse one matrix starting at ``offset``; returns it and the offset past it."""
        if len(buf) - offset < 16:
            raise ValueError("truncated GF(2) matrix header")
        rows, cols = struct.unpack_from("<QQ", buf, offset)
        offset += 16
        nbytes = rows * _n_words(cols) * 8
        if len(buf) - offset < nbytes:
            raise ValueError("truncated GF(2) matrix payload")
        words = np.frombuffer(buf, dtype="<u8", count=rows * _n_words(cols), offset=offset)
        m = cls(rows, cols, words)
        if not np.array_equal(m._words.reshape(-1), words):
            raise ValueError("nonzero padding bits in GF(2) matrix payload")
        return m, offset + nbytes


@dataclass(frozen=True)
class Factorization:
    rank: int
    B: Gf2Matrix
    C: Gf2Matrix
    integer_exact: bool


@dataclass(frozen=True)
class LosslessCheck:
    gf2_exact: bool
    integer_exact: bool


def _rank_of_rows(rows: Iterable[int]) -> int:
    # XOR basis keyed by leading bit.
    basis: dict[int, int] = {}
    for x in rows:
        while x:
            hb = x.bit_length() - 1
            b = basis.get(hb)
            if b is None:
                basis[hb] = x
                break
            x ^= b
    return len(basis)


def rank_gf2(A: Gf2Matrix) -> int:
    """Rank of ``A`` over GF(2); 0 for empty matrices."""
    if A.rows == 0 or A.cols == 0:
        return 0
    return _rank_of_rows(A.row_ints())


def decompose(A: Gf2Matrix) -> Factorization:
    """Factor ``A`` into ``B`` (h x r) and ``C`` (r x w) with ``(B @ C) % 2 == A``.

    Gaussian elimination with first-row pivoting; every row swap and row
    addition is its own inverse, so the accumulated inverse transform is
    tracked by replaying the same operations on the columns of ``B``
    (stored transposed, so they become row operations). Matrices that are
    not strictly taller than wide are factored through their transpose.
    """
    h, w = A.shape
    if h <= w:
        Bt, Ct = _eliminate(A.T)
        B, C = Ct.T, Bt.T
    else:
        B, C = _eliminate(A)
    integer_exact = bool(np.array_equal(mul_int(B, C), A.to_dense()))
    return Factorization(rank=B.cols, B=B, C=C, integer_exact=integer_exact)


def _eliminate(A: Gf2Matrix) -> tuple[Gf2Matrix, Gf2Matrix]:
    h, w = A.shape
    rows = A.row_ints()
    # bt[j] is column j of B; starts as the identity.
    bt = [1 << j for j in range(h)]
    r = 0
    for c in range(w):
        if r == h:
            break
        bit = 1 << c
        piv = next((l for l in range(r, h) if rows[l] & bit), None)
        if piv is None:
            continue
        if piv != r:
            rows[piv], rows[r] = rows[r], rows[piv]
            bt[piv], bt[r] = bt[r], bt[piv]
        prow = rows[r]
        acc = 0
        for j in range(r + 1, h):
            if rows[j] & bit:
                rows[j] ^= prow
                acc ^= bt[j]
        bt[r] ^= acc
        r += 1
    C = Gf2Matrix.from_row_ints(rows[:r], w)
    B = Gf2Matrix.from_row_ints(bt[:r], h).T if r else Gf2Matrix.zeros(h, 0)
    return B, C


def mul_gf2(B: Gf2Matrix, C: Gf2Matrix) -> Gf2Matrix:
    """Matrix product reduced mod 2."""
    if B.cols != C.rows:
        raise ValueError(f"inner dimension mismatch: {B.shape} x {C.shape}")
    out = np.zeros((B.rows, _n_words(C.cols)), dtype="<u8")
    if B.rows and C.cols:
        bd = B.to_dense().astype(bool)
        cw = C.words
        for k in range(B.cols):
            mask = bd[:, k]
            if mask.any():
                out[mask] ^= cw[k]
    return Gf2Matrix(B.rows, C.cols, out)


def mul_int(B: Gf2Matrix, C: Gf2Matrix) -> np.ndarray:
    """Ordinary integer product of two 0/1 matrices."""
    if B.cols != C.rows:
        raise ValueError(f"inner dimension mismatch: {B.shape} x {C.shape}")
    return B.to_dense().astype(np.int64) @ C.to_dense().astype(np.int64)


def verify_lossless(A: Gf2Matrix, F: Factorization) -> LosslessCheck:
    if F.B.rows != A.rows or F.C.cols != A.cols or F.B.cols != F.C.rows:
        return LosslessCheck(gf2_exact=False, integer_exact=False)
    gf2_exact = mul_gf2(F.B, F.C) == A
    integer_exact = bool(np.array_equal(mul_int(F.B, F.C), A.to_dense()))
    return LosslessCheck(gf2_exact=gf2_exact, integer_exact=integer_exact)
