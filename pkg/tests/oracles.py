"""Slow, obviously-correct reference implementations used only by the tests.

None of these import the code paths they check.
"""

from __future__ import annotations

import itertools

import numpy as np


def dense_rank_mod2(a) -> int:
    """Gauss-Jordan elimination on a dense uint8 copy."""
    m = (np.array(a, dtype=np.uint8) & 1).copy()
    if m.size == 0:
        return 0
    rows, cols = m.shape
    r = 0
    for c in range(cols):
        hits = np.flatnonzero(m[r:, c])
        if hits.size == 0:
            continue
        piv = r + hits[0]
        m[[r, piv]] = m[[piv, r]]
        clear = np.flatnonzero(m[:, c])
        clear = clear[clear != r]
        m[clear] ^= m[r]
        r += 1
        if r == rows:
            break
    return r


def subset_rank(a) -> int:
    """Largest row subset with no nonempty sub-collection XOR-ing to zero."""
    a = np.array(a, dtype=np.uint8)
    rows = [tuple(r) for r in a]
    best = 0
    for size in range(1, len(rows) + 1):
        found = False
        for combo in itertools.combinations(rows, size):
            independent = True
            for sub in range(1, 1 << size):
                acc = np.zeros(a.shape[1], dtype=np.uint8)
                for j in range(size):
                    if sub >> j & 1:
                        acc ^= np.array(combo[j], dtype=np.uint8)
                if not acc.any():
                    independent = False
                    break
            if independent:
                found = True
                break
        if not found:
            break
        best = size
    return best


def naive_matmul(B, C, mod2: bool) -> np.ndarray:
    B = np.asarray(B, dtype=np.int64)
    C = np.asarray(C, dtype=np.int64)
    out = np.zeros((B.shape[0], C.shape[1]), dtype=np.int64)
    for i in range(B.shape[0]):
        for j in range(C.shape[1]):
            s = 0
            for k in range(B.shape[1]):
                s += B[i, k] * C[k, j]
            out[i, j] = s % 2 if mod2 else s
    return out


def naive_conv(x, W, stride=1, pad=0) -> np.ndarray:
    """Scalar-loop cross-correlation; x is (C,H,W), W is (C,k,k,M)."""
    x = np.asarray(x, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    C, H, Wd = x.shape
    _, kh, kw, M = W.shape
    Ho = (H + 2 * pad - kh) // stride + 1
    Wo = (Wd + 2 * pad - kw) // stride + 1
    out = np.zeros((M, Ho, Wo))
    for co in range(M):
        for oy in range(Ho):
            for ox in range(Wo):
                s = 0.0
                for ci in range(C):
                    for a in range(kh):
                        for b in range(kw):
                            iy = oy * stride + a - pad
                            ix = ox * stride + b - pad
                            if 0 <= iy < H and 0 <= ix < Wd:
                                s += x[ci, iy, ix] * W[ci, a, b, co]
                out[co, oy, ox] = s
    return out


def prefix_profile(W) -> list[int]:
    """Ranks of the indicators of the top-p entries, p = 0..N (distinct values)."""
    W = np.asarray(W, dtype=np.float64)
    order = np.argsort(-W.ravel(), kind="stable")
    ind = np.zeros(W.size, dtype=np.uint8)
    prof = [0]
    for flat in order:
        ind[flat] = 1
        prof.append(dense_rank_mod2(ind.reshape(W.shape)))
    return prof


def replay_bisection(profile: list[int], c: int) -> int:
    """Prefix length chosen by bisecting the prefix range [1, N] for rank c."""
    lo, hi = 1, len(profile) - 1
    while lo <= hi:
        mid = (lo + hi) // 2
        if profile[mid] == c:
            return mid
        if profile[mid] > c:
            hi = mid - 1
        else:
            lo = mid + 1
    j = max(hi, 1)
    while j > 1 and profile[j] > c:
        j -= 1
    return j


def enumerate_macs(n, m, k, c, h, w) -> tuple[int, int]:
    """Count multiply-accumulates of a k x k layer and of its k x 1 -> 1 x k split."""
    full = 0
    for _ in itertools.product(range(h), range(w), range(m), range(n), range(k), range(k)):
        full += 1
    split = 0
    for _ in itertools.product(range(h), range(w), range(c), range(n), range(k)):
        split += 1
    for _ in itertools.product(range(h), range(w), range(m), range(c), range(k)):
        split += 1
    return full, split


def bitplane_reference(mag: float, J: int, q: int) -> list[int]:
    """Bits of floor((mag + dw) / 2**-i) mod 2 using exact rationals."""
    from fractions import Fraction

    dw = Fraction(2) ** (-J + q + 1)
    v = Fraction(mag) + dw
    bits = []
    for i in range(-q, J - q - 1):
        bits.append(int(v / (Fraction(2) ** -i)) % 2)
    return bits
