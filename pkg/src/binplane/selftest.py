"""Bundled oracle suites run by ``binplane selftest``."""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, List

import numpy as np

from .alpha_search import search_alpha
from .compressor import split_cost_metrics
from .gf2 import Factorization, Gf2Matrix, decompose, verify_lossless


@dataclass
class SuiteResult:
    name: str
    passed: bool
    cases: int
    detail: str
    seconds: float


def span_rank(dense: np.ndarray) -> int:
    """Rank as log2 of the number of distinct XOR combinations of the rows."""
    rows = [int("".join(map(str, r)), 2) if len(r) else 0 for r in dense.tolist()]
    span = set()
    for mask in range(1 << len(rows)):
        acc = 0
        for j, v in enumerate(rows):
            if mask >> j & 1:
                acc ^= v
        span.add(acc)
    return len(span).bit_length() - 1


def _gf2_suite(rng: np.random.Generator, inject_fault: bool) -> tuple[int, str]:
    cases = []
    for bits in range(512):
        cases.append(np.array([(bits >> s) & 1 for s in range(9)], dtype=np.uint8).reshape(3, 3))
    for _ in range(200):
        h, w = rng.integers(1, 7, size=2)
        cases.append(rng.integers(0, 2, size=(h, w), dtype=np.uint8))
    for idx, a in enumerate(cases):
        A = Gf2Matrix.from_dense(a)
        f = decompose(A)
        if inject_fault and idx == 7:
            c = f.C.to_dense()
            c[0, 0] ^= 1
            f = Factorization(f.rank, f.B, Gf2Matrix.from_dense(c), f.integer_exact)
        if not verify_lossless(A, f).gf2_exact:
            return len(cases), f"case {idx}: B*C mod 2 != A"
        if f.rank != span_rank(a):
            return len(cases), f"case {idx}: inner dim {f.rank} != brute-force rank"
    return len(cases), ""


def bisection_replay(profile: List[int], c: int) -> int:
    """Prefix length the rank bisection lands on, replayed over a precomputed profile."""
    lo, hi = 1, len(profile) - 1
    while lo <= hi:
        mid = (lo + hi) // 2
        if profile[mid] > c:
            hi = mid - 1
        elif profile[mid] < c:
            lo = mid + 1
        else:
            return mid
    j = max(hi, 1)
    while j > 1 and profile[j] > c:
        j -= 1
    return j


def _alpha_suite(rng: np.random.Generator, inject_fault: bool) -> tuple[int, str]:
    n = 60
    for idx in range(n):
        h, w = int(rng.integers(2, 7)), int(rng.integers(2, 9))
        W = rng.permutation(h * w).reshape(h, w).astype(np.float64) + 1.0
        W /= W.max()
        c = int(rng.integers(1, min(h, w) + 1))
        order = np.argsort(-W, axis=None)
        profile = [0]
        ind = np.zeros(h * w, dtype=np.uint8)
        for flat in order:
            ind[flat] = 1
            profile.append(span_rank(ind.reshape(h, w)))
        want = bisection_replay(profile, c)
        got = search_alpha(W, c)
        if got.prefix != want or got.achieved_rank != profile[want]:
            return n, f"case {idx}: search prefix {got.prefix}, exhaustive replay {want}"
    return n, ""


def _cost_suite(rng: np.random.Generator, inject_fault: bool) -> tuple[int, str]:
    grid = list(itertools.product([1, 2, 3, 8], [1, 4, 6], [1, 3], [1, 2, 5]))
    for n, m, k, c in grid:
        hw = (2, 3)
        ops_a = sum(1 for _ in itertools.product(range(hw[0] * hw[1]), range(m), range(n), range(k), range(k)))
        ops_b = sum(1 for _ in itertools.product(range(hw[0] * hw[1]), range(c), range(n), range(k)))
        ops_b += sum(1 for _ in itertools.product(range(hw[0] * hw[1]), range(m), range(c), range(k)))
        got = split_cost_metrics(n, m, k, c, *hw)
        if got["op_original"] != ops_a or got["op_decomposed"] != ops_b:
            return len(grid), f"(n,m,k,c)={(n, m, k, c)}: op count mismatch"
        if got["cost_ratio"] != Fraction(ops_a, ops_b):
            return len(grid), f"(n,m,k,c)={(n, m, k, c)}: ratio mismatch"
        params = Fraction(n * k * k * m, n * k * c + c * k * m)
        if got["compression_ratio"] != params:
            return len(grid), f"(n,m,k,c)={(n, m, k, c)}: parameter ratio mismatch"
    return len(grid), ""


SUITES: List[tuple[str, Callable]] = [
    ("gf2-decompose-vs-bruteforce", _gf2_suite),
    ("alpha-search-vs-exhaustive-scan", _alpha_suite),
    ("split-cost-vs-enumeration", _cost_suite),
]


def run(seed: int = 0, inject_fault: bool = False) -> List[SuiteResult]:
    results = []
    for name, fn in SUITES:
        rng = np.random.default_rng(seed)
        t0 = time.perf_counter()
        try:
            cases, err = fn(rng, inject_fault)
        except Exception as exc:  # a crashing suite is a failed suite
            cases, err = 0, f"{type(exc).__name__}: {exc}"
        results.append(SuiteResult(name, not err, cases, err, time.perf_counter() - t0))
    return results
