"""Acceptance criteria, one test each, at the stated tolerances and time limits.

Every test records a PASS/FAIL line; the summary is printed at the end of
the pytest run (see conftest.py) and also inline when run with ``-s``.
"""

import functools
import itertools
import math
import time
from fractions import Fraction

import numpy as np

from binplane.alpha_search import rank_prefix_profile, search_alpha
from binplane.compressor import (
    FactoredPlane, build_layer, compress_layer, decompress_layer, gate_passes, layer_report,
    split_cost_metrics,
)
from binplane.gf2 import Gf2Matrix, decompose, mul_gf2, mul_int, rank_gf2
from binplane.quantizer import (
    SIGN_PLANE, SIGNED_SPLIT, BitPlaneSet, NormalizedTensor, expand, normalize, plane_sparsity, reconstruct,
)
from binplane.refnet import forward_composite, forward_decomposed, make_dataset, make_toy_model
from binplane.tensor_store import LayerSpec, unflatten_conv
from oracles import dense_rank_mod2, enumerate_macs, naive_conv, prefix_profile, replay_bisection

RESULTS: dict = {}


def criterion(number: int, title: str, limit: float):
    def wrap(fn):
        @functools.wraps(fn)
        def run(*args, **kwargs):
            t0 = time.perf_counter()
            detail, ok = "", False
            try:
                detail = fn(*args, **kwargs) or ""
                elapsed = time.perf_counter() - t0
                ok = elapsed < limit
                if not ok:
                    detail = f"took {elapsed:.1f}s, limit {limit}s"
            except AssertionError as exc:
                detail = str(exc).splitlines()[0] if str(exc) else "assertion failed"
                raise
            finally:
                elapsed = time.perf_counter() - t0
                line = f"[{'PASS' if ok else 'FAIL'}] {number:2d}. {title} ({elapsed:.2f}s / {limit:g}s) {detail}".rstrip()
                RESULTS[number] = line
                print(line)
            assert ok, detail
        return run
    return wrap


def _all_binary(h, w):
    n = h * w
    shifts = np.arange(n)
    for v in range(1 << n):
        yield ((v >> shifts) & 1).astype(np.uint8).reshape(h, w)


@criterion(1, "GF(2) decomposition is lossless with inner dim = rank", 30)
def test_c01_gf2_lossless():
    rng = np.random.default_rng(1)
    cases = [rng.integers(0, 2, size=tuple(rng.integers(1, 129, size=2)), dtype=np.uint8) for _ in range(1000)]
    cases += list(_all_binary(3, 3))
    for idx, a in enumerate(cases):
        A = Gf2Matrix.from_dense(a)
        f = decompose(A)
        b, c = f.B.to_dense().astype(np.int64), f.C.to_dense().astype(np.int64)
        assert b.shape == (a.shape[0], f.rank) and c.shape == (f.rank, a.shape[1]), f"case {idx}: shapes"
        assert np.array_equal((b @ c) % 2, a), f"case {idx}: product differs"
        assert mul_gf2(f.B, f.C) == A
        assert f.rank == rank_gf2(A), f"case {idx}: inner dim"
    # the inner dimension against the independent elimination on a subsample
    for a in cases[:200] + cases[1000:]:
        assert decompose(Gf2Matrix.from_dense(a)).rank == dense_rank_mod2(a)
    return f"{len(cases)} matrices"


@criterion(2, "rank_gf2 agrees with brute-force row reduction on all 3x3 and 4x4", 30)
def test_c02_rank_oracle():
    n = 0
    for h in (3, 4):
        for a in _all_binary(h, h):
            assert rank_gf2(Gf2Matrix.from_dense(a)) == dense_rank_mod2(a), a.tolist()
            n += 1
    assert n >= 10_000
    return f"{n} matrices"


@criterion(3, "quantization error <= 2^(-J+q+1) and non-increasing in J", 10)
def test_c03_quantization_bound():
    for q in range(4):
        alpha = float(2 ** q)
        mags = np.linspace(0.0, alpha, 100_000)
        prev = None
        for J in range(3, 11):
            B = expand(NormalizedTensor(values=mags, w_max=alpha, alpha=alpha, q=q), J)
            err = np.abs(reconstruct(B, dtype=np.float64) - mags)
            assert err.max() <= math.ldexp(1.0, -J + q + 1), f"J={J} q={q} max err {err.max()}"
            if prev is not None:
                assert np.all(err <= prev), f"error grew at J={J} q={q}"
            prev = err
    return "32 (J, q) pairs x 1e5 points"


@criterion(4, "adjacent prefix ranks differ by at most 1", 10)
def test_c04_prefix_continuity():
    rng = np.random.default_rng(4)
    for _ in range(100):
        h, w = rng.integers(1, 33, size=2)
        prof = rank_prefix_profile(rng.random((h, w)))
        assert all(abs(b - a) <= 1 for a, b in zip(prof, prof[1:]))
    return "100 matrices"


@criterion(5, "alpha search matches the exhaustive prefix-scan oracle", 10)
def test_c05_alpha_search_oracle():
    rng = np.random.default_rng(5)
    checks = 0
    for _ in range(100):
        h, w = rng.integers(2, 17, size=2)
        v = rng.permutation(h * w) + 1.0
        W = (v / v.max()).reshape(h, w)
        prof = prefix_profile(W)
        top = np.sort(W.ravel())[::-1]
        for c in range(1, min(h, w) + 1):
            res = search_alpha(W, c)
            p = replay_bisection(prof, c)
            assert (res.prefix, res.achieved_rank) == (p, prof[p]), f"c={c} shape={W.shape}"
            assert res.alpha == max(1.0, 1.0 / top[p - 1])
            checks += 1
    return f"{checks} (matrix, c) pairs"


@criterion(6, "cost and compression ratios equal explicit enumeration", 5)
def test_c06_split_cost():
    r = split_cost_metrics(64, 64, 3, 32)
    assert r["cost_ratio"] == Fraction(3) and r["compression_ratio"] == Fraction(3)
    r = split_cost_metrics(64, 64, 3, 96)
    assert r["cost_ratio"] == 1 and r["threshold"] == 96 and not r["compressible"]
    grid = list(itertools.product((1, 3, 8, 64), (1, 5, 64), (1, 3), (1, 2, 32, 96)))
    for n, m, k, c in grid:
        hw = (1, 1) if n * m > 64 else (2, 3)
        r = split_cost_metrics(n, m, k, c, *hw)
        full, split = enumerate_macs(n, m, k, c, *hw)
        assert (r["op_original"], r["op_decomposed"]) == (full, split)
        assert r["cost_ratio"] == Fraction(full, split)
        assert r["compression_ratio"] == Fraction(n * k * k * m, c * (n * k + k * m))
        assert r["compressible"] == (Fraction(full, split) > 1)
    return f"{len(grid) + 2} cases"


@criterion(7, "factored storage is transparent to decompression and inference", 30)
def test_c07_transparency():
    model = make_toy_model(seed=7, channels=16)
    fact = model.compressed_with(J=7, b=0.3, factor=True)
    dense = model.compressed_with(J=7, b=0.3, factor=False)
    n_fact = 0
    for lf, ld in zip(fact.layers, dense.layers):
        n_fact += sum(isinstance(r, FactoredPlane) for _, r in lf.compressed.iter_records())
        a, b = decompress_layer(lf.compressed), decompress_layer(ld.compressed)
        assert a.view(np.uint32).tolist() == b.view(np.uint32).tolist()
    assert n_fact > 0, "nothing was factored"
    for x in make_dataset(7, 4, (3, 12, 12)):
        inp = x
        for lf, ld in zip(fact.layers, dense.layers):
            a = forward_composite(inp, lf.compressed)
            b = forward_composite(inp, ld.compressed)
            assert a.view(np.uint32).tolist() == b.view(np.uint32).tolist()
            inp = np.maximum(a, np.float32(0))
        assert np.array_equal(fact.forward(x, compressed=True), dense.forward(x, compressed=True))
    return f"{n_fact} factored planes"


def _block_plane(rng, h, w):
    a = np.zeros((h, w), dtype=np.uint8)
    nb = int(rng.integers(1, 4))
    for r, c in zip(np.array_split(rng.permutation(h), nb), np.array_split(rng.permutation(w), nb)):
        a[np.ix_(r[rng.random(r.size) < 0.7], c[rng.random(c.size) < 0.7])] = 1
    return Gf2Matrix.from_dense(a)


def _split_layer(spec, pos, neg, w_max, alpha):
    h, w = spec.matrix_shape
    planes = BitPlaneSet(J=len(pos) + 1, q=0, alpha=alpha, w_max=w_max, sign_mode=SIGNED_SPLIT,
                         shape=(h, w), groups={"pos": pos, "neg": neg})
    return build_layer(spec, planes, gate=False, max_index=None)


@criterion(8, "two-layer path: exact when integer-exact, discrepancy kernel otherwise", 30)
def test_c08_two_layer_path():
    rng = np.random.default_rng(8)
    for stride, pad in ((1, 1), (2, 1), (1, 0)):
        spec = LayerSpec("c", "conv", n=4, m=5, k=3, stride=stride, pad=pad)
        h, w = spec.matrix_shape
        for _ in range(5):
            L = _split_layer(spec, [_block_plane(rng, h, w) for _ in range(5)],
                             [_block_plane(rng, h, w) for _ in range(5)], w_max=4.0, alpha=2.0)
            assert all(isinstance(r, FactoredPlane) and r.integer_exact for _, r in L.iter_records())
            x = rng.integers(-8, 9, size=(4, 9, 9)).astype(np.float32)
            a, b = forward_decomposed(x, L), forward_composite(x, L)
            assert a.view(np.uint32).tolist() == b.view(np.uint32).tolist()

    A = Gf2Matrix.from_dense([[1, 0, 1], [0, 1, 1], [1, 1, 0]])
    Z = Gf2Matrix.zeros(3, 3)
    spec = LayerSpec("d", "conv", n=1, m=1, k=3, stride=1, pad=1)
    L = _split_layer(spec, [Z, A, Z], [Z, Z, Z], w_max=1.0, alpha=1.0)
    rec = L.records["pos"][1]
    assert not rec.integer_exact
    D = (mul_int(rec.B, rec.C) - A.to_dense()).astype(np.float64)
    x = rng.standard_normal((1, 10, 10)).astype(np.float32)
    measured = forward_decomposed(x, L).astype(np.float64) - forward_composite(x, L).astype(np.float64)
    expected = naive_conv(x, unflatten_conv(D, 1, 3, 1) * 0.5, 1, 1)
    rel = np.max(np.abs(measured - expected)) / np.max(np.abs(expected))
    assert rel <= 1e-6, f"relative mismatch {rel:.3g}"
    return f"discrepancy rel err {rel:.1e}"


@criterion(9, "plane sparsity strictly increases from i=0 to i=5", 5)
def test_c09_sparsity_trend():
    w = np.abs(np.random.default_rng(9).standard_normal(10_000))
    s = plane_sparsity(expand(normalize(w, 1.0), J=7))
    seq = [s.lookup(i) for i in range(6)]
    assert all(a < b for a, b in zip(seq, seq[1:])), seq
    return "sparsity " + " < ".join(f"{v:.3f}" for v in seq)


@criterion(10, "all-dense J=7 bitrate is 7.0; gate-passing factoring lowers it", 5)
def test_c10_bitrate():
    rng = np.random.default_rng(10)
    reduced = 0
    for n, m in ((8, 8), (16, 16), (16, 8)):
        spec = LayerSpec(f"c{n}x{m}", "conv", n=n, m=m, k=3, stride=1, pad=1)
        W = rng.laplace(size=spec.shape).astype(np.float32)
        dense = layer_report(compress_layer(W, spec, J=7, sign_mode=SIGN_PLANE, factor=False))[0]
        assert dense.effective_bitrate == 7.0, dense.effective_bitrate
        L = compress_layer(W, spec, J=7, sign_mode=SIGN_PLANE)
        fact = layer_report(L)[0]
        h, w = spec.matrix_shape
        for _, rec in L.iter_records():
            if isinstance(rec, FactoredPlane):
                assert gate_passes(rec.rank, h, w)
        if fact.n_factored:
            assert fact.effective_bitrate < 7.0
            reduced += 1
    # every single gate-passing plane lowers the count on its own
    spec = LayerSpec("f", "fc", n=12, m=12)
    P = mul_gf2(Gf2Matrix.from_dense(rng.integers(0, 2, (12, 3))), Gf2Matrix.from_dense(rng.integers(0, 2, (3, 12))))
    planes = BitPlaneSet(J=7, q=0, alpha=1.0, w_max=1.0, sign_mode=SIGN_PLANE, shape=(12, 12),
                         groups={"mag": [P] * 6}, sign=Gf2Matrix.zeros(12, 12))
    base = layer_report(build_layer(spec, planes, factor=False))[0].effective_bitrate
    assert base == 7.0
    for top in range(0, 6):
        r = layer_report(build_layer(spec, planes, max_index=top))[0]
        assert r.n_factored == top + 1 and r.effective_bitrate < base
    assert reduced > 0
    return f"{reduced}/3 searched layers reduced"
