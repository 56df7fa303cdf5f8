"""Per-layer compression pipeline, binary layer format and bit/op accounting."""

from __future__ import annotations

import csv
import io
import json
import struct
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional, Union

import numpy as np

from .alpha_search import AlphaResult, bottleneck_rank, search_alpha, shifted_threshold_ranks
from .gf2 import Gf2Matrix, decompose, mul_gf2, rank_gf2
from .quantizer import (
    DEFAULT_J, SIGN_MODES, SIGN_PLANE, BitPlaneSet, DegenerateInputError,
    expand, normalize, reconstruct, reconstruction_error,
)
from .tensor_store import LayerSpec

LAYER_MAGIC = b"CBDL"
LAYER_VERSION = 1
SCALAR_OVERHEAD_BITS = 64  # w_max and alpha as float32


class ConfigurationError(ValueError):
    pass


class LayerFormatError(ValueError):
    pass


@dataclass(frozen=True)
class DensePlane:
    index: int
    plane: Gf2Matrix

    def matrix(self) -> Gf2Matrix:
        return self.plane

    @property
    def bits(self) -> int:
        return self.plane.rows * self.plane.cols


@dataclass(frozen=True)
class FactoredPlane:
    index: int
    B: Gf2Matrix
    C: Gf2Matrix
    rank: int
    integer_exact: bool

    def matrix(self) -> Gf2Matrix:
        return mul_gf2(self.B, self.C)

    @property
    def bits(self) -> int:
        return self.rank * (self.B.rows + self.C.cols)


PlaneRecord = Union[DensePlane, FactoredPlane]


def gate_passes(rank: int, rows: int, cols: int) -> bool:
    """Factoring pays off only if ``rank * (rows + cols) < rows * cols``."""
    return rank * (rows + cols) < rows * cols


@dataclass
class CompressedLayer:
    spec: LayerSpec
    w_max: float
    alpha: float
    q: int
    J: int
    sign_mode: str
    records: Dict[str, List[PlaneRecord]]
    sign: Optional[Gf2Matrix] = None
    # diagnostics; not part of the binary format
    search: Optional[AlphaResult] = None
    rank_shifted: Optional[int] = None
    error: Optional[dict] = None

    def to_planes(self) -> BitPlaneSet:
        groups = {g: [rec.matrix() for rec in recs] for g, recs in self.records.items()}
        return BitPlaneSet(
            J=self.J, q=self.q, alpha=self.alpha, w_max=self.w_max, sign_mode=self.sign_mode,
            shape=self.spec.matrix_shape, groups=groups, sign=self.sign,
        )

    def iter_records(self):
        for g, recs in self.records.items():
            for rec in recs:
                yield g, rec


def build_layer(
    spec: LayerSpec,
    planes: BitPlaneSet,
    factor: bool = True,
    gate: bool = True,
    max_index: Optional[int] = 0,
) -> CompressedLayer:
    """Wrap expanded planes, factoring those with index ``<= max_index``.

    ``max_index=None`` makes every plane eligible, which is only meant for
    constructing layers for the two-layer execution path.
    """
    rows, cols = spec.matrix_shape
    records: Dict[str, List[PlaneRecord]] = {}
    for g, plist in planes.groups.items():
        recs: List[PlaneRecord] = []
        for i, p in zip(planes.indices, plist):
            if p.shape != (rows, cols):
                raise ValueError(f"plane shape {p.shape} != layer matrix {(rows, cols)}")
            eligible = factor and (max_index is None or i <= max_index)
            if eligible:
                f = decompose(p)
                if not gate or gate_passes(f.rank, rows, cols):
                    recs.append(FactoredPlane(i, f.B, f.C, f.rank, f.integer_exact))
                    continue
            recs.append(DensePlane(i, p))
        records[g] = recs
    return CompressedLayer(
        spec=spec, w_max=planes.w_max, alpha=planes.alpha, q=planes.q, J=planes.J,
        sign_mode=planes.sign_mode, records=records, sign=planes.sign,
    )


def compress_layer(
    W: np.ndarray,
    spec: LayerSpec,
    J: int = DEFAULT_J,
    b: float = 0.3,
    sign_mode: str = SIGN_PLANE,
    gate: bool = True,
    factor: bool = True,
) -> CompressedLayer:
    """flatten -> rank budget -> alpha search -> expansion -> plane factoring."""
    if sign_mode not in SIGN_MODES:
        raise ConfigurationError(f"unknown sign mode {sign_mode!r}")
    M = spec.flatten(np.asarray(W, dtype=np.float32)).astype(np.float64)
    c = bottleneck_rank(b, *M.shape)
    if c < 1:
        raise ConfigurationError(f"layer {spec.name!r}: bottleneck {b} gives rank budget 0")
    w_max = float(np.max(np.abs(M)))
    if w_max == 0:
        raise DegenerateInputError(f"layer {spec.name!r}: all-zero weights")
    try:
        found = search_alpha(np.abs(M) / w_max, c)
        alpha = max(1.0, float(np.float32(found.alpha)))
    except DegenerateInputError:
        found, alpha = None, 1.0
    N = normalize(M, alpha)
    planes = expand(N, J, sign_mode)
    layer = build_layer(spec, planes, factor=factor, gate=gate, max_index=0)
    layer.search = found
    ranks = shifted_threshold_ranks(np.abs(N.values), J, N.q, alpha)
    layer.rank_shifted = ranks[0]
    layer.error = reconstruction_error(M, reconstruct(planes, dtype=np.float64))
    return layer


def decompress_layer(L: CompressedLayer) -> np.ndarray:
    M = reconstruct(L.to_planes(), dtype=np.float32)
    return L.spec.unflatten(M)


def split_cost_metrics(n: int, m: int, k: int, c: int, feature_h: int = 1, feature_w: int = 1) -> dict:
    """Operation counts of a k x k layer versus its k x 1 / 1 x k split with ``c`` channels."""
    if min(n, m, k, c, feature_h, feature_w) < 1:
        raise ValueError("all dimensions must be positive")
    op_original = n * m * k * k * feature_h * feature_w
    op_decomposed = (m + n) * c * k * feature_h * feature_w
    threshold = Fraction(n * m * k, m + n)
    return {
        "op_original": op_original,
        "op_decomposed": op_decomposed,
        "cost_ratio": Fraction(op_original, op_decomposed),
        "compression_ratio": Fraction(n * k * k * m, c * (n * k + k * m)),
        "threshold": threshold,
        "compressible": c < threshold,
    }


# -- reports ---------------------------------------------------------------

@dataclass
class LayerReport:
    name: str
    kind: str
    n: int
    m: int
    k: int
    J: int
    q: int
    alpha: float
    w_max: float
    sign_mode: str
    c_target: Optional[int]
    achieved_rank: Optional[int]
    rank_shifted: Optional[int]
    n_dense: int
    n_factored: int
    bits_dense_planes: int
    bits_factored_planes: int
    bits_sign: int
    bits_overhead: int
    total_bits: int
    total_bits_with_overhead: int
    fp32_bits: int
    effective_bitrate: float
    effective_bitrate_with_overhead: float
    op_count_original: int
    op_count_compressed: int
    cost_ratio: float
    max_abs_error: Optional[float]
    mse: Optional[float]


@dataclass
class CompressionReport:
    layers: List[LayerReport]
    planes: List[dict] = field(default_factory=list)
    total_bits: int = 0
    total_bits_with_overhead: int = 0
    fp32_bits: int = 0
    effective_bitrate: float = 0.0
    effective_bitrate_with_overhead: float = 0.0
    op_count_original: int = 0
    op_count_compressed: int = 0

    def to_dict(self) -> dict:
        return {
            "model": {
                "total_bits": self.total_bits,
                "total_bits_with_overhead": self.total_bits_with_overhead,
                "fp32_bits": self.fp32_bits,
                "effective_bitrate": self.effective_bitrate,
                "effective_bitrate_with_overhead": self.effective_bitrate_with_overhead,
                "op_count_original": self.op_count_original,
                "op_count_compressed": self.op_count_compressed,
            },
            "layers": [asdict(r) for r in self.layers],
            "planes": self.planes,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def layers_csv(self) -> str:
        return _csv([asdict(r) for r in self.layers], LAYER_CSV_COLUMNS)

    def planes_csv(self) -> str:
        return _csv(self.planes, PLANE_CSV_COLUMNS)


LAYER_CSV_COLUMNS = [f.name for f in LayerReport.__dataclass_fields__.values()]
PLANE_CSV_COLUMNS = ["layer", "group", "plane_index", "stored", "sparsity", "rank", "bits", "integer_exact"]


def _csv(rows: List[dict], columns: List[str]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({c: r.get(c) for c in columns})
    return buf.getvalue()


def layer_report(L: CompressedLayer) -> tuple[LayerReport, List[dict]]:
    rows, cols = L.spec.matrix_shape
    area = rows * cols
    dense_bits = factored_bits = n_dense = n_factored = 0
    op_compressed = 0
    planes = []
    for g, rec in L.iter_records():
        p = rec.matrix()
        if isinstance(rec, FactoredPlane):
            factored_bits += rec.bits
            n_factored += 1
            rank, stored, iexact = rec.rank, "factored", rec.integer_exact
        else:
            dense_bits += rec.bits
            n_dense += 1
            rank, stored, iexact = rank_gf2(p), "dense", None
        op_compressed += rec.bits
        planes.append({
            "layer": L.spec.name, "group": g, "plane_index": rec.index, "stored": stored,
            "sparsity": p.count_ones() / area if area else 0.0, "rank": rank,
            "bits": rec.bits, "integer_exact": iexact,
        })
    sign_bits = area if L.sign is not None else 0
    total = dense_bits + factored_bits + sign_bits
    fp32 = 32 * area
    n_planes = n_dense + n_factored
    op_original = n_planes * area
    rep = LayerReport(
        name=L.spec.name, kind=L.spec.kind, n=L.spec.n, m=L.spec.m, k=L.spec.k,
        J=L.J, q=L.q, alpha=L.alpha, w_max=L.w_max, sign_mode=L.sign_mode,
        c_target=L.search.c_target if L.search else None,
        achieved_rank=L.search.achieved_rank if L.search else None,
        rank_shifted=L.rank_shifted,
        n_dense=n_dense, n_factored=n_factored,
        bits_dense_planes=dense_bits, bits_factored_planes=factored_bits,
        bits_sign=sign_bits, bits_overhead=SCALAR_OVERHEAD_BITS,
        total_bits=total, total_bits_with_overhead=total + SCALAR_OVERHEAD_BITS,
        fp32_bits=fp32,
        effective_bitrate=float(Fraction(32 * total, fp32)),
        effective_bitrate_with_overhead=float(Fraction(32 * (total + SCALAR_OVERHEAD_BITS), fp32)),
        op_count_original=op_original, op_count_compressed=op_compressed,
        cost_ratio=float(Fraction(op_original, op_compressed)) if op_compressed else float("inf"),
        max_abs_error=L.error["max_abs"] if L.error else None,
        mse=L.error["mse"] if L.error else None,
    )
    return rep, planes


def model_report(layers: List[CompressedLayer]) -> CompressionReport:
    """Per-layer and aggregate bit counts.

    Bits per plane: dense ``rows*cols``; factored ``r*(rows+cols)``; the
    sign plane (sign_plane mode) ``rows*cols``. Op counts are binary
    multiply-accumulates per output position.
    """
    if not layers:
        raise ValueError("model_report needs at least one layer")
    reps, planes = [], []
    for L in layers:
        r, p = layer_report(L)
        reps.append(r)
        planes.extend(p)
    rep = CompressionReport(layers=reps, planes=planes)
    rep.total_bits = sum(r.total_bits for r in reps)
    rep.total_bits_with_overhead = sum(r.total_bits_with_overhead for r in reps)
    rep.fp32_bits = sum(r.fp32_bits for r in reps)
    rep.effective_bitrate = float(Fraction(32 * rep.total_bits, rep.fp32_bits))
    rep.effective_bitrate_with_overhead = float(Fraction(32 * rep.total_bits_with_overhead, rep.fp32_bits))
    rep.op_count_original = sum(r.op_count_original for r in reps)
    rep.op_count_compressed = sum(r.op_count_compressed for r in reps)
    return rep


# -- binary layer format ------------------------------------------------------

_KINDS = {"conv": 0, "fc": 1}
_MODES = {m: i for i, m in enumerate(SIGN_MODES)}


def encode_layer(L: CompressedLayer) -> bytes:
    s = L.spec
    name = s.name.encode("utf-8")
    out = [
        LAYER_MAGIC,
        struct.pack("<HH", LAYER_VERSION, len(name)), name,
        struct.pack("<B5I", _KINDS[s.kind], s.n, s.m, s.k, s.stride, s.pad),
        struct.pack("<HhB", L.J, L.q, _MODES[L.sign_mode]),
        struct.pack("<ff", L.w_max, L.alpha),
        struct.pack("<B", len(L.records)),
    ]
    for g, recs in L.records.items():
        gname = g.encode("ascii")
        out.append(struct.pack("<B", len(gname)) + gname + struct.pack("<H", len(recs)))
        for rec in recs:
            if isinstance(rec, FactoredPlane):
                out.append(struct.pack("<hBIB", rec.index, 1, rec.rank, rec.integer_exact))
                out.append(rec.B.to_bytes() + rec.C.to_bytes())
            else:
                out.append(struct.pack("<hB", rec.index, 0) + rec.plane.to_bytes())
    out.append(struct.pack("<B", L.sign is not None))
    if L.sign is not None:
        out.append(L.sign.to_bytes())
    return b"".join(out)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.off = buf, 0

    def take(self, fmt: str):
        try:
            vals = struct.unpack_from(fmt, self.buf, self.off)
        except struct.error as exc:
            raise LayerFormatError(f"truncated layer file at byte {self.off}") from exc
        self.off += struct.calcsize(fmt)
        return vals

    def raw(self, n: int) -> bytes:
        if self.off + n > len(self.buf):
            raise LayerFormatError(f"truncated layer file at byte {self.off}")
        b = self.buf[self.off:self.off + n]
        self.off += n
        return b

    def matrix(self) -> Gf2Matrix:
        try:
            m, self.off = Gf2Matrix.from_bytes(self.buf, self.off)
        except ValueError as exc:
            raise LayerFormatError(str(exc)) from exc
        return m


def decode_layer(buf: bytes) -> CompressedLayer:
    rd = _Reader(buf)
    if rd.raw(4) != LAYER_MAGIC:
        raise LayerFormatError("bad magic")
    version, nlen = rd.take("<HH")
    if version != LAYER_VERSION:
        raise LayerFormatError(f"unsupported layer version {version}")
    name = rd.raw(nlen).decode("utf-8")
    kind, n, m, k, stride, pad = rd.take("<B5I")
    J, q, mode = rd.take("<HhB")
    w_max, alpha = rd.take("<ff")
    try:
        spec = LayerSpec(name, {v: kk for kk, v in _KINDS.items()}[kind], n, m, k, stride, pad)
        sign_mode = SIGN_MODES[mode]
    except (KeyError, IndexError, ValueError) as exc:
        raise LayerFormatError(f"bad layer header: {exc}") from exc
    (ngroups,) = rd.take("<B")
    records: Dict[str, List[PlaneRecord]] = {}
    for _ in range(ngroups):
        (glen,) = rd.take("<B")
        g = rd.raw(glen).decode("ascii")
        (nrec,) = rd.take("<H")
        recs: List[PlaneRecord] = []
        for _ in range(nrec):
            index, tag = rd.take("<hB")
            if tag == 1:
                rank, iexact = rd.take("<IB")
                B, C = rd.matrix(), rd.matrix()
                recs.append(FactoredPlane(index, B, C, rank, bool(iexact)))
            elif tag == 0:
                recs.append(DensePlane(index, rd.matrix()))
            else:
                raise LayerFormatError(f"unknown plane tag {tag}")
        records[g] = recs
    (has_sign,) = rd.take("<B")
    sign = rd.matrix() if has_sign else None
    if rd.off != len(buf):
        raise LayerFormatError("trailing bytes after layer payload")
    return CompressedLayer(spec=spec, w_max=float(w_max), alpha=float(alpha), q=q, J=J,
                           sign_mode=sign_mode, records=records, sign=sign)
