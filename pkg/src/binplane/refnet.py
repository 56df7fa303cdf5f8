"""Reference inference: direct convolution, composite and two-layer decomposed paths.

All convolutions are cross-correlations (no kernel flip) with zero padding.
Each output element is accumulated in float64 over input channels, then
kernel rows, then kernel columns; results are cast to float32 at the end.
Feature maps are ``(channels, height, width)`` arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .compressor import CompressedLayer, FactoredPlane, compress_layer, decompress_layer, model_report
from .quantizer import SIGNED_SPLIT, reconstruction_error
from .tensor_store import LayerSpec


class ModeError(ValueError):
    """The decomposed path needs signed_split layers with every plane factored."""


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


def _accumulate(x: np.ndarray, W: np.ndarray, stride=1, pad=0) -> np.ndarray:
    """float64 cross-correlation of ``x`` (C,H,W) with ``W`` (C, kh, kw, M)."""
    x = np.asarray(x)
    W = np.asarray(W)
    if x.ndim != 3 or W.ndim != 4:
        raise ValueError(f"bad ranks: input {x.shape}, kernel {W.shape}")
    C, H, Wd = x.shape
    n, kh, kw, m = W.shape
    if C != n:
        raise ValueError(f"input has {C} channels, kernel expects {n}")
    sh, sw = _pair(stride)
    ph, pw = _pair(pad)
    xp = np.zeros((C, H + 2 * ph, Wd + 2 * pw), dtype=np.float64)
    xp[:, ph:ph + H, pw:pw + Wd] = x
    Ho = (H + 2 * ph - kh) // sh + 1
    Wo = (Wd + 2 * pw - kw) // sw + 1
    if Ho < 1 or Wo < 1:
        raise ValueError("kernel larger than padded input")
    W64 = W.astype(np.float64)
    out = np.zeros((m, Ho, Wo), dtype=np.float64)
    for ci in range(C):
        for a in range(kh):
            for b in range(kw):
                patch = xp[ci, a:a + sh * (Ho - 1) + 1:sh, b:b + sw * (Wo - 1) + 1:sw]
                out += W64[ci, a, b, :, None, None] * patch[None]
    return out


def conv2d(x: np.ndarray, W: np.ndarray, stride=1, pad=0) -> np.ndarray:
    return _accumulate(x, W, stride, pad).astype(np.float32)


def fc(x: np.ndarray, W: np.ndarray) -> np.ndarray:
    """Fully connected layer on a flattened feature map; returns shape (m, 1, 1)."""
    v = np.asarray(x).reshape(-1, 1, 1)
    if v.shape[0] != W.shape[0]:
        raise ValueError(f"fc expects {W.shape[0]} inputs, got {v.shape[0]}")
    return conv2d(v, np.asarray(W).reshape(W.shape[0], 1, 1, W.shape[1]))


def layer_forward(x: np.ndarray, spec: LayerSpec, W: np.ndarray) -> np.ndarray:
    if spec.kind == "fc":
        return fc(x, W)
    return conv2d(x, W, spec.stride, spec.pad)


def forward_composite(x: np.ndarray, L: CompressedLayer, stride=None, pad=None) -> np.ndarray:
    """Convolve with the recomposed kernel; identical code path to the FP32 layer."""
    W = decompress_layer(L)
    if L.spec.kind == "fc":
        return fc(x, W)
    return conv2d(x, W, L.spec.stride if stride is None else stride, L.spec.pad if pad is None else pad)


def forward_decomposed(x: np.ndarray, L: CompressedLayer, stride=None, pad=None) -> np.ndarray:
    """Run every factored plane as a k x 1 convolution followed by a 1 x k one.

    Plane ``B`` (n*k x r) becomes a vertical kernel with ``r`` outputs and
    ``C`` (r x k*m) a horizontal kernel; contributions are scaled by
    ``+-2**-i * w_max / alpha`` and summed. Matches the composite path
    only when every ``B @ C`` has no entries above 1.
    """
    if L.sign_mode != SIGNED_SPLIT:
        raise ModeError("decomposed execution needs signed_split layers")
    for g, rec in L.iter_records():
        if not isinstance(rec, FactoredPlane):
            raise ModeError(f"plane {g}[{rec.index}] is stored dense")
    spec = L.spec
    n, k, m = spec.n, spec.k, spec.m
    if spec.kind == "fc":
        x = np.asarray(x).reshape(-1, 1, 1)
        s, p = 1, 0
    else:
        s = spec.stride if stride is None else stride
        p = spec.pad if pad is None else pad
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != n:
        raise ValueError(f"input has {x.shape[0]} channels, layer expects {n}")
    xp = np.pad(x, ((0, 0), (p, p), (p, p)))
    scale = L.w_max / L.alpha
    out = None
    for g, rec in L.iter_records():
        sgn = -1.0 if g == "neg" else 1.0
        r = rec.rank
        if r == 0:
            continue
        Kb = rec.B.to_dense().reshape(n, k, 1, r)
        Kc = rec.C.to_dense().reshape(r, 1, k, m)
        mid = _accumulate(xp, Kb, stride=(s, 1), pad=0)
        y = _accumulate(mid, Kc, stride=(1, s), pad=0)
        term = y * (sgn * math.ldexp(1.0, -rec.index))
        out = term if out is None else out + term
    if out is None:
        Ho = (xp.shape[1] - k) // s + 1
        Wo = (xp.shape[2] - k) // s + 1
        out = np.zeros((m, Ho, Wo))
    return (out * scale).astype(np.float32)


# -- toy models -----------------------------------------------------------------

@dataclass
class ToyLayer:
    spec: LayerSpec
    weight: np.ndarray
    compressed: Optional[CompressedLayer] = None


@dataclass
class ToyModel:
    """Sequential conv/fc stack with ReLU between layers (none after the last)."""

    layers: List[ToyLayer] = field(default_factory=list)

    def forward(self, x: np.ndarray, compressed: bool = False, trace: bool = False):
        acts = []
        for idx, lay in enumerate(self.layers):
            if compressed and lay.compressed is not None:
                x = forward_composite(x, lay.compressed)
            else:
                x = layer_forward(x, lay.spec, lay.weight)
            if idx < len(self.layers) - 1:
                x = np.maximum(x, np.float32(0))
            acts.append(x)
        return acts if trace else x

    def compressed_with(self, **kwargs) -> "ToyModel":
        return ToyModel([ToyLayer(l.spec, l.weight, compress_layer(l.weight, l.spec, **kwargs)) for l in self.layers])


def make_toy_model(seed: int = 0, channels: int = 16, n_layers: int = 3, in_channels: int = 3, k: int = 3) -> ToyModel:
    rng = np.random.default_rng(seed)
    layers = []
    n = in_channels
    for i in range(n_layers):
        spec = LayerSpec(name=f"conv{i + 1}", kind="conv", n=n, m=channels, k=k, stride=1, pad=k // 2)
        # Laplacian weights resemble trained conv kernels
        W = rng.laplace(0.0, 1.0 / math.sqrt(n * k * k), size=spec.shape).astype(np.float32)
        layers.append(ToyLayer(spec, W))
        n = channels
    return ToyModel(layers)


def make_dataset(seed: int, count: int, shape: Sequence[int]) -> List[np.ndarray]:
    rng = np.random.default_rng(seed)
    return [rng.standard_normal(tuple(shape)).astype(np.float32) for _ in range(count)]


def evaluate(model: ToyModel, dataset: Sequence[np.ndarray]) -> dict:
    """Divergence between FP32 and compressed forward passes.

    Per-layer numbers feed each layer the FP32 activation of its
    predecessor; end-to-end numbers run the two stacks independently.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    per_layer = [[] for _ in model.layers]
    ref_out, cmp_out = [], []
    for x in dataset:
        ref_acts = model.forward(x, trace=True)
        inp = x
        for li, lay in enumerate(model.layers):
            if lay.compressed is not None:
                y = forward_composite(inp, lay.compressed)
            else:
                y = layer_forward(inp, lay.spec, lay.weight)
            if li < len(model.layers) - 1:
                y = np.maximum(y, np.float32(0))
            per_layer[li].append((ref_acts[li], y))
            inp = ref_acts[li]
        ref_out.append(ref_acts[-1])
        cmp_out.append(model.forward(x, compressed=True))

    def stats(pairs):
        a = np.concatenate([p[0].ravel() for p in pairs])
        b = np.concatenate([p[1].ravel() for p in pairs])
        return reconstruction_error(a, b)

    return {
        "layers": [{"name": lay.spec.name, **stats(pl)} for lay, pl in zip(model.layers, per_layer)],
        "end_to_end": stats(list(zip(ref_out, cmp_out))),
    }


def sweep(model: ToyModel, dataset, J_values=(7,), b_values=(0.3,), sign_mode="sign_plane", gate=True) -> List[dict]:
    """Compress and evaluate for every (J, b); one row per combination."""
    rows = []
    for J in J_values:
        for b in b_values:
            cm = model.compressed_with(J=J, b=b, sign_mode=sign_mode, gate=gate)
            rep = model_report([l.compressed for l in cm.layers])
            ev = evaluate(cm, dataset)
            rows.append({
                "J": J, "b": b,
                "bitrate": rep.effective_bitrate,
                "bitrate_with_overhead": rep.effective_bitrate_with_overhead,
                "max_abs": ev["end_to_end"]["max_abs"],
                "mse": ev["end_to_end"]["mse"],
            })
    return rows
