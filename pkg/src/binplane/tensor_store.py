"""Bit-exact tensor container, layer specs and model manifests.

Container layout (all little-endian)::

    b"CBDT" | version u16 | ndim u16 | dims u64 * ndim | float32 payload
"""

from __future__ import annotations

import json
import os
import re
import struct
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List

import numpy as np

MAGIC = b"CBDT"
VERSION = 1
_HEADER = struct.Struct("<4sHH")


class TensorFormatError(ValueError):
    """Base class for container load failures."""


class MalformedHeaderError(TensorFormatError):
    pass


class TruncatedPayloadError(TensorFormatError):
    pass


class NonFiniteError(TensorFormatError):
    pass


class ManifestError(ValueError):
    pass


def atomic_write_bytes(path: str | os.PathLike, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def as_path_safe(name: str) -> str:
    """Layer name reduced to characters that are safe in a file name."""
    return re.sub(r"[^A-Za-z0-9._-]", "_", name) or "_"


def check_tensor(t: np.ndarray) -> np.ndarray:
    t = np.asarray(t)
    if t.dtype != np.float32:
        raise TypeError(f"expected float32 tensor, got {t.dtype}")
    if not np.all(np.isfinite(t)):
        raise NonFiniteError("tensor contains NaN or Inf")
    return t


def encode_tensor(t: np.ndarray) -> bytes:
    t = check_tensor(t)
    header = _HEADER.pack(MAGIC, VERSION, t.ndim) + struct.pack(f"<{t.ndim}Q", *t.shape)
    return header + np.ascontiguousarray(t, dtype="<f4").tobytes()


def decode_tensor(buf: bytes) -> np.ndarray:
    if len(buf) < _HEADER.size:
        raise MalformedHeaderError("file shorter than container header")
    magic, version, ndim = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise MalformedHeaderError(f"bad magic {magic!r}")
    if version != VERSION:
        raise MalformedHeaderError(f"unsupported container version {version}")
    off = _HEADER.size
    if len(buf) < off + 8 * ndim:
        raise MalformedHeaderError("truncated dimension list")
    shape = struct.unpack_from(f"<{ndim}Q", buf, off)
    off += 8 * ndim
    count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
    avail = len(buf) - off
    if avail < 4 * count:
        raise TruncatedPayloadError(f"expected {count} floats, found {avail // 4}")
    if avail > 4 * count:
        raise MalformedHeaderError(f"{avail - 4 * count} trailing bytes after payload")
    data = np.frombuffer(buf, dtype="<f4", count=count, offset=off).astype(np.float32)
    if not np.all(np.isfinite(data)):
        raise NonFiniteError("payload contains NaN or Inf")
    return data.reshape(shape)


def save_tensor(t: np.ndarray, path: str | os.PathLike) -> None:
    atomic_write_bytes(path, encode_tensor(t))


def load_tensor(path: str | os.PathLike) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes())


def flatten_conv(W: np.ndarray) -> np.ndarray:
    """(n, k, k, m) kernel -> (n*k, k*m) matrix.

    ``W[ci, kh, kw, co]`` lands at row ``ci*k + kh`` and column ``kw*m + co``,
    which is exactly the row-major reshape.
    """
    W = np.asarray(W)
    if W.ndim != 4:
        raise ValueError(f"expected a 4-D (n, k, k, m) tensor, got shape {W.shape}")
    n, kh, kw, m = W.shape
    if kh != kw:
        raise ValueError(f"non-square kernel {kh}x{kw}")
    return W.reshape(n * kh, kw * m)


def unflatten_conv(M: np.ndarray, n: int, k: int, m: int) -> np.ndarray:
    M = np.asarray(M)
    if M.shape != (n * k, k * m):
        raise ValueError(f"matrix shape {M.shape} does not match n={n}, k={k}, m={m}")
    return M.reshape(n, k, k, m)


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str
    n: int
    m: int
    k: int = 1
    stride: int = 1
    pad: int = 0

    def __post_init__(self):
        if self.kind not in ("conv", "fc"):
            raise ValueError(f"layer {self.name!r}: unknown kind {self.kind!r}")
        if min(self.n, self.m, self.k) < 1:
            raise ValueError(f"layer {self.name!r}: dimensions must be positive")
        if self.kind == "fc" and self.k != 1:
            raise ValueError(f"layer {self.name!r}: fc layers have k=1")
        if self.stride < 1 or self.pad < 0:
            raise ValueError(f"layer {self.name!r}: bad stride/pad")

    @property
    def shape(self) -> tuple[int, ...]:
        if self.kind == "conv":
            return (self.n, self.k, self.k, self.m)
        return (self.n, self.m)

    @property
    def matrix_shape(self) -> tuple[int, int]:
        return (self.n * self.k, self.k * self.m)

    def flatten(self, W: np.ndarray) -> np.ndarray:
        if W.shape != self.shape:
            raise ValueError(f"layer {self.name!r}: tensor shape {W.shape} != declared {self.shape}")
        return flatten_conv(W) if self.kind == "conv" else W

    def unflatten(self, M: np.ndarray) -> np.ndarray:
        if self.kind == "conv":
            return unflatten_conv(M, self.n, self.k, self.m)
        return np.asarray(M).reshape(self.n, self.m)


@dataclass
class ManifestEntry:
    spec: LayerSpec
    file: Path


@dataclass
class ModelManifest:
    layers: List[ManifestEntry] = field(default_factory=list)

    def load_weights(self) -> list[tuple[LayerSpec, np.ndarray]]:
        out = []
        for e in self.layers:
            try:
                W = load_tensor(e.file)
            except FileNotFoundError:
                raise ManifestError(f"layer {e.spec.name!r}: missing file {e.file}") from None
            except TensorFormatError as exc:
                raise ManifestError(f"layer {e.spec.name!r}: {exc}") from exc
            if W.shape != e.spec.shape:
                raise ManifestError(
                    f"layer {e.spec.name!r}: file shape {W.shape} != declared {e.spec.shape}"
                )
            out.append((e.spec, W))
        return out


def load_manifest(path: str | os.PathLike) -> ModelManifest:
    """Parse ``{"layers": [{name, kind, n, m, k, stride, pad, file}]}``.

    Relative file paths resolve against the manifest's directory.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ManifestError(f"manifest not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("layers"), list):
        raise ManifestError("manifest must be an object with a 'layers' list")
    entries = []
    seen = set()
    for i, item in enumerate(doc["layers"]):
        try:
            spec = LayerSpec(
                name=str(item["name"]),
                kind=item["kind"],
                n=int(item["n"]),
                m=int(item["m"]),
                k=int(item.get("k", 1)),
                stride=int(item.get("stride", 1)),
                pad=int(item.get("pad", 0)),
            )
            file = Path(item["file"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ManifestError(f"manifest layer #{i}: {exc}") from exc
        if spec.name in seen:
            raise ManifestError(f"duplicate layer name {spec.name!r}")
        seen.add(spec.name)
        if not file.is_absolute():
            file = path.parent / file
        if not file.exists():
            raise ManifestError(f"layer {spec.name!r}: missing file {file}")
        entries.append(ManifestEntry(spec, file))
    return ModelManifest(entries)


def save_manifest(manifest: ModelManifest, path: str | os.PathLike) -> None:
    path = Path(path)
    layers = []
    for e in manifest.layers:
        d = asdict(e.spec)
        try:
            d["file"] = str(e.file.relative_to(path.parent))
        except ValueError:
            d["file"] = str(e.file)
        layers.append(d)
    atomic_write_bytes(path, (json.dumps({"layers": layers}, indent=2) + "\n").encode())
