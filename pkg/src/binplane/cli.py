"""Command-line entry point: ``binplane {make-toy,expand,compress,eval,selftest}``.

Data goes to files under ``--out`` (and summaries to stdout); diagnostics go
to stderr. Exit status is 0 on success, 1 on pipeline errors and 2 on
usage errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import compressor, refnet, selftest
from .alpha_search import DEFAULT_BOTTLENECK
from .compressor import ConfigurationError, compress_layer, encode_layer, model_report
from .quantizer import DEFAULT_J, SIGN_PLANE, SIGNED_SPLIT, DegenerateInputError, expand, normalize, plane_sparsity
from .tensor_store import (
    ManifestEntry, ManifestError, ModelManifest, TensorFormatError, as_path_safe,
    atomic_write_bytes, load_manifest, save_manifest, save_tensor,
)

log = logging.getLogger("binplane")

SIGN_MODE_FLAGS = {"plane": SIGN_PLANE, "split": SIGNED_SPLIT}
PLANE_STATS_COLUMNS = ["layer", "group", "plane_index", "sparsity", "rank", "bits"]


class UsageError(Exception):
    pass


def parse_j_range(text: str) -> List[int]:
    """``"3..10"`` -> [3, ..., 10]; a single integer is also accepted."""
    try:
        if ".." in text:
            lo, hi = (int(t) for t in text.split("..", 1))
        else:
            lo = hi = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LO..HI, got {text!r}") from None
    if lo < 2 or hi < lo:
        raise argparse.ArgumentTypeError(f"bad J range {text!r}")
    return list(range(lo, hi + 1))


def parse_float_list(text: str) -> List[float]:
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not vals or any(v <= 0 for v in vals):
        raise argparse.ArgumentTypeError(f"bottleneck ratios must be positive: {text!r}")
    return vals


def _write_text(path: Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def _csv(rows: List[dict], columns: List[str]) -> str:
    return compressor._csv(rows, columns)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_layers(args):
    return load_manifest(args.manifest).load_weights()


# -- commands -------------------------------------------------------------------

def cmd_make_toy(args) -> int:
    out = _out_dir(args)
    model = refnet.make_toy_model(seed=args.seed, channels=args.channels, n_layers=args.layers,
                                  in_channels=args.in_channels, k=args.kernel)
    entries = []
    for lay in model.layers:
        f = out / f"{lay.spec.name}.cbdt"
        save_tensor(lay.weight, f)
        entries.append(ManifestEntry(lay.spec, f))
    save_manifest(ModelManifest(entries), out / "manifest.json")
    print(out / "manifest.json")
    return 0


def cmd_expand(args) -> int:
    out = _out_dir(args)
    rows = []
    for spec, W in _load_layers(args):
        try:
            N = normalize(spec.flatten(W), args.alpha)
        except DegenerateInputError as exc:
            raise ConfigurationError(f"layer {spec.name!r}: {exc}") from exc
        B = expand(N, args.bits, SIGN_MODE_FLAGS[args.sign_mode])
        stats = plane_sparsity(B, with_rank=True)
        area = int(np.prod(B.matrix_shape))
        for r in stats.to_rows():
            rows.append({"layer": spec.name, **r, "bits": area})
    text = _csv(rows, PLANE_STATS_COLUMNS)
    _write_text(out / "plane_stats.csv", text)
    _write_text(out / "plane_stats.json", json.dumps(rows, indent=2, sort_keys=True) + "\n")
    sys.stdout.write(text)
    return 0


def _compress_all(layers, args, b: float):
    out = []
    for spec, W in layers:
        try:
            out.append(compress_layer(W, spec, J=args.bits, b=b,
                                      sign_mode=SIGN_MODE_FLAGS[args.sign_mode], gate=args.gate == "on"))
        except (ValueError, DegenerateInputError) as exc:
            raise ConfigurationError(f"layer {spec.name!r}: {exc}") from exc
    return out


def cmd_compress(args) -> int:
    out = _out_dir(args)
    compressed = _compress_all(_load_layers(args), args, args.bottleneck)
    for L in compressed:
        atomic_write_bytes(out / f"{as_path_safe(L.spec.name)}.cbdl", encode_layer(L))
    rep = model_report(compressed)
    _write_text(out / "report.json", rep.to_json())
    _write_text(out / "layers.csv", rep.layers_csv())
    _write_text(out / "planes.csv", rep.planes_csv())
    print(f"layers={len(compressed)} bitrate={rep.effective_bitrate:.4f} "
          f"bitrate_with_overhead={rep.effective_bitrate_with_overhead:.4f}")
    return 0


def _toy_from_layers(layers) -> refnet.ToyModel:
    return refnet.ToyModel([refnet.ToyLayer(spec, W) for spec, W in layers])


def cmd_eval(args) -> int:
    if args.samples < 1:
        raise UsageError("eval needs a non-empty dataset (--samples >= 1)")
    out = _out_dir(args)
    layers = _load_layers(args)
    model = _toy_from_layers(layers)
    first = layers[0][0]
    shape = (first.n, *args.input_size) if first.kind == "conv" else (first.n, 1, 1)
    dataset = refnet.make_dataset(args.seed, args.samples, shape)
    mode = SIGN_MODE_FLAGS[args.sign_mode]
    gate = args.gate == "on"
    try:
        j_rows = refnet.sweep(model, dataset, J_values=args.sweep_j, b_values=[args.bottleneck],
                              sign_mode=mode, gate=gate)
        b_rows = refnet.sweep(model, dataset, J_values=[args.bits], b_values=args.sweep_b,
                              sign_mode=mode, gate=gate)
    except (ValueError, DegenerateInputError) as exc:
        raise ConfigurationError(str(exc)) from exc
    cols = ["J", "b", "bitrate", "bitrate_with_overhead", "max_abs", "mse"]
    _write_text(out / "divergence_vs_j.csv", _csv(j_rows, cols))
    _write_text(out / "bitrate_vs_b.csv", _csv(b_rows, cols))
    _write_text(out / "eval.json", json.dumps({"sweep_j": j_rows, "sweep_b": b_rows}, indent=2, sort_keys=True) + "\n")
    for r in j_rows + b_rows:
        print(f"J={r['J']} b={r['b']} bitrate={r['bitrate']:.4f} max_abs={r['max_abs']:.6g}")
    return 0


def cmd_selftest(args) -> int:
    results = selftest.run(seed=args.seed, inject_fault=args.inject_fault)
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        line = f"{status} {r.name} cases={r.cases} time={r.seconds:.2f}s"
        print(line + (f" ({r.detail})" if r.detail else ""))
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} suites passed")
    return 1 if failed else 0


# -- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="binplane", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, manifest=True):
        if manifest:
            sp.add_argument("--manifest", required=True, help="model manifest JSON")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--bits", type=int, default=DEFAULT_J, help="J, bits per weight incl. sign")
        sp.add_argument("--sign-mode", choices=sorted(SIGN_MODE_FLAGS), default="plane")
        sp.add_argument("--seed", type=int, default=0)

    sp = sub.add_parser("make-toy", help="write a seeded toy conv model and manifest")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--channels", type=int, default=16)
    sp.add_argument("--layers", type=int, default=3)
    sp.add_argument("--in-channels", type=int, default=3)
    sp.add_argument("--kernel", type=int, default=3)
    sp.set_defaults(func=cmd_make_toy)

    sp = sub.add_parser("expand", help="per-plane sparsity and rank of every layer")
    common(sp)
    sp.add_argument("--alpha", type=float, default=1.0)
    sp.set_defaults(func=cmd_expand)

    for name, func, helptext in (
        ("compress", cmd_compress, "compress every layer, write .cbdl files and reports"),
        ("eval", cmd_eval, "divergence-vs-J and bitrate-vs-b sweeps on a toy model"),
    ):
        sp = sub.add_parser(name, help=helptext)
        common(sp)
        sp.add_argument("--bottleneck", type=float, default=DEFAULT_BOTTLENECK, help="b")
        sp.add_argument("--gate", choices=["on", "off"], default="on")
        if name == "eval":
            sp.add_argument("--sweep-j", type=parse_j_range, default=parse_j_range("3..10"))
            sp.add_argument("--sweep-b", type=parse_float_list, default=parse_float_list("0.2,0.3,0.4,0.5"))
            sp.add_argument("--samples", type=int, default=8)
            sp.add_argument("--input-size", type=int, nargs=2, default=(8, 8), metavar=("H", "W"))
        sp.set_defaults(func=func)

    sp = sub.add_parser("selftest", help="run the bundled oracle suites")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--inject-fault", action="store_true", help=argparse.SUPPRESS)
    sp.set_defaults(func=cmd_selftest)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    if getattr(args, "bits", DEFAULT_J) < 2:
        parser.error("--bits must be >= 2")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"binplane: usage error: {exc}", file=sys.stderr)
        return 2
    except (ManifestError, TensorFormatError, ConfigurationError) as exc:
        print(f"binplane: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
