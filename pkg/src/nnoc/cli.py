"""Command-line interface.

Exit codes: 0 success, 2 usage, 3 input error, 4 stream/model mismatch,
5 internal invariant violation (including a failed ``verify``).
Set ``NNOC_LOG`` (e.g. ``DEBUG``) for log output on stderr.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__
from .codec import Bitstream, bpov, decode, encode
from .context import ContextHistogram, collect_training_contexts
from .errors import EmptyCloud, InputError, ModelVariantMismatch, NNOCError
from .geometry import build_pyramid
from .model import TrainConfig, init_for_variant, load_model, save_model, train, uniform_model
from .plyio import list_ply, load_voxels, write_ply
from .variants import VARIANTS, get_variant

log = logging.getLogger("nnoc")

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_MISMATCH, EXIT_INTERNAL = 0, 2, 3, 4, 5


# -- helpers ----------------------------------------------------------------

def _emit(rows, fmt, out=None, columns=None):
    """Print dict rows as an aligned text table or TSV."""
    out = out or sys.stdout
    if not rows:
        return
    columns = columns or list(rows[0])
    cells = [[_fmt(r.get(c)) for c in columns] for r in rows]
    if fmt == "tsv":
        w = csv.writer(out, delimiter="\t", lineterminator="\n")
        w.writerow(columns)
        w.writerows(cells)
        return
    widths = [max(len(c), *(len(row[i]) for row in cells)) for i, c in enumerate(columns)]
    print("  ".join(c.ljust(w) for c, w in zip(columns, widths)).rstrip(), file=out)
    for row in cells:
        print("  ".join(v.ljust(w) for v, w in zip(row, widths)).rstrip(), file=out)


def _fmt(v):
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def _load_model_file(path, variant=None):
    with open(path, "rb") as f:
        m = load_model(f.read())
    if variant is not None and get_variant(variant).name != m.variant:
        raise ModelVariantMismatch(f"--variant {variant} but model {path} is {m.variant}")
    return m


def _encode_report(name, vs, bs, stats, seconds):
    rate = bpov(bs, vs)
    summary = {
        "cloud": name,
        "voxels": len(vs),
        "bitdepth": vs.bitdepth,
        "variant": bs.variant,
        "bits": rate.bits,
        "bpov": rate.bpov,
        "bpov_no_header": rate.bpov_no_header,
        "seconds": seconds,
    }
    levels = [
        {
            "level": s.bitdepth,
            "candidates": s.candidates,
            "occupied": s.occupied,
            "mask_bytes": s.mask_bytes,
            "payload_bits": 8 * s.payload_bytes,
            "ideal_bits": s.ideal_bits,
            "bits_per_decision": (8 * s.payload_bytes / s.candidates) if s.candidates else None,
        }
        for s in stats
    ]
    return summary, levels


# -- commands ---------------------------------------------------------------

def cmd_encode(args):
    m = _load_model_file(args.model, args.variant)
    vs = load_voxels(args.input, args.bitdepth)
    if len(vs) == 0:
        raise EmptyCloud(f"{args.input} holds no points")
    stats = []
    t0 = time.perf_counter()
    bs = encode(vs, m, stats=stats)
    seconds = time.perf_counter() - t0
    with open(args.output, "wb") as f:
        f.write(bs.to_bytes())
    summary, levels = _encode_report(os.path.basename(args.input), vs, bs, stats, seconds)
    _emit([summary], args.report)
    print()
    _emit(levels, args.report)
    return EXIT_OK


def cmd_decode(args):
    with open(args.input, "rb") as f:
        bs = Bitstream.from_bytes(f.read())
    m = _load_model_file(args.model, args.variant)
    t0 = time.perf_counter()
    vs = decode(bs, m)
    seconds = time.perf_counter() - t0
    write_ply(vs, args.output, binary=args.binary)
    _emit([{"cloud": os.path.basename(args.output), "voxels": len(vs), "bitdepth": vs.bitdepth,
            "seconds": seconds}], args.report)
    return EXIT_OK


def cmd_verify(args):
    m = _load_model_file(args.model, args.variant)
    vs = load_voxels(args.input, args.bitdepth)
    t0 = time.perf_counter()
    data = encode(vs, m).to_bytes()
    t1 = time.perf_counter()
    back = decode(data, m)
    t2 = time.perf_counter()
    ok = back == vs
    rate = bpov(data, vs) if len(vs) else None
    _emit([{"cloud": os.path.basename(args.input), "voxels": len(vs),
            "bpov": rate.bpov if rate else None, "encode_s": t1 - t0, "decode_s": t2 - t1}], args.report)
    print("LOSSLESS: OK" if ok else "LOSSLESS: FAILED")
    return EXIT_OK if ok else EXIT_INTERNAL


def _collect_one(path, variant, bitdepth):
    vs = load_voxels(path, bitdepth)
    return collect_training_contexts(build_pyramid(vs), variant)


def cmd_collect(args):
    variant = get_variant(args.variant or "nnoc")
    paths = args.inputs
    with ThreadPoolExecutor(max_workers=max(1, args.threads)) as pool:
        parts = list(pool.map(lambda p: _collect_one(p, variant, args.bitdepth), paths))
    hist = parts[0].merge(*parts[1:]) if len(parts) > 1 else parts[0]
    hist.save(args.output)
    stats = hist.stats()
    stats["clouds"] = len(paths)
    _emit([stats], args.report)
    return EXIT_OK


def cmd_train(args):
    hist = ContextHistogram.load(args.hist)
    val = ContextHistogram.load(args.val) if args.val else None
    if args.variant and get_variant(args.variant).name != hist.variant:
        raise ModelVariantMismatch(f"histogram collected for {hist.variant}, --variant {args.variant}")
    if val is not None and val.variant != hist.variant:
        raise ModelVariantMismatch("training and validation histograms use different variants")
    cfg = TrainConfig(batch_size=args.batch_size, learning_rate=args.lr, patience=args.patience,
                      max_epochs=args.max_epochs, seed=args.seed)
    history = []
    m = train(hist, val, cfg, history=history)
    data = save_model(m)
    with open(args.output, "wb") as f:
        f.write(data)
    rows = [{"epoch": h["epoch"], "train_bits": h["train_bits"], "val_bits": h["val_bits"],
             "best_val_bits": h["best_val_bits"]} for h in history]
    if args.log:
        with open(args.log, "w") as f:
            _emit(rows, "tsv", out=f)
    _emit(rows, args.report)
    if args.figure:
        from .plotting import plot_training

        plot_training(history, args.figure)
    print(f"model {args.output}: {m.n_params} parameters, hash {m.content_hash:016x}", file=sys.stderr)
    return EXIT_OK


def cmd_init(args):
    variant = args.variant or "nnoc"
    m = uniform_model(variant) if args.uniform else init_for_variant(variant, seed=args.seed)
    with open(args.output, "wb") as f:
        f.write(save_model(m))
    _emit([{"variant": m.variant, "arch": m.arch, "n_c": m.n_c, "parameters": m.n_params,
            "hash": f"{m.content_hash:016x}"}], args.report)
    return EXIT_OK


def _read_baseline(path):
    table = {}
    with open(path, newline="") as f:
        for row in csv.DictReader(f, delimiter="\t"):
            table[row["cloud"]] = float(row["bpov"])
    return table


def cmd_bench(args):
    if not os.path.isdir(args.dataset):
        raise InputError(f"{args.dataset} is not a directory")
    paths = list_ply(args.dataset)
    if not paths:
        raise InputError(f"no .ply files in {args.dataset}")
    m = _load_model_file(args.model, args.variant)
    baseline = _read_baseline(args.baseline) if args.baseline else {}
    rows = []
    for path in paths:
        name = os.path.splitext(os.path.basename(path))[0]
        vs = load_voxels(path, args.bitdepth)
        t0 = time.perf_counter()
        data = encode(vs, m).to_bytes()
        enc_s = time.perf_counter() - t0
        row = {"cloud": name, "bitdepth": vs.bitdepth, "voxels": len(vs)}
        rate = bpov(data, vs)
        row.update(bits=rate.bits, bpov=rate.bpov, bpov_no_header=rate.bpov_no_header, encode_s=enc_s)
        if args.decode:
            t0 = time.perf_counter()
            ok = decode(data, m) == vs
            row["decode_s"] = time.perf_counter() - t0
            row["lossless"] = "yes" if ok else "NO"
        if name in baseline:
            row["baseline"] = baseline[name]
            row["gain_pct"] = 100.0 * (1.0 - rate.bpov / baseline[name])
        rows.append(row)
    columns = ["cloud", "bitdepth", "voxels", "bits", "bpov", "bpov_no_header", "encode_s"]
    if args.decode:
        columns += ["decode_s", "lossless"]
    if baseline:
        columns += ["baseline", "gain_pct"]
    avg = {"cloud": "average", "bpov": float(np.mean([r["bpov"] for r in rows])),
           "bpov_no_header": float(np.mean([r["bpov_no_header"] for r in rows]))}
    with_base = [r for r in rows if "baseline" in r]
    if with_base:
        avg["baseline"] = float(np.mean([r["baseline"] for r in with_base]))
        avg["gain_pct"] = float(np.mean([r["gain_pct"] for r in with_base]))
    _emit(rows + [avg], args.report, columns=columns)
    if args.figure:
        from .plotting import plot_bench

        plot_bench(rows, args.figure, title=f"{m.variant} on {os.path.basename(os.path.normpath(args.dataset))}")
    if args.decode and any(r["lossless"] != "yes" for r in rows):
        return EXIT_INTERNAL
    return EXIT_OK


def cmd_synth(args):
    from .synthetic import surface_scene

    os.makedirs(args.output, exist_ok=True)
    for i in range(args.count):
        vs = surface_scene(args.seed + i, args.bitdepth)
        write_ply(vs, os.path.join(args.output, f"scene{args.seed + i:03d}.ply"))
    return EXIT_OK


# -- parser -------------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--variant", choices=sorted(VARIANTS), help="codec variant")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=1, help="cap on worker threads")
    common.add_argument("--report", choices=("text", "tsv"), default="text")

    p = argparse.ArgumentParser(prog="nnoc", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("encode", parents=[common], help="code a PLY point cloud")
    s.add_argument("input")
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--model", required=True)
    s.add_argument("--bitdepth", type=int, help="voxelize to this depth (default: the file's own)")
    s.set_defaults(func=cmd_encode)

    s = sub.add_parser("decode", parents=[common], help="reconstruct a PLY from a bitstream")
    s.add_argument("input")
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--model", required=True)
    s.add_argument("--binary", action="store_true", help="write binary little-endian PLY")
    s.set_defaults(func=cmd_decode)

    s = sub.add_parser("verify", parents=[common], help="encode, decode and compare")
    s.add_argument("input")
    s.add_argument("--model", required=True)
    s.add_argument("--bitdepth", type=int)
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("collect", parents=[common], help="build a context histogram")
    s.add_argument("inputs", nargs="+")
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--bitdepth", type=int)
    s.set_defaults(func=cmd_collect)

    s = sub.add_parser("train", parents=[common], help="train a model on a histogram")
    s.add_argument("hist")
    s.add_argument("--val", help="validation histogram (default: the training one)")
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--batch-size", type=int, default=TrainConfig.batch_size)
    s.add_argument("--lr", type=float, default=TrainConfig.learning_rate)
    s.add_argument("--patience", type=int, default=TrainConfig.patience)
    s.add_argument("--max-epochs", type=int, default=TrainConfig.max_epochs)
    s.add_argument("--log", help="also write the per-epoch log as TSV here")
    s.add_argument("--figure", help="write a learning-curve PNG here")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("init", parents=[common], help="write an untrained model")
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--uniform", action="store_true", help="all-zero weights (p = 0.5)")
    s.set_defaults(func=cmd_init)

    s = sub.add_parser("bench", parents=[common], help="bpov table over a directory of PLYs")
    s.add_argument("dataset")
    s.add_argument("--model", required=True)
    s.add_argument("--bitdepth", type=int)
    s.add_argument("--baseline", help="TSV with columns cloud, bpov")
    s.add_argument("--decode", action="store_true", help="also decode and check each cloud")
    s.add_argument("--figure", help="write a bar-chart PNG here")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("synth", parents=[common], help="write synthetic surface scenes as PLY")
    s.add_argument("-o", "--output", required=True, help="directory")
    s.add_argument("--count", type=int, default=5)
    s.add_argument("--bitdepth", type=int, default=6)
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None):
    logging.basicConfig(level=os.environ.get("NNOC_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NNOCError as exc:
        print(f"nnoc: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, ValueError) as exc:
        print(f"nnoc: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
