"""Command-line entry point.

Subcommands: ``gen``, ``gen-params``, ``serialize``, ``bench``, ``forward``,
``merge-frames`` and ``eval``. Failures are reported on stderr as
``error: <Code>: <detail>`` with exit status 1.
"""

from __future__ import annotations

import argparse
import hashlib
import resource
import sys
import time
from pathlib import Path

import numpy as np

from . import io
from .attention import block_forward, random_layers
from .cloud import DEFAULT_DEPTH, DEFAULT_GRID, IGNORE, ClipBox, quantize, voxel_downsample
from .errors import DimensionMismatch, LengthMismatch, SfcPointError
from .evaluate import ConfusionMatrix, accumulate, argmax, ensemble, miou
from .multiframe import DEFAULT_PAST, Frame, assemble
from .patch import DEFAULT_PATCH, OrderSchedule, ScheduleMode, partition
from .sfc import Pattern, locality_score, serialization_order, serialize
from .synth import GENERATORS, SceneSpec, generate


def _clip_arg(text):
    try:
        values = [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid clip box {text!r}") from None
    if len(values) != 6:
        raise argparse.ArgumentTypeError("clip box needs x0,y0,z0,x1,y1,z1")
    return values


def _u64(text):
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("value must fit in an unsigned 64-bit integer")
    return value


def _emit(lines, out=None):
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if out:
        io.atomic_write(out, text.encode())


def _grid_flags(p):
    p.add_argument("--grid", type=float, default=DEFAULT_GRID, help="cell size in meters")
    p.add_argument("--depth", type=int, default=DEFAULT_DEPTH, help="bits per grid axis")


def _pattern_flag(p, default="hilbert"):
    p.add_argument("--pattern", choices=[m.value for m in Pattern], default=default)


def cmd_gen(args):
    spec = SceneSpec(
        generator=args.generator,
        num_points=args.num_points,
        seed=args.seed,
        num_classes=args.classes,
        num_features=args.features,
        extent=args.extent,
        distant_fraction=args.distant_fraction,
    )
    cloud = generate(spec)
    io.write_spc(args.out, cloud)
    _emit([f"points={len(cloud)}", f"features={cloud.num_features}", f"out={args.out}"])


def cmd_gen_params(args):
    layers = random_layers(args.dim, args.heads, args.layers, seed=args.seed,
                           kernel_scale=args.kernel_scale)
    io.write_spw(args.out, layers, num_heads=args.heads)
    _emit([f"dim={args.dim}", f"heads={args.heads}", f"layers={args.layers}", f"out={args.out}"])


def cmd_serialize(args):
    cloud, _ = io.read_spc(args.input)
    grid, _ = quantize(cloud, args.grid, args.depth)
    order = serialization_order(serialize(grid, Pattern(args.pattern), args.depth))
    lines = [f"points={len(cloud)}", f"pattern={args.pattern}"]
    if args.order_out:
        io.atomic_write(args.order_out, "".join(f"{i}\n" for i in order).encode())
        lines.append(f"order_file={args.order_out}")
    if len(cloud) >= 2:
        score = locality_score(cloud.coords, order)
        rng = np.random.default_rng(args.seed)
        baseline = [locality_score(cloud.coords, rng.permutation(len(cloud)))
                    for _ in range(args.random_trials)]
        lines.append(f"locality={score!r}")
        if baseline:
            mean = float(np.mean(baseline))
            lines += [f"random_trials={args.random_trials}", f"random_locality={mean!r}",
                      f"ratio={score / mean!r}" if mean > 0 else "ratio=nan"]
    _emit(lines, args.report)


def _peak_rss_kb():
    try:
        return resource.getrusage(resource.RUSAGE_SELF).ru_maxrss
    except (AttributeError, OSError):
        return None


def cmd_bench(args):
    cloud, _ = io.read_spc(args.input)
    n = len(cloud)
    pattern = Pattern(args.pattern)
    timings = {}

    t0 = time.perf_counter()
    grid, _ = quantize(cloud, args.grid, args.depth)
    codes = serialize(grid, pattern, args.depth)
    timings["encode"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    order = serialization_order(codes)
    timings["sort"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    part = partition(codes, args.patch, order=order)
    timings["partition"] = time.perf_counter() - t0

    digest = hashlib.sha256(part.padded_index.astype("<i8").tobytes()).hexdigest()[:16]
    lines = [f"points={n}", f"pattern={pattern.value}", f"patch={args.patch}",
             f"patches={part.num_patches}", f"padded={len(part.padded_index)}",
             f"order_digest={digest}"]
    for stage, seconds in timings.items():
        rate = n / seconds if seconds > 0 else float("inf")
        lines += [f"{stage}_seconds={seconds:.6f}", f"{stage}_points_per_second={rate:.1f}"]
    rss = _peak_rss_kb()
    lines.append(f"peak_rss_kb={rss}" if rss is not None else "peak_rss_kb=unavailable")
    _emit(lines, args.report)


def cmd_forward(args):
    cloud, pose = io.read_spc(args.input)
    params = io.read_spw(args.params)
    if args.voxelize:
        cloud = voxel_downsample(cloud, args.grid)
    if params.layers and cloud.num_features != params.dim:
        raise DimensionMismatch(
            f"cloud has {cloud.num_features} feature channels, parameters expect {params.dim}"
        )
    schedule = OrderSchedule(ScheduleMode(args.schedule), seed=args.seed)
    out = block_forward(cloud, params.layers, schedule, patch_size=args.patch,
                        grid_size=args.grid, depth=args.depth, forward_id=args.forward_id)
    io.write_spc(args.out, cloud.replace(features=out), pose)
    _emit([f"points={len(cloud)}", f"layers={len(params.layers)}", f"out={args.out}"])


def cmd_merge_frames(args):
    entries = io.read_manifest(args.manifest)
    if not entries:
        raise ValueError("manifest lists no frames")
    frames = []
    for entry in entries:
        cloud, _ = io.read_spc(entry.path)
        frames.append(Frame(cloud, entry.pose, entry.timestamp))
    current = frames[-1]
    past = frames[:-1][::-1][: args.past]
    box = ClipBox.from_flat(args.clip) if args.clip else None
    merged = assemble(current, past, box)
    io.write_spc(args.out, merged, current.pose)
    counts = np.bincount(merged.frame_index, minlength=len(past) + 1)
    lines = [f"frames={len(past) + 1}", f"points={len(merged)}",
             f"clip={'none' if box is None else ','.join(map(repr, box.min + box.max))}"]
    lines += [f"frame_{k}_points={c}" for k, c in enumerate(counts)]
    _emit(lines + [f"out={args.out}"])


def cmd_eval(args):
    if len(args.logits) > 1 and not args.ensemble:
        raise ValueError("several logits files given; pass --ensemble to average them")
    if args.ensemble and args.split == "val":
        print("warning: logit ensembles make validation comparisons unfair; "
              "reserve them for test submissions", file=sys.stderr)
    cloud, _ = io.read_spc(args.labels)
    if cloud.labels is None:
        raise ValueError(f"{args.labels} carries no labels")
    members = [io.read_spl(p) for p in args.logits]
    logits = ensemble(members)
    if len(logits) != len(cloud):
        raise LengthMismatch(f"{len(logits)} logit rows for {len(cloud)} labelled points")
    preds = argmax(logits)
    labels = cloud.labels
    if args.frame_index is not None:
        if cloud.frame_index is None:
            raise ValueError(f"{args.labels} has no frame indices to filter on")
        keep = cloud.frame_index == args.frame_index
        preds, labels = preds[keep], labels[keep]
    cm = accumulate(ConfusionMatrix.empty(logits.shape[1], args.ignore), preds, labels)
    iou, mean = miou(cm)
    table = ["class  iou"] + [
        f"{k:<5d}  {'-' if np.isnan(v) else f'{v:.6f}'}" for k, v in enumerate(iou)
    ] + [f"mean   {mean:.6f}", ""]
    keyvals = [f"num_classes={cm.num_classes}",
               f"classes={','.join(str(k) for k in np.flatnonzero(~np.isnan(iou)))}",
               *(f"iou_{k}={v!r}" for k, v in enumerate(iou.tolist()) if not np.isnan(v)),
               f"miou={mean!r}", f"points={int(cm.counts.sum())}"]
    _emit(table + keyvals, args.report)


def build_parser():
    parser = argparse.ArgumentParser(prog="sfcpoint", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write a seeded synthetic scene")
    p.add_argument("out", type=Path)
    p.add_argument("--generator", choices=GENERATORS, default="uniform-box")
    p.add_argument("-n", "--num-points", type=int, default=10000)
    p.add_argument("--seed", type=_u64, default=0)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--features", type=int, default=4)
    p.add_argument("--extent", type=float, default=10.0)
    p.add_argument("--distant-fraction", type=float, default=0.1)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("gen-params", help="write random block parameters")
    p.add_argument("out", type=Path)
    p.add_argument("--dim", type=int, default=4)
    p.add_argument("--heads", type=int, default=1)
    p.add_argument("--layers", type=int, default=4)
    p.add_argument("--seed", type=_u64, default=0)
    p.add_argument("--kernel-scale", type=float, default=0.1)
    p.set_defaults(func=cmd_gen_params)

    p = sub.add_parser("serialize", help="serialization order and locality report")
    p.add_argument("input", type=Path)
    _pattern_flag(p)
    _grid_flags(p)
    p.add_argument("--order-out", type=Path)
    p.add_argument("--random-trials", type=int, default=20)
    p.add_argument("--seed", type=_u64, default=0)
    p.add_argument("--report", type=Path)
    p.set_defaults(func=cmd_serialize)

    p = sub.add_parser("bench", help="time encode, sort and partition")
    p.add_argument("input", type=Path)
    _pattern_flag(p)
    _grid_flags(p)
    p.add_argument("--patch", type=int, default=DEFAULT_PATCH)
    p.add_argument("--report", type=Path)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("forward", help="run the attention block stack")
    p.add_argument("input", type=Path)
    p.add_argument("params", type=Path)
    p.add_argument("out", type=Path)
    p.add_argument("--schedule", choices=[m.value for m in ScheduleMode], default="shift")
    p.add_argument("--seed", type=_u64, default=0)
    p.add_argument("--forward-id", type=_u64, default=0)
    p.add_argument("--patch", type=int, default=DEFAULT_PATCH)
    p.add_argument("--voxelize", action="store_true",
                   help="keep one point per grid cell before running")
    _grid_flags(p)
    p.set_defaults(func=cmd_forward)

    p = sub.add_parser("merge-frames", help="assemble a sweep with aligned past sweeps")
    p.add_argument("manifest", type=Path)
    p.add_argument("out", type=Path)
    p.add_argument("--past", type=int, default=DEFAULT_PAST)
    p.add_argument("--clip", type=_clip_arg, help="x0,y0,z0,x1,y1,z1 (omit to keep all points)")
    p.set_defaults(func=cmd_merge_frames)

    p = sub.add_parser("eval", help="mIoU of (ensembled) logits against labels")
    p.add_argument("--labels", type=Path, required=True, help="SPC file with labels")
    p.add_argument("--logits", type=Path, nargs="+", required=True)
    p.add_argument("--ensemble", action="store_true")
    p.add_argument("--split", choices=("val", "test"))
    p.add_argument("--ignore", type=int, default=IGNORE)
    p.add_argument("--frame-index", type=int)
    p.add_argument("--report", type=Path)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except SfcPointError as exc:
        print(f"error: {exc.code}: {exc.detail}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: InvalidArgument: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: IOError: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
