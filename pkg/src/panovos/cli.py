"""Command-line entry point: ``panovos <command> ...``.

Commands talk to each other only through corpus directories and JSON
files. Every written manifest echoes the parsed configuration. Failures are
reported as one JSON object on stderr, with exit code 2 (usage), 3 (data)
or 4 (ID capacity).
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import __version__
from .convert import convert_corpus, from_vos, write_categories, write_panoptic_video
from .corpus import (MANIFEST, SCHEMA_VERSION, dump_json, list_videos, load_json, read_classes, read_prediction,
                     read_video, write_classes, write_prediction, write_video)
from .dataset import SEEN, STUFF, THING, UNSEEN
from .errors import CapacityError, DataError, PanoVOSError
from .metrics import (DECAY_SCALE, ObjectScore, aggregate_report, fit_decay, scale_ratio_stats,
                      score_video, video_points)
from .synth import DEFAULT_SPLIT, synth_corpus

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CAPACITY = 0, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _int_list(text: str) -> tuple:
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _boundary_d(text: str):
    return None if text == "auto" else _positive(text)


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _config(args) -> dict:
    out = {}
    for k, v in sorted(vars(args).items()):
        if k == "func":
            continue
        out[k] = list(v) if isinstance(v, tuple) else v
    return out


def _provenance(args) -> dict:
    return {"tool": "panovos", "version": __version__, "command": args.command, "config": _config(args)}


def _pool_map(fn, tasks, workers: int):
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
            return list(pool.map(fn, tasks))
    return [fn(t) for t in tasks]


# -- synth ------------------------------------------------------------------

def cmd_synth(args) -> int:
    videos = synth_corpus(args.videos, seed=args.seed, height=args.height, width=args.width,
                          n_frames=args.frames, max_thing=args.max_thing, max_stuff=args.max_stuff,
                          motion=args.motion)
    out = Path(args.output)
    prov = _provenance(args)
    if args.panoptic:
        kinds = {c: THING for c in DEFAULT_SPLIT.seen_thing | DEFAULT_SPLIT.unseen_thing}
        kinds.update({c: STUFF for c in DEFAULT_SPLIT.seen_stuff | DEFAULT_SPLIT.unseen_stuff})
        write_categories(kinds, out)
        for v in videos:
            write_panoptic_video(from_vos(v), out)
    else:
        write_classes(DEFAULT_SPLIT, out, prov)
        for v in videos:
            write_video(v, out, prov)
    print(f"wrote {len(videos)} synthetic videos to {out}")
    return EXIT_OK


# -- convert ----------------------------------------------------------------

def cmd_convert(args) -> int:
    summary = convert_corpus(args.input, args.output, args.unseen_thing, args.unseen_stuff,
                             min_instances=args.min_unseen_instances, n_val=args.valid_videos,
                             workers=args.workers, provenance=_provenance(args))
    dump_json({"schema_version": SCHEMA_VERSION, "provenance": _provenance(args), **summary},
              Path(args.output) / "conversion.json")
    split = summary["split"]
    print(f"converted {len(summary['train'])} train / {len(summary['valid'])} valid videos; "
          f"unseen classes: {len(split['unseen_thing'])} thing, {len(split['unseen_stuff'])} stuff")
    return EXIT_OK


# -- demo -------------------------------------------------------------------

def _model_config(args):
    from .paot import PAOTConfig

    kw = dict(dim=args.dim, mode=args.mode, capacity=args.capacity, thing_capacity=args.thing_capacity,
              stuff_capacity=args.stuff_capacity, mem_every=args.mem_every, memory_cap=args.memory_cap,
              retrieval=args.retrieval, seed=args.seed)
    if args.dilation is not None:
        kw["dilation"] = args.dilation
    if args.window is not None:
        kw["window"] = args.window
    return PAOTConfig(**kw)


def _demo_one(task):
    from .paot import PAOT, segment_video

    vdir, out, cfg, chunk, prov = task
    video = read_video(vdir)
    try:
        pred = segment_video(PAOT(cfg), video, chunk=chunk)
    except CapacityError as exc:
        return video.name, str(exc)
    write_prediction(video.name, pred, out, prov)
    return video.name, None


def cmd_demo(args) -> int:
    cfg = _model_config(args)
    if args.video is not None:
        vdir = Path(args.video)
        if not (vdir / MANIFEST).is_file():
            raise DataError(f"not a video directory: {vdir}")
        root, names = vdir.parent, [vdir.name]
    else:
        root = Path(args.input)
        names = list_videos(root)
    if not names:
        raise DataError(f"no videos in {root}")
    prov = _provenance(args)
    tasks = [(root / n, Path(args.output), cfg, args.chunk, prov) for n in names]
    results = _pool_map(_demo_one, tasks, args.workers)
    failed = {name: msg for name, msg in results if msg is not None}
    if failed:
        raise _capacity_failure(failed)
    print(f"segmented {len(names)} videos into {args.output}")
    return EXIT_OK


def _capacity_failure(failed: dict) -> CapacityError:
    exc = CapacityError(f"{len(failed)} video(s) exceed the ID capacity; rerun with --chunk")
    exc.videos = failed
    return exc


# -- eval -------------------------------------------------------------------

def _eval_one(task):
    gt_dir, pred_dir, d = task
    gt = read_video(gt_dir, load_images=False)
    gt.validate()
    if not pred_dir.is_dir():
        raise DataError(f"missing prediction for video {gt.name}: {pred_dir}")
    return score_video(gt, read_prediction(pred_dir), d)


def _decay_or_error(scores, s, method):
    try:
        return fit_decay(video_points(scores), s=s, method=method).to_json()
    except DataError as exc:
        return {"lambda": None, "error": str(exc)}


def cmd_eval(args) -> int:
    gt_root, pred_root = Path(args.gt), Path(args.pred)
    names = list_videos(gt_root)
    if not names:
        raise DataError(f"no videos in {gt_root}")
    tasks = [(gt_root / n, pred_root / n, args.boundary_d) for n in names]
    scores = [s for chunk in _pool_map(_eval_one, tasks, args.workers) for s in chunk]
    if not scores:
        raise DataError("no object has a frame after its reference frame; nothing to evaluate")
    decay = _decay_or_error(scores, args.decay_s, args.decay_method)
    metrics = aggregate_report(scores).to_json()
    metrics["lambda"] = decay["lambda"]
    report = {
        "schema_version": SCHEMA_VERSION,
        "provenance": _provenance(args),
        "videos": len(names),
        "metrics": metrics,
        "decay": decay,
        "objects": [s.to_json() for s in scores],
    }
    dump_json(report, Path(args.output))
    print(f"G = {metrics['G']:.4f} over {len(scores)} objects in {len(names)} videos")
    for name in ("G_s", "G_u", "G_th", "G_sf"):
        v = metrics[name]
        print(f"  {name:5s} {'n/a' if v is None else f'{v:.4f}'}")
    if decay["lambda"] is not None:
        print(f"  lambda {decay['lambda']:.4f}")
    return EXIT_OK


# -- decay ------------------------------------------------------------------

def decay_csv(fit: dict) -> str:
    buf = io.StringIO()
    buf.write(f"# lambda={fit['lambda']!r} s={fit['s']!r} method={fit['method']}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["n", "g", "fit"])
    for n, g in fit["points"]:
        w.writerow([n, repr(g), repr(math.exp(-fit["lambda"] * n / fit["s"]))])
    return buf.getvalue()


def cmd_decay(args) -> int:
    report = load_json(Path(args.report))
    try:
        scores = [ObjectScore(**o) for o in report["objects"]]
    except (KeyError, TypeError) as exc:
        raise DataError(f"{args.report}: not an evaluation report ({exc})") from exc
    fit = fit_decay(video_points(scores), s=args.s, method=args.method).to_json()
    text = decay_csv(fit)
    if args.output is None:
        sys.stdout.write(text)
        return EXIT_OK
    Path(args.output).write_text(text)
    print(f"lambda = {fit['lambda']:.6f} from {len(fit['points'])} object counts")
    return EXIT_OK


# -- stats ------------------------------------------------------------------

def cmd_stats(args) -> int:
    root = Path(args.input)
    names = list_videos(root)
    if not names:
        raise DataError(f"no videos in {root}")
    videos = [read_video(root / n, load_images=False) for n in names]
    counts = {f"{k}_{v}": 0 for k in (THING, STUFF) for v in (SEEN, UNSEEN)}
    for v in videos:
        for e in v.class_map.values():
            counts[f"{e.kind}_{e.visibility}"] += 1
    try:
        ratio = scale_ratio_stats(videos)
    except DataError:
        ratio = None
    per_video = [len(v.class_map) for v in videos]
    split = read_classes(root)
    stats = {
        "schema_version": SCHEMA_VERSION,
        "provenance": _provenance(args),
        "videos": len(videos),
        "frames": sum(len(v.frames) for v in videos),
        "objects": counts,
        "objects_per_video": {"mean": sum(per_video) / len(per_video), "max": max(per_video)},
        "scale_ratio": ratio,
        "classes": None if split is None else {k: len(v) for k, v in split.to_json().items()},
    }
    text = json.dumps(stats, indent=1, sort_keys=True) + "\n"
    if args.output:
        Path(args.output).write_text(text)
        print(f"{len(videos)} videos, {stats['frames']} frames, {sum(per_video)} objects")
    else:
        sys.stdout.write(text)
    return EXIT_OK


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="panovos", description="Panoptic video object segmentation toolkit.")
    p.add_argument("--version", action="version", version=f"panovos {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")

    s = sub.add_parser("synth", help="write a seeded synthetic corpus")
    s.add_argument("--output", "--out", dest="output", required=True, help="corpus directory to create")
    s.add_argument("--videos", type=_positive, default=5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--height", type=int, default=64)
    s.add_argument("--width", type=int, default=64)
    s.add_argument("--frames", type=_positive, default=5)
    s.add_argument("--max-thing", type=int, default=6)
    s.add_argument("--max-stuff", type=int, default=3)
    s.add_argument("--motion", type=float, default=2.0, help="max thing speed in pixels per frame")
    s.add_argument("--panoptic", action="store_true", help="write raw panoptic format (input of convert)")
    s.set_defaults(func=cmd_synth)

    c = sub.add_parser("convert", help="panoptic corpus -> VOS corpus with a seen/unseen split")
    c.add_argument("--input", required=True)
    c.add_argument("--output", "--out", dest="output", required=True)
    c.add_argument("--unseen-thing", type=int, required=True)
    c.add_argument("--unseen-stuff", type=int, required=True)
    c.add_argument("--min-unseen-instances", type=int, default=1,
                   help="instances of each unseen class the validation set must hold")
    c.add_argument("--valid-videos", type=int, default=None, help="pad the validation set to this size")
    c.add_argument("--workers", type=_positive, default=1)
    c.set_defaults(func=cmd_convert)

    d = sub.add_parser("demo", help="segment a corpus with the seeded PAOT model")
    src = d.add_mutually_exclusive_group(required=True)
    src.add_argument("--input", help="VOS corpus with images")
    src.add_argument("--video", help="a single video directory of a VOS corpus")
    d.add_argument("--output", "--out", dest="output", required=True, help="prediction directory")
    d.add_argument("--mode", choices=["panoptic", "generic"], default="panoptic")
    d.add_argument("--dim", type=int, default=64)
    d.add_argument("--capacity", type=int, default=10, help="generic ID capacity")
    d.add_argument("--thing-capacity", type=int, default=10)
    d.add_argument("--stuff-capacity", type=int, default=5)
    d.add_argument("--dilation", type=_int_list, default=None, help="per scale, e.g. 1,1,2,2")
    d.add_argument("--window", type=_int_list, default=None, help="per scale, e.g. 15,15,29,57")
    d.add_argument("--mem-every", type=_positive, default=2, help="frames between long-term memory updates")
    d.add_argument("--memory-cap", type=_positive, default=None)
    d.add_argument("--retrieval", choices=["identity", "seeded"], default="identity")
    d.add_argument("--chunk", action="store_true", help="split objects beyond capacity into groups")
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--workers", type=_positive, default=1)
    d.set_defaults(func=cmd_demo)

    e = sub.add_parser("eval", help="score predictions against a VOS corpus")
    e.add_argument("--gt", required=True)
    e.add_argument("--pred", required=True)
    e.add_argument("--output", "--out", dest="output", required=True, help="report JSON path")
    e.add_argument("--boundary-d", type=_boundary_d, default=None,
                   help="boundary width in pixels, or auto for 2%% of the image diagonal")
    e.add_argument("--decay-s", type=float, default=DECAY_SCALE)
    e.add_argument("--decay-method", choices=["log", "nonlinear"], default="log")
    e.add_argument("--workers", type=_positive, default=1)
    e.set_defaults(func=cmd_eval)

    y = sub.add_parser("decay", help="crowd-decay curve (CSV) from an evaluation report")
    y.add_argument("--report", required=True)
    y.add_argument("--output", "--out", dest="output", default=None, help="CSV path (stdout if omitted)")
    y.add_argument("--s", type=float, default=DECAY_SCALE)
    y.add_argument("--method", choices=["log", "nonlinear"], default="log")
    y.set_defaults(func=cmd_decay)

    t = sub.add_parser("stats", help="object counts and scale-ratio statistics of a corpus")
    t.add_argument("--input", "--gt", dest="input", required=True, help="VOS corpus")
    t.add_argument("--output", "--out", dest="output", default=None)
    t.set_defaults(func=cmd_stats)
    return p


def _fail(kind: str, code: int, message: str, **extra) -> int:
    sys.stderr.write(json.dumps({"error": kind, "exit_code": code, "message": message, **extra},
                                sort_keys=True) + "\n")
    return code


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return _fail("usage", EXIT_USAGE, str(exc))
    try:
        return args.func(args)
    except CapacityError as exc:
        extra = {"videos": exc.videos} if getattr(exc, "videos", None) else {}
        return _fail("capacity", EXIT_CAPACITY, str(exc), **extra)
    except (PanoVOSError, OSError) as exc:
        return _fail("data", EXIT_DATA, str(exc))


def main() -> int:
    return run(sys.argv[1:])


if __name__ == "__main__":
    sys.exit(main())
