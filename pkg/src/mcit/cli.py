"""Command-line entry point.

Commands: train, track, eval, ablate, render, synth, bench.
Exit codes: 0 success, 2 configuration/input error, 3 runtime error.
The environment variable MCIT_SEED overrides the configured train seed.
A failed command leaves a `.failed` marker file (with the error message)
in its output directory when one was already created.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from pathlib import Path

import numpy as np

from .ablate import make_eval_set, run_ablation
from .config import ABLATION_AXES, RunConfig, load_config, write_config
from .errors import ConfigError, ContractError
from .metrics import run_one_pass_eval, write_report, write_success_curve
from .model import model_from_checkpoint
from .synth import dump_sequence, generate_sequence, load_sequence
from .tracker import (TrackerConfig, read_results, track_sequence,
                      write_results)
from .train import fit

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _load_run_config(args) -> RunConfig:
    run = load_config(args.config) if args.config else RunConfig()
    seed_env = os.environ.get("MCIT_SEED")
    seed_arg = getattr(args, "seed", None)
    seed = seed_arg if seed_arg is not None else (
        int(seed_env) if seed_env else None)
    if seed is not None:
        run = dataclasses.replace(
            run, train=dataclasses.replace(run.train, seed=seed))
    return run


def _tracker_config(run: RunConfig, args) -> TrackerConfig:
    kw = {}
    if getattr(args, "threshold_a", None) is not None:
        kw["score_threshold"] = args.threshold_a
    if getattr(args, "update_interval", None) is not None:
        kw["update_interval"] = args.update_interval
    return dataclasses.replace(run.tracker, **kw) if kw else run.tracker


def cmd_train(args) -> int:
    run = _load_run_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_config(run, out / "config.resolved.cfg")
    model, history = fit(run.train, out_dir=out,
                         log_fn=lambda m: print(
                             f"epoch {m['epoch']:3d}  "
                             f"loss {m['loss_total']:.4f}  "
                             f"lr {m['lr_rest']:.2e}  "
                             f"{m['elapsed_s']:.0f}s"))
    print(f"final loss {history[-1]['loss_total']:.4f}; checkpoint at "
          f"{out / 'model_final.npz'}")
    return EXIT_OK


def cmd_track(args) -> int:
    run = _load_run_config(args)
    model = model_from_checkpoint(args.checkpoint)
    if args.sequence:
        seq = load_sequence(args.sequence)
    else:
        seq = generate_sequence(run.data, args.synth_seed)
    boxes, scores = track_sequence(model, seq.frames, seq.gt[0],
                                   _tracker_config(run, args))
    out = Path(args.out)
    write_results(out, boxes, scores)
    print(f"tracked {len(boxes)} frames -> {out / 'results.txt'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    run = _load_run_config(args)
    model = model_from_checkpoint(args.checkpoint)
    sequences = make_eval_set(run)
    report = run_one_pass_eval(model, sequences,
                               _tracker_config(run, args))
    print(report.summary_table())
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_report(report, out / "report.txt")
        write_success_curve(report, out / "success_curve.csv")
        print(f"report written to {out}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    run = _load_run_config(args)
    axis = args.axis or run.ablation_axis
    if axis not in ABLATION_AXES:
        raise ConfigError(f"axis must be one of {ABLATION_AXES}")
    results = run_ablation(run, axis, out_dir=args.out, log_fn=print)
    print(results["_table"])
    return EXIT_OK


def cmd_synth(args) -> int:
    run = _load_run_config(args)
    out = Path(args.out)
    for i in range(args.count):
        seq = generate_sequence(run.data, args.seed_offset + i)
        dump_sequence(seq, out / f"seq_{args.seed_offset + i:04d}")
    print(f"wrote {args.count} sequences under {out}")
    return EXIT_OK


def cmd_render(args) -> int:
    from PIL import Image, ImageDraw

    seq = load_sequence(args.sequence)
    boxes, scores = read_results(args.results)
    if len(boxes) != len(seq.frames):
        raise ContractError(
            f"{len(boxes)} result lines vs {len(seq.frames)} frames")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    digits = max(4, len(str(len(boxes) - 1)))
    for i, (frame, box) in enumerate(zip(seq.frames, boxes)):
        arr = np.clip(frame * 255.0 + 0.5, 0, 255).astype(np.uint8)
        img = Image.fromarray(arr.transpose(1, 2, 0))
        draw = ImageDraw.Draw(img)
        draw.rectangle([box.x1, box.y1, box.x2, box.y2], outline=(255, 0, 0))
        if args.gt:
            g = seq.gt[i]
            draw.rectangle([g.x1, g.y1, g.x2, g.y2], outline=(0, 255, 0))
        img.save(out / f"{i:0{digits}d}.png")
    _render_plots(seq, boxes, scores, out)
    print(f"rendered {len(boxes)} frames under {out}")
    return EXIT_OK


def _render_plots(seq, boxes, scores, out: Path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    from .geometry import iou
    from .metrics import SUCCESS_THRESHOLDS

    ious = np.array([iou(p, g) for p, g in zip(boxes[1:], seq.gt[1:])])
    success = [np.mean(ious > t) for t in SUCCESS_THRESHOLDS]
    fig, ax = plt.subplots(figsize=(4, 3))
    ax.plot(SUCCESS_THRESHOLDS, success, marker="o", markersize=3)
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.05)
    ax.set_xlabel("overlap threshold")
    ax.set_ylabel("success rate")
    fig.tight_layout()
    fig.savefig(out / "success_curve.png", dpi=120)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(4, 3))
    ax.plot(scores)
    ax.set_xlabel("frame")
    ax.set_ylabel("score")
    ax.set_ylim(0, 1.05)
    fig.tight_layout()
    fig.savefig(out / "score_trace.png", dpi=120)
    plt.close(fig)


def cmd_bench(args) -> int:
    from .bench import run_benchmark
    run_benchmark(repeats=args.repeats)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="mcit",
        description="Context-carrying single-object tracker toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model from a config file")
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int, default=None)
    t.set_defaults(fn=cmd_train)

    k = sub.add_parser("track", help="run the tracker over one sequence")
    k.add_argument("--checkpoint", required=True)
    k.add_argument("--config", default=None)
    src = k.add_mutually_exclusive_group(required=True)
    src.add_argument("--sequence", default=None,
                     help="sequence directory (frames + groundtruth.txt)")
    src.add_argument("--synth-seed", type=int, default=None,
                     help="generate the sequence from this seed instead")
    k.add_argument("--out", required=True)
    k.add_argument("--threshold-a", type=float, default=None)
    k.add_argument("--update-interval", type=int, default=None)
    k.set_defaults(fn=cmd_track)

    e = sub.add_parser("eval", help="one-pass evaluation on held-out data")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--config", default=None)
    e.add_argument("--out", default=None)
    e.add_argument("--threshold-a", type=float, default=None)
    e.add_argument("--update-interval", type=int, default=None)
    e.set_defaults(fn=cmd_eval)

    a = sub.add_parser("ablate", help="train and compare axis variants")
    a.add_argument("--config", required=True)
    a.add_argument("--axis", choices=ABLATION_AXES, default=None)
    a.add_argument("--out", default=None)
    a.add_argument("--seed", type=int, default=None)
    a.set_defaults(fn=cmd_ablate)

    s = sub.add_parser("synth", help="dump synthetic sequences to disk")
    s.add_argument("--config", default=None)
    s.add_argument("--out", required=True)
    s.add_argument("--count", type=int, default=1)
    s.add_argument("--seed-offset", type=int, default=0)
    s.set_defaults(fn=cmd_synth)

    r = sub.add_parser("render", help="draw result boxes and plots")
    r.add_argument("--sequence", required=True)
    r.add_argument("--results", required=True)
    r.add_argument("--out", required=True)
    gt = r.add_mutually_exclusive_group()
    gt.add_argument("--gt", dest="gt", action="store_true", default=True)
    gt.add_argument("--no-gt", dest="gt", action="store_false")
    r.set_defaults(fn=cmd_render)

    b = sub.add_parser("bench", help="compare scan kernel backends")
    b.add_argument("--repeats", type=int, default=5)
    b.set_defaults(fn=cmd_bench)
    return p


def _mark_failed(args, message: str) -> None:
    out = getattr(args, "out", None)
    if out:
        out = Path(out)
        if out.is_dir():
            (out / ".failed").write_text(message + "\n", encoding="utf-8")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, FileNotFoundError) as err:
        print(f"config error: {err}", file=sys.stderr)
        _mark_failed(args, f"config error: {err}")
        return EXIT_CONFIG
    except Exception as err:
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        _mark_failed(args, f"{type(err).__name__}: {err}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
