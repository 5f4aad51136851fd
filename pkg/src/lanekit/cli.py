"""Command-line entry points for data generation, training, and evaluation.

Subcommands:

- ``gen-data``  render a procedural dataset to images + annotations.jsonl
- ``train``     optimize a detector on a dataset directory
- ``infer``     run a checkpoint on one image or a whole dataset
- ``eval``      score predictions against ground truth (culane/tusimple)
- ``ablate``    train a single-switch ablation variant
- ``gradcheck`` finite-difference verification of the differentiable stack

Every command exits 0 on success and nonzero after printing a diagnostic
to stderr. Config files are ``key = value`` text with one line per
:class:`lanekit.config.ModelConfig` field.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np
from PIL import Image

from .config import ModelConfig, apply_overrides, load_config
from .gradsuite import SUITES, run_suites
from .metrics import culane_f1, format_report, tusimple_accuracy, write_report
from .pipeline import (TrainingDiverged, evaluate, infer, load_detector,
                       render_overlay, train)
from .synthdata import (ABSENT, SceneSpec, default_h_samples,
                        generate_dataset, read_dataset, record_to_lanes,
                        write_dataset)

ABLATION_VARIANTS = {
    "anchor-init": {"init_mode": "anchor"},
    "no-lsam": {"use_lsam": False},
    "single-level": {"sampling_mode": "single"},
}


def _load_cfg(args) -> ModelConfig:
    cfg = load_config(args.config) if args.config else ModelConfig()
    if getattr(args, "set", None):
        cfg = apply_overrides(cfg, args.set)
    return cfg


def _load_checkpoint_detector(path: str):
    detector, _, _ = load_detector(path)
    return detector


def _lanes_to_record(lanes, raw_file: str, h: int) -> dict:
    """Serialize detected lanes the same way dataset annotations are."""
    h_samples = default_h_samples(h)
    hs = np.asarray(h_samples, float)
    rows, scores = [], []
    for lane in lanes:
        xs = np.full(len(hs), ABSENT)
        inside = (hs >= lane.y_min) & (hs <= lane.y_max)
        xs[inside] = np.interp(hs[inside], lane.rows(), lane.xs)
        rows.append([float(v) for v in xs])
        scores.append(float(lane.score))
    return {"raw_file": raw_file, "lanes": rows,
            "h_samples": list(h_samples), "scores": scores}


def cmd_gen_data(args) -> int:
    spec = SceneSpec(curvature_max=args.curvature_max)
    scenes = generate_dataset(range(args.seed, args.seed + args.count), spec)
    index = write_dataset(scenes, args.out)
    print(f"wrote {len(scenes)} scenes to {args.out} (index: {index})")
    return 0


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    scenes = read_dataset(args.data)
    if not scenes:
        raise ValueError(f"no scenes found under {args.data}")

    def progress(step, detector, report):
        if step % args.log_every and step != cfg.total_iters:
            return
        print(f"step {step:5d}/{cfg.total_iters}  "
              f"total {report.total:.4f}  "
              f"cls {report.l_cls:.4f}  reg {report.l_reg:.4f}  "
              f"dir {report.l_dir:.4f}  attn {report.l_attn:.4f}",
              flush=True)

    try:
        result = train(cfg, scenes, args.out, resume_from=args.resume,
                       log_every=args.log_every, callbacks=(progress,))
    except TrainingDiverged as exc:
        print(f"error: training diverged at step {exc.step}; "
              f"last checkpoint: {exc.checkpoint}", file=sys.stderr)
        return 2
    print(f"finished {result.steps} steps; checkpoint: {result.checkpoint}")
    return 0


def cmd_infer(args) -> int:
    detector = _load_checkpoint_detector(args.checkpoint)
    cfg = detector.cfg
    if args.image:
        image = np.asarray(Image.open(args.image))
        lanes = infer(detector, image)
        record = _lanes_to_record(lanes, os.path.basename(args.image), cfg.h)
        with open(args.out, "w") as fh:
            fh.write(json.dumps(record) + "\n")
        if args.overlay:
            Image.fromarray(render_overlay(image, lanes)).save(args.overlay)
        print(f"{len(lanes)} lanes -> {args.out}")
        return 0
    scenes = read_dataset(args.data)
    out_path = args.out
    if os.path.isdir(out_path) or out_path.endswith(os.sep):
        os.makedirs(out_path, exist_ok=True)
        out_path = os.path.join(out_path, "predictions.jsonl")
    n_lanes = 0
    with open(out_path, "w") as fh:
        for k, scene in enumerate(scenes):
            lanes = infer(detector, scene.image)
            n_lanes += len(lanes)
            raw = f"images/scene_{k:05d}.png"
            fh.write(json.dumps(_lanes_to_record(lanes, raw, cfg.h)) + "\n")
    print(f"{n_lanes} lanes over {len(scenes)} scenes -> {out_path}")
    return 0


def _read_records(path: str) -> list:
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: malformed JSON: {exc}")
    return records


def cmd_eval(args) -> int:
    preds = _read_records(args.pred)
    gts = _read_records(args.gt)
    if len(preds) != len(gts):
        raise ValueError(f"prediction/ground-truth scene counts differ: "
                         f"{len(preds)} vs {len(gts)}")
    if args.metric == "culane":
        first_image = os.path.join(os.path.dirname(os.path.abspath(args.gt)),
                                   gts[0]["raw_file"])
        with Image.open(first_image) as im:
            w, h = im.size
        result = culane_f1([record_to_lanes(r) for r in preds],
                           [record_to_lanes(r) for r in gts], h=h, w=w,
                           categories=[r.get("tags", []) for r in gts])
        title = f"culane-style F1@0.5 ({len(gts)} scenes)"
    else:
        h_samples = gts[0]["h_samples"]
        for k, r in enumerate(gts + preds):
            if r.get("h_samples", h_samples) != h_samples:
                raise ValueError(f"scene {k % len(gts)} uses a different "
                                 f"h_samples grid; evaluation needs a "
                                 f"shared grid")
        pred_rows = [[np.asarray(xs, float) for xs in r["lanes"]]
                     for r in preds]
        gt_rows = [[np.asarray(xs, float) for xs in r["lanes"]]
                   for r in gts]
        result = tusimple_accuracy(pred_rows, gt_rows, h_samples)
        title = f"tusimple-style accuracy ({len(gts)} scenes)"
    print(format_report(result, title))
    if args.report:
        write_report(args.report, result, title)
        print(f"report -> {args.report}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _load_cfg(args)
    cfg = dataclasses.replace(cfg, **ABLATION_VARIANTS[args.variant])
    scenes = read_dataset(args.data)
    if not scenes:
        raise ValueError(f"no scenes found under {args.data}")
    try:
        result = train(cfg, scenes, args.out, log_every=args.log_every)
    except TrainingDiverged as exc:
        print(f"error: training diverged at step {exc.step}; "
              f"last checkpoint: {exc.checkpoint}", file=sys.stderr)
        return 2
    print(f"[{args.variant}] finished {result.steps} steps; "
          f"checkpoint: {result.checkpoint}")
    if args.eval_data:
        heldout = read_dataset(args.eval_data)
        ev = evaluate(result.detector, heldout)
        title = f"ablation {args.variant}"
        print(format_report(ev, title))
        report_path = os.path.join(args.out, "ablation_report.json")
        write_report(report_path, ev, title)
        print(f"report -> {report_path}")
    return 0


def cmd_gradcheck(args) -> int:
    names = list(SUITES) if args.suite == "all" else [args.suite]
    results = run_suites(names, instances=args.instances)
    worst: dict = {}
    for r in results:
        key = f"{r.suite}/{r.check}"
        prev = worst.get(key)
        if prev is None or r.max_rel_err > prev.max_rel_err:
            worst[key] = r
    failed = [r for r in results if not r.passed]
    for key, r in worst.items():
        state = "PASS" if all(x.passed for x in results
                              if f"{x.suite}/{x.check}" == key) else "FAIL"
        print(f"{key:<24} worst rel err {r.max_rel_err:.3e}  {state}")
    n = len(results)
    print(f"{n - len(failed)}/{n} checks passed "
          f"({args.instances} instances per check)")
    if failed:
        for r in failed[:10]:
            print(f"failed: {r}", file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lanekit",
        description="Two-stage lane detection: sketch proposals from a "
                    "direction field, then refine with attention.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="render a synthetic dataset")
    p.add_argument("--count", type=int, required=True,
                   help="number of scenes")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0, help="first scene seed")
    p.add_argument("--curvature-max", type=float,
                   default=SceneSpec.curvature_max,
                   help="quadratic curvature bound (px/px^2)")
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train a detector")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--set", nargs="*", metavar="KEY=VALUE",
                   help="config overrides")
    p.add_argument("--log-every", type=int, default=25)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("infer", help="run a checkpoint")
    p.add_argument("--checkpoint", required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--image", help="single PNG image")
    src.add_argument("--data", help="dataset directory")
    p.add_argument("--out", required=True,
                   help="output JSONL file (or directory for --data)")
    p.add_argument("--overlay", help="write an overlay PNG (--image only)")
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("eval", help="score predictions")
    p.add_argument("--pred", required=True, help="predictions JSONL")
    p.add_argument("--gt", required=True, help="ground-truth JSONL")
    p.add_argument("--metric", choices=("culane", "tusimple"),
                   default="culane")
    p.add_argument("--report", help="write the result as JSON here")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="train an ablation variant")
    p.add_argument("--variant", choices=sorted(ABLATION_VARIANTS),
                   required=True)
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--eval-data", help="held-out dataset to score")
    p.add_argument("--set", nargs="*", metavar="KEY=VALUE",
                   help="config overrides")
    p.add_argument("--log-every", type=int, default=25)
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference verification")
    p.add_argument("--suite", choices=sorted(SUITES) + ["all"],
                   default="all")
    p.add_argument("--instances", type=int, default=20,
                   help="random instances per check")
    p.set_defaults(fn=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
