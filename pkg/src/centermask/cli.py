"""Command-line entry point: train, infer, eval, grad-check, bench, gen-data."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import replace
from typing import Optional, Sequence

import numpy as np

from . import weights
from .config import CenterMaskConfig, base_config, lite_config, load_config, save_config
from .evaluate import evaluate_ap, format_table
from .model import CenterMask
from .results import dataset_dict, predict_samples, result_records
from .synth import generate_sample
from .tensor import Tensor

log = logging.getLogger("centermask")

EVAL_SEED_BASE = 0  # held-out scenes; training draws from 1_000_000 * (seed + 1) upward


def _config(args) -> CenterMaskConfig:
    if args.config:
        return load_config(args.config)
    return lite_config() if args.lite else base_config()


def _dump_json(obj, path: Optional[str]) -> None:
    text = json.dumps(obj, sort_keys=True, indent=1)
    if path is None:
        print(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")


def _load_json(path: str):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: malformed JSON ({exc})") from exc


def _model(cfg: CenterMaskConfig, args) -> CenterMask:
    model = CenterMask(cfg, args.seed)
    if args.weights:
        entries = weights.load(args.weights)
        if any(k.startswith("param/") for k in entries):  # a training checkpoint
            entries = {k[len("param/"):]: v for k, v in entries.items() if k.startswith("param/")}
        try:
            model.load_state_dict(entries)
        except KeyError as exc:
            raise ValueError(f"{args.weights} does not match the configuration: {exc}") from exc
    return model


# --- commands -----------------------------------------------------------------

def cmd_train(args) -> int:
    from .train import load_checkpoint, train_loop

    cfg = _config(args)
    if args.iterations:
        n = args.iterations
        cfg = replace(cfg, train=replace(cfg.train, iterations=n, milestones=(n * 2 // 3, n * 8 // 9)))
    cfg = replace(cfg, train=replace(cfg.train, seed=args.seed))
    os.makedirs(args.out, exist_ok=True)
    save_config(cfg, os.path.join(args.out, "config.txt"))
    model = CenterMask(cfg, args.seed)
    ckpt = os.path.join(args.out, "checkpoint.cmkw")
    state = None
    if args.weights:
        state = load_checkpoint(args.weights, model)
        log.info("resuming at iteration %d", state.iteration)
    t0 = time.perf_counter()
    state = train_loop(model, cfg.train, state, log_path=os.path.join(args.out, "train.log"), checkpoint_path=ckpt)
    weights.save_model(os.path.join(args.out, "weights.cmkw"), model)
    print(f"trained {state.iteration} iterations in {time.perf_counter() - t0:.0f}s -> {args.out}")
    return 0


def cmd_infer(args) -> int:
    from .imaging import overlay, read_image, write_png

    cfg = _config(args)
    if args.score_threshold is not None:
        cfg = replace(cfg, head=replace(cfg.head, score_threshold=args.score_threshold))
    model = _model(cfg, args)
    os.makedirs(args.out, exist_ok=True)
    records = []
    for k, path in enumerate(args.images):
        image, padded, (h, w) = read_image(path)
        instances = model.predict(Tensor(image[None]))[0]
        for inst in instances:
            inst.mask = inst.mask[:h, :w]
            inst.box = np.minimum(inst.box, [w, h, w, h])
        records.extend(result_records(k, instances))
        stem = os.path.splitext(os.path.basename(path))[0]
        write_png(os.path.join(args.out, f"{stem}_overlay.png"), overlay(padded[:h, :w], instances))
    _dump_json(records, os.path.join(args.out, "results.json"))
    print(f"{len(records)} instances from {len(args.images)} images -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    thresholds = (0.5,) if args.ap50 else None
    if args.results:
        if not args.ground_truth:
            raise ValueError("--ground-truth is required with a results file")
        table = evaluate_ap(_load_json(args.results), _load_json(args.ground_truth), thresholds)
    else:
        cfg = _config(args)
        model = _model(cfg, args)
        samples = [generate_sample(EVAL_SEED_BASE + s, cfg.train.image_size, cfg.train.image_size,
                                   cfg.train.max_instances) for s in range(args.count)]
        table = evaluate_ap(predict_samples(model, samples), dataset_dict(samples), thresholds)
    print(format_table(table))
    if args.out:
        _dump_json(table, args.out)
    return 0


def cmd_grad_check(args) -> int:
    from .gradsuite import run_suite

    t0 = time.perf_counter()
    out = run_suite(seed=args.seed, model_entries=args.model_entries, include_model=not args.skip_model)
    ok = all(rep.passed(tol) for rep, tol, _, _ in out.values())
    print(f"{'PASS' if ok else 'FAIL'}: {len(out)} cases in {time.perf_counter() - t0:.1f}s")
    if args.out:
        _dump_json({name: {"max_error": rep.max_error, "tolerance": tol, "seconds": sec, "draws": draws,
                           "errors": rep.errors} for name, (rep, tol, sec, draws) in out.items()}, args.out)
    return 0 if ok else 1


def cmd_bench(args) -> int:
    from .bench import format_report, run_bench

    configs = {"custom": load_config(args.config)} if args.config else \
        {"lite": lite_config()} if args.lite else {"lite": lite_config(), "base": base_config()}
    reports = {}
    for size in args.sizes:
        for name, cfg in configs.items():
            rep = run_bench(cfg, size, args.repetitions, args.seed)
            reports[f"{name}@{size}"] = rep
            print(format_report(name, rep))
        if {"lite", "base"} <= set(configs):
            lite, base = reports[f"lite@{size}"], reports[f"base@{size}"]
            print(f"  lite/base at {size}: MACs {lite['total_macs'] / base['total_macs']:.3f}, "
                  f"median time {lite['total']['median'] / base['total']['median']:.3f}")
    if args.out:
        _dump_json(reports, args.out)
    return 0


def cmd_gen_data(args) -> int:
    from .imaging import write_png

    os.makedirs(os.path.join(args.out, "images"), exist_ok=True)
    samples, names = [], []
    for s in range(args.seed, args.seed + args.count):
        sample = generate_sample(s, args.size, args.size, args.max_instances)
        name = f"images/{s:07d}.png"
        write_png(os.path.join(args.out, name), sample.pixels)
        samples.append(sample)
        names.append(name)
    _dump_json(dataset_dict(samples, names), os.path.join(args.out, "annotations.json"))
    print(f"{args.count} scenes -> {args.out}")
    return 0


# --- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="text config file (section.key = value)")
    common.add_argument("--lite", action="store_true", help="use the lite preset when no --config is given")
    common.add_argument("--weights", help="CMKW weights or checkpoint file")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="centermask", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", parents=[common], help="train on seeded synthetic scenes")
    t.add_argument("--out", default="run", help="output directory")
    t.add_argument("--iterations", type=int, help="budget override; milestones rescale to 2/3 and 8/9")
    t.set_defaults(func=cmd_train)

    i = sub.add_parser("infer", parents=[common], help="detect and segment PNG images")
    i.add_argument("images", nargs="+")
    i.add_argument("--out", default="infer")
    i.add_argument("--score-threshold", type=float)
    i.set_defaults(func=cmd_infer)

    e = sub.add_parser("eval", parents=[common], help="AP of a results file, or of a model on held-out seeds")
    e.add_argument("results", nargs="?")
    e.add_argument("--ground-truth")
    e.add_argument("--count", type=int, default=100, help="held-out scenes when evaluating a model")
    e.add_argument("--ap50", action="store_true", help="IoU 0.5 only")
    e.add_argument("--out", help="write the AP table as JSON")
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("grad-check", parents=[common], help="finite-difference gradient suite")
    g.add_argument("--model-entries", type=int, default=3)
    g.add_argument("--skip-model", action="store_true")
    g.add_argument("--out")
    g.set_defaults(func=cmd_grad_check)

    b = sub.add_parser("bench", parents=[common], help="per-stage timing and MAC counts")
    b.add_argument("--sizes", type=int, nargs="+", default=[128])
    b.add_argument("--repetitions", type=int, default=5)
    b.add_argument("--out")
    b.set_defaults(func=cmd_bench)

    d = sub.add_parser("gen-data", parents=[common], help="write synthetic scenes as PNG + JSON")
    d.add_argument("--out", default="data")
    d.add_argument("--count", type=int, default=16)
    d.add_argument("--size", type=int, default=64)
    d.add_argument("--max-instances", type=int, default=5)
    d.set_defaults(func=cmd_gen_data)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ValueError, KeyError, OSError) as exc:
        print(f"centermask {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
