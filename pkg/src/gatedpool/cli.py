"""Command-line entry point: ``gatedpool <command> [options]``.

Commands
    gen        write a synthetic VSEQ dataset
    train      train a model, keeping the best-validation checkpoint
    eval       report GAP@20 of a checkpoint on a dataset split
    gradcheck  finite-difference check of every layer and a tiny model
    ensemble   greedy score-averaging ensemble of checkpoints
    inspect    summarize a dataset and/or checkpoint

Exit codes: 0 success, 1 configuration/usage error, 2 I/O error,
3 numeric failure (non-finite values or a failed gradient check).
"""

from __future__ import annotations

import argparse
import contextlib
import os
import sys
from pathlib import Path

import numpy as np

from . import gradcheck
from .config import PROFILES, Experiment, load_config
from .dataio import generate_synthetic, read_checkpoint, read_vseq, read_vseq_header, write_vseq
from .ensemble import greedy_select
from .metrics import gap_at_20
from .model import ConfigError, VideoClassifier, build, predict_many
from .training import NumericError, train

EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI config file")
    p.add_argument("--profile", choices=sorted(PROFILES), default="desk",
                   help="base setting the config file and overrides apply to (default: desk)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key, e.g. pooling.kind=netfv (repeatable)")
    p.add_argument("--seed", type=int, help="seed for data, model and training")
    p.add_argument("--out", help="output directory")


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gatedpool", description="learnable pooling video classifier")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    p = sub.add_parser("gen", help="generate a synthetic dataset")
    _common(p)
    p = sub.add_parser("train", help="train a model")
    _common(p)
    p.add_argument("--data", required=True, help="VSEQ dataset")
    p = sub.add_parser("eval", help="evaluate a checkpoint")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("val", "train", "all"), default="val")
    p = sub.add_parser("gradcheck", help="check gradients against finite differences")
    _common(p)
    p = sub.add_parser("ensemble", help="greedy ensemble selection")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--members", required=True, help="comma-separated checkpoint paths")
    p.add_argument("--budget", type=int, default=0, help="max members (0: all candidates)")
    p = sub.add_parser("inspect", help="summarize a dataset or checkpoint")
    _common(p)
    p.add_argument("--data")
    p.add_argument("--checkpoint")
    return parser


def _experiment(args) -> Experiment:
    overrides = list(args.set)
    if args.seed is not None:
        overrides += [f"data.seed={args.seed}", f"model.seed={args.seed}",
                      f"train.seed={args.seed}"]
    return load_config(args.config, overrides, PROFILES[args.profile]())


def _outdir(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _split(dataset, exp: Experiment, which: str):
    if which == "all":
        return dataset
    tr, va = dataset.split(exp.train.val_fraction)
    return va if which == "val" else tr


def cmd_gen(args, exp: Experiment, out: Path) -> int:
    dataset = generate_synthetic(exp.data)
    path = out / "data.vseq"
    write_vseq(path, dataset)
    print(f"wrote {len(dataset)} videos to {path}")
    return 0


def _check_dims(exp: Experiment, header) -> None:
    m = exp.model
    if (m.visual_dim, m.audio_dim, m.num_labels) != (header.visual_dim, header.audio_dim,
                                                     header.num_labels):
        raise ConfigError(
            f"model dims (visual {m.visual_dim}, audio {m.audio_dim}, labels {m.num_labels}) "
            f"do not match the data ({header.visual_dim}, {header.audio_dim}, "
            f"{header.num_labels})")


def cmd_train(args, exp: Experiment, out: Path) -> int:
    _check_dims(exp, read_vseq_header(args.data))
    dataset = read_vseq(args.data)
    tr, va = dataset.split(exp.train.val_fraction)
    model = build(exp.model)
    result = train(model, tr, va, exp.train, log_path=out / "train_log.csv",
                   checkpoint_path=out / "model.ckpt")
    print(f"best val GAP@20 {result.best_gap:.6f} at step {result.best_step}; "
          f"checkpoint {out / 'model.ckpt'}")
    return 0


def cmd_eval(args, exp: Experiment, out: Path) -> int:
    model = VideoClassifier.from_checkpoint(args.checkpoint)
    dataset = _split(read_vseq(args.data), exp, args.split)
    preds = predict_many(model, dataset.videos, np.random.default_rng(exp.train.seed + 1),
                         exp.train.eval_passes)
    gap = gap_at_20(preds, [v.labels for v in dataset])
    (out / "eval_report.csv").write_text(
        f"metric,value\ngap_at_20,{gap!r}\nvideos,{len(dataset)}\n")
    print(f"GAP@20 {gap:.6f} on {len(dataset)} videos ({args.split} split)")
    return 0


def cmd_gradcheck(args, exp: Experiment, out: Path) -> int:
    reports = gradcheck.run_all(exp.model, seed=exp.model.seed)
    table = gradcheck.format_table(reports)
    print(table)
    (out / "gradcheck.txt").write_text(table + "\n")
    return 0 if all(r.passed for r in reports.values()) else EXIT_NUMERIC


def cmd_ensemble(args, exp: Experiment, out: Path) -> int:
    paths = [p for p in args.members.split(",") if p]
    if not paths:
        raise ConfigError("--members lists no checkpoints")
    val = _split(read_vseq(args.data), exp, "val")
    labels = [v.labels for v in val]
    candidates = {}
    for path in paths:
        model = VideoClassifier.from_checkpoint(path)
        candidates[path] = predict_many(model, val.videos,
                                        np.random.default_rng(exp.train.seed + 1))
    spec = greedy_select(candidates, labels, args.budget or len(paths))
    spec.save(out / "ensemble.json", out / "selection_log.csv")
    for size, (member, gap) in enumerate(spec.selection_log, 1):
        print(f"{size:3d}  GAP@20 {gap:.6f}  + {member}")
    return 0


def cmd_inspect(args, exp: Experiment, out: Path) -> int:
    if not args.data and not args.checkpoint:
        raise ConfigError("inspect needs --data and/or --checkpoint")
    if args.data:
        ds = read_vseq(args.data)
        frames = [v.num_frames for v in ds]
        counts = ds.label_matrix().sum(axis=0)
        print(f"dataset {args.data}: {len(ds)} videos, {ds.num_labels} labels, "
              f"visual {ds.visual_dim}-d, audio {ds.audio_dim}-d")
        if len(ds):
            print(f"  frames per video: min {min(frames)} mean {np.mean(frames):.1f} "
                  f"max {max(frames)}")
            print(f"  labels per video: mean {counts.sum() / len(ds):.2f}; "
                  f"labels never used: {int((counts == 0).sum())}")
    if args.checkpoint:
        cfg, tensors = read_checkpoint(args.checkpoint)
        n = sum(t.size for k, t in tensors.items() if "running_" not in k)
        print(f"checkpoint {args.checkpoint}: {len(tensors)} tensors, {n} learnable values")
        for k, t in tensors.items():
            print(f"  {k:<24} {str(t.shape):<16} {t.dtype}")
        pool = cfg["pooling"]
        print(f"  fusion {cfg['fusion']}, pooling {pool['kind']} K={pool['clusters']}, "
              f"gating {cfg['gating']['after_pooling']}/{cfg['gating']['after_classifier']}")
    return 0


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "gradcheck": cmd_gradcheck,
            "ensemble": cmd_ensemble, "inspect": cmd_inspect}


def _thread_limit():
    value = os.environ.get("LOUPE_THREADS")
    if not value:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(int(value))


def run(argv=None) -> int:
    try:
        args = make_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        exp = _experiment(args)
        out = _outdir(args)
        (out / "resolved.cfg").write_text(exp.dumps())
        with _thread_limit():
            return COMMANDS[args.command](args, exp, out)
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


def main() -> None:
    sys.exit(run())
