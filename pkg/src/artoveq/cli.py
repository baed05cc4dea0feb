"""Command-line entry point: ``artoveq <subcommand> [--config F] [--seed N] [--out DIR]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import training as T
from .codebook import LBGConfig, NestedCodebook, lbg_fit, load_codebook, save_codebook
from .harness import (Benchmark, ExperimentConfig, SweepResult, load_config, run_dynamic_table,
                      run_mixed_vs_identical, run_rate_sweep)
from .taskmodel import TaskModel

log = logging.getLogger("artoveq")

MODEL_FILE, CODEBOOK_FILE, WARM_FILE = "model.json", "codebook.json", "warmstart.json"


class CommandError(RuntimeError):
    pass


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, help="TOML experiment configuration")
    p.add_argument("--seed", type=int, help="override the configured seed")
    p.add_argument("--out", type=Path, default=Path("."), help="output directory (default: .)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="artoveq", description="Multi-rate learned vector quantization experiments.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("lbg", help="fit an LBG codebook to a point file")
    _common(p)
    p.add_argument("--points", type=Path, required=True, help="text file, one point per row")
    p.add_argument("--size", type=int, required=True, help="codebook size (power of two)")

    for name, text in (("train", "variable-rate training (all levels, one codebook)"),
                       ("train-mixed", "mixed-resolution training"),
                       ("train-progressive", "progressive (successive refinement) training")):
        _common(sub.add_parser(name, help=text))

    for name, text in (("sweep", "accuracy against bits for the trained model and baselines"),
                       ("mixed-sweep", "mixed versus identical allocations for a mixed-trained model"),
                       ("eval", "evaluate a trained model at one allocation")):
        p = sub.add_parser(name, help=text)
        _common(p)
        p.add_argument("--model", type=Path, help="directory holding a trained model (default: --out)")
        if name == "eval":
            p.add_argument("--levels", required=True, help="one level, or comma-separated per-segment levels")

    _common(sub.add_parser("channel-sim", help="dynamic-channel table over the configured scenarios"))
    return parser


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def _prepare_out(args, cfg: ExperimentConfig) -> Path:
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.toml")
    return out


def _epoch_log(out: Path):
    fh = open(out / "epochs.jsonl", "w")
    return T.EpochLog(fh), fh


def _save_model(out: Path, model: TaskModel, cb, name: str = MODEL_FILE):
    (out / name).write_text(model.dumps())
    if cb is not None:
        save_codebook(cb, out / CODEBOOK_FILE)


def _load_trained(directory: Path, require_warm: bool = False):
    model_path, cb_path = directory / MODEL_FILE, directory / CODEBOOK_FILE
    missing = [p for p in (model_path, cb_path) if not p.exists()]
    if require_warm and not (directory / WARM_FILE).exists():
        missing.append(directory / WARM_FILE)
    if missing:
        raise CommandError(f"model not found: missing {', '.join(str(p) for p in missing)}")
    model = TaskModel.loads(model_path.read_text())
    warm = TaskModel.loads((directory / WARM_FILE).read_text()) if (directory / WARM_FILE).exists() else None
    return model, load_codebook(cb_path), warm


def _check_shape(cfg: ExperimentConfig, model: TaskModel, cb):
    if (model.num_segments, model.dim, cb.max_level) != (cfg.num_segments, cfg.dim, cfg.max_level):
        raise CommandError(
            f"model has M={model.num_segments}, d={model.dim}, L={cb.max_level} but the configuration says "
            f"M={cfg.num_segments}, d={cfg.dim}, L={cfg.max_level}"
        )


# -- subcommands --------------------------------------------------------------


def cmd_lbg(args, cfg):
    if not args.points.exists():
        raise CommandError(f"point file not found: {args.points}")
    points = np.loadtxt(args.points, delimiter="," if args.points.suffix == ".csv" else None, ndmin=2)
    result = lbg_fit(points, LBGConfig(args.size, cfg.lbg_split_perturbation, cfg.lbg_max_iterations,
                                       cfg.lbg_convergence_threshold))
    out = _prepare_out(args, cfg)
    save_codebook(NestedCodebook(result.codewords.astype(np.float32)), out / CODEBOOK_FILE)
    lines = ["iteration,distortion"] + [f"{i},{v:.6g}" for i, v in enumerate(result.distortion_history)]
    (out / "lbg.csv").write_text("\n".join(lines) + "\n")
    print(f"{args.size} codewords, distortion {result.distortion:.6g}")


def _cmd_train(args, cfg, kind: str):
    out = _prepare_out(args, cfg)
    elog, fh = _epoch_log(out)
    try:
        bench = Benchmark(cfg, elog)
        (out / WARM_FILE).write_text(bench.warm.dumps())
        model, cb = {"train": bench.variable_rate, "train-mixed": bench.mixed,
                     "train-progressive": bench.progressive}[kind]()
    finally:
        fh.close()
    _save_model(out, model, cb)
    L = cfg.max_level
    res = SweepResult()
    for level in range(1, L + 1):
        acc, loss = T.evaluate(model, cb, level, bench.test)
        res.add(kind, cfg.dim, (level,) * cfg.num_segments, acc, loss, cfg.seed)
    res.write(out / "train_eval.csv")
    print(res.to_csv(), end="")


def _bench_from(args, cfg, key):
    src = args.model or args.out
    model, cb, warm = _load_trained(src, require_warm=(key == "variable_rate"))
    _check_shape(cfg, model, cb)
    bench = Benchmark(cfg)
    if warm is not None:
        bench.use_warm(warm)
    bench.preset(key, model, cb)
    return bench


def cmd_sweep(args, cfg):
    bench = _bench_from(args, cfg, "variable_rate")
    out = _prepare_out(args, cfg)
    res = run_rate_sweep(cfg, bench)
    res.write(out / "sweep.csv")
    print(res.to_csv(), end="")


def cmd_mixed_sweep(args, cfg):
    bench = _bench_from(args, cfg, "mixed")
    out = _prepare_out(args, cfg)
    res = run_mixed_vs_identical(cfg, bench)
    res.write(out / "mixed_sweep.csv")
    print(res.to_csv(), end="")


def cmd_eval(args, cfg):
    model, cb, _ = _load_trained(args.model or args.out)
    levels = [int(v) for v in args.levels.split(",")]
    if len(levels) == 1:
        levels = levels * model.num_segments
    if len(levels) != model.num_segments:
        raise CommandError(f"--levels needs 1 or {model.num_segments} entries")
    _, test = cfg.load_data()
    acc, loss = T.evaluate(model, cb, levels, test)
    out = _prepare_out(args, cfg)
    res = SweepResult()
    res.add("eval", model.dim, tuple(levels), acc, loss, cfg.seed)
    res.write(out / "eval.csv")
    print(res.to_csv(), end="")


def cmd_channel_sim(args, cfg):
    out = _prepare_out(args, cfg)
    elog, fh = _epoch_log(out)
    try:
        table = run_dynamic_table(cfg, Benchmark(cfg, elog))
    finally:
        fh.close()
    (out / "channel.csv").write_text(table.to_csv())
    (out / "channel.txt").write_text(table.to_text())
    (out / "channel_trace.csv").write_text(table.trace_csv())
    print(table.to_text(), end="")


COMMANDS = {
    "lbg": cmd_lbg,
    "train": lambda a, c: _cmd_train(a, c, "train"),
    "train-mixed": lambda a, c: _cmd_train(a, c, "train-mixed"),
    "train-progressive": lambda a, c: _cmd_train(a, c, "train-progressive"),
    "sweep": cmd_sweep,
    "mixed-sweep": cmd_mixed_sweep,
    "eval": cmd_eval,
    "channel-sim": cmd_channel_sim,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with status 2 and usage text on bad input
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = _config(args)
        COMMANDS[args.command](args, cfg)
    except (CommandError, ValueError, OSError) as exc:
        print(f"artoveq {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
