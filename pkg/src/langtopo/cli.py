"""Command-line entry point.

    langtopo gen-sbm --out data/sbm --n 300 --blocks 3 --seed 7
    langtopo train-stage1 --config exp.ini
    langtopo train-stage2 --config exp.ini [--no-align]
    langtopo eval --config exp.ini
    langtopo compare-lookup --config exp.ini --seeds 5
    langtopo ablate-hops --config exp.ini --seeds 5
    langtopo gumbel-check --k 8 --samples 200000

Exit codes: 0 success, 1 tolerance or training failure, 2 usage/config error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import rng as rngs
from .codebook import gumbel_argmax_frequencies, softmax
from .config import ConfigError, ExperimentConfig, load_config
from .experiments import LOOKUP_COLUMNS, ablate_hops, compare_lookup, unaligned
from .graph import GraphFormatError, SbmSpec, generate_sbm, save_graph
from .stage1 import METRIC_KEYS, Stage1Artifacts, TrainingError, train_stage1
from .stage2 import STAGE2_METRIC_KEYS, Student, evaluate, new_student, train_stage2

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
STREAMS = (rngs.CODEBOOK_INIT, rngs.GUMBEL_STAGE1, rngs.GUMBEL_STAGE2, "stage2-order", "student-init")


class UsageError(Exception):
    pass


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _write_jsonl(path: Path, records, keys) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(json.dumps({k: r[k] for k in keys}) + "\n")


def _write_text(path: Path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _experiment(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        if args.seed < 0:
            raise ConfigError("--seed must be non-negative")
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "output", None) is not None:
        cfg = replace(cfg, output=Path(args.output))
    try:
        if getattr(args, "epochs1", None) is not None:
            cfg = replace(cfg, stage1=replace(cfg.stage1, epochs=args.epochs1))
        if getattr(args, "epochs2", None) is not None:
            cfg = replace(cfg, stage2=replace(cfg.stage2, epochs=args.epochs2))
        if getattr(args, "hops", None) is not None:
            cfg = replace(cfg, stage2=replace(cfg.stage2, hops=args.hops))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    _log(f"seed {cfg.seed}; streams: {', '.join(STREAMS)}")
    return cfg


def _stage1_dir(cfg: ExperimentConfig) -> Path:
    return cfg.output / "stage1"


def _stage2_dir(cfg: ExperimentConfig, align: bool) -> Path:
    return cfg.output / ("stage2" if align else "stage2-noalign")


def _load_stage1(cfg: ExperimentConfig) -> Stage1Artifacts:
    d = _stage1_dir(cfg)
    if not (d / "manifest.txt").is_file():
        raise UsageError(f"missing Stage-1 checkpoint in {d}; run train-stage1 first")
    return Stage1Artifacts.load(d)


def _seed_list(cfg: ExperimentConfig, count: int) -> list[int]:
    if count < 1:
        raise ConfigError("--seeds must be >= 1")
    return list(range(cfg.seed, cfg.seed + count))


# ---------------------------------------------------------------- commands

def cmd_gen_sbm(args) -> int:
    try:
        spec = SbmSpec(n=args.n, blocks=args.blocks, p_in=args.p_in, p_out=args.p_out,
                       d_in=args.d_in, text_signal=args.text_signal, seed=args.seed)
        graph = generate_sbm(spec)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = save_graph(graph, args.out)
    print(f"wrote {graph.n} nodes, {graph.num_edges} edges to {out}")
    return EXIT_OK


def cmd_train_stage1(args) -> int:
    cfg = _experiment(args)
    graph = cfg.load_graph()
    artifacts = train_stage1(graph, cfg.stage1, cfg.seed)
    d = _stage1_dir(cfg)
    artifacts.save(d)
    _write_jsonl(d / "metrics.jsonl", artifacts.metrics, METRIC_KEYS)
    last = artifacts.metrics[-1] if artifacts.metrics else None
    if last:
        print(f"epochs {len(artifacts.metrics)}  best {artifacts.best_epoch}  "
              f"loss_total {last['loss_total']:.6f}  usage {last['usage']:.4f}")
    print(f"checkpoint: {d}")
    return EXIT_OK


def cmd_train_stage2(args) -> int:
    cfg = _experiment(args)
    stage2 = unaligned(cfg.stage2) if args.no_align else cfg.stage2
    cfg = replace(cfg, stage2=stage2)
    artifacts = None if args.no_align else _load_stage1(cfg)
    graph = cfg.load_graph()
    d_code = artifacts.codebook.d_code if artifacts is not None else cfg.stage1.d_code
    student = new_student(graph, d_code, stage2, cfg.seed)
    student, metrics = train_stage2(graph, artifacts, student, stage2, cfg.seed)
    d = _stage2_dir(cfg, not args.no_align)
    student.save(d)
    _write_jsonl(d / "metrics.jsonl", metrics, STAGE2_METRIC_KEYS)
    report = {"test_acc": evaluate(student, graph, "test"), "seeds": [cfg.seed], "config_hash": cfg.digest()}
    _write_text(d / "report.json", json.dumps(report, sort_keys=True) + "\n")
    print(json.dumps(report, sort_keys=True))
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _experiment(args)
    d = Path(args.student) if args.student else _stage2_dir(cfg, not args.no_align)
    if not (d / "manifest.txt").is_file():
        raise UsageError(f"missing student checkpoint in {d}")
    student = Student.load(d)
    graph = cfg.load_graph()
    hops = args.hops if args.hops is not None else student.config.hops
    acc = evaluate(student, graph, args.split, hops)
    print(json.dumps({"split": args.split, "hops": hops, "test_acc" if args.split == "test" else "acc": acc}))
    return EXIT_OK


def cmd_compare_lookup(args) -> int:
    cfg = _experiment(args)
    seeds = _seed_list(cfg, args.seeds)
    graph = cfg.load_graph()
    table = compare_lookup(graph, cfg.stage1, seeds)
    lines = ["strategy," + ",".join(LOOKUP_COLUMNS)]
    for strategy, row in table.items():
        lines.append(strategy + "," + ",".join(f"{row[c]:.6f}" for c in LOOKUP_COLUMNS))
    text = "\n".join(lines) + "\n"
    cfg.output.mkdir(parents=True, exist_ok=True)
    _write_text(cfg.output / "compare_lookup.csv", text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_ablate_hops(args) -> int:
    cfg = _experiment(args)
    seeds = _seed_list(cfg, args.seeds)
    graph = cfg.load_graph()
    runs = ablate_hops(graph, cfg.stage1, cfg.stage2, seeds)
    lines = ["hops,variant,test_acc,seed_min,seed_max"]
    for (h, variant), accs in runs.items():
        lines.append(f"{h},{variant},{np.mean(accs):.6f},{min(accs):.6f},{max(accs):.6f}")
    text = "\n".join(lines) + "\n"
    cfg.output.mkdir(parents=True, exist_ok=True)
    _write_text(cfg.output / "ablate_hops.csv", text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_gumbel_check(args) -> int:
    if args.k < 1 or args.samples < 1 or not args.tolerance > 0:
        raise UsageError("--k and --samples must be >= 1 and --tolerance > 0")
    logits = rngs.stream(args.seed, "gumbel-check-logits").standard_normal(args.k)
    probs = softmax(logits)
    freq = gumbel_argmax_frequencies(logits, args.samples, rngs.stream(args.seed, "gumbel-check"))
    tv = 0.5 * float(np.abs(freq - probs).sum())
    fmt = lambda a: " ".join(f"{v:.6f}" for v in a)
    print(f"logits: {fmt(logits)}")
    print(f"softmax: {fmt(probs)}")
    print(f"empirical: {fmt(freq)}")
    ok = tv < args.tolerance
    print(f"tv: {tv:.6f} ({'<' if ok else '>='} {args.tolerance})")
    return EXIT_OK if ok else EXIT_FAIL


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="langtopo", description="Two-stage codebook alignment on graphs.")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("--config", help="INI experiment config")
        p.add_argument("--seed", type=int, help="override the global seed")
        p.add_argument("--output", help="override the output directory")
        return p

    p = sub.add_parser("gen-sbm", help="write a stochastic block model dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=300)
    p.add_argument("--blocks", type=int, default=3)
    p.add_argument("--p-in", type=float, default=0.1)
    p.add_argument("--p-out", type=float, default=0.01)
    p.add_argument("--d-in", type=int, default=16)
    p.add_argument("--text-signal", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_sbm)

    p = with_config(sub.add_parser("train-stage1", help="train encoders and codebook"))
    p.add_argument("--epochs", dest="epochs1", type=int)
    p.set_defaults(func=cmd_train_stage1)

    p = with_config(sub.add_parser("train-stage2", help="train the student"))
    p.add_argument("--epochs", dest="epochs2", type=int)
    p.add_argument("--hops", type=int)
    p.add_argument("--no-align", action="store_true", help="cross-entropy only")
    p.set_defaults(func=cmd_train_stage2)

    p = with_config(sub.add_parser("eval", help="accuracy of a trained student"))
    p.add_argument("--student", help="student checkpoint directory")
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--hops", type=int)
    p.add_argument("--no-align", action="store_true", help="evaluate the unaligned student")
    p.set_defaults(func=cmd_eval)

    p = with_config(sub.add_parser("compare-lookup", help="codebook lookup strategy table"))
    p.add_argument("--seeds", type=int, default=1)
    p.add_argument("--epochs", dest="epochs1", type=int)
    p.set_defaults(func=cmd_compare_lookup)

    p = with_config(sub.add_parser("ablate-hops", help="hops x alignment accuracy table"))
    p.add_argument("--seeds", type=int, default=1)
    p.set_defaults(func=cmd_ablate_hops)

    p = sub.add_parser("gumbel-check", help="Monte Carlo check of the Gumbel-max trick")
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--samples", type=int, default=200_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=0.02)
    p.set_defaults(func=cmd_gumbel_check)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, UsageError, GraphFormatError, OSError) as exc:
        _log(f"error: {exc}")
        return EXIT_USAGE
    except TrainingError as exc:
        _log(f"training failed: {exc}")
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
