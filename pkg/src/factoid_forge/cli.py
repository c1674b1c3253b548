"""Command-line surface.

Subcommands: gen-data, train, eval, probe, grad, run, report. Exit codes:
0 on success, 2 on configuration/schema errors, 1 on runtime failure. The
FACTOID_FORGE_OUT environment variable overrides the default output
directory (./runs).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from dataclasses import asdict

from .corpus import load_dataset, save_dataset
from .diagnostics import grad_alignment, logit_lens
from .errors import ConfigError
from .evaluation import exact_match
from .model import load_model
from .runner import (
    build_datasets,
    build_tokenizer_for,
    emit_report,
    load_config,
    run_experiment,
    run_single_seed,
)
from .tokenizer import Tokenizer


def _default_out() -> str:
    return os.environ.get("FACTOID_FORGE_OUT", "runs")


def _add_common(p: argparse.ArgumentParser, config=False, out=False, seed=False, workers=False):
    if config:
        p.add_argument("--config", required=True, help="experiment config JSON")
    if out:
        p.add_argument("--out", default=None, help="output directory (default: $FACTOID_FORGE_OUT or ./runs)")
    if seed:
        p.add_argument("--seed", type=int, default=None, help="run a single seed")
    if workers:
        p.add_argument("--workers", type=int, default=1, help="parallel seed workers")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="factoid-forge",
        description="Desk-scale continual-memorization experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the config's datasets as JSONL files")
    _add_common(p, config=True, out=True)
    p.add_argument("--dataset", default=None, help="only this dataset id")

    p = sub.add_parser("train", help="train the pipeline for one seed, writing checkpoints")
    _add_common(p, config=True, out=True, seed=True)

    p = sub.add_parser("eval", help="exact-match accuracy of a checkpoint on a dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True, help="dataset JSONL path")
    p.add_argument("--tokenizer", required=True, help="tokenizer JSON path")
    p.add_argument("--full", action="store_true", help="include per-example records")

    p = sub.add_parser("probe", help="logit-lens layer histogram of a checkpoint on a dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--tokenizer", required=True)
    p.add_argument("--k", type=int, default=10)

    p = sub.add_parser("grad", help="gradient alignment between two datasets at a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data-a", required=True)
    p.add_argument("--data-b", required=True)
    p.add_argument("--tokenizer", required=True)
    p.add_argument("--sample", type=int, default=64, help="subsample size (0 = full dataset)")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("run", help="run the full experiment matrix and write reports")
    _add_common(p, config=True, out=True, seed=True, workers=True)

    p = sub.add_parser("report", help="summarize a results.csv on stdout")
    p.add_argument("--csv", required=True)
    return parser


def _cmd_gen_data(args) -> int:
    cfg = load_config(args.config)
    out = args.out or _default_out()
    target = os.path.join(out, cfg.run_id, "datasets")
    os.makedirs(target, exist_ok=True)
    registry = build_datasets(cfg)
    tok = build_tokenizer_for(cfg, registry)
    tok.save(os.path.join(target, "tokenizer.json"))
    wanted = [args.dataset] if args.dataset else list(registry)
    for did in wanted:
        if did not in registry:
            raise ConfigError(f"--dataset {did!r} is not defined in the config")
        path = os.path.join(target, f"{did}.jsonl")
        save_dataset(registry[did], path)
        print(f"wrote {path} ({len(registry[did])} examples)")
    return 0


def _cmd_train(args) -> int:
    cfg = load_config(args.config)
    out = args.out or _default_out()
    seed = args.seed if args.seed is not None else cfg.seeds[0]
    registry = build_datasets(cfg)
    tok = build_tokenizer_for(cfg, registry)
    os.makedirs(os.path.join(out, cfg.run_id), exist_ok=True)
    tok.save(os.path.join(out, cfg.run_id, "tokenizer.json"))
    result = run_single_seed(cfg, seed, out)
    print(json.dumps(result["detail"], indent=2, default=str))
    return 0


def _cmd_eval(args) -> int:
    model = load_model(args.ckpt)
    tok = Tokenizer.load(args.tokenizer)
    data = load_dataset(args.data)
    report = exact_match(model, tok, data)
    payload = {"dataset": data.id, "n": len(data), "accuracy": report.accuracy}
    if args.full:
        payload["per_example"] = [
            {"prompt": p, "prediction": pred, "target": t, "correct": ok}
            for p, pred, t, ok in report.per_example
        ]
    print(json.dumps(payload, indent=2))
    return 0


def _cmd_probe(args) -> int:
    model = load_model(args.ckpt)
    tok = Tokenizer.load(args.tokenizer)
    data = load_dataset(args.data)
    hist = logit_lens(model, tok, data, args.k)
    print(json.dumps({
        "dataset": data.id,
        "k": hist.k,
        "coverage": hist.coverage,
        "per_layer_frequency": list(hist.per_layer_frequency),
    }, indent=2))
    return 0


def _cmd_grad(args) -> int:
    model = load_model(args.ckpt)
    tok = Tokenizer.load(args.tokenizer)
    d_a = load_dataset(args.data_a)
    d_b = load_dataset(args.data_b)
    sample = None if args.sample == 0 else args.sample
    align = grad_alignment(model, tok, d_a, d_b, sample=sample, seed=args.seed)
    print(json.dumps({"dataset_a": d_a.id, "dataset_b": d_b.id, **asdict(align)}, indent=2))
    return 0


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(
            cfg, seeds=(args.seed,), raw={**cfg.raw, "seeds": [args.seed]}
        )
    out = args.out or _default_out()
    report = run_experiment(cfg, out, workers=args.workers)
    registry = build_datasets(cfg)
    tok = build_tokenizer_for(cfg, registry)
    os.makedirs(os.path.join(out, cfg.run_id), exist_ok=True)
    tok.save(os.path.join(out, cfg.run_id, "tokenizer.json"))
    paths = emit_report(report, out)
    for name, path in paths.items():
        print(f"{name}: {path}")
    if report.detail["failures"]:
        print(f"seed failures: {report.detail['failures']}", file=sys.stderr)
        return 1
    return 0


def _cmd_report(args) -> int:
    import csv as _csv

    with open(args.csv, newline="", encoding="utf-8") as fh:
        rows = list(_csv.DictReader(fh))
    agg = [r for r in rows if r["seed"] in ("mean", "std")]
    if not agg:
        print("no aggregate rows found")
        return 0
    print(f"{'run_id':<24} {'stage':>5} {'strategy':<8} {'metric':<24} {'mean':>12} {'std':>12}")
    means = {(r['run_id'], r['stage_index'], r['metric']): r for r in agg if r['seed'] == 'mean'}
    stds = {(r['run_id'], r['stage_index'], r['metric']): r for r in agg if r['seed'] == 'std'}
    for key, row in means.items():
        std = stds.get(key)
        print(
            f"{row['run_id']:<24} {row['stage_index']:>5} {row['strategy']:<8} "
            f"{row['metric']:<24} {float(row['value']):>12.6g} "
            f"{float(std['value']) if std else 0.0:>12.6g}"
        )
    return 0


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "probe": _cmd_probe,
    "grad": _cmd_grad,
    "run": _cmd_run,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except Exception as err:  # runtime failure
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
