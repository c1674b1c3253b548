#!/usr/bin/env python3
"""Mixing-ratio and sequence-length ablations for stage-1 random-word mixing.

Ratio grid: 1:1, 1:2, 1:4, 1:8. Length grid: 10, 25, 50, 100 words per
sequence. Each cell is its own run_id so ablation_curve figures can overlay
them.
"""

import argparse
import json
import os

from factoid_forge.runner import config_from_dict, emit_report, run_experiment

RATIOS = ((1, 1), (1, 2), (1, 4), (1, 8))
LENGTHS = (10, 25, 50, 100)


def build_config(args, run_id, ratio, words_per_seq):
    return {
        "run_id": run_id,
        "model": {"n_layers": args.layers, "d_model": 128, "n_heads": 4,
                  "d_ff": 512, "max_seq_len": args.max_seq_len},
        "datasets": [
            {"id": "da", "generator": "kvr",
             "params": {"n": args.pairs, "key_len": 8, "val_len": 8, "seed": 101}},
            {"id": "db", "generator": "kvr",
             "params": {"n": args.pairs, "key_len": 8, "val_len": 8, "seed": 202}},
            {"id": "randwords", "generator": "random_words",
             "params": {"n": ratio[1] * args.pairs, "words_per_seq": words_per_seq, "seed": 303}},
        ],
        "stages": [
            {"dataset": "da",
             "strategy": {"kind": "remix", "mix_source": "randwords", "mix_ratio": list(ratio)},
             "stop": {"mode": "fixed_epochs", "max_epochs": args.stage1_epochs},
             "optimizer": {"learning_rate": 5e-4, "batch_size": 32}},
            {"dataset": "db",
             "stop": {"mode": "fixed_epochs", "max_epochs": args.stage2_epochs},
             "optimizer": {"learning_rate": 3e-4, "batch_size": 32}},
        ],
        "eval_on": "da",
        "seeds": list(range(1, args.seeds + 1)),
    }


def run_one(args, run_id, ratio, words):
    raw = build_config(args, run_id, ratio, words)
    cfg = config_from_dict(raw)
    os.makedirs(os.path.join(args.out, run_id), exist_ok=True)
    with open(os.path.join(args.out, run_id, "config.json"), "w") as fh:
        json.dump(raw, fh, indent=2)
    report = run_experiment(cfg, args.out, workers=args.workers)
    paths = emit_report(report, args.out)
    print(f"{run_id}: {paths['results_csv']}")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--sweep", choices=("ratio", "length", "both"), default="both")
    parser.add_argument("--pairs", type=int, default=200)
    parser.add_argument("--layers", type=int, default=4)
    parser.add_argument("--words-per-seq", type=int, default=5, help="length for the ratio sweep")
    parser.add_argument("--ratio-b", type=int, default=2, help="ratio 1:b for the length sweep")
    parser.add_argument("--max-seq-len", type=int, default=1024)
    parser.add_argument("--stage1-epochs", type=int, default=60)
    parser.add_argument("--stage2-epochs", type=int, default=20)
    parser.add_argument("--seeds", type=int, default=3)
    parser.add_argument("--out", default=os.environ.get("FACTOID_FORGE_OUT", "runs"))
    parser.add_argument("--workers", type=int, default=1)
    args = parser.parse_args()

    if args.sweep in ("ratio", "both"):
        for ratio in RATIOS:
            run_one(args, f"ratio_{ratio[0]}to{ratio[1]}", ratio, args.words_per_seq)
    if args.sweep in ("length", "both"):
        for words in LENGTHS:
            run_one(args, f"len_{words}", (1, args.ratio_b), words)


if __name__ == "__main__":
    main()
