#!/usr/bin/env python3
"""Three-stage continual memorization: KVR, then two further datasets
(a disjoint KVR split and arithmetic), with or without stage-1 mixing.
Retention of the stage-1 factoids is evaluated after every stage.
"""

import argparse
import json
import os

from factoid_forge.runner import config_from_dict, emit_report, run_experiment


def build_config(args, run_id, with_mixing):
    stage1_strategy = (
        {"kind": "remix", "mix_source": "randwords", "mix_ratio": [1, 2]}
        if with_mixing else {"kind": "none"}
    )
    stage1_stop = (
        {"mode": "fixed_epochs", "max_epochs": args.stage1_epochs}
        if with_mixing else
        {"mode": "accuracy_target", "threshold": 1.0, "max_epochs": args.stage1_epochs}
    )
    return {
        "run_id": run_id,
        "model": {"n_layers": args.layers, "d_model": 128, "n_heads": 4,
                  "d_ff": 512, "max_seq_len": 192},
        "datasets": [
            {"id": "da", "generator": "kvr",
             "params": {"n": args.pairs, "key_len": 8, "val_len": 8, "seed": 101}},
            {"id": "db", "generator": "kvr",
             "params": {"n": args.pairs, "key_len": 8, "val_len": 8, "seed": 202}},
            {"id": "dc", "generator": "arithmetic",
             "params": {"n": args.pairs, "max_operand": 99, "seed": 505}},
            {"id": "randwords", "generator": "random_words",
             "params": {"n": 2 * args.pairs, "words_per_seq": 5, "seed": 303}},
        ],
        "stages": [
            {"dataset": "da", "strategy": stage1_strategy, "stop": stage1_stop,
             "optimizer": {"learning_rate": 5e-4 if with_mixing else 1e-3, "batch_size": 32}},
            {"dataset": "db",
             "stop": {"mode": "fixed_epochs", "max_epochs": args.later_epochs},
             "optimizer": {"learning_rate": 3e-4, "batch_size": 32}},
            {"dataset": "dc",
             "stop": {"mode": "fixed_epochs", "max_epochs": args.later_epochs},
             "optimizer": {"learning_rate": 3e-4, "batch_size": 32}},
        ],
        "eval_on": "da",
        "seeds": list(range(1, args.seeds + 1)),
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--pairs", type=int, default=200)
    parser.add_argument("--layers", type=int, default=4)
    parser.add_argument("--stage1-epochs", type=int, default=60)
    parser.add_argument("--later-epochs", type=int, default=20)
    parser.add_argument("--seeds", type=int, default=3)
    parser.add_argument("--out", default=os.environ.get("FACTOID_FORGE_OUT", "runs"))
    parser.add_argument("--workers", type=int, default=1)
    args = parser.parse_args()

    for run_id, with_mixing in (("three_stage_none", False), ("three_stage_remix", True)):
        raw = build_config(args, run_id, with_mixing)
        cfg = config_from_dict(raw)
        os.makedirs(os.path.join(args.out, run_id), exist_ok=True)
        with open(os.path.join(args.out, run_id, "config.json"), "w") as fh:
            json.dump(raw, fh, indent=2)
        report = run_experiment(cfg, args.out, workers=args.workers)
        paths = emit_report(report, args.out)
        print(f"{run_id}: {paths['results_csv']}")


if __name__ == "__main__":
    main()
