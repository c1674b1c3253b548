#!/usr/bin/env python3
"""Two-stage forgetting run: memorize KVR, then train on a disjoint split.

Writes the experiment config beside the results so the run can be repeated
with `factoid-forge run --config <path>`.
"""

import argparse
import json
import os

from factoid_forge.runner import config_from_dict, emit_report, run_experiment


def build_config(args) -> dict:
    return {
        "run_id": args.run_id,
        "model": {"n_layers": args.layers, "d_model": args.d_model, "n_heads": 4,
                  "d_ff": args.d_ff, "max_seq_len": 64},
        "datasets": [
            {"id": "da", "generator": "kvr",
             "params": {"n": args.pairs, "key_len": 8, "val_len": 8, "seed": 101}},
            {"id": "db", "generator": "kvr",
             "params": {"n": args.pairs, "key_len": 8, "val_len": 8, "seed": 202}},
        ],
        "stages": [
            {"dataset": "da",
             "stop": {"mode": "accuracy_target", "threshold": 1.0, "max_epochs": 200},
             "optimizer": {"learning_rate": args.lr, "batch_size": 32}},
            {"dataset": "db",
             "stop": {"mode": "fixed_epochs", "max_epochs": args.stage2_epochs},
             "optimizer": {"learning_rate": args.stage2_lr, "batch_size": 32}},
        ],
        "eval_on": "da",
        "seeds": list(range(1, args.seeds + 1)),
        "diagnostics": {
            "logit_lens": {"enabled": True, "k": 10},
            "grad_alignment": {"enabled": True, "sample": min(64, args.pairs)},
            "delta2": {"enabled": True, "sample": min(64, args.pairs)},
        },
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--run-id", default="kvr_forgetting")
    parser.add_argument("--pairs", type=int, default=200)
    parser.add_argument("--layers", type=int, default=2)
    parser.add_argument("--d-model", type=int, default=128)
    parser.add_argument("--d-ff", type=int, default=512)
    parser.add_argument("--lr", type=float, default=1e-3)
    parser.add_argument("--stage2-lr", type=float, default=3e-4)
    parser.add_argument("--stage2-epochs", type=int, default=20)
    parser.add_argument("--seeds", type=int, default=3)
    parser.add_argument("--out", default=os.environ.get("FACTOID_FORGE_OUT", "runs"))
    parser.add_argument("--workers", type=int, default=1)
    args = parser.parse_args()

    raw = build_config(args)
    cfg = config_from_dict(raw)
    os.makedirs(os.path.join(args.out, cfg.run_id), exist_ok=True)
    config_path = os.path.join(args.out, cfg.run_id, "config.json")
    with open(config_path, "w") as fh:
        json.dump(raw, fh, indent=2)
    print(f"config: {config_path}")
    report = run_experiment(cfg, args.out, workers=args.workers)
    for name, path in emit_report(report, args.out).items():
        print(f"{name}: {path}")


if __name__ == "__main__":
    main()
