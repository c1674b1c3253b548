#!/usr/bin/env python3
"""Replay-ratio sweep over [0.0, 0.01, 0.05, 0.1] for the KVR -> KVR setting.

One run_id per ratio; results land in separate result directories that the
figures tool can overlay (ablation_curve / comparison_bars).
"""

import argparse
import json
import os

from factoid_forge.runner import config_from_dict, emit_report, run_experiment

RATIOS = (0.0, 0.01, 0.05, 0.1)


def build_config(args, ratio: float) -> dict:
    strategy = {"kind": "none"} if ratio == 0.0 else {"kind": "replay", "replay_ratio": ratio}
    return {
        "run_id": f"replay_{ratio:g}",
        "model": {"n_layers": 2, "d_model": 128, "n_heads": 4, "d_ff": 512, "max_seq_len": 64},
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
            {"dataset": "db", "strategy": strategy,
             "stop": {"mode": "fixed_epochs", "max_epochs": args.stage2_epochs},
             "optimizer": {"learning_rate": args.stage2_lr, "batch_size": 32}},
        ],
        "eval_on": "da",
        "seeds": list(range(1, args.seeds + 1)),
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--pairs", type=int, default=200)
    parser.add_argument("--lr", type=float, default=1e-3)
    parser.add_argument("--stage2-lr", type=float, default=3e-4)
    parser.add_argument("--stage2-epochs", type=int, default=20)
    parser.add_argument("--seeds", type=int, default=3)
    parser.add_argument("--out", default=os.environ.get("FACTOID_FORGE_OUT", "runs"))
    parser.add_argument("--workers", type=int, default=1)
    args = parser.parse_args()

    for ratio in RATIOS:
        raw = build_config(args, ratio)
        cfg = config_from_dict(raw)
        os.makedirs(os.path.join(args.out, cfg.run_id), exist_ok=True)
        with open(os.path.join(args.out, cfg.run_id, "config.json"), "w") as fh:
            json.dump(raw, fh, indent=2)
        report = run_experiment(cfg, args.out, workers=args.workers)
        paths = emit_report(report, args.out)
        print(f"ratio {ratio}: {paths['results_csv']}")


if __name__ == "__main__":
    main()
