#!/usr/bin/env python3
"""Mixing-strategy matrix for KVR -> disjoint KVR: no mixing, random words at
stage 1, generic text at stage 2, and both. Mirrors the main comparison plus
the mixing-data-source comparison (swap --generic-source to any text file).
"""

import argparse
import json
import os

from factoid_forge.runner import config_from_dict, emit_report, run_experiment


def base_config(args, run_id):
    return {
        "run_id": run_id,
        "model": {"n_layers": args.layers, "d_model": 128, "n_heads": 4,
                  "d_ff": args.d_ff, "max_seq_len": 384},
        "datasets": [
            {"id": "da", "generator": "kvr",
             "params": {"n": args.pairs, "key_len": 8, "val_len": 8, "seed": 101}},
            {"id": "db", "generator": "kvr",
             "params": {"n": args.pairs, "key_len": 8, "val_len": 8, "seed": 202}},
            {"id": "randwords", "generator": "random_words",
             "params": {"n": 2 * args.pairs, "words_per_seq": args.words_per_seq, "seed": 303}},
            {"id": "generic", "generator": "generic_text",
             "params": {"n": 2 * args.pairs, "words_per_passage": 30, "split_fraction": 0.5,
                        "seed": 404, "path": args.generic_source}},
        ],
        "eval_on": "da",
        "seeds": list(range(1, args.seeds + 1)),
        "diagnostics": {"logit_lens": {"enabled": True, "k": 10}},
    }


def stage(dataset, strategy, stop, lr, batch=32):
    return {"dataset": dataset, "strategy": strategy, "stop": stop,
            "optimizer": {"learning_rate": lr, "batch_size": batch}}


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--pairs", type=int, default=200)
    parser.add_argument("--layers", type=int, default=4)
    parser.add_argument("--d-ff", type=int, default=512)
    parser.add_argument("--words-per-seq", type=int, default=5)
    parser.add_argument("--generic-source", default=None,
                        help="plain-text corpus (default: bundled sample)")
    parser.add_argument("--stage1-epochs", type=int, default=60)
    parser.add_argument("--stage2-epochs", type=int, default=20)
    parser.add_argument("--seeds", type=int, default=3)
    parser.add_argument("--out", default=os.environ.get("FACTOID_FORGE_OUT", "runs"))
    parser.add_argument("--workers", type=int, default=1)
    args = parser.parse_args()

    s1_plain = {"mode": "accuracy_target", "threshold": 1.0, "max_epochs": args.stage1_epochs}
    s1_mixed = {"mode": "fixed_epochs", "max_epochs": args.stage1_epochs}
    s2 = {"mode": "fixed_epochs", "max_epochs": args.stage2_epochs}
    none = {"kind": "none"}
    rand_s1 = {"kind": "remix", "mix_source": "randwords", "mix_ratio": [1, 2]}
    gen_s2 = {"kind": "remix", "mix_source": "generic", "mix_ratio": [1, 2]}

    matrix = {
        "mix_none": [stage("da", none, s1_plain, 1e-3), stage("db", none, s2, 3e-4)],
        "mix_rand_s1": [stage("da", rand_s1, s1_mixed, 5e-4), stage("db", none, s2, 3e-4)],
        "mix_gen_s2": [stage("da", none, s1_plain, 1e-3), stage("db", gen_s2, s2, 3e-4)],
        "mix_both": [stage("da", rand_s1, s1_mixed, 5e-4), stage("db", gen_s2, s2, 3e-4)],
    }
    for run_id, stages in matrix.items():
        raw = base_config(args, run_id)
        raw["stages"] = stages
        cfg = config_from_dict(raw)
        os.makedirs(os.path.join(args.out, run_id), exist_ok=True)
        with open(os.path.join(args.out, run_id, "config.json"), "w") as fh:
            json.dump(raw, fh, indent=2)
        report = run_experiment(cfg, args.out, workers=args.workers)
        paths = emit_report(report, args.out)
        print(f"{run_id}: {paths['results_csv']}")


if __name__ == "__main__":
    main()
