"""Config-driven experiment matrix execution and persistence.

An experiment config is a JSON file describing the model, the datasets to
generate, the training stages (with mitigation strategies), the evaluation
target, the seeds, and which diagnostics to run. `run_experiment` executes
the pipeline once per seed, probes the stage checkpoints, and writes three
files: results.csv (long format, one metric per row), report.json (full
detail), and manifest.json (config + hashes). Re-running the same config
reproduces results.csv byte for byte; nothing time-dependent is recorded.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, asdict

import numpy as np

from . import __version__
from .corpus import (
    Dataset,
    KIND_FACTOID,
    bundled_corpus_path,
    default_wordlist,
    gen_arithmetic_nonfactoid,
    gen_kvr,
    gen_random_word_sequences,
    gen_templated_factoids,
    load_generic_corpus,
)
from .diagnostics import delta2_estimate, grad_alignment, logit_lens
from .errors import ConfigError
from .model import ModelConfig, frame_pair, load_model
from .optim import OptimizerConfig
from .seeding import derive_seed
from .tokenizer import Tokenizer, build_tokenizer
from .training import StageSpec, StopRule, StrategySpec, run_pipeline

CSV_COLUMNS = ("run_id", "seed", "stage_index", "stage_dataset", "strategy", "metric", "value")

_GENERATOR_KINDS = {
    "kvr": KIND_FACTOID,
    "templated": KIND_FACTOID,
    "random_words": "mix_random",
    "generic_text": "mix_generic",
    "arithmetic": "nonfactoid",
}


@dataclass(frozen=True)
class DiagnosticsConfig:
    logit_lens: bool = False
    logit_lens_k: int = 10
    grad_alignment: bool = False
    grad_sample: int | None = 64
    delta2: bool = False
    delta2_sample: int | None = 64
    eta: float | None = None   # defaults to the stage's learning rate


@dataclass(frozen=True)
class ExperimentConfig:
    run_id: str
    tokenizer_mode: str
    model: dict                 # ModelConfig fields minus vocab_size/seed
    datasets: tuple             # (id, generator, params-dict)
    stages: tuple[StageSpec, ...]
    eval_on: str
    seeds: tuple[int, ...]
    diagnostics: DiagnosticsConfig
    raw: dict                   # normalized JSON form (defaults filled)


@dataclass(frozen=True)
class ExperimentReport:
    rows: tuple          # dict rows matching CSV_COLUMNS
    detail: dict         # per-seed stage results, curves, probe records
    config: dict         # normalized config
    config_hash: str
    version: str


def _fail(path: str, message: str):
    raise ConfigError(f"{path}: {message}")


def _check_keys(obj: dict, path: str, required: dict, optional: dict):
    if not isinstance(obj, dict):
        _fail(path, f"expected an object, got {type(obj).__name__}")
    for key in obj:
        if key not in required and key not in optional:
            _fail(path, f"unknown key {key!r}")
    for key in required:
        if key not in obj:
            _fail(path, f"missing required key {key!r}")
    out = dict(obj)
    for key, default in optional.items():
        out.setdefault(key, default)
    return out


def _int(value, path, minimum=None):
    if isinstance(value, bool) or not isinstance(value, int):
        _fail(path, "expected an integer")
    if minimum is not None and value < minimum:
        _fail(path, f"must be >= {minimum}")
    return value


def _num(value, path):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        _fail(path, "expected a number")
    return float(value)


_GEN_PARAM_SPECS = {
    "kvr": {"required": ("n", "key_len", "val_len", "seed"), "optional": {}},
    "templated": {"required": ("n", "n_subjects", "n_relations", "seed"), "optional": {}},
    "random_words": {"required": ("n", "words_per_seq", "seed"), "optional": {"wordlist_path": None}},
    "generic_text": {
        "required": ("n", "words_per_passage", "split_fraction", "seed"),
        "optional": {"path": None},
    },
    "arithmetic": {"required": ("n", "max_operand", "seed"), "optional": {}},
}


def _validate_dataset_spec(obj, path):
    out = _check_keys(obj, path, {"id": None, "generator": None, "params": None}, {})
    if not isinstance(out["id"], str) or not out["id"]:
        _fail(path + ".id", "expected a nonempty string")
    gen = out["generator"]
    if gen not in _GEN_PARAM_SPECS:
        _fail(path + ".generator", f"unknown generator {gen!r} (choices: {sorted(_GEN_PARAM_SPECS)})")
    spec = _GEN_PARAM_SPECS[gen]
    params = _check_keys(
        out["params"], path + ".params", {k: None for k in spec["required"]}, dict(spec["optional"])
    )
    out["params"] = params
    return out


def _validate_strategy(obj, path, prior_kinds):
    out = _check_keys(
        obj, path, {"kind": None},
        {"replay_ratio": None, "mix_source": None, "mix_ratio": None},
    )
    kind = out["kind"]
    if kind not in ("none", "replay", "remix"):
        _fail(path + ".kind", f"unknown strategy {kind!r}")
    if kind == "replay":
        if out["replay_ratio"] is None:
            _fail(path, "replay strategy needs replay_ratio")
        if KIND_FACTOID not in prior_kinds:
            _fail(path, "replay strategy needs an earlier factoid stage")
    if kind == "remix":
        if out["mix_source"] is None or out["mix_ratio"] is None:
            _fail(path, "remix strategy needs mix_source and mix_ratio")
        ratio = out["mix_ratio"]
        if (
            not isinstance(ratio, list)
            or len(ratio) != 2
            or any(isinstance(v, bool) or not isinstance(v, int) for v in ratio)
        ):
            _fail(path + ".mix_ratio", "expected a pair of integer counts [a, b]")
    return out


def _default_stop(stage_index: int) -> dict:
    if stage_index == 1:
        return {"mode": "accuracy_target", "threshold": 1.0, "max_epochs": 200}
    return {"mode": "loss_threshold", "threshold": 1e-4, "max_epochs": 200}


def normalize_config(obj: dict) -> dict:
    """Validate a raw JSON config and fill documented defaults."""
    out = _check_keys(
        obj, "config",
        {"run_id": None, "model": None, "datasets": None, "stages": None, "eval_on": None},
        {"tokenizer": {"mode": "char"}, "seeds": [1, 2, 3], "diagnostics": {}},
    )
    if not isinstance(out["run_id"], str) or not out["run_id"]:
        _fail("config.run_id", "expected a nonempty string")
    tok = _check_keys(out["tokenizer"], "config.tokenizer", {}, {"mode": "char"})
    if tok["mode"] not in ("char", "word"):
        _fail("config.tokenizer.mode", "expected 'char' or 'word'")
    out["tokenizer"] = tok

    model = _check_keys(
        out["model"], "config.model",
        {"n_layers": None, "d_model": None, "n_heads": None, "d_ff": None, "max_seq_len": None},
        {},
    )
    for key in model:
        _int(model[key], f"config.model.{key}", minimum=1)
    out["model"] = model

    if not isinstance(out["datasets"], list) or not out["datasets"]:
        _fail("config.datasets", "expected a nonempty list")
    ids = []
    datasets = []
    for i, spec in enumerate(out["datasets"]):
        spec = _validate_dataset_spec(spec, f"config.datasets[{i}]")
        if spec["id"] in ids:
            _fail(f"config.datasets[{i}].id", f"duplicate dataset id {spec['id']!r}")
        ids.append(spec["id"])
        datasets.append(spec)
    out["datasets"] = datasets
    kind_of = {spec["id"]: _GENERATOR_KINDS[spec["generator"]] for spec in datasets}

    if not isinstance(out["stages"], list) or not out["stages"]:
        _fail("config.stages", "expected a nonempty list")
    stages = []
    prior_kinds: list[str] = []
    for i, stage in enumerate(out["stages"]):
        path = f"config.stages[{i}]"
        stage = _check_keys(
            stage, path, {"dataset": None},
            {"strategy": {"kind": "none"}, "stop": _default_stop(i + 1), "optimizer": {}},
        )
        if stage["dataset"] not in kind_of:
            _fail(path + ".dataset", f"undefined dataset id {stage['dataset']!r}")
        stage["strategy"] = _validate_strategy(stage["strategy"], path + ".strategy", prior_kinds)
        if stage["strategy"]["kind"] == "remix" and stage["strategy"]["mix_source"] not in kind_of:
            _fail(path + ".strategy.mix_source", f"undefined dataset id {stage['strategy']['mix_source']!r}")
        stop = _check_keys(
            stage["stop"], path + ".stop",
            {"mode": None}, {"threshold": 0.0, "max_epochs": 200},
        )
        if stop["mode"] not in ("loss_threshold", "fixed_epochs", "accuracy_target"):
            _fail(path + ".stop.mode", f"unknown stop mode {stop['mode']!r}")
        _int(stop["max_epochs"], path + ".stop.max_epochs", minimum=1)
        _num(stop["threshold"], path + ".stop.threshold")
        stage["stop"] = stop
        opt = _check_keys(
            stage["optimizer"], path + ".optimizer", {},
            {"learning_rate": 3e-4, "betas": [0.9, 0.999], "epsilon": 1e-8,
             "batch_size": 32, "seed": None},
        )
        _num(opt["learning_rate"], path + ".optimizer.learning_rate")
        _int(opt["batch_size"], path + ".optimizer.batch_size", minimum=1)
        stage["optimizer"] = opt
        stages.append(stage)
        prior_kinds.append(kind_of[stage["dataset"]])
    out["stages"] = stages

    if out["eval_on"] not in kind_of:
        _fail("config.eval_on", f"undefined dataset id {out['eval_on']!r}")
    if kind_of[out["eval_on"]] != KIND_FACTOID:
        _fail("config.eval_on", "evaluation target must be a factoid dataset")
    if out["eval_on"] != out["stages"][0]["dataset"]:
        _fail("config.eval_on", "evaluation target must be the stage-1 dataset")

    if not isinstance(out["seeds"], list) or not out["seeds"]:
        _fail("config.seeds", "expected a nonempty list of integers")
    for i, s in enumerate(out["seeds"]):
        _int(s, f"config.seeds[{i}]")
    if len(set(out["seeds"])) != len(out["seeds"]):
        _fail("config.seeds", "seeds must be distinct")

    diag = _check_keys(
        out["diagnostics"], "config.diagnostics",
        {},
        {"logit_lens": {}, "grad_alignment": {}, "delta2": {}},
    )
    ll = _check_keys(diag["logit_lens"], "config.diagnostics.logit_lens", {}, {"enabled": False, "k": 10})
    ga = _check_keys(diag["grad_alignment"], "config.diagnostics.grad_alignment", {}, {"enabled": False, "sample": 64})
    d2 = _check_keys(diag["delta2"], "config.diagnostics.delta2", {}, {"enabled": False, "sample": 64, "eta": None})
    diag = {"logit_lens": ll, "grad_alignment": ga, "delta2": d2}
    out["diagnostics"] = diag
    return out


def load_config(path) -> ExperimentConfig:
    """Load, validate, and default-fill an experiment config file."""
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: not valid JSON ({err})") from err
    return config_from_dict(obj)


def config_from_dict(obj: dict) -> ExperimentConfig:
    raw = normalize_config(obj)
    diag = raw["diagnostics"]
    stages = tuple(
        StageSpec(
            dataset=s["dataset"],
            strategy=StrategySpec(
                kind=s["strategy"]["kind"],
                replay_ratio=s["strategy"]["replay_ratio"],
                mix_source=s["strategy"]["mix_source"],
                mix_ratio=tuple(s["strategy"]["mix_ratio"]) if s["strategy"]["mix_ratio"] else None,
            ),
            stop=StopRule(
                mode=s["stop"]["mode"],
                threshold=float(s["stop"]["threshold"]),
                max_epochs=s["stop"]["max_epochs"],
            ),
            optimizer=OptimizerConfig(
                learning_rate=float(s["optimizer"]["learning_rate"]),
                betas=tuple(s["optimizer"]["betas"]),
                epsilon=float(s["optimizer"]["epsilon"]),
                batch_size=s["optimizer"]["batch_size"],
                seed=0 if s["optimizer"]["seed"] is None else s["optimizer"]["seed"],
            ),
        )
        for s in raw["stages"]
    )
    return ExperimentConfig(
        run_id=raw["run_id"],
        tokenizer_mode=raw["tokenizer"]["mode"],
        model=dict(raw["model"]),
        datasets=tuple((d["id"], d["generator"], dict(d["params"])) for d in raw["datasets"]),
        stages=stages,
        eval_on=raw["eval_on"],
        seeds=tuple(raw["seeds"]),
        diagnostics=DiagnosticsConfig(
            logit_lens=diag["logit_lens"]["enabled"],
            logit_lens_k=diag["logit_lens"]["k"],
            grad_alignment=diag["grad_alignment"]["enabled"],
            grad_sample=diag["grad_alignment"]["sample"],
            delta2=diag["delta2"]["enabled"],
            delta2_sample=diag["delta2"]["sample"],
            eta=diag["delta2"]["eta"],
        ),
        raw=raw,
    )


def build_datasets(cfg: ExperimentConfig) -> dict[str, Dataset]:
    registry: dict[str, Dataset] = {}
    for did, gen, params in cfg.datasets:
        if gen == "kvr":
            ds = gen_kvr(params["n"], params["key_len"], params["val_len"], params["seed"], dataset_id=did)
        elif gen == "templated":
            ds = gen_templated_factoids(
                params["n"], params["n_subjects"], params["n_relations"], params["seed"], dataset_id=did
            )
        elif gen == "random_words":
            if params["wordlist_path"]:
                with open(params["wordlist_path"], encoding="utf-8") as fh:
                    words = [w for w in fh.read().split("\n") if w.strip()]
            else:
                words = default_wordlist()
            ds = gen_random_word_sequences(
                params["n"], params["words_per_seq"], words, params["seed"], dataset_id=did
            )
        elif gen == "generic_text":
            path = params["path"] or bundled_corpus_path()
            ds = load_generic_corpus(
                path, params["n"], params["words_per_passage"],
                params["split_fraction"], params["seed"], dataset_id=did,
            )
        else:
            ds = gen_arithmetic_nonfactoid(params["n"], params["max_operand"], params["seed"], dataset_id=did)
        registry[did] = ds
    return registry


def build_tokenizer_for(cfg: ExperimentConfig, registry: dict[str, Dataset]) -> Tokenizer:
    if cfg.tokenizer_mode == "char":
        return build_tokenizer("char")
    samples = []
    for ds in registry.values():
        samples.extend(ds.texts())
    return build_tokenizer("word", samples)


def _required_seq_len(tok: Tokenizer, registry) -> int:
    longest = 0
    for ds in registry.values():
        for ex in ds.examples:
            longest = max(longest, len(frame_pair(tok.encode(ex.prompt), tok.encode(ex.response))))
    return longest


def _seed_stages(cfg: ExperimentConfig, run_seed: int) -> list[StageSpec]:
    """Fill in derived per-run optimizer seeds where the config left them out."""
    stages = []
    for idx, stage in enumerate(cfg.stages, start=1):
        raw_seed = cfg.raw["stages"][idx - 1]["optimizer"]["seed"]
        seed = raw_seed if raw_seed is not None else derive_seed(run_seed, "optim", idx)
        stages.append(
            StageSpec(
                dataset=stage.dataset,
                strategy=stage.strategy,
                stop=stage.stop,
                optimizer=OptimizerConfig(
                    learning_rate=stage.optimizer.learning_rate,
                    betas=stage.optimizer.betas,
                    epsilon=stage.optimizer.epsilon,
                    batch_size=stage.optimizer.batch_size,
                    seed=seed,
                ),
            )
        )
    return stages


def run_single_seed(cfg: ExperimentConfig, run_seed: int, out_dir: str) -> dict:
    """Run the full pipeline plus diagnostics for one seed.

    Returns {"rows": [...], "detail": {...}} with rows in CSV long format.
    Pure function of (cfg, run_seed) up to the checkpoint files it writes.
    """
    registry = build_datasets(cfg)
    tok = build_tokenizer_for(cfg, registry)
    need = _required_seq_len(tok, registry)
    if need > cfg.model["max_seq_len"]:
        raise ConfigError(
            f"config.model.max_seq_len={cfg.model['max_seq_len']} is too small; "
            f"the longest framed example needs {need}"
        )
    model_cfg = ModelConfig(
        vocab_size=tok.vocab_size,
        seed=derive_seed(run_seed, "model-init"),
        **cfg.model,
    )
    stages = _seed_stages(cfg, run_seed)
    ckpt_dir = os.path.join(out_dir, cfg.run_id, f"seed{run_seed}")
    _, records = run_pipeline(model_cfg, stages, registry, cfg.eval_on, tok, checkpoint_dir=ckpt_dir)

    rows: list[dict] = []
    detail: dict = {"seed": run_seed, "stages": []}

    def add_row(stage_idx, metric, value):
        stage = cfg.stages[stage_idx - 1]
        rows.append({
            "run_id": cfg.run_id,
            "seed": str(run_seed),
            "stage_index": str(stage_idx),
            "stage_dataset": stage.dataset,
            "strategy": stage.strategy.kind,
            "metric": metric,
            "value": repr(float(value)),
        })

    for rec in records:
        add_row(rec.stage_index, "accuracy", rec.accuracy)
        add_row(rec.stage_index, "epochs_run", rec.result.epochs_run)
        add_row(rec.stage_index, "final_train_loss", rec.result.train_curve[-1][1])
        detail["stages"].append({
            "stage_index": rec.stage_index,
            "accuracy": rec.accuracy,
            "epochs_run": rec.result.epochs_run,
            "stop_reason": rec.result.stop_reason,
            "events": list(rec.result.events),
            "checkpoint": rec.result.checkpoint_path,
            "train_curve": [[s, v] for s, v in rec.result.train_curve],
        })

    diag = cfg.diagnostics
    eval_data = registry[cfg.eval_on]
    if diag.logit_lens or diag.grad_alignment or diag.delta2:
        diag_detail = []
        for rec in records:
            stage_idx = rec.stage_index
            entry: dict = {"stage_index": stage_idx}
            ckpt = load_model(rec.result.checkpoint_path)
            if diag.logit_lens:
                hist = logit_lens(ckpt, tok, eval_data, diag.logit_lens_k)
                for layer, freq in enumerate(hist.per_layer_frequency):
                    add_row(stage_idx, f"probe_freq_layer_{layer}", freq)
                add_row(stage_idx, "probe_coverage", hist.coverage)
                entry["logit_lens"] = {
                    "per_layer_frequency": list(hist.per_layer_frequency),
                    "coverage": hist.coverage,
                    "k": hist.k,
                }
            if stage_idx >= 2 and (diag.grad_alignment or diag.delta2):
                prev = load_model(records[stage_idx - 2].result.checkpoint_path)
                stage = cfg.stages[stage_idx - 1]
                d_b = registry[stage.dataset]
                diag_seed = derive_seed(run_seed, "diag", stage_idx)
                if diag.grad_alignment:
                    align = grad_alignment(prev, tok, eval_data, d_b, sample=diag.grad_sample, seed=diag_seed)
                    add_row(stage_idx, "grad_dot", align.dot)
                    add_row(stage_idx, "grad_cosine", align.cosine)
                    add_row(stage_idx, "grad_norm_a", align.norm_a)
                    add_row(stage_idx, "grad_norm_b", align.norm_b)
                    entry["grad_alignment"] = asdict(align)
                if diag.delta2:
                    d_m = None
                    if stage.strategy.kind == "remix":
                        d_m = registry[stage.strategy.mix_source]
                    eta = diag.eta if diag.eta is not None else stage.optimizer.learning_rate
                    est = delta2_estimate(
                        prev, tok, eval_data, d_b, d_m, eta, sample=diag.delta2_sample, seed=diag_seed
                    )
                    add_row(stage_idx, "delta2", est.delta2)
                    add_row(stage_idx, "delta2_term_mixed", est.terms.mixed)
                    add_row(stage_idx, "delta2_term_plain", est.terms.plain)
                    entry["delta2"] = {
                        "delta2": est.delta2, "eta": est.eta,
                        "mixed": est.terms.mixed, "plain": est.terms.plain,
                    }
            diag_detail.append(entry)
        detail["diagnostics"] = diag_detail
    return {"rows": rows, "detail": detail}


def _canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(raw_config: dict) -> str:
    return hashlib.sha256(_canonical_json(raw_config).encode("utf-8")).hexdigest()


def run_experiment(cfg: ExperimentConfig, out_dir: str, workers: int = 1) -> ExperimentReport:
    """Run every seed (optionally in parallel) and aggregate.

    A failed seed is recorded in the report and does not stop the others.
    """
    results: dict[int, dict] = {}
    failures: dict[int, str] = {}
    if workers > 1 and len(cfg.seeds) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {
                seed: pool.submit(run_single_seed, cfg, seed, out_dir) for seed in cfg.seeds
            }
            for seed, fut in futures.items():
                try:
                    results[seed] = fut.result()
                except Exception as err:  # recorded per-seed, other seeds proceed
                    failures[seed] = f"{type(err).__name__}: {err}"
    else:
        for seed in cfg.seeds:
            try:
                results[seed] = run_single_seed(cfg, seed, out_dir)
            except Exception as err:
                failures[seed] = f"{type(err).__name__}: {err}"
    if not results and failures:
        raise RuntimeError(f"all seeds failed: {failures}")

    rows: list[dict] = []
    for seed in cfg.seeds:
        if seed in results:
            rows.extend(results[seed]["rows"])

    # aggregate mean/std across seeds for every (stage, metric)
    by_key: dict[tuple[str, str], list[float]] = {}
    order: list[tuple[str, str]] = []
    meta: dict[tuple[str, str], tuple[str, str]] = {}
    for row in rows:
        key = (row["stage_index"], row["metric"])
        if key not in by_key:
            by_key[key] = []
            order.append(key)
            meta[key] = (row["stage_dataset"], row["strategy"])
        by_key[key].append(float(row["value"]))
    agg_rows = []
    for key in order:
        values = np.array(by_key[key])
        stage_dataset, strategy = meta[key]
        for label, value in (
            ("mean", float(values.mean())),
            ("std", float(values.std(ddof=1)) if len(values) > 1 else 0.0),
        ):
            agg_rows.append({
                "run_id": cfg.run_id,
                "seed": label,
                "stage_index": key[0],
                "stage_dataset": stage_dataset,
                "strategy": strategy,
                "metric": key[1],
                "value": repr(value),
            })
    detail = {
        "per_seed": [results[s]["detail"] for s in cfg.seeds if s in results],
        "failures": {str(s): msg for s, msg in failures.items()},
    }
    return ExperimentReport(
        rows=tuple(rows + agg_rows),
        detail=detail,
        config=cfg.raw,
        config_hash=config_hash(cfg.raw),
        version=__version__,
    )


def render_csv(report: ExperimentReport) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in report.rows:
        writer.writerow(row)
    return buf.getvalue()


def emit_report(report: ExperimentReport, out_dir: str) -> dict[str, str]:
    """Write results.csv, report.json, and manifest.json; returns their paths."""
    target = os.path.join(out_dir, report.config["run_id"])
    os.makedirs(target, exist_ok=True)
    paths = {
        "results_csv": os.path.join(target, "results.csv"),
        "report_json": os.path.join(target, "report.json"),
        "manifest_json": os.path.join(target, "manifest.json"),
    }
    csv_text = render_csv(report)
    with open(paths["results_csv"], "w", encoding="utf-8", newline="") as fh:
        fh.write(csv_text)
    payload = {
        "version": report.version,
        "config_hash": report.config_hash,
        "config": report.config,
        "detail": report.detail,
    }
    with open(paths["report_json"], "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    manifest = {
        "run_id": report.config["run_id"],
        "version": report.version,
        "config": report.config,
        "config_hash": report.config_hash,
        "results_sha256": hashlib.sha256(csv_text.encode("utf-8")).hexdigest(),
    }
    with open(paths["manifest_json"], "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return paths
