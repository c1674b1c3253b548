"""Multi-stage continual-memorization training.

Three mitigation strategies are supported for any stage after the first:
``none`` (train on the stage data as-is), ``replay`` (fold a sampled
fraction of the most recent earlier factoid dataset back in), and ``remix``
(fold in unrelated mixing data at a fixed count ratio). Assembled corpora
are shuffled deterministically; strategy ``none`` and degenerate strategies
that add nothing leave the stage dataset untouched, so a replay run with
ratio 0 is bit-identical to a plain run under shared seeds.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from .corpus import Dataset, KIND_FACTOID
from .errors import ConfigError, DivergenceError
from .evaluation import exact_match
from .model import Model, ModelConfig, init_model, loss_and_grad, save_model
from .optim import Adam, OptimizerConfig
from .seeding import derive_seed, make_rng
from .tokenizer import Tokenizer

STRATEGY_KINDS = ("none", "replay", "remix")
STOP_MODES = ("loss_threshold", "fixed_epochs", "accuracy_target")


@dataclass(frozen=True)
class StrategySpec:
    kind: str = "none"
    replay_ratio: float | None = None
    mix_source: str | None = None
    mix_ratio: tuple[int, int] | None = None

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise ConfigError(f"unknown strategy kind: {self.kind!r}")
        if self.kind == "none":
            if self.replay_ratio is not None or self.mix_source is not None or self.mix_ratio is not None:
                raise ConfigError("strategy 'none' takes no parameters")
        elif self.kind == "replay":
            if self.replay_ratio is None or not 0.0 <= self.replay_ratio <= 1.0:
                raise ConfigError("replay needs replay_ratio in [0, 1]")
            if self.mix_source is not None or self.mix_ratio is not None:
                raise ConfigError("replay takes only replay_ratio")
        else:
            if self.mix_source is None or self.mix_ratio is None:
                raise ConfigError("remix needs mix_source and mix_ratio")
            if self.replay_ratio is not None:
                raise ConfigError("remix takes no replay_ratio")
            a, b = self.mix_ratio
            if a < 1 or b < 0:
                raise ConfigError("mix_ratio a:b needs a >= 1 and b >= 0")


@dataclass(frozen=True)
class StopRule:
    mode: str
    threshold: float = 0.0
    max_epochs: int = 200

    def __post_init__(self):
        if self.mode not in STOP_MODES:
            raise ConfigError(f"unknown stop mode: {self.mode!r}")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be >= 1")


@dataclass(frozen=True)
class StageSpec:
    dataset: str
    strategy: StrategySpec
    stop: StopRule
    optimizer: OptimizerConfig


@dataclass(frozen=True)
class StageResult:
    checkpoint_path: str | None
    train_curve: tuple          # (global step, batch loss)
    epochs_run: int
    stop_reason: str            # loss_threshold | accuracy_target | max_epochs
    events: tuple = ()


@dataclass(frozen=True)
class MixResult:
    dataset: Dataset
    provenance: tuple           # "base" | "mix", aligned with dataset.examples
    cycles: int                 # times the mixing pool was reshuffled and reused


def mix_with_provenance(d: Dataset, m: Dataset, ratio: tuple[int, int], seed: int) -> MixResult:
    """Every example of `d` once, plus (b/a)*|d| examples drawn from `m`.

    Drawing is without replacement; an undersized pool is cycled with a fresh
    reshuffle per pass and the cycling is reported. The combined corpus is
    shuffled deterministically under `seed`.
    """
    a, b = ratio
    if a < 1:
        raise ConfigError("mix ratio a:b requires a >= 1")
    if b < 0:
        raise ConfigError("mix ratio a:b requires b >= 0")
    take = (b * len(d)) // a
    rng = make_rng(seed, "mix-draw")
    picks: list[int] = []
    cycles = 0
    if take > 0 and len(m) == 0:
        raise ConfigError(f"mixing source {m.id} is empty")
    while take - len(picks) >= len(m) > 0:
        picks.extend(rng.permutation(len(m)).tolist())
        cycles += 1
    remaining = take - len(picks)
    if remaining > 0:
        picks.extend(rng.choice(len(m), size=remaining, replace=False).tolist())
    examples = list(d.examples) + [m.examples[i] for i in picks]
    provenance = ["base"] * len(d) + ["mix"] * len(picks)
    order = make_rng(seed, "mix-shuffle").permutation(len(examples))
    examples = [examples[i] for i in order]
    provenance = [provenance[i] for i in order]
    mixed = Dataset(
        id=f"{d.id}+mix({m.id})x{a}:{b}",
        kind=d.kind,
        examples=tuple(examples),
        seed=seed,
    )
    return MixResult(dataset=mixed, provenance=tuple(provenance), cycles=cycles)


def mix(d: Dataset, m: Dataset, ratio: tuple[int, int], seed: int) -> Dataset:
    return mix_with_provenance(d, m, ratio, seed).dataset


def replay_subset(d_a: Dataset, r: float, seed: int) -> Dataset:
    """floor(r * |d_a|) examples sampled uniformly without replacement."""
    if not 0.0 <= r <= 1.0:
        raise ConfigError("replay ratio must lie in [0, 1]")
    k = math.floor(r * len(d_a) + 1e-9)
    idx = sorted(make_rng(seed, "replay").choice(len(d_a), size=k, replace=False).tolist()) if k else []
    return Dataset(
        id=f"{d_a.id}-replay{r}",
        kind=d_a.kind,
        examples=tuple(d_a.examples[i] for i in idx),
        seed=seed,
    )


def assemble_stage_data(
    base: Dataset,
    strategy: StrategySpec,
    prior_factoids: Dataset | None,
    registry: dict[str, Dataset],
    seed: int,
) -> tuple[Dataset, tuple]:
    """Apply the stage strategy to its base dataset.

    Returns (dataset, events). Strategy 'none' is the identity. Replay with
    an empty sampled subset is also the identity (no shuffle), which keeps a
    ratio-0 replay pipeline bit-identical to a plain one.
    """
    if strategy.kind == "none":
        return base, ()
    if strategy.kind == "replay":
        if prior_factoids is None:
            raise ConfigError("replay strategy needs a prior factoid stage")
        subset = replay_subset(prior_factoids, strategy.replay_ratio, derive_seed(seed, "replay"))
        if len(subset) == 0:
            return base, ()
        merged = list(base.examples) + list(subset.examples)
        order = make_rng(seed, "replay-shuffle").permutation(len(merged))
        out = Dataset(
            id=f"{base.id}+replay{strategy.replay_ratio}({prior_factoids.id})",
            kind=base.kind,
            examples=tuple(merged[i] for i in order),
            seed=seed,
        )
        return out, (f"replayed {len(subset)} examples from {prior_factoids.id}",)
    # remix
    source = registry.get(strategy.mix_source)
    if source is None:
        raise ConfigError(f"remix source {strategy.mix_source!r} is not a known dataset")
    result = mix_with_provenance(base, source, strategy.mix_ratio, seed)
    events = ()
    if result.cycles:
        events = (f"mixing pool {source.id} cycled {result.cycles}x with reshuffle",)
    return result.dataset, events


def _encode_pairs(tok: Tokenizer, data: Dataset) -> list[tuple[list[int], list[int]]]:
    return [(tok.encode(ex.prompt), tok.encode(ex.response)) for ex in data.examples]


def train_stage(
    model: Model,
    tok: Tokenizer,
    data: Dataset,
    stage: StageSpec,
    checkpoint_path: str | None = None,
    events: tuple = (),
) -> StageResult:
    """Shuffled mini-batch Adam training until the stage's stop rule fires.

    Updates `model` in place. The stop rule is checked at each epoch end:
    loss_threshold compares the token-weighted epoch mean training loss,
    accuracy_target greedily decodes the full stage dataset.
    """
    opt_cfg = stage.optimizer
    pairs = _encode_pairs(tok, data)
    tokens_per = [len(r) + 1 for _, r in pairs]
    rng = make_rng(opt_cfg.seed, "epoch-shuffle")
    adam = Adam(model.n_params, opt_cfg)
    curve: list[tuple[int, float]] = []
    step = 0
    stop_reason = "max_epochs"
    epochs_run = 0
    for epoch in range(1, stage.stop.max_epochs + 1):
        perm = rng.permutation(len(pairs))
        loss_sum = 0.0
        token_sum = 0
        for start in range(0, len(perm), opt_cfg.batch_size):
            batch_idx = perm[start : start + opt_cfg.batch_size]
            batch = [pairs[i] for i in batch_idx]
            value, grad = loss_and_grad(model, batch)
            if not np.isfinite(value):
                raise DivergenceError(
                    f"non-finite loss at step {step} of stage on {data.id}", curve
                )
            adam.step(model.params, grad)
            step += 1
            curve.append((step, value))
            n_tok = sum(tokens_per[i] for i in batch_idx)
            loss_sum += value * n_tok
            token_sum += n_tok
        epochs_run = epoch
        epoch_loss = loss_sum / token_sum
        if stage.stop.mode == "loss_threshold" and epoch_loss < stage.stop.threshold:
            stop_reason = "loss_threshold"
            break
        if stage.stop.mode == "accuracy_target":
            acc = exact_match(model, tok, data).accuracy
            if acc >= stage.stop.threshold:
                stop_reason = "accuracy_target"
                break
    if checkpoint_path is not None:
        os.makedirs(os.path.dirname(checkpoint_path) or ".", exist_ok=True)
        save_model(model, checkpoint_path)
    return StageResult(
        checkpoint_path=checkpoint_path,
        train_curve=tuple(curve),
        epochs_run=epochs_run,
        stop_reason=stop_reason,
        events=tuple(events),
    )


@dataclass(frozen=True)
class PipelineRecord:
    stage_index: int
    accuracy: float     # exact match on the eval_on dataset after this stage
    result: StageResult


def run_pipeline(
    model_config: ModelConfig,
    stages: list[StageSpec],
    registry: dict[str, Dataset],
    eval_on: str,
    tok: Tokenizer,
    checkpoint_dir: str | None = None,
) -> tuple[Model, list[PipelineRecord]]:
    """Train the stages in order, scoring eval_on after every stage.

    Replay stages draw from the most recent earlier stage whose base dataset
    is a factoid set. Stage checkpoints are written as stage{k}.ckpt when a
    checkpoint directory is given.
    """
    if not stages:
        raise ConfigError("pipeline needs at least one stage")
    if eval_on not in registry:
        raise ConfigError(f"eval_on dataset {eval_on!r} is not defined")
    model = init_model(model_config)
    eval_data = registry[eval_on]
    prior_factoids: Dataset | None = None
    records: list[PipelineRecord] = []
    for idx, stage in enumerate(stages, start=1):
        base = registry.get(stage.dataset)
        if base is None:
            raise ConfigError(f"stage {idx} dataset {stage.dataset!r} is not defined")
        assemble_seed = derive_seed(stage.optimizer.seed, "assemble", idx)
        data, events = assemble_stage_data(base, stage.strategy, prior_factoids, registry, assemble_seed)
        ckpt = None
        if checkpoint_dir is not None:
            ckpt = os.path.join(checkpoint_dir, f"stage{idx}.ckpt")
        result = train_stage(model, tok, data, stage, checkpoint_path=ckpt, events=events)
        accuracy = exact_match(model, tok, eval_data).accuracy
        records.append(PipelineRecord(stage_index=idx, accuracy=accuracy, result=result))
        if base.kind == KIND_FACTOID:
            prior_factoids = base
    return model, records
