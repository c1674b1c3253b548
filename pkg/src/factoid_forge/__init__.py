"""Desk-scale continual-memorization laboratory."""

__version__ = "0.1.0"

from .corpus import (
    Dataset,
    Example,
    OverlapReport,
    check_overlap,
    gen_arithmetic_nonfactoid,
    gen_kvr,
    gen_random_word_sequences,
    gen_templated_factoids,
    load_dataset,
    load_generic_corpus,
    save_dataset,
)
from .diagnostics import (
    DeltaEstimate,
    GradAlignment,
    ProbeHistogram,
    delta2_estimate,
    grad_alignment,
    logit_lens,
)
from .evaluation import EvalReport, exact_match, filter_unfamiliar, predict
from .model import (
    ForwardTrace,
    Model,
    ModelConfig,
    forward,
    gradient,
    init_model,
    load_model,
    loss,
    param_count,
    save_model,
)
from .optim import Adam, OptimizerConfig
from .tokenizer import Tokenizer, build_tokenizer
from .training import (
    PipelineRecord,
    StageResult,
    StageSpec,
    StopRule,
    StrategySpec,
    assemble_stage_data,
    mix,
    replay_subset,
    run_pipeline,
    train_stage,
)
