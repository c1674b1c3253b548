"""Greedy decoding, exact-match scoring, and the familiarity filter."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import Dataset, KIND_FACTOID
from .errors import ConfigError, EmptyDatasetError
from .model import Model, prefill, decode_step
from .tokenizer import Tokenizer, BOS_ID, EOS_ID, SEP_ID


@dataclass(frozen=True)
class EvalReport:
    accuracy: float
    per_example: tuple  # (prompt, prediction, target, correct)


def greedy_decode(m: Model, tok: Tokenizer, prompts, max_new_tokens: int) -> list[str]:
    """Greedy argmax decoding from ``BOS prompt SEP`` until EOS or the budget.

    Prompts are batched by equal token length so no padding is ever present
    and batched decoding matches single-prompt decoding exactly. Ties in the
    argmax resolve to the lowest token id. Generation also stops if the
    positional limit of the model is reached.
    """
    encoded = [[BOS_ID] + tok.encode(p) + [SEP_ID] for p in prompts]
    outputs: list[list[int]] = [[] for _ in prompts]
    groups: dict[int, list[int]] = {}
    for i, ids in enumerate(encoded):
        groups.setdefault(len(ids), []).append(i)
    for length, members in sorted(groups.items()):
        x = np.array([encoded[i] for i in members], dtype=np.int64)
        logits, cache = prefill(m, x)
        done = np.zeros(len(members), dtype=bool)
        for _ in range(max_new_tokens):
            nxt = logits.argmax(axis=-1)
            for j, i in enumerate(members):
                if done[j]:
                    continue
                if nxt[j] == EOS_ID:
                    done[j] = True
                else:
                    outputs[i].append(int(nxt[j]))
            if done.all() or cache.length >= m.config.max_seq_len:
                break
            logits = decode_step(m, cache, np.where(done, EOS_ID, nxt))
    return [tok.decode(ids) for ids in outputs]


def predict(m: Model, tok: Tokenizer, prompt: str, max_new_tokens: int) -> str:
    if max_new_tokens <= 0:
        return ""
    return greedy_decode(m, tok, [prompt], max_new_tokens)[0]


def default_decode_budget(tok: Tokenizer, d: Dataset) -> int:
    return max(len(tok.encode(ex.response)) for ex in d.examples) + 1


def exact_match(m: Model, tok: Tokenizer, d: Dataset, max_new_tokens: int | None = None) -> EvalReport:
    """Exact string match after trimming outer whitespace; case-sensitive."""
    if len(d) == 0:
        raise EmptyDatasetError(f"dataset {d.id} is empty")
    if max_new_tokens is None:
        max_new_tokens = default_decode_budget(tok, d)
    preds = greedy_decode(m, tok, [ex.prompt for ex in d.examples], max_new_tokens)
    rows = []
    hits = 0
    for ex, pred in zip(d.examples, preds):
        ok = pred.strip() == ex.response.strip()
        hits += ok
        rows.append((ex.prompt, pred, ex.response, ok))
    return EvalReport(accuracy=hits / len(d), per_example=tuple(rows))


def filter_unfamiliar(m: Model, tok: Tokenizer, d: Dataset) -> Dataset:
    """Keep exactly the examples the model currently gets wrong."""
    if d.kind != KIND_FACTOID:
        raise ConfigError("familiarity filtering is defined for factoid datasets")
    if len(d) == 0:
        return d
    report = exact_match(m, tok, d)
    kept = tuple(
        ex for ex, (_, _, _, ok) in zip(d.examples, report.per_example) if not ok
    )
    return Dataset(id=d.id + "-unfamiliar", kind=d.kind, examples=kept, seed=d.seed)
