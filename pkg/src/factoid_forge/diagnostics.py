"""Mechanistic measurements behind the forgetting experiments.

Two families:

* Layer probing ("logit lens"): project every residual-stream state at the
  position that predicts the first response token through the final norm and
  the output embedding, and record the earliest probe point at which the
  correct token enters the decoded top-k.

* Gradient geometry: inner products and cosines between dataset gradients,
  and the first-order estimate of how mixing shifts the one-step loss change
  on the original factoids:

      delta2 = eta * (grad(B u M) . grad(A)  -  grad(B) . grad(A))

  evaluated at a fixed checkpoint. All dataset gradients are token-weighted
  means, computed on fixed seeded subsamples for tractability (pass
  sample=None for the full dataset).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import Dataset
from .errors import ConfigError, DegenerateGradientError, EmptyDatasetError
from .model import Model, forward, loss_and_grad, _layer_norm
from .seeding import make_rng
from .tokenizer import Tokenizer, BOS_ID, EOS_ID, SEP_ID


@dataclass(frozen=True)
class ProbeHistogram:
    per_layer_frequency: tuple   # length n_layers + 1; sums to 1 when coverage > 0
    coverage: float              # fraction of examples whose token ever appears
    k: int


@dataclass(frozen=True)
class GradAlignment:
    dot: float
    cosine: float
    norm_a: float
    norm_b: float


@dataclass(frozen=True)
class DeltaTerms:
    mixed: float    # grad(B u M) . grad(A)
    plain: float    # grad(B) . grad(A)


@dataclass(frozen=True)
class DeltaEstimate:
    delta2: float
    eta: float
    terms: DeltaTerms


def logit_lens(m: Model, tok: Tokenizer, d: Dataset, k: int) -> ProbeHistogram:
    """Histogram of earliest probe points where the first answer token appears.

    Probe points are the n_layers+1 residual states, each passed through the
    final norm before the output embedding. Top-k ties break toward the
    lowest token id. Frequencies are normalized by the number of
    first-occurrence events, so they sum to 1 whenever coverage > 0.
    """
    if len(d) == 0:
        raise EmptyDatasetError(f"dataset {d.id} is empty")
    if k < 1:
        raise ConfigError("k must be >= 1")
    n_points = m.config.n_layers + 1
    counts = np.zeros(n_points, dtype=np.int64)
    events = 0
    encoded = [[BOS_ID] + tok.encode(ex.prompt) + [SEP_ID] for ex in d.examples]
    first_tok = [
        (tok.encode(ex.response) or [EOS_ID])[0] for ex in d.examples
    ]
    groups: dict[int, list[int]] = {}
    for i, ids in enumerate(encoded):
        groups.setdefault(len(ids), []).append(i)
    gain = m.view("final_ln_g")
    bias = m.view("final_ln_b")
    out_embed = m.view("out_embed")
    for length, members in sorted(groups.items()):
        x = np.array([encoded[i] for i in members], dtype=np.int64)
        trace = forward(m, x)
        targets = np.array([first_tok[i] for i in members])
        hit_at = np.full(len(members), -1, dtype=np.int64)
        for point in range(n_points):
            state = trace.hidden[point][:, -1, :]
            normed, _, _ = _layer_norm(state, gain, bias)
            logits = normed @ out_embed
            topk = np.argsort(-logits, axis=-1, kind="stable")[:, :k]
            hit = (topk == targets[:, None]).any(axis=1)
            fresh = hit & (hit_at < 0)
            hit_at[fresh] = point
        for point in hit_at:
            if point >= 0:
                counts[point] += 1
                events += 1
    if events == 0:
        freq = np.zeros(n_points)
    else:
        freq = counts / events
    return ProbeHistogram(
        per_layer_frequency=tuple(float(f) for f in freq),
        coverage=events / len(d),
        k=k,
    )


def _subsample(d: Dataset, sample: int | None, seed: int):
    """Fixed seeded subsample; the stream is keyed by the dataset id, so the
    same dataset yields the same subsample regardless of which argument slot
    it occupies."""
    if sample is None or sample >= len(d):
        return list(d.examples)
    idx = make_rng(seed, "diag-subsample", d.id).choice(len(d), size=sample, replace=False)
    return [d.examples[i] for i in sorted(idx.tolist())]


def dataset_gradient(m: Model, tok: Tokenizer, examples, chunk_size: int = 32) -> np.ndarray:
    """Token-weighted mean gradient of the masked LM loss over `examples`."""
    if not examples:
        raise EmptyDatasetError("cannot take the gradient of an empty example list")
    pairs = [(tok.encode(ex.prompt), tok.encode(ex.response)) for ex in examples]
    weights = [len(r) + 1 for _, r in pairs]
    total = sum(weights)
    grad = np.zeros(m.n_params, dtype=np.float64)
    for start in range(0, len(pairs), chunk_size):
        batch = pairs[start : start + chunk_size]
        w = sum(weights[start : start + chunk_size])
        _, g = loss_and_grad(m, batch)
        grad += g * (w / total)
    return grad


def alignment_from_grads(g_a: np.ndarray, g_b: np.ndarray) -> GradAlignment:
    norm_a = float(np.linalg.norm(g_a))
    norm_b = float(np.linalg.norm(g_b))
    if norm_a == 0.0 or norm_b == 0.0:
        raise DegenerateGradientError("zero-norm gradient: cosine undefined")
    dot = float(g_a @ g_b)
    return GradAlignment(dot=dot, cosine=dot / (norm_a * norm_b), norm_a=norm_a, norm_b=norm_b)


def grad_alignment(
    m: Model,
    tok: Tokenizer,
    d_a: Dataset,
    d_b: Dataset,
    sample: int | None = 64,
    seed: int = 0,
) -> GradAlignment:
    """Dot product, cosine, and norms of the two dataset gradients."""
    if sample is not None and sample > min(len(d_a), len(d_b)):
        raise ConfigError(
            f"sample={sample} exceeds dataset sizes ({len(d_a)}, {len(d_b)})"
        )
    g_a = dataset_gradient(m, tok, _subsample(d_a, sample, seed))
    g_b = dataset_gradient(m, tok, _subsample(d_b, sample, seed))
    return alignment_from_grads(g_a, g_b)


def delta2_core(g_mixed: np.ndarray, g_plain: np.ndarray, g_a: np.ndarray, eta: float) -> DeltaEstimate:
    """First-order mixing term from precomputed gradients."""
    terms = DeltaTerms(mixed=float(g_mixed @ g_a), plain=float(g_plain @ g_a))
    return DeltaEstimate(delta2=eta * (terms.mixed - terms.plain), eta=eta, terms=terms)


def delta2_estimate(
    m: Model,
    tok: Tokenizer,
    d_a: Dataset,
    d_b: Dataset,
    d_m: Dataset | None,
    eta: float,
    sample: int | None = 64,
    seed: int = 0,
) -> DeltaEstimate:
    """delta2 at the given checkpoint; with d_m absent it is exactly zero."""
    if eta <= 0:
        raise ConfigError("eta must be > 0")
    if sample is not None and sample > min(len(d_a), len(d_b)):
        raise ConfigError(
            f"sample={sample} exceeds dataset sizes ({len(d_a)}, {len(d_b)})"
        )
    sub_a = _subsample(d_a, sample, seed)
    sub_b = _subsample(d_b, sample, seed)
    g_a = dataset_gradient(m, tok, sub_a)
    g_plain = dataset_gradient(m, tok, sub_b)
    if d_m is None or len(d_m) == 0:
        g_mixed = g_plain
    else:
        m_sample = None if sample is None else min(sample, len(d_m))
        sub_m = _subsample(d_m, m_sample, seed)
        g_mixed = dataset_gradient(m, tok, sub_b + sub_m)
    return delta2_core(g_mixed, g_plain, g_a, eta)
