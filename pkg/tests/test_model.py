import dataclasses

import numpy as np
import pytest

from factoid_forge.errors import (
    ConfigError,
    DegenerateBatchError,
    LengthError,
)
from factoid_forge.model import (
    Model,
    ModelConfig,
    build_batch,
    decode_step,
    forward,
    frame_pair,
    gradient,
    init_model,
    load_model,
    loss,
    loss_and_grad,
    param_count,
    prefill,
    save_model,
)
from factoid_forge.tokenizer import BOS_ID, EOS_ID, SEP_ID, build_tokenizer

TINY = ModelConfig(n_layers=1, d_model=8, n_heads=2, d_ff=16, max_seq_len=32, vocab_size=99, seed=5)


def closed_form_param_count(cfg):
    # audited by hand: embeddings + per-block attention/MLP/norms + head
    d, f, v, p, n = cfg.d_model, cfg.d_ff, cfg.vocab_size, cfg.max_seq_len, cfg.n_layers
    per_block = (
        2 * d            # ln1 gain+bias
        + 4 * (d * d + d)  # q, k, v, o projections with biases
        + 2 * d          # ln2 gain+bias
        + (d * f + f)    # mlp in
        + (f * d + d)    # mlp out
    )
    return v * d + p * d + n * per_block + 2 * d + d * v


def test_param_count_matches_closed_form():
    for cfg in (TINY, ModelConfig(2, 128, 4, 512, 64, 99, 0)):
        assert param_count(cfg) == closed_form_param_count(cfg)
        assert init_model(cfg).n_params == closed_form_param_count(cfg)


def test_init_is_deterministic_and_seed_sensitive():
    a = init_model(TINY)
    b = init_model(TINY)
    c = init_model(dataclasses.replace(TINY, seed=6))
    assert np.array_equal(a.params, b.params)
    assert not np.array_equal(a.params, c.params)


def test_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(n_layers=1, d_model=10, n_heads=3, d_ff=8, max_seq_len=8, vocab_size=9, seed=0)
    with pytest.raises(ConfigError):
        ModelConfig(n_layers=0, d_model=8, n_heads=2, d_ff=8, max_seq_len=8, vocab_size=9, seed=0)


def test_forward_shapes_and_softmax_rows():
    m = init_model(TINY)
    rng = np.random.default_rng(0)
    x = rng.integers(0, 99, size=(3, 7))
    trace = forward(m, x)
    assert trace.logits.shape == (3, 7, 99)
    assert len(trace.hidden) == TINY.n_layers + 1
    assert trace.hidden[0].shape == (3, 7, 8)
    probs = np.exp(trace.logits - trace.logits.max(-1, keepdims=True))
    probs /= probs.sum(-1, keepdims=True)
    assert np.allclose(probs.sum(-1), 1.0, atol=1e-6)


def test_forward_batch_permutation_equivariance():
    m = init_model(TINY)
    rng = np.random.default_rng(1)
    x = rng.integers(0, 99, size=(4, 6))
    perm = [2, 0, 3, 1]
    out = forward(m, x).logits
    out_perm = forward(m, x[perm]).logits
    assert np.array_equal(out[perm], out_perm)


def test_causality_future_tokens_never_leak():
    m = init_model(TINY)
    rng = np.random.default_rng(2)
    for _ in range(5):
        x = rng.integers(4, 99, size=(1, 10))
        t = int(rng.integers(1, 10))
        y = x.copy()
        y[0, t] = (y[0, t] - 4 + 1) % 95 + 4
        a = forward(m, x).logits
        b = forward(m, y).logits
        assert np.array_equal(a[0, :t], b[0, :t])
        assert not np.array_equal(a[0, t:], b[0, t:])


def test_over_length_sequence_rejected():
    m = init_model(TINY)
    with pytest.raises(LengthError):
        forward(m, np.zeros((1, 33), dtype=np.int64))


def test_loss_uniform_logits_is_log_vocab():
    m = Model(TINY)  # all-zero parameters -> uniform logits
    tok = build_tokenizer("char")
    pairs = [(tok.encode("ab"), tok.encode("xy"))]
    assert loss(m, pairs) == pytest.approx(np.log(99), abs=1e-12)


def test_loss_zero_for_deterministic_emitter():
    # zero model except: final-norm bias points at a direction whose output
    # column gives EOS a margin large enough to underflow the alternatives
    m = Model(TINY)
    m.view("final_ln_g")[:] = 1.0
    m.view("final_ln_b")[0] = 1.0
    m.view("out_embed")[0, EOS_ID] = 800.0
    assert loss(m, [([], [])]) == 0.0


def test_loss_matches_independent_per_token_oracle():
    m = init_model(TINY)
    tok = build_tokenizer("char")
    pairs = [(tok.encode("ka"), tok.encode("v1")), (tok.encode("q"), tok.encode("zz2"))]
    got = loss(m, pairs)
    # oracle: scalar cross-entropy per supervised position via logaddexp
    total, count = 0.0, 0
    for p, r in pairs:
        seq = frame_pair(p, r)
        logits = forward(m, np.array([seq[:-1]])).logits[0]
        for pos in range(len(p) + 1, len(seq) - 1):
            row = logits[pos]
            lse = np.logaddexp.reduce(row)
            total += lse - row[seq[pos + 1]]
            count += 1
    assert got == pytest.approx(total / count, rel=1e-12)


def test_loss_mask_covers_response_and_eos_only():
    inputs, targets, mask = build_batch([([10, 11], [20])])
    # frame: BOS 10 11 SEP 20 EOS -> inputs BOS 10 11 SEP 20
    assert inputs.tolist() == [[BOS_ID, 10, 11, SEP_ID, 20]]
    assert targets.tolist() == [[10, 11, SEP_ID, 20, EOS_ID]]
    assert mask.tolist() == [[0.0, 0.0, 0.0, 1.0, 1.0]]


def test_empty_batch_rejected():
    m = init_model(TINY)
    with pytest.raises(DegenerateBatchError):
        loss(m, [])


def test_gradient_matches_finite_differences():
    m = init_model(TINY)
    tok = build_tokenizer("char")
    pairs = [(tok.encode("k1"), tok.encode("va")), (tok.encode("k2"), tok.encode("vb"))]
    _, g = loss_and_grad(m, pairs)
    rng = np.random.default_rng(3)
    h = 1e-4
    for c in rng.choice(m.n_params, size=25, replace=False):
        orig = m.params[c]
        m.params[c] = orig + h
        up = loss(m, pairs)
        m.params[c] = orig - h
        down = loss(m, pairs)
        m.params[c] = orig
        fd = (up - down) / (2 * h)
        assert abs(g[c] - fd) / (abs(g[c]) + 1e-8) < 1e-4


def test_gradient_mean_reduction_invariance():
    m = init_model(TINY)
    tok = build_tokenizer("char")
    pair = (tok.encode("key"), tok.encode("val"))
    g1 = gradient(m, [pair])
    g2 = gradient(m, [pair, pair])
    assert np.allclose(g1, g2, rtol=1e-12, atol=1e-15)


def test_nonzero_gradient_descends():
    m = init_model(TINY)
    tok = build_tokenizer("char")
    pairs = [(tok.encode("ab"), tok.encode("cd"))]
    value, g = loss_and_grad(m, pairs)
    assert np.linalg.norm(g) > 0
    m.params -= 1e-3 * g / np.linalg.norm(g)
    assert loss(m, pairs) < value


def test_checkpoint_round_trip_bit_exact(tmp_path):
    m = init_model(TINY)
    path = tmp_path / "m.ckpt"
    save_model(m, path)
    loaded = load_model(path)
    assert loaded.config == m.config
    assert np.array_equal(loaded.params, m.params)
    assert loaded.params.tobytes() == m.params.tobytes()


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b'{"format": "something-else"}\n')
    with pytest.raises(ConfigError):
        load_model(path)


def test_incremental_decode_matches_full_forward():
    m = init_model(TINY)
    rng = np.random.default_rng(4)
    prompt = rng.integers(4, 99, size=6).tolist()
    seq = [BOS_ID] + prompt + [SEP_ID]
    logits, cache = prefill(m, np.array([seq]))
    generated = [seq[:]]
    for _ in range(5):
        nxt = int(logits.argmax(axis=-1)[0])
        full = forward(m, np.array([generated[0]])).logits[0, -1]
        assert nxt == int(full.argmax())
        assert np.allclose(logits[0], full, rtol=1e-12, atol=1e-12)
        generated[0] = generated[0] + [nxt]
        logits = decode_step(m, cache, [nxt])
