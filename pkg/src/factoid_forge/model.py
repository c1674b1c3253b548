"""Small decoder-only transformer in float64 numpy with hand-written backprop.

The design keeps every contract the rest of the lab depends on cheap to
state: all parameters live in ONE flat float64 vector addressed through a
named-segment index, so gradients are flat vectors of the same length,
optimizer updates are array ops on the flat vector, checkpoints are the raw
bytes of that vector, and finite-difference checks perturb single
coordinates. Architecture: pre-norm blocks, learned positional embeddings,
untied input/output embeddings (the output embedding doubles as the
logit-lens projection), causal masking always on.

Training pairs are framed as ``BOS prompt SEP response EOS``; the loss is
the mean token-level cross-entropy over response tokens (and the closing
EOS) only.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np

from .errors import ConfigError, DegenerateBatchError, LengthError
from .seeding import make_rng
from .tokenizer import PAD_ID, BOS_ID, EOS_ID, SEP_ID

_LN_EPS = 1e-5
_GELU_C = np.sqrt(2.0 / np.pi)
_GELU_A = 0.044715


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int
    d_model: int
    n_heads: int
    d_ff: int
    max_seq_len: int
    vocab_size: int
    seed: int

    def __post_init__(self):
        for name in ("n_layers", "d_model", "n_heads", "d_ff", "max_seq_len", "vocab_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.d_model % self.n_heads != 0:
            raise ConfigError(
                f"d_model={self.d_model} not divisible by n_heads={self.n_heads}"
            )

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads


def _segment_layout(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    d, f, v, p = cfg.d_model, cfg.d_ff, cfg.vocab_size, cfg.max_seq_len
    segs: list[tuple[str, tuple[int, ...]]] = [
        ("tok_embed", (v, d)),
        ("pos_embed", (p, d)),
    ]
    for i in range(cfg.n_layers):
        pre = f"layer{i}."
        segs += [
            (pre + "ln1_g", (d,)), (pre + "ln1_b", (d,)),
            (pre + "wq", (d, d)), (pre + "bq", (d,)),
            (pre + "wk", (d, d)), (pre + "bk", (d,)),
            (pre + "wv", (d, d)), (pre + "bv", (d,)),
            (pre + "wo", (d, d)), (pre + "bo", (d,)),
            (pre + "ln2_g", (d,)), (pre + "ln2_b", (d,)),
            (pre + "w1", (d, f)), (pre + "b1", (f,)),
            (pre + "w2", (f, d)), (pre + "b2", (d,)),
        ]
    segs += [("final_ln_g", (d,)), ("final_ln_b", (d,)), ("out_embed", (d, v))]
    return segs


def param_count(cfg: ModelConfig) -> int:
    return sum(int(np.prod(shape)) for _, shape in _segment_layout(cfg))


class Model:
    """Flat parameter vector plus named views into it."""

    def __init__(self, config: ModelConfig, params: np.ndarray | None = None):
        self.config = config
        layout = _segment_layout(config)
        total = sum(int(np.prod(shape)) for _, shape in layout)
        if params is None:
            params = np.zeros(total, dtype=np.float64)
        if params.shape != (total,) or params.dtype != np.float64:
            raise ConfigError(
                f"parameter vector must be float64 of length {total}, "
                f"got {params.dtype} {params.shape}"
            )
        self.params = params
        self.segments: list[tuple[str, int, tuple[int, ...]]] = []
        self.views: dict[str, np.ndarray] = {}
        off = 0
        for name, shape in layout:
            size = int(np.prod(shape))
            self.segments.append((name, off, shape))
            self.views[name] = self.params[off : off + size].reshape(shape)
            off += size

    @property
    def n_params(self) -> int:
        return self.params.size

    def view(self, name: str) -> np.ndarray:
        return self.views[name]

    def copy(self) -> "Model":
        return Model(self.config, self.params.copy())


def init_model(config: ModelConfig) -> Model:
    """Seeded init: scaled normals for matrices, zeros for biases, ones for gains."""
    m = Model(config)
    rng = make_rng(config.seed, "model-init")
    for name, _, shape in m.segments:
        w = m.views[name]
        if name in ("tok_embed", "pos_embed"):
            w[...] = 0.02 * rng.standard_normal(shape)
        elif len(shape) == 2:
            w[...] = rng.standard_normal(shape) / np.sqrt(shape[0])
        elif name.endswith("_g"):
            w[...] = 1.0
        else:
            w[...] = 0.0
    return m


@dataclass
class ForwardTrace:
    logits: np.ndarray                 # (B, T, vocab)
    hidden: list[np.ndarray]           # n_layers + 1 residual states, (B, T, d)


def _layer_norm(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = xc * inv
    return g * xhat + b, xhat, inv


def _layer_norm_backward(dy, g, xhat, inv):
    dg = (dy * xhat).sum(axis=(0, 1))
    db = dy.sum(axis=(0, 1))
    dxhat = dy * g
    dx = inv * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dg, db


def _gelu(u):
    u3 = u + _GELU_A * u * u * u
    t = np.tanh(_GELU_C * u3)
    return 0.5 * u * (1.0 + t), t


def _gelu_grad(u, t):
    return 0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * _GELU_C * (1.0 + 3.0 * _GELU_A * u * u)


def _split_heads(x, n_heads):
    b, t, d = x.shape
    return x.reshape(b, t, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    b, h, t, hd = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, h * hd)


def _check_tokens(m: Model, tokens) -> np.ndarray:
    x = np.asarray(tokens, dtype=np.int64)
    if x.ndim != 2:
        raise ConfigError("token batch must be 2-D (batch, positions)")
    if x.shape[1] > m.config.max_seq_len:
        raise LengthError(
            f"sequence length {x.shape[1]} exceeds max_seq_len {m.config.max_seq_len}"
        )
    if x.size and (x.max() >= m.config.vocab_size or x.min() < 0):
        raise ConfigError("token id out of range for vocab")
    return x


def _run_forward(m: Model, x: np.ndarray, keep_cache: bool):
    cfg = m.config
    v = m.views
    b, t = x.shape
    h = v["tok_embed"][x] + v["pos_embed"][:t]
    hidden = [h]
    mask = np.triu(np.full((t, t), -np.inf), k=1)
    cache = {"x": x, "mask": mask} if keep_cache else None
    scale = 1.0 / np.sqrt(cfg.head_dim)
    for i in range(cfg.n_layers):
        p = f"layer{i}."
        a, xhat1, inv1 = _layer_norm(h, v[p + "ln1_g"], v[p + "ln1_b"])
        q = _split_heads(a @ v[p + "wq"] + v[p + "bq"], cfg.n_heads)
        k = _split_heads(a @ v[p + "wk"] + v[p + "bk"], cfg.n_heads)
        val = _split_heads(a @ v[p + "wv"] + v[p + "bv"], cfg.n_heads)
        scores = q @ k.transpose(0, 1, 3, 2) * scale + mask
        scores -= scores.max(axis=-1, keepdims=True)
        e = np.exp(scores)
        probs = e / e.sum(axis=-1, keepdims=True)
        ctx = _merge_heads(probs @ val)
        attn_out = ctx @ v[p + "wo"] + v[p + "bo"]
        h1 = h + attn_out
        a2, xhat2, inv2 = _layer_norm(h1, v[p + "ln2_g"], v[p + "ln2_b"])
        u = a2 @ v[p + "w1"] + v[p + "b1"]
        gact, tanh_u = _gelu(u)
        mlp_out = gact @ v[p + "w2"] + v[p + "b2"]
        h2 = h1 + mlp_out
        if keep_cache:
            cache[i] = dict(
                a=a, xhat1=xhat1, inv1=inv1, q=q, k=k, val=val, probs=probs,
                ctx=ctx, h1=h1, a2=a2, xhat2=xhat2, inv2=inv2, u=u,
                gact=gact, tanh_u=tanh_u,
            )
        h = h2
        hidden.append(h)
    hn, xhatf, invf = _layer_norm(h, v["final_ln_g"], v["final_ln_b"])
    logits = hn @ v["out_embed"]
    if keep_cache:
        cache["hn"] = hn
        cache["xhatf"] = xhatf
        cache["invf"] = invf
    return logits, hidden, cache


def forward(m: Model, tokens) -> ForwardTrace:
    """Full forward pass exposing logits and every residual-stream state."""
    x = _check_tokens(m, tokens)
    logits, hidden, _ = _run_forward(m, x, keep_cache=False)
    return ForwardTrace(logits=logits, hidden=hidden)


def frame_pair(prompt_ids, response_ids) -> list[int]:
    return [BOS_ID] + list(prompt_ids) + [SEP_ID] + list(response_ids) + [EOS_ID]


def build_batch(pairs):
    """Frame and right-pad (prompt_ids, response_ids) pairs.

    Returns (inputs, targets, mask): targets are inputs shifted one left,
    and mask selects exactly the response tokens plus the closing EOS.
    """
    if not pairs:
        raise DegenerateBatchError("empty batch")
    seqs = [frame_pair(p, r) for p, r in pairs]
    sep_pos = [1 + len(p) for p, _ in pairs]
    tmax = max(len(s) for s in seqs) - 1
    bsz = len(seqs)
    inputs = np.full((bsz, tmax), PAD_ID, dtype=np.int64)
    targets = np.full((bsz, tmax), PAD_ID, dtype=np.int64)
    mask = np.zeros((bsz, tmax), dtype=np.float64)
    for i, s in enumerate(seqs):
        n = len(s) - 1
        inputs[i, :n] = s[:-1]
        targets[i, :n] = s[1:]
        mask[i, sep_pos[i] : n] = 1.0
    return inputs, targets, mask


def _loss_from_logits(logits, targets, mask):
    n = mask.sum()
    if n == 0:
        raise DegenerateBatchError("batch has zero supervised tokens")
    mx = logits.max(axis=-1, keepdims=True)
    lse = mx + np.log(np.exp(logits - mx).sum(axis=-1, keepdims=True))
    logp = np.take_along_axis(logits, targets[..., None], axis=-1)[..., 0] - lse[..., 0]
    return -(logp * mask).sum() / n, lse


def loss(m: Model, pairs) -> float:
    """Mean cross-entropy over response tokens for framed (prompt, response) pairs."""
    inputs, targets, mask = build_batch(pairs)
    x = _check_tokens(m, inputs)
    logits, _, _ = _run_forward(m, x, keep_cache=False)
    value, _ = _loss_from_logits(logits, targets, mask)
    return float(value)


def loss_and_grad(m: Model, pairs) -> tuple[float, np.ndarray]:
    """Loss plus its exact gradient as a flat vector aligned with m.params."""
    inputs, targets, mask = build_batch(pairs)
    x = _check_tokens(m, inputs)
    logits, _, cache = _run_forward(m, x, keep_cache=True)
    value, lse = _loss_from_logits(logits, targets, mask)

    cfg = m.config
    v = m.views
    grad_flat = np.zeros_like(m.params)
    g = Model(cfg, grad_flat).views   # named views into the flat gradient

    b, t = x.shape
    n = mask.sum()
    dlogits = np.exp(logits - lse)
    np.subtract.at(
        dlogits,
        (np.arange(b)[:, None], np.arange(t)[None, :], targets),
        1.0,
    )
    dlogits *= (mask / n)[..., None]

    hn = cache["hn"]
    g["out_embed"] += hn.reshape(-1, cfg.d_model).T @ dlogits.reshape(-1, cfg.vocab_size)
    d_hn = dlogits @ v["out_embed"].T
    dh, dgf, dbf = _layer_norm_backward(d_hn, v["final_ln_g"], cache["xhatf"], cache["invf"])
    g["final_ln_g"] += dgf
    g["final_ln_b"] += dbf

    scale = 1.0 / np.sqrt(cfg.head_dim)
    for i in reversed(range(cfg.n_layers)):
        p = f"layer{i}."
        c = cache[i]
        # MLP branch
        d_mlp = dh
        g[p + "w2"] += c["gact"].reshape(-1, cfg.d_ff).T @ d_mlp.reshape(-1, cfg.d_model)
        g[p + "b2"] += d_mlp.sum(axis=(0, 1))
        d_gact = d_mlp @ v[p + "w2"].T
        d_u = d_gact * _gelu_grad(c["u"], c["tanh_u"])
        g[p + "w1"] += c["a2"].reshape(-1, cfg.d_model).T @ d_u.reshape(-1, cfg.d_ff)
        g[p + "b1"] += d_u.sum(axis=(0, 1))
        d_a2 = d_u @ v[p + "w1"].T
        d_h1_ln, dg2, db2 = _layer_norm_backward(d_a2, v[p + "ln2_g"], c["xhat2"], c["inv2"])
        g[p + "ln2_g"] += dg2
        g[p + "ln2_b"] += db2
        d_h1 = dh + d_h1_ln
        # attention branch
        d_attn_out = d_h1
        g[p + "wo"] += c["ctx"].reshape(-1, cfg.d_model).T @ d_attn_out.reshape(-1, cfg.d_model)
        g[p + "bo"] += d_attn_out.sum(axis=(0, 1))
        d_ctx = _split_heads(d_attn_out @ v[p + "wo"].T, cfg.n_heads)
        probs = c["probs"]
        d_probs = d_ctx @ c["val"].transpose(0, 1, 3, 2)
        d_val = probs.transpose(0, 1, 3, 2) @ d_ctx
        d_scores = probs * (d_probs - (d_probs * probs).sum(axis=-1, keepdims=True))
        d_scores *= scale
        d_q = d_scores @ c["k"]
        d_k = d_scores.transpose(0, 1, 3, 2) @ c["q"]
        d_qf, d_kf, d_vf = (_merge_heads(z) for z in (d_q, d_k, d_val))
        a2d = c["a"].reshape(-1, cfg.d_model)
        g[p + "wq"] += a2d.T @ d_qf.reshape(-1, cfg.d_model)
        g[p + "bq"] += d_qf.sum(axis=(0, 1))
        g[p + "wk"] += a2d.T @ d_kf.reshape(-1, cfg.d_model)
        g[p + "bk"] += d_kf.sum(axis=(0, 1))
        g[p + "wv"] += a2d.T @ d_vf.reshape(-1, cfg.d_model)
        g[p + "bv"] += d_vf.sum(axis=(0, 1))
        d_a = d_qf @ v[p + "wq"].T + d_kf @ v[p + "wk"].T + d_vf @ v[p + "wv"].T
        d_h_ln, dg1, db1 = _layer_norm_backward(d_a, v[p + "ln1_g"], c["xhat1"], c["inv1"])
        g[p + "ln1_g"] += dg1
        g[p + "ln1_b"] += db1
        dh = d_h1 + d_h_ln

    np.add.at(g["tok_embed"], x, dh)
    g["pos_embed"][:t] += dh.sum(axis=0)
    return float(value), grad_flat


def gradient(m: Model, pairs) -> np.ndarray:
    return loss_and_grad(m, pairs)[1]


# ---------------------------------------------------------------------------
# incremental decoding (per-layer key/value cache, greedy generation support)
# ---------------------------------------------------------------------------


class DecodeCache:
    def __init__(self, n_layers: int):
        self.k = [None] * n_layers
        self.v = [None] * n_layers
        self.length = 0


def prefill(m: Model, tokens) -> tuple[np.ndarray, DecodeCache]:
    """Run the prompt once; return last-position logits and the k/v cache."""
    x = _check_tokens(m, tokens)
    cfg = m.config
    v = m.views
    cache = DecodeCache(cfg.n_layers)
    b, t = x.shape
    h = v["tok_embed"][x] + v["pos_embed"][:t]
    mask = np.triu(np.full((t, t), -np.inf), k=1)
    scale = 1.0 / np.sqrt(cfg.head_dim)
    for i in range(cfg.n_layers):
        p = f"layer{i}."
        a, _, _ = _layer_norm(h, v[p + "ln1_g"], v[p + "ln1_b"])
        q = _split_heads(a @ v[p + "wq"] + v[p + "bq"], cfg.n_heads)
        k = _split_heads(a @ v[p + "wk"] + v[p + "bk"], cfg.n_heads)
        val = _split_heads(a @ v[p + "wv"] + v[p + "bv"], cfg.n_heads)
        cache.k[i], cache.v[i] = k, val
        scores = q @ k.transpose(0, 1, 3, 2) * scale + mask
        scores -= scores.max(axis=-1, keepdims=True)
        e = np.exp(scores)
        probs = e / e.sum(axis=-1, keepdims=True)
        h1 = h + _merge_heads(probs @ val) @ v[p + "wo"] + v[p + "bo"]
        a2, _, _ = _layer_norm(h1, v[p + "ln2_g"], v[p + "ln2_b"])
        gact, _ = _gelu(a2 @ v[p + "w1"] + v[p + "b1"])
        h = h1 + gact @ v[p + "w2"] + v[p + "b2"]
    cache.length = t
    hn, _, _ = _layer_norm(h[:, -1:, :], v["final_ln_g"], v["final_ln_b"])
    return (hn @ v["out_embed"])[:, 0, :], cache


def decode_step(m: Model, cache: DecodeCache, next_ids) -> np.ndarray:
    """Advance one position for each sequence; returns (B, vocab) logits."""
    cfg = m.config
    v = m.views
    t = cache.length
    if t >= cfg.max_seq_len:
        raise LengthError(f"decode position {t} exceeds max_seq_len {cfg.max_seq_len}")
    ids = np.asarray(next_ids, dtype=np.int64)
    h = v["tok_embed"][ids][:, None, :] + v["pos_embed"][t]
    scale = 1.0 / np.sqrt(cfg.head_dim)
    for i in range(cfg.n_layers):
        p = f"layer{i}."
        a, _, _ = _layer_norm(h, v[p + "ln1_g"], v[p + "ln1_b"])
        q = _split_heads(a @ v[p + "wq"] + v[p + "bq"], cfg.n_heads)
        k = _split_heads(a @ v[p + "wk"] + v[p + "bk"], cfg.n_heads)
        val = _split_heads(a @ v[p + "wv"] + v[p + "bv"], cfg.n_heads)
        cache.k[i] = np.concatenate([cache.k[i], k], axis=2)
        cache.v[i] = np.concatenate([cache.v[i], val], axis=2)
        scores = q @ cache.k[i].transpose(0, 1, 3, 2) * scale
        scores -= scores.max(axis=-1, keepdims=True)
        e = np.exp(scores)
        probs = e / e.sum(axis=-1, keepdims=True)
        h1 = h + _merge_heads(probs @ cache.v[i]) @ v[p + "wo"] + v[p + "bo"]
        a2, _, _ = _layer_norm(h1, v[p + "ln2_g"], v[p + "ln2_b"])
        gact, _ = _gelu(a2 @ v[p + "w1"] + v[p + "b1"])
        h = h1 + gact @ v[p + "w2"] + v[p + "b2"]
    cache.length = t + 1
    hn, _, _ = _layer_norm(h, v["final_ln_g"], v["final_ln_b"])
    return (hn @ v["out_embed"])[:, 0, :]


# ---------------------------------------------------------------------------
# checkpoints: one JSON header line, then raw little-endian float64 bytes
# ---------------------------------------------------------------------------


def save_model(m: Model, path) -> None:
    header = {
        "format": "factoid-forge-ckpt-v1",
        "config": asdict(m.config),
        "segments": [[name, off, list(shape)] for name, off, shape in m.segments],
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8") + b"\n")
        fh.write(m.params.astype("<f8").tobytes())


def load_model(path) -> Model:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        raw = fh.read()
    if header.get("format") != "factoid-forge-ckpt-v1":
        raise ConfigError(f"unrecognized checkpoint format in {path}")
    cfg = ModelConfig(**header["config"])
    params = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    m = Model(cfg, params)
    stored = [(name, off, tuple(shape)) for name, off, shape in header["segments"]]
    if stored != m.segments:
        raise ConfigError(f"checkpoint segment index does not match config in {path}")
    return m
