"""Trainable numerical primitives, all in float64 numpy.

A small transformer encoder (learned token/position/segment embeddings,
post-norm multi-head self-attention blocks, GELU feed-forward) with
hand-written backward passes, plus max/attention pooling, Adam with linear
decay, and a central-finite-difference gradient checker that validates
every analytic gradient in the package.

There is no autodiff here: each forward pass returns the cache its paired
backward pass needs.  Sequences are processed unpadded, so the [PAD]
embedding row stays zero by construction as well as by contract.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

CHECKPOINT_FORMAT_VERSION = 1

_SQRT_2_OVER_PI = np.sqrt(2.0 / np.pi)
_GELU_C = 0.044715
PROB_CLAMP = 1e-7  # log/sigmoid outputs kept inside [1e-7, 1 - 1e-7]


@dataclass(frozen=True)
class EncoderConfig:
    layers: int = 2
    heads: int = 2
    dim: int = 64
    ff_dim: int = 128
    max_len: int = 256
    dropout: float = 0.1

    def __post_init__(self):
        if self.dim % self.heads != 0:
            raise ValueError("dim must be divisible by heads")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")


@dataclass(frozen=True)
class OptimizerConfig:
    algorithm: str = "adam"
    learning_rate: float = 1e-3
    linear_decay: bool = False
    total_steps: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.algorithm != "adam":
            raise ValueError(f"unsupported optimizer: {self.algorithm!r}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.linear_decay and self.total_steps < 1:
            raise ValueError("linear_decay requires total_steps >= 1")


class ParameterStore:
    """Named float64 tensors plus the RNG seed and optimizer step counter."""

    def __init__(self, seed: int = 0):
        self.params: dict[str, np.ndarray] = {}
        self.seed = int(seed)
        self.step = 0
        self._adam_m: dict[str, np.ndarray] = {}
        self._adam_v: dict[str, np.ndarray] = {}

    def add(self, name: str, value: np.ndarray) -> None:
        if name in self.params:
            raise ValueError(f"duplicate parameter name: {name!r}")
        self.params[name] = np.asarray(value, dtype=np.float64)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def copy(self) -> "ParameterStore":
        out = ParameterStore(seed=self.seed)
        out.step = self.step
        out.params = {k: v.copy() for k, v in self.params.items()}
        out._adam_m = {k: v.copy() for k, v in self._adam_m.items()}
        out._adam_v = {k: v.copy() for k, v in self._adam_v.items()}
        return out

    def zeros_like_params(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.params.items()}

    def finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.params.values())


def save_checkpoint(store: ParameterStore, path: str, extra: Optional[dict] = None) -> None:
    """Write a bit-exact npz checkpoint with a format-version header.

    *extra* is an optional JSON-serializable dict stored alongside the seed
    and step counter (model configs, vocabularies, and the like).
    """
    meta = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "seed": store.seed,
        "step": store.step,
        "extra": extra or {},
    }
    arrays = {"__meta__": np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8)}
    for name, value in store.params.items():
        arrays["param::" + name] = value
    for name, value in store._adam_m.items():
        arrays["adam_m::" + name] = value
    for name, value in store._adam_v.items():
        arrays["adam_v::" + name] = value
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path: str) -> tuple[ParameterStore, dict]:
    """Load a checkpoint; returns (store, extra_meta)."""
    with np.load(path) as data:
        meta = json.loads(bytes(data["__meta__"]).decode("utf-8"))
        if meta.get("format_version") != CHECKPOINT_FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint version: {meta.get('format_version')!r}")
        store = ParameterStore(seed=meta["seed"])
        store.step = int(meta["step"])
        for key in data.files:
            if key.startswith("param::"):
                store.params[key[len("param::"):]] = data[key].astype(np.float64, copy=True)
            elif key.startswith("adam_m::"):
                store._adam_m[key[len("adam_m::"):]] = data[key].astype(np.float64, copy=True)
            elif key.startswith("adam_v::"):
                store._adam_v[key[len("adam_v::"):]] = data[key].astype(np.float64, copy=True)
    return store, meta.get("extra", {})


# ---------------------------------------------------------------------------
# elementwise pieces
# ---------------------------------------------------------------------------


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def clamp_prob(p):
    return np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def softmax_backward(dout: np.ndarray, out: np.ndarray, axis: int = -1) -> np.ndarray:
    inner = np.sum(dout * out, axis=axis, keepdims=True)
    return out * (dout - inner)


def gelu_with_cache(x: np.ndarray):
    # tanh approximation; smooth everywhere, which keeps finite differences honest
    x2 = x * x
    t = np.tanh(_SQRT_2_OVER_PI * (x + _GELU_C * x * x2))
    return 0.5 * x * (1.0 + t), t


def gelu(x: np.ndarray) -> np.ndarray:
    return gelu_with_cache(x)[0]


def gelu_backward(dout: np.ndarray, x: np.ndarray, t: Optional[np.ndarray] = None) -> np.ndarray:
    x2 = x * x
    if t is None:
        t = np.tanh(_SQRT_2_OVER_PI * (x + _GELU_C * x * x2))
    du = _SQRT_2_OVER_PI * (1.0 + 3.0 * _GELU_C * x2)
    return dout * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)


def layer_norm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray, eps: float = 1e-6):
    mu = np.mean(x, axis=-1, keepdims=True)
    var = np.var(x, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    return gain * xhat + bias, (xhat, inv)


def layer_norm_backward(dout: np.ndarray, cache, gain: np.ndarray):
    xhat, inv = cache
    lead = tuple(range(dout.ndim - 1))
    dgain = np.sum(dout * xhat, axis=lead)
    dbias = np.sum(dout, axis=lead)
    dxhat = dout * gain
    dx = inv * (
        dxhat
        - np.mean(dxhat, axis=-1, keepdims=True)
        - xhat * np.mean(dxhat * xhat, axis=-1, keepdims=True)
    )
    return dx, dgain, dbias


# ---------------------------------------------------------------------------
# pooling (selector state building blocks)
# ---------------------------------------------------------------------------


def embed(ids, table: np.ndarray) -> np.ndarray:
    """Row lookup; raises on out-of-range ids."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError("token id out of embedding range")
    return table[ids]

def max_pool(vectors: np.ndarray) -> np.ndarray:
    """Coordinate-wise maximum over a non-empty stack of vectors."""
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.ndim != 2 or vectors.shape[0] == 0:
        raise ValueError("max_pool needs a non-empty list of vectors")
    return vectors.max(axis=0)


def max_pool_backward(dout: np.ndarray, vectors: np.ndarray) -> np.ndarray:
    """Route gradient to the argmax row of each coordinate."""
    grads = np.zeros_like(vectors)
    idx = np.argmax(vectors, axis=0)
    grads[idx, np.arange(vectors.shape[1])] = dout
    return grads


def attention_pool(query: np.ndarray, keys: np.ndarray) -> np.ndarray:
    """Softmax-attended sum of *keys* with *query* as the probe.

    weights_j = softmax_j(query . key_j); output = sum_j weights_j key_j.
    """
    query = np.asarray(query, dtype=np.float64)
    keys = np.asarray(keys, dtype=np.float64)
    if keys.ndim != 2 or keys.shape[0] == 0:
        raise ValueError("attention_pool needs a non-empty key list")
    if query.shape != (keys.shape[1],):
        raise ValueError("query/key dimension mismatch")
    weights = softmax(keys @ query)
    return weights @ keys


def attention_pool_backward(dout: np.ndarray, query: np.ndarray, keys: np.ndarray):
    """Gradients of attention_pool w.r.t. query and keys."""
    logits = keys @ query
    weights = softmax(logits)
    dweights = keys @ dout
    dlogits = softmax_backward(dweights, weights)
    dquery = keys.T @ dlogits
    dkeys = np.outer(weights, dout) + np.outer(dlogits, query)
    return dquery, dkeys


# ---------------------------------------------------------------------------
# encoder
# ---------------------------------------------------------------------------


def init_encoder_params(vocab_size: int, config: EncoderConfig, seed: int) -> ParameterStore:
    """Fresh parameter store for the encoder, scoring head, selector layers.

    The [PAD] embedding row (id 0) starts at zero and is pinned there by
    the training code.  Policy and gate parameters start at zero so the
    initial selection policy is uniform.
    """
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xE17C0DE)))
    store = ParameterStore(seed=seed)
    scale = 0.02
    d, ff = config.dim, config.ff_dim

    token = rng.normal(0.0, scale, size=(vocab_size, d))
    token[0, :] = 0.0
    store.add("emb/token", token)
    store.add("emb/pos", rng.normal(0.0, scale, size=(config.max_len, d)))
    store.add("emb/seg", rng.normal(0.0, scale, size=(2, d)))
    for i in range(config.layers):
        p = f"enc{i}/"
        for name in ("Wq", "Wk", "Wv", "Wo"):
            store.add(p + name, rng.normal(0.0, scale, size=(d, d)))
        for name in ("bq", "bk", "bv", "bo"):
            store.add(p + name, np.zeros(d))
        store.add(p + "ln1_g", np.ones(d))
        store.add(p + "ln1_b", np.zeros(d))
        store.add(p + "W1", rng.normal(0.0, scale, size=(d, ff)))
        store.add(p + "b1", np.zeros(ff))
        store.add(p + "W2", rng.normal(0.0, scale, size=(ff, d)))
        store.add(p + "b2", np.zeros(d))
        store.add(p + "ln2_g", np.ones(d))
        store.add(p + "ln2_b", np.zeros(d))
    store.add("head/W", rng.normal(0.0, scale, size=(d,)))
    store.add("head/b", np.zeros(()))
    store.add("policy/W", np.zeros((d, 2)))
    store.add("policy/b", np.zeros(2))
    store.add("gate/w", rng.normal(0.0, scale, size=(d,)))
    store.add("gate/b", np.zeros(()))
    store.add("gumbel/W", np.zeros((d, 2)))
    store.add("gumbel/b", np.zeros(2))
    return store


def _dropout_mask(shape, p: float, rng: np.random.Generator) -> np.ndarray:
    return (rng.random(shape) >= p).astype(np.float64) / (1.0 - p)


def pad_batch(sequences, pad_value=0, dtype=np.int64):
    """Stack variable-length 1-D sequences into (batch, max_len) + lengths."""
    lengths = np.array([len(s) for s in sequences], dtype=np.int64)
    width = int(lengths.max())
    out = np.full((len(sequences), width), pad_value, dtype=dtype)
    for i, seq in enumerate(sequences):
        out[i, : len(seq)] = seq
    return out, lengths


def encoder_forward_batch(
    ids: np.ndarray,
    lengths: np.ndarray,
    segments: np.ndarray,
    store: ParameterStore,
    config: EncoderConfig,
    scales: Optional[np.ndarray] = None,
    train: bool = False,
    dropout_rng: Optional[np.random.Generator] = None,
):
    """Run the encoder over a padded batch; returns (cls_vectors, cache).

    Padding uses the [PAD] id; attention masks padded KEY positions, so a
    sequence's output is exactly independent of anything beyond its length.
    *scales* multiplies each position's token embedding before the position
    and segment embeddings are added (used by the soft-gate selector
    baselines).  Dropout is active only when *train* is set and the config
    has a positive rate.
    """
    ids = np.asarray(ids, dtype=np.int64)
    segments = np.asarray(segments, dtype=np.int64)
    lengths = np.asarray(lengths, dtype=np.int64)
    bsz, width = ids.shape
    if width == 0 or np.any(lengths < 1):
        raise ValueError("empty input sequence")
    if width > config.max_len:
        raise ValueError(f"input length {width} exceeds max_len {config.max_len}")
    if scales is None:
        scales = np.ones((bsz, width))
    scales = np.asarray(scales, dtype=np.float64)

    token_rows = store["emb/token"][ids]  # bounds checked by the caller via embed()
    if ids.min() < 0 or ids.max() >= store["emb/token"].shape[0]:
        raise IndexError("token id out of embedding range")
    x = scales[..., None] * token_rows + store["emb/pos"][:width] + store["emb/seg"][segments]

    use_dropout = train and config.dropout > 0.0
    if use_dropout and dropout_rng is None:
        raise ValueError("training with dropout requires a dropout rng")

    # key mask: True at real positions
    key_valid = np.arange(width)[None, :] < lengths[:, None]
    neg = np.float64(-1e30)

    heads, d = config.heads, config.dim
    dh = d // heads
    layer_caches = []
    for i in range(config.layers):
        p = f"enc{i}/"
        x_in = x
        q = x_in @ store[p + "Wq"] + store[p + "bq"]
        k = x_in @ store[p + "Wk"] + store[p + "bk"]
        v = x_in @ store[p + "Wv"] + store[p + "bv"]
        qh = q.reshape(bsz, width, heads, dh).transpose(0, 2, 1, 3)
        kh = k.reshape(bsz, width, heads, dh).transpose(0, 2, 1, 3)
        vh = v.reshape(bsz, width, heads, dh).transpose(0, 2, 1, 3)
        scores = qh @ kh.transpose(0, 1, 3, 2) / np.sqrt(dh)
        scores = np.where(key_valid[:, None, None, :], scores, neg)
        attn = softmax(scores, axis=-1)
        ctx = (attn @ vh).transpose(0, 2, 1, 3).reshape(bsz, width, d)
        attn_out = ctx @ store[p + "Wo"] + store[p + "bo"]
        if use_dropout:
            mask1 = _dropout_mask(attn_out.shape, config.dropout, dropout_rng)
            attn_out = attn_out * mask1
        else:
            mask1 = None
        res1 = x_in + attn_out
        x1, ln1_cache = layer_norm(res1, store[p + "ln1_g"], store[p + "ln1_b"])

        pre_act = x1 @ store[p + "W1"] + store[p + "b1"]
        act, act_tanh = gelu_with_cache(pre_act)
        ff_out = act @ store[p + "W2"] + store[p + "b2"]
        if use_dropout:
            mask2 = _dropout_mask(ff_out.shape, config.dropout, dropout_rng)
            ff_out = ff_out * mask2
        else:
            mask2 = None
        res2 = x1 + ff_out
        x, ln2_cache = layer_norm(res2, store[p + "ln2_g"], store[p + "ln2_b"])
        layer_caches.append(
            dict(
                x_in=x_in, qh=qh, kh=kh, vh=vh, attn=attn, ctx=ctx,
                mask1=mask1, ln1_cache=ln1_cache, x1=x1,
                pre_act=pre_act, act=act, act_tanh=act_tanh,
                mask2=mask2, ln2_cache=ln2_cache,
            )
        )

    cache = dict(
        ids=ids, segments=segments, scales=scales, token_rows=token_rows,
        layers=layer_caches, bsz=bsz, width=width,
    )
    return x[:, 0, :].copy(), cache


def encoder_backward_batch(d_cls: np.ndarray, cache: dict, store: ParameterStore, config: EncoderConfig):
    """Backprop the batched encoder; returns (grads, d_scales).

    *grads* maps parameter names to gradients accumulated over the whole
    batch, including the embedding tables.  *d_scales* has shape
    (batch, width): the gradient w.r.t. each position's token-embedding
    multiplier.  Padded positions receive exactly zero gradient because the
    loss never reads them and attention masks them as keys.
    """
    bsz, width = cache["bsz"], cache["width"]
    heads, d = config.heads, config.dim
    dh = d // heads
    grads: dict[str, np.ndarray] = {}

    def acc(name, value):
        if name in grads:
            grads[name] += value
        else:
            grads[name] = value

    def flat(a):
        return a.reshape(-1, a.shape[-1])

    dx = np.zeros((bsz, width, d))
    dx[:, 0, :] = d_cls
    for i in reversed(range(config.layers)):
        p = f"enc{i}/"
        lc = cache["layers"][i]

        dres2, dg, db = layer_norm_backward(dx, lc["ln2_cache"], store[p + "ln2_g"])
        acc(p + "ln2_g", dg)
        acc(p + "ln2_b", db)
        dx1 = dres2.copy()
        dff_out = dres2
        if lc["mask2"] is not None:
            dff_out = dff_out * lc["mask2"]
        acc(p + "W2", flat(lc["act"]).T @ flat(dff_out))
        acc(p + "b2", dff_out.sum(axis=(0, 1)))
        dact = dff_out @ store[p + "W2"].T
        dpre = gelu_backward(dact, lc["pre_act"], lc["act_tanh"])
        acc(p + "W1", flat(lc["x1"]).T @ flat(dpre))
        acc(p + "b1", dpre.sum(axis=(0, 1)))
        dx1 += dpre @ store[p + "W1"].T

        dres1, dg, db = layer_norm_backward(dx1, lc["ln1_cache"], store[p + "ln1_g"])
        acc(p + "ln1_g", dg)
        acc(p + "ln1_b", db)
        dx_in = dres1.copy()
        dattn_out = dres1
        if lc["mask1"] is not None:
            dattn_out = dattn_out * lc["mask1"]
        acc(p + "Wo", flat(lc["ctx"]).T @ flat(dattn_out))
        acc(p + "bo", dattn_out.sum(axis=(0, 1)))
        dctx = (dattn_out @ store[p + "Wo"].T).reshape(bsz, width, heads, dh).transpose(0, 2, 1, 3)
        dattn = dctx @ lc["vh"].transpose(0, 1, 3, 2)
        dvh = lc["attn"].transpose(0, 1, 3, 2) @ dctx
        dscores = softmax_backward(dattn, lc["attn"], axis=-1) / np.sqrt(dh)
        dqh = dscores @ lc["kh"]
        dkh = dscores.transpose(0, 1, 3, 2) @ lc["qh"]
        dq = dqh.transpose(0, 2, 1, 3).reshape(bsz, width, d)
        dk = dkh.transpose(0, 2, 1, 3).reshape(bsz, width, d)
        dv = dvh.transpose(0, 2, 1, 3).reshape(bsz, width, d)
        x_in_flat = flat(lc["x_in"])
        acc(p + "Wq", x_in_flat.T @ flat(dq))
        acc(p + "bq", dq.sum(axis=(0, 1)))
        acc(p + "Wk", x_in_flat.T @ flat(dk))
        acc(p + "bk", dk.sum(axis=(0, 1)))
        acc(p + "Wv", x_in_flat.T @ flat(dv))
        acc(p + "bv", dv.sum(axis=(0, 1)))
        dx_in += dq @ store[p + "Wq"].T + dk @ store[p + "Wk"].T + dv @ store[p + "Wv"].T
        dx = dx_in

    ids, segments, scales = cache["ids"], cache["segments"], cache["scales"]
    flat_dx = (scales[..., None] * dx).reshape(-1, d)
    d_token = np.zeros_like(store["emb/token"])
    np.add.at(d_token, ids.reshape(-1), flat_dx)
    d_token[0, :] = 0.0  # [PAD] row never updates
    grads["emb/token"] = d_token
    d_pos = np.zeros_like(store["emb/pos"])
    d_pos[:width] = dx.sum(axis=0)
    grads["emb/pos"] = d_pos
    d_seg = np.zeros_like(store["emb/seg"])
    np.add.at(d_seg, segments.reshape(-1), dx.reshape(-1, d))
    grads["emb/seg"] = d_seg
    d_scales = np.einsum("bld,bld->bl", cache["token_rows"], dx)
    return grads, d_scales


def encoder_forward(
    ids,
    segments,
    store: ParameterStore,
    config: EncoderConfig,
    scales=None,
    train: bool = False,
    dropout_rng: Optional[np.random.Generator] = None,
):
    """Single-sequence encoder pass: returns (cls_vector, cache).

    Thin wrapper over the batched implementation with batch size 1.
    """
    ids = np.asarray(ids, dtype=np.int64)
    embed(ids, store["emb/token"])  # surfaces out-of-range ids early
    n = ids.shape[0]
    if scales is not None:
        scales = np.asarray(scales, dtype=np.float64)[None, :]
    cls, cache = encoder_forward_batch(
        ids[None, :], np.array([n]), np.asarray(segments, dtype=np.int64)[None, :],
        store, config, scales=scales, train=train, dropout_rng=dropout_rng,
    )
    return cls[0], cache


def encoder_backward(d_cls: np.ndarray, cache: dict, store: ParameterStore, config: EncoderConfig):
    """Single-sequence backward pass; returns (grads, d_scales)."""
    grads, d_scales = encoder_backward_batch(np.asarray(d_cls)[None, :], cache, store, config)
    return grads, d_scales[0]


# ---------------------------------------------------------------------------
# optimization and gradient checking
# ---------------------------------------------------------------------------


def optimizer_step(store: ParameterStore, grads: dict[str, np.ndarray], config: OptimizerConfig) -> None:
    """One Adam update in place; raises on non-finite gradients."""
    for name, g in grads.items():
        if name not in store.params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient")
    lr = config.learning_rate
    if config.linear_decay:
        lr *= max(0.0, 1.0 - store.step / config.total_steps)
    t = store.step + 1
    b1, b2, eps = config.beta1, config.beta2, config.epsilon
    for name, g in grads.items():
        m = store._adam_m.get(name)
        if m is None:
            m = np.zeros_like(store.params[name])
            store._adam_m[name] = m
            store._adam_v[name] = np.zeros_like(store.params[name])
        v = store._adam_v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        store.params[name] -= lr * m_hat / (np.sqrt(v_hat) + eps)
    store.step += 1


def grad_check(
    loss_fn: Callable[[ParameterStore, bool], tuple],
    store: ParameterStore,
    sample: int = 100,
    eps: float = 1e-5,
    rng: Optional[np.random.Generator] = None,
    param_names: Optional[list[str]] = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn(store, want_grads)`` must return ``(loss, grads_or_None)``.
    Coordinates are sampled uniformly over the selected parameters.  The
    relative error for one coordinate is |a - n| / max(|a|, |n|, 1e-6).
    """
    rng = rng or np.random.default_rng(0)
    loss, grads = loss_fn(store, True)
    if not np.isfinite(loss):
        raise FloatingPointError("non-finite loss")
    names = param_names if param_names is not None else sorted(grads)
    sizes = [store.params[n].size for n in names]
    total = sum(sizes)
    if total == 0:
        raise ValueError("no coordinates to sample")
    worst = 0.0
    for _ in range(sample):
        flat = int(rng.integers(total))
        for name, size in zip(names, sizes):
            if flat < size:
                break
            flat -= size
        param = store.params[name]
        idx = np.unravel_index(flat, param.shape)
        original = param[idx]
        param[idx] = original + eps
        loss_plus, _ = loss_fn(store, False)
        param[idx] = original - eps
        loss_minus, _ = loss_fn(store, False)
        param[idx] = original
        numeric = (loss_plus - loss_minus) / (2.0 * eps)
        analytic = grads.get(name, np.zeros_like(param))[idx]
        err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-6)
        worst = max(worst, err)
    return worst
