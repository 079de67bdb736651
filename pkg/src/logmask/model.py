"""Transformer encoder with a tied masked-token prediction head.

Written directly on numpy: forward produces per-position vocabulary logits,
backward produces exact analytic gradients for every parameter (checked
against finite differences in the test suite). Post-norm residual blocks,
tanh-approximation GELU, learned absolute position embeddings, and the output
projection tied to the token embedding matrix. Compute is float64; the
checkpoint format quantizes to float32.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict
from typing import Optional

import numpy as np

from .errors import (
    ConfigError,
    NoMaskedPositions,
    SequenceTooLong,
    ShapeMismatch,
)
from .tokenizer import TokenSequence

Params = dict[str, np.ndarray]

LN_EPS = 1e-12
_GELU_K = 0.7978845608028654  # sqrt(2/pi)
_GELU_C = 0.044715


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int
    n_heads: int
    d_model: int
    d_ff: int
    max_seq_len: int
    vocab_size: int
    dropout_rate: float = 0.1
    mask_rate: float = 0.2

    def __post_init__(self) -> None:
        if self.d_model % self.n_heads != 0:
            raise ConfigError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if self.max_seq_len < 3:
            raise ConfigError("max_seq_len must be at least 3")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate must be in [0, 1)")
        if not 0.0 < self.mask_rate < 1.0:
            raise ConfigError("mask_rate must be in (0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass(slots=True)
class ForwardOutput:
    """Logits and final hidden states for one sequence."""

    logits: np.ndarray  # [T, vocab_size]
    hidden: np.ndarray  # [T, d_model]


def parameter_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    d, f = config.d_model, config.d_ff
    shapes: dict[str, tuple[int, ...]] = {
        "tok_emb": (config.vocab_size, d),
        "pos_emb": (config.max_seq_len, d),
        "mlm_bias": (config.vocab_size,),
    }
    for i in range(config.n_layers):
        p = f"layers.{i}."
        for name in ("wq", "wk", "wv", "wo"):
            shapes[p + f"attn.{name}"] = (d, d)
        for name in ("bq", "bk", "bv", "bo"):
            shapes[p + f"attn.{name}"] = (d,)
        shapes[p + "ln1.g"] = (d,)
        shapes[p + "ln1.b"] = (d,)
        shapes[p + "ffn.w1"] = (d, f)
        shapes[p + "ffn.b1"] = (f,)
        shapes[p + "ffn.w2"] = (f, d)
        shapes[p + "ffn.b2"] = (d,)
        shapes[p + "ln2.g"] = (d,)
        shapes[p + "ln2.b"] = (d,)
    return shapes


def init_parameters(config: ModelConfig, rng: np.random.Generator) -> Params:
    """Gaussian(0, 0.02) weights, zero biases, identity layer norms."""
    params: Params = {}
    for name, shape in parameter_shapes(config).items():
        if name.endswith(("ln1.g", "ln2.g")):
            params[name] = np.ones(shape)
        elif len(shape) == 1:
            params[name] = np.zeros(shape)
        else:
            params[name] = rng.normal(0.0, 0.02, size=shape)
    return params


def check_params(params: Params, config: ModelConfig) -> None:
    expected = parameter_shapes(config)
    for name, shape in expected.items():
        if name not in params:
            raise ShapeMismatch(f"missing parameter {name}")
        if tuple(params[name].shape) != shape:
            raise ShapeMismatch(
                f"parameter {name} has shape {params[name].shape}, expected {shape}"
            )


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - np.max(x, axis=axis, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def _gelu(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return (gelu(x), gelu'(x)); tanh approximation."""
    u = _GELU_K * (x + _GELU_C * x**3)
    t = np.tanh(u)
    y = 0.5 * x * (1.0 + t)
    dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * _GELU_K * (1.0 + 3.0 * _GELU_C * x**2)
    return y, dy


def _layer_norm_fwd(x: np.ndarray, g: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, dict]:
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (x - mu) * inv
    return g * xhat + b, {"xhat": xhat, "inv": inv, "g": g}


def _layer_norm_bwd(dy: np.ndarray, cache: dict) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    xhat, inv, g = cache["xhat"], cache["inv"], cache["g"]
    dg = np.sum(dy * xhat, axis=tuple(range(dy.ndim - 1)))
    db = np.sum(dy, axis=tuple(range(dy.ndim - 1)))
    dxhat = dy * g
    dx = inv * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dg, db


def _dropout_mask(shape: tuple, rate: float, rng: np.random.Generator) -> np.ndarray:
    return (rng.random(shape) >= rate) / (1.0 - rate)


def forward_batch(
    params: Params,
    config: ModelConfig,
    ids: np.ndarray,
    attn_mask: np.ndarray,
    train_mode: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> tuple[np.ndarray, np.ndarray, dict]:
    """Run the encoder on a batch. Returns (logits, hidden, cache).

    ``ids`` is [B, T] int; ``attn_mask`` is [B, T] bool, False at PAD
    positions, which are excluded as attention keys. Dropout is active only
    when ``train_mode`` and requires ``rng``.
    """
    B, T = ids.shape
    if T > config.max_seq_len:
        raise SequenceTooLong(f"sequence length {T} exceeds max_seq_len {config.max_seq_len}")
    if ids.min() < 0 or ids.max() >= config.vocab_size:
        raise ShapeMismatch("token id outside vocabulary range")
    H = config.n_heads
    dh = config.d_model // H
    drop = config.dropout_rate if train_mode else 0.0
    if drop > 0.0 and rng is None:
        raise ConfigError("train_mode with dropout needs an rng")

    cache: dict = {"ids": ids, "attn_mask": attn_mask, "drop": drop, "layers": []}
    x = params["tok_emb"][ids] + params["pos_emb"][:T][None, :, :]
    if drop > 0.0:
        m = _dropout_mask(x.shape, drop, rng)
        x = x * m
        cache["emb_drop"] = m

    # Additive bias: -inf at PAD keys so they get zero attention weight.
    key_bias = np.where(attn_mask[:, None, None, :], 0.0, -np.inf)

    for i in range(config.n_layers):
        p = f"layers.{i}."
        lc: dict = {"x_in": x}
        q = x @ params[p + "attn.wq"] + params[p + "attn.bq"]
        k = x @ params[p + "attn.wk"] + params[p + "attn.bk"]
        v = x @ params[p + "attn.wv"] + params[p + "attn.bv"]
        qh = q.reshape(B, T, H, dh).transpose(0, 2, 1, 3)
        kh = k.reshape(B, T, H, dh).transpose(0, 2, 1, 3)
        vh = v.reshape(B, T, H, dh).transpose(0, 2, 1, 3)
        scores = qh @ kh.transpose(0, 1, 3, 2) / np.sqrt(dh) + key_bias
        probs = softmax(scores, axis=-1)
        lc["qh"], lc["kh"], lc["vh"], lc["probs"] = qh, kh, vh, probs
        p_used = probs
        if drop > 0.0:
            m = _dropout_mask(probs.shape, drop, rng)
            p_used = probs * m
            lc["attn_drop"] = m
        lc["p_used"] = p_used
        ctx = (p_used @ vh).transpose(0, 2, 1, 3).reshape(B, T, config.d_model)
        lc["ctx"] = ctx
        attn_out = ctx @ params[p + "attn.wo"] + params[p + "attn.bo"]
        if drop > 0.0:
            m = _dropout_mask(attn_out.shape, drop, rng)
            attn_out = attn_out * m
            lc["attn_out_drop"] = m
        x, lc["ln1"] = _layer_norm_fwd(x + attn_out, params[p + "ln1.g"], params[p + "ln1.b"])
        lc["x_mid"] = x

        h1 = x @ params[p + "ffn.w1"] + params[p + "ffn.b1"]
        a, da = _gelu(h1)
        lc["gelu_a"], lc["gelu_da"] = a, da
        h2 = a @ params[p + "ffn.w2"] + params[p + "ffn.b2"]
        if drop > 0.0:
            m = _dropout_mask(h2.shape, drop, rng)
            h2 = h2 * m
            lc["ffn_drop"] = m
        x, lc["ln2"] = _layer_norm_fwd(x + h2, params[p + "ln2.g"], params[p + "ln2.b"])
        cache["layers"].append(lc)

    cache["hidden"] = x
    logits = x @ params["tok_emb"].T + params["mlm_bias"]
    return logits, x, cache


def backward_batch(params: Params, config: ModelConfig, cache: dict, dlogits: np.ndarray) -> Params:
    """Exact gradients of a scalar loss given d(loss)/d(logits)."""
    B, T, _ = dlogits.shape
    H = config.n_heads
    dh = config.d_model // H
    drop = cache["drop"]
    hidden = cache["hidden"]
    grads: Params = {name: np.zeros_like(arr) for name, arr in params.items()}

    grads["mlm_bias"] += dlogits.sum(axis=(0, 1))
    grads["tok_emb"] += np.einsum("btv,btd->vd", dlogits, hidden)
    dx = dlogits @ params["tok_emb"]

    for i in reversed(range(config.n_layers)):
        p = f"layers.{i}."
        lc = cache["layers"][i]
        dy2, dg2, db2 = _layer_norm_bwd(dx, lc["ln2"])
        grads[p + "ln2.g"] += dg2
        grads[p + "ln2.b"] += db2
        dx_mid = dy2.copy()
        dh2 = dy2
        if drop > 0.0:
            dh2 = dh2 * lc["ffn_drop"]
        a = lc["gelu_a"]
        grads[p + "ffn.w2"] += np.einsum("btf,btd->fd", a, dh2)
        grads[p + "ffn.b2"] += dh2.sum(axis=(0, 1))
        da = dh2 @ params[p + "ffn.w2"].T
        dh1 = da * lc["gelu_da"]
        x_mid = lc["x_mid"]
        grads[p + "ffn.w1"] += np.einsum("btd,btf->df", x_mid, dh1)
        grads[p + "ffn.b1"] += dh1.sum(axis=(0, 1))
        dx_mid += dh1 @ params[p + "ffn.w1"].T

        dy1, dg1, db1 = _layer_norm_bwd(dx_mid, lc["ln1"])
        grads[p + "ln1.g"] += dg1
        grads[p + "ln1.b"] += db1
        dx = dy1.copy()
        dattn = dy1
        if drop > 0.0:
            dattn = dattn * lc["attn_out_drop"]
        ctx = lc["ctx"]
        grads[p + "attn.wo"] += np.einsum("btd,bte->de", ctx, dattn)
        grads[p + "attn.bo"] += dattn.sum(axis=(0, 1))
        dctx = (dattn @ params[p + "attn.wo"].T).reshape(B, T, H, dh).transpose(0, 2, 1, 3)

        p_used, probs, vh = lc["p_used"], lc["probs"], lc["vh"]
        dp_used = dctx @ vh.transpose(0, 1, 3, 2)
        dvh = p_used.transpose(0, 1, 3, 2) @ dctx
        dp = dp_used * lc["attn_drop"] if drop > 0.0 else dp_used
        dscores = probs * (dp - np.sum(dp * probs, axis=-1, keepdims=True))
        dscores = dscores / np.sqrt(dh)
        dqh = dscores @ lc["kh"]
        dkh = dscores.transpose(0, 1, 3, 2) @ lc["qh"]

        x_in = lc["x_in"]
        for name, dheads in (("q", dqh), ("k", dkh), ("v", dvh)):
            dflat = dheads.transpose(0, 2, 1, 3).reshape(B, T, config.d_model)
            grads[p + f"attn.w{name}"] += np.einsum("btd,bte->de", x_in, dflat)
            grads[p + f"attn.b{name}"] += dflat.sum(axis=(0, 1))
            dx += dflat @ params[p + f"attn.w{name}"].T

    if drop > 0.0:
        dx = dx * cache["emb_drop"]
    ids = cache["ids"]
    np.add.at(grads["tok_emb"], ids.reshape(-1), dx.reshape(-1, config.d_model))
    grads["pos_emb"][:T] += dx.sum(axis=0)
    return grads


def mlm_loss_batch(
    logits: np.ndarray,
    labels: np.ndarray,
    mask_positions: np.ndarray,
) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over masked positions, plus d(loss)/d(logits)."""
    n_masked = int(mask_positions.sum())
    if n_masked == 0:
        raise NoMaskedPositions("loss needs at least one masked position")
    logp = log_softmax(logits, axis=-1)
    sel_labels = labels[mask_positions]
    loss = -float(logp[mask_positions, sel_labels].mean())
    dlogits = np.zeros_like(logits)
    d_sel = softmax(logits[mask_positions], axis=-1)
    d_sel[np.arange(n_masked), sel_labels] -= 1.0
    dlogits[mask_positions] = d_sel / n_masked
    return loss, dlogits


def loss_and_grads(
    params: Params,
    config: ModelConfig,
    ids: np.ndarray,
    attn_mask: np.ndarray,
    labels: np.ndarray,
    mask_positions: np.ndarray,
    train_mode: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> tuple[float, Params]:
    logits, _, cache = forward_batch(params, config, ids, attn_mask, train_mode, rng)
    loss, dlogits = mlm_loss_batch(logits, labels, mask_positions)
    return loss, backward_batch(params, config, cache, dlogits)


# --- single-sequence wrappers ----------------------------------------------

def _as_ids(seq: TokenSequence | np.ndarray | list[int]) -> np.ndarray:
    if isinstance(seq, TokenSequence):
        return np.asarray(seq.ids, dtype=np.int64)
    return np.asarray(seq, dtype=np.int64)


def forward(
    params: Params,
    config: ModelConfig,
    seq: TokenSequence | np.ndarray | list[int],
    attention_mask: Optional[np.ndarray] = None,
    train_mode: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> ForwardOutput:
    """Encode one sequence; deterministic when ``train_mode`` is False."""
    check_params(params, config)
    ids = _as_ids(seq)
    if attention_mask is None:
        attention_mask = np.ones(len(ids), dtype=bool)
    logits, hidden, _ = forward_batch(
        params, config, ids[None, :], np.asarray(attention_mask, dtype=bool)[None, :],
        train_mode, rng,
    )
    return ForwardOutput(logits=logits[0], hidden=hidden[0])


def mlm_loss(output: ForwardOutput, labels: np.ndarray, mask_positions: np.ndarray) -> float:
    loss, _ = mlm_loss_batch(
        output.logits[None, :, :],
        np.asarray(labels, dtype=np.int64)[None, :],
        np.asarray(mask_positions, dtype=bool)[None, :],
    )
    return loss


def backward(
    params: Params,
    config: ModelConfig,
    seq: TokenSequence | np.ndarray | list[int],
    labels: np.ndarray,
    mask_positions: np.ndarray,
    attention_mask: Optional[np.ndarray] = None,
) -> Params:
    """Gradients of the masked-position loss for one sequence (no dropout)."""
    check_params(params, config)
    ids = _as_ids(seq)
    if attention_mask is None:
        attention_mask = np.ones(len(ids), dtype=bool)
    _, grads = loss_and_grads(
        params,
        config,
        ids[None, :],
        np.asarray(attention_mask, dtype=bool)[None, :],
        np.asarray(labels, dtype=np.int64)[None, :],
        np.asarray(mask_positions, dtype=bool)[None, :],
    )
    return grads
