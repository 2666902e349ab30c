"""Pre-norm transformer encoder block built on the tensor engine.

One block = multi-head self-attention with residual, then a GELU
feed-forward (4x width) with residual, both behind layer norm. Used by
the frozen toy backbones (bidirectional / causal via mask) and by the
token-wise fusion module (bidirectional, trainable).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .tensor import Tensor

INIT_STD = 0.02
FF_MULT = 4


@dataclass
class TransformerBlockParams:
    """Weights of one block. Linear weights are stored input-major, so a
    layer computes rows @ weight + bias."""

    heads: int
    ln1_gain: Tensor
    ln1_bias: Tensor
    attn_q_w: Tensor
    attn_q_b: Tensor
    attn_k_w: Tensor
    attn_k_b: Tensor
    attn_v_w: Tensor
    attn_v_b: Tensor
    attn_out_w: Tensor
    attn_out_b: Tensor
    ln2_gain: Tensor
    ln2_bias: Tensor
    ff_in_w: Tensor
    ff_in_b: Tensor
    ff_out_w: Tensor
    ff_out_b: Tensor

    def named_tensors(self) -> list[tuple[str, Tensor]]:
        names = [
            "ln1_gain", "ln1_bias",
            "attn_q_w", "attn_q_b", "attn_k_w", "attn_k_b",
            "attn_v_w", "attn_v_b", "attn_out_w", "attn_out_b",
            "ln2_gain", "ln2_bias",
            "ff_in_w", "ff_in_b", "ff_out_w", "ff_out_b",
        ]
        return [(n, getattr(self, n)) for n in names]

    @property
    def width(self) -> int:
        return self.attn_q_w.shape[0]


def init_block(rng: np.random.Generator, width: int, heads: int, trainable: bool,
               dtype=np.float64, init_std: float | None = None) -> TransformerBlockParams:
    if width % heads != 0:
        raise ConfigError(f"width {width} not divisible by {heads} heads")
    std = INIT_STD if init_std is None else init_std

    def w(shape):
        return Tensor(rng.normal(0.0, std, shape).astype(dtype), requires_grad=trainable)

    def zeros(shape):
        return Tensor(np.zeros(shape, dtype=dtype), requires_grad=trainable)

    def ones(shape):
        return Tensor(np.ones(shape, dtype=dtype), requires_grad=trainable)

    hidden = FF_MULT * width
    return TransformerBlockParams(
        heads=heads,
        ln1_gain=ones((width,)), ln1_bias=zeros((width,)),
        attn_q_w=w((width, width)), attn_q_b=zeros((width,)),
        attn_k_w=w((width, width)), attn_k_b=zeros((width,)),
        attn_v_w=w((width, width)), attn_v_b=zeros((width,)),
        attn_out_w=w((width, width)), attn_out_b=zeros((width,)),
        ln2_gain=ones((width,)), ln2_bias=zeros((width,)),
        ff_in_w=w((width, hidden)), ff_in_b=zeros((hidden,)),
        ff_out_w=w((hidden, width)), ff_out_b=zeros((width,)),
    )


def _linear(x2d: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return T.add_bias(T.matmul(x2d, w), b)


def _split_heads(x: Tensor, batch: int, rows: int, heads: int, head_dim: int) -> Tensor:
    x = T.reshape(x, (batch, rows, heads, head_dim))
    x = T.transpose(x, (0, 2, 1, 3))
    return T.reshape(x, (batch * heads, rows, head_dim))


def block_forward(x: Tensor, params: TransformerBlockParams, mask: Tensor | None = None) -> Tensor:
    """Apply one pre-norm block to a [B x R x d] tensor.

    ``mask`` is an optional additive [R x R] score mask (large negative
    entries forbid attention); None gives full bidirectional attention.
    """
    b, r, d = x.shape
    heads = params.heads
    if d % heads != 0:
        raise ConfigError(f"width {d} not divisible by {heads} heads")
    hd = d // heads

    h = T.layer_norm(x, params.ln1_gain, params.ln1_bias)
    flat = T.reshape(h, (b * r, d))
    q = _split_heads(_linear(flat, params.attn_q_w, params.attn_q_b), b, r, heads, hd)
    k = _split_heads(_linear(flat, params.attn_k_w, params.attn_k_b), b, r, heads, hd)
    v = _split_heads(_linear(flat, params.attn_v_w, params.attn_v_b), b, r, heads, hd)

    scores = T.scale(T.bmm(q, T.transpose(k, (0, 2, 1))), 1.0 / math.sqrt(hd))
    if mask is not None:
        scores = T.add_bias(scores, mask)
    attn = T.softmax(scores, axis=-1)
    ctx = T.bmm(attn, v)

    ctx = T.reshape(ctx, (b, heads, r, hd))
    ctx = T.transpose(ctx, (0, 2, 1, 3))
    ctx = T.reshape(ctx, (b * r, d))
    attn_out = _linear(ctx, params.attn_out_w, params.attn_out_b)
    x = T.add(x, T.reshape(attn_out, (b, r, d)))

    h2 = T.layer_norm(x, params.ln2_gain, params.ln2_bias)
    flat2 = T.reshape(h2, (b * r, d))
    ff = _linear(T.gelu(_linear(flat2, params.ff_in_w, params.ff_in_b)), params.ff_out_w, params.ff_out_b)
    return T.add(x, T.reshape(ff, (b, r, d)))


def causal_mask(rows: int, dtype=np.float64) -> Tensor:
    """Additive mask forbidding attention to later rows."""
    m = np.triu(np.full((rows, rows), -1e9, dtype=dtype), k=1)
    return Tensor(m)
