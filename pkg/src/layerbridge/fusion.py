"""Combine per-token encoder layer stacks into one vector per token.

Three strategies:

* last-layer baseline: select the final block output (the LangBridge-style
  soft-replacement input).
* global weighting: one shared weight per layer, normalized by a
  temperature-scaled softmax where the effective temperature is
  base_temp + temp * factor with a trainable temp.
* token-wise weighting: per token, a small transformer attends over that
  token's layer stack plus a learnable query row; the transformed query row
  is projected to per-layer scores and softmaxed.

All strategies emit a FusedSequence carrying the fused vectors and the
weight rows actually used, which downstream diagnostics export.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .tensor import Tensor
from .transformer import TransformerBlockParams, block_forward, init_block

FUSION_INIT_STD = 0.02


@dataclass
class GlobalFusionParams:
    layer_logits: Tensor      # one raw weight per fused layer
    temp: Tensor              # scalar; trainable unless tau_override is set
    base_temp: float
    factor: float
    tau_override: float | None = None
    _warned_nonpositive: bool = field(default=False, repr=False, compare=False)

    def named_tensors(self) -> list[tuple[str, Tensor]]:
        out = [("fusion.layer_logits", self.layer_logits)]
        if self.temp.requires_grad:
            out.append(("fusion.temp", self.temp))
        return out


@dataclass
class TokenWiseFusionParams:
    query: Tensor             # learnable query row prepended to the stack
    pos_embed: Tensor         # positions over the (query + layers) axis
    block: TransformerBlockParams
    score_w: Tensor           # [L x d] projection of the transformed query row
    score_b: Tensor           # [L]

    def named_tensors(self) -> list[tuple[str, Tensor]]:
        out = [("fusion.query", self.query), ("fusion.pos_embed", self.pos_embed)]
        out += [(f"fusion.block.{n}", t) for n, t in self.block.named_tensors()]
        out += [("fusion.score_w", self.score_w), ("fusion.score_b", self.score_b)]
        return out


@dataclass
class FusedSequence:
    vectors: Tensor           # [T x d]
    weights: np.ndarray       # [L] shared (global/last) or [T x L] per token


def init_global_fusion(rng: np.random.Generator, n_layers: int, base_temp: float = 100.0,
                       factor: float = 1e5, temp_init: float = 1e-2,
                       tau_override: float | None = None, dtype=np.float64) -> GlobalFusionParams:
    return GlobalFusionParams(
        layer_logits=Tensor(rng.normal(0.0, FUSION_INIT_STD, n_layers).astype(dtype), requires_grad=True),
        temp=Tensor(np.asarray(temp_init, dtype=dtype), requires_grad=tau_override is None),
        base_temp=float(base_temp),
        factor=float(factor),
        tau_override=tau_override,
    )


def init_tokenwise_fusion(rng: np.random.Generator, n_layers: int, width: int,
                          heads: int = 4, dtype=np.float64) -> TokenWiseFusionParams:
    return TokenWiseFusionParams(
        query=Tensor(rng.normal(0.0, FUSION_INIT_STD, width).astype(dtype), requires_grad=True),
        pos_embed=Tensor(rng.normal(0.0, FUSION_INIT_STD, (n_layers + 1, width)).astype(dtype), requires_grad=True),
        block=init_block(rng, width, heads, trainable=True, dtype=dtype),
        score_w=Tensor(rng.normal(0.0, FUSION_INIT_STD, (n_layers, width)).astype(dtype), requires_grad=True),
        score_b=Tensor(np.zeros(n_layers, dtype=dtype), requires_grad=True),
    )


def effective_temperature(params: GlobalFusionParams) -> Tensor:
    """base_temp + temp * factor (or the fixed override when configured).

    A non-positive result is legal but inverts the weight ordering, so it
    is reported as a warning (once per sign crossing) rather than an error.
    """
    dtype = params.layer_logits.dtype
    if params.tau_override is not None:
        tau = Tensor(np.asarray(params.tau_override, dtype=dtype))
    else:
        factor = Tensor(np.asarray(params.factor, dtype=dtype))
        base = Tensor(np.asarray(params.base_temp, dtype=dtype))
        tau = T.add(T.mul(params.temp, factor), base)
    if tau.item() <= 0.0:
        if not params._warned_nonpositive:
            params._warned_nonpositive = True
            warnings.warn(
                f"effective temperature {tau.item()} <= 0 inverts the layer weight ordering")
    else:
        params._warned_nonpositive = False
    return tau


def global_alpha(params: GlobalFusionParams) -> Tensor:
    """Normalized layer weights softmax(tau * raw)."""
    return T.softmax(T.mul(params.layer_logits, effective_temperature(params)), axis=-1)


def _stack_tensor(stack: np.ndarray) -> Tensor:
    if stack.ndim != 3:
        raise ShapeError(f"layer stack must be [T x L x d], got shape {stack.shape}")
    return Tensor(stack)


def global_fuse(stack: np.ndarray, alpha: Tensor) -> FusedSequence:
    """Shared weighted sum over layers: vectors[t] = sum_l alpha[l] stack[t, l]."""
    st = _stack_tensor(stack)
    if alpha.ndim != 1 or alpha.shape[0] != st.shape[1]:
        raise ShapeError(f"{st.shape[1]} layers but weight shape {alpha.shape}")
    vectors = T.fuse_layers(st, alpha)
    return FusedSequence(vectors=vectors, weights=alpha.data.copy())


def last_layer_fuse(stack: np.ndarray) -> FusedSequence:
    """Baseline: select the final layer bitwise; weights are an exact one-hot."""
    st = _stack_tensor(stack)
    n_layers = st.shape[1]
    weights = np.zeros(n_layers, dtype=stack.dtype)
    weights[-1] = 1.0
    vectors = T.reshape(T.slice_axis(st, 1, n_layers - 1, n_layers), (st.shape[0], st.shape[2]))
    return FusedSequence(vectors=vectors, weights=weights)


def tokenwise_fuse(stack: np.ndarray, params: TokenWiseFusionParams) -> FusedSequence:
    """Per-token layer attention (query row + transformer block + score head)."""
    st = _stack_tensor(stack)
    t, n_layers, d = st.shape
    if params.query.shape[0] != d:
        raise ShapeError(f"stack width {d} does not match fusion width {params.query.shape[0]}")
    if params.pos_embed.shape != (n_layers + 1, d):
        raise ShapeError(f"{n_layers} layers but positional table shape {params.pos_embed.shape}")

    query_rows = T.tile_leading(T.reshape(params.query, (1, d)), t)       # [T x 1 x d]
    s = T.concat([query_rows, st], axis=1)                                # [T x (L+1) x d]
    u = block_forward(T.add_bias(s, params.pos_embed), params.block)
    u0 = T.reshape(T.slice_axis(u, 1, 0, 1), (t, d))                      # transformed query row
    scores = T.add_bias(T.matmul(u0, T.transpose(params.score_w, (1, 0))), params.score_b)
    alpha = T.softmax(scores, axis=-1)                                    # [T x L]
    vectors = T.fuse_layers(st, alpha)
    return FusedSequence(vectors=vectors, weights=alpha.data.copy())


def transformer_block_forward(s: Tensor, block: TransformerBlockParams) -> Tensor:
    """One bidirectional block over a single [(L+1) x d] row stack."""
    if s.ndim != 2:
        raise ShapeError(f"expected a 2-d row stack, got {s.shape}")
    rows, d = s.shape
    out = block_forward(T.reshape(s, (1, rows, d)), block)
    return T.reshape(out, (rows, d))


def fuse(stack: np.ndarray, mode: str, gparams: GlobalFusionParams | None = None,
         twparams: TokenWiseFusionParams | None = None) -> FusedSequence:
    if mode == "last":
        return last_layer_fuse(stack)
    if mode == "global":
        return global_fuse(stack, global_alpha(gparams))
    if mode == "tokenwise":
        return tokenwise_fuse(stack, twparams)
    raise ShapeError(f"unknown fusion mode {mode!r}")


# ---------------------------------------------------------------------------
# weight export
# ---------------------------------------------------------------------------


def round_weights_6dp(row: np.ndarray) -> np.ndarray:
    """Round a normalized weight row to 6 decimals, keeping the sum at 1.

    Plain rounding can move the row sum by several 1e-6; the residual is
    redistributed largest-remainder style so the printed row still sums to
    exactly 1.000000 without any entry going negative.
    """
    scaled = np.asarray(row, dtype=np.float64) * 1e6
    floors = np.floor(scaled)
    need = int(round(1e6 - floors.sum()))
    rem = scaled - floors
    if need > 0:
        for i in np.argsort(-rem, kind="stable")[:need]:
            floors[i] += 1
    elif need < 0:
        for i in np.argsort(rem, kind="stable"):
            if need == 0:
                break
            if floors[i] >= 1:
                floors[i] -= 1
                need += 1
    return (floors + 0.0) / 1e6  # +0.0 normalizes any -0.0 entries


def weights_csv(weights: np.ndarray) -> str:
    """CSV export: `layer,weight` for a shared row, or
    `token_index,layer,weight` per token (mean row first, token_index=mean)."""
    lines = []
    if weights.ndim == 1:
        lines.append("layer,weight")
        for l, w in enumerate(round_weights_6dp(weights)):
            lines.append(f"{l},{w:.6f}")
    else:
        lines.append("token_index,layer,weight")
        for l, w in enumerate(round_weights_6dp(weights.mean(axis=0))):
            lines.append(f"mean,{l},{w:.6f}")
        for ti, row in enumerate(weights):
            for l, w in enumerate(round_weights_6dp(row)):
                lines.append(f"{ti},{l},{w:.6f}")
    return "\n".join(lines) + "\n"
