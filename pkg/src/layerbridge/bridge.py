"""End-to-end differentiable pass: encoder -> fusion -> projection -> decoder.

Only the fusion and projection parameters are trainable; the bridge model
owns the frozen backbones and exposes the trainable set in a canonical
order for the optimizer and the checkpoint writer. Encoder stacks are
memoized per token sequence (the encoder is frozen, so this is exact).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import RunConfig
from .errors import ContractError, ShapeError
from .fusion import (
    FusedSequence,
    GlobalFusionParams,
    TokenWiseFusionParams,
    fuse,
    init_global_fusion,
    init_tokenwise_fusion,
)
from .models import (
    SEED_FUSION,
    SEED_PROJECTION,
    FrozenDecoderLM,
    FrozenEncoder,
    component_rng,
)
from .tensor import Tensor
from .vocab import EOS_ID, TokenSequence, Vocabulary, default_vocab, tokenize


@dataclass
class ProjectionParams:
    """Linear map from fused encoder space into the decoder embedding space.

    ``weight`` is stored input-major ([d x d_prime]), so rows are projected
    as h @ weight + bias.
    """

    weight: Tensor
    bias: Tensor

    def named_tensors(self) -> list[tuple[str, Tensor]]:
        return [("proj.weight", self.weight), ("proj.bias", self.bias)]


def init_projection(rng: np.random.Generator, width_in: int, width_out: int,
                    dtype=np.float64) -> ProjectionParams:
    # 1/sqrt(fan_in) so projected rows start at a scale the decoder reacts to.
    return ProjectionParams(
        weight=Tensor(rng.normal(0.0, width_in**-0.5, (width_in, width_out)).astype(dtype),
                      requires_grad=True),
        bias=Tensor(np.zeros(width_out, dtype=dtype), requires_grad=True),
    )


def project(fused: FusedSequence, params: ProjectionParams) -> Tensor:
    """z_t = W h_t + b per token."""
    if fused.vectors.shape[1] != params.weight.shape[0]:
        raise ShapeError(
            f"fused width {fused.vectors.shape[1]} does not match projection input {params.weight.shape[0]}")
    return T.add_bias(T.matmul(fused.vectors, params.weight), params.bias)


class BridgeModel:
    """Frozen encoder + trainable fusion/projection + frozen decoder."""

    def __init__(self, config: RunConfig, vocab: Vocabulary | None = None,
                 stack_cache: dict | None = None):
        config.validate()
        self.config = config
        dtype = config.np_dtype
        self.vocab = vocab if vocab is not None else default_vocab(config.V)
        if len(self.vocab) != config.V:
            raise ShapeError(f"vocabulary has {len(self.vocab)} entries but config V={config.V}")
        self.encoder = FrozenEncoder(config.seed, config.L, config.d, config.V,
                                     config.max_T, dtype=dtype)
        # Z rows plus BOS-shifted target tokens must fit in the decoder.
        self.decoder = FrozenDecoderLM(config.seed, config.d_prime, config.V,
                                       max_positions=2 * config.max_T + 1, dtype=dtype)
        self.gparams: GlobalFusionParams | None = None
        self.twparams: TokenWiseFusionParams | None = None
        if config.fusion_mode == "global":
            self.gparams = init_global_fusion(
                component_rng(config.seed, SEED_FUSION), config.fused_layers,
                base_temp=config.base_temp, factor=config.factor,
                temp_init=config.temp_init, tau_override=config.tau_override, dtype=dtype)
        elif config.fusion_mode == "tokenwise":
            self.twparams = init_tokenwise_fusion(
                component_rng(config.seed, SEED_FUSION), config.fused_layers,
                config.d, heads=config.heads, dtype=dtype)
        self.projection = init_projection(
            component_rng(config.seed, SEED_PROJECTION), config.d, config.d_prime, dtype=dtype)
        self.cache_encoder = True
        # May be shared between models whose encoders are identical (same
        # seed, dims, precision, and embedding-layer flag); encode() is a
        # pure function of those, so sharing is exact.
        self._stack_cache: dict[tuple[int, ...], np.ndarray] = (
            stack_cache if stack_cache is not None else {})

    # -- parameters ---------------------------------------------------------

    def trainables(self) -> list[tuple[str, Tensor]]:
        out: list[tuple[str, Tensor]] = []
        if self.gparams is not None:
            out += self.gparams.named_tensors()
        if self.twparams is not None:
            out += self.twparams.named_tensors()
        out += self.projection.named_tensors()
        return out

    def frozen_state_bytes(self) -> bytes:
        return self.encoder.state_bytes() + self.decoder.state_bytes()

    # -- forward ------------------------------------------------------------

    def encode_stack(self, seq: TokenSequence) -> np.ndarray:
        key = tuple(seq.ids)
        if self.cache_encoder and key in self._stack_cache:
            return self._stack_cache[key]
        stack = self.encoder.encode(seq, include_embedding=self.config.include_embedding_layer)
        if self.cache_encoder:
            self._stack_cache[key] = stack
        return stack

    def fuse_stack(self, stack: np.ndarray) -> FusedSequence:
        return fuse(stack, self.config.fusion_mode, self.gparams, self.twparams)

    def project_source(self, src: TokenSequence) -> tuple[Tensor, FusedSequence]:
        """Encoder stack -> fused vectors -> decoder-space rows Z."""
        stack = self.encode_stack(src)
        fused = self.fuse_stack(stack)
        return project(fused, self.projection), fused

    def target_loss(self, z: Tensor, tgt: TokenSequence):
        """Cross-entropy of the target (EOS appended) given projected rows Z."""
        full_tgt = TokenSequence(tgt.ids + [EOS_ID])
        logits = self.decoder.logits(z, full_tgt)
        per_pos = T.cross_entropy_rows(logits, full_tgt.ids)
        loss = T.sum_all(per_pos)
        if self.config.loss_reduction == "mean":
            loss = T.scale(loss, 1.0 / len(full_tgt.ids))
        return loss, per_pos

    def forward_ids(self, src: TokenSequence, tgt: TokenSequence):
        """Loss and diagnostics for one tokenized example.

        The target is scored with EOS appended; the loss is the mean (or
        sum, per config) of the per-position cross-entropies.
        """
        if not src.ids or not tgt.ids:
            raise ContractError("source and target must be nonempty")
        z, fused = self.project_source(src)
        loss, per_pos = self.target_loss(z, tgt)
        diagnostics = {
            "weights": fused.weights,
            "per_position_loss": per_pos.data.copy(),
            "loss": loss.item(),
        }
        return loss, diagnostics

    def forward(self, example):
        """Tokenize an instruction example (``.source``/``.target``) and score it."""
        src = tokenize(example.source, self.vocab)
        tgt = tokenize(example.target, self.vocab)
        return self.forward_ids(src, tgt)


def bridge_forward(model: BridgeModel, example):
    return model.forward(example)


def batch_forward(model: BridgeModel, batch) -> Tensor:
    """Arithmetic mean of per-example losses, in batch order."""
    batch = list(batch)
    if not batch:
        raise ContractError("batch must be nonempty")
    losses = [T.reshape(model.forward(ex)[0], (1,)) for ex in batch]
    total = T.sum_all(T.concat(losses, axis=0)) if len(losses) > 1 else T.reshape(losses[0], ())
    return T.scale(total, 1.0 / len(losses))
