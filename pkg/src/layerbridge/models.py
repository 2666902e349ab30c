"""Frozen, seeded stand-ins for the multilingual encoder and the decoder LM.

Both are small pre-norm transformers with Gaussian(0, 0.02) init, fully
deterministic in their seed and never updated by training. The encoder
emulates the cross-lingual alignment of a real multilingual encoder by
construction: ids in the upper half of the vocabulary embed as lightly
jittered copies of their lower-half twins, so a "shifted-script" input
lands close to the original in representation space.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ContractError, ShapeError
from .tensor import Tensor
from .transformer import TransformerBlockParams, block_forward, causal_mask, init_block
from .vocab import BOS_ID, TokenSequence

ENCODER_HEADS = 2
DECODER_HEADS = 4
DECODER_BLOCKS = 2
EMBED_STD = 0.02
# Jitter between a token and its shifted-script twin, relative to EMBED_STD.
TWIN_JITTER = 0.1

SEED_ENCODER = 1
SEED_DECODER = 2
SEED_FUSION = 3
SEED_PROJECTION = 4
SEED_DATA = 5


def component_rng(seed: int, component: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((int(seed), int(component))))


def _aligned_embedding(rng: np.random.Generator, vocab_size: int, width: int, dtype) -> np.ndarray:
    half = vocab_size // 2
    base = rng.normal(0.0, EMBED_STD, (half, width))
    twins = base + rng.normal(0.0, EMBED_STD * TWIN_JITTER, (half, width))
    rows = [base, twins]
    if vocab_size % 2:
        rows.append(rng.normal(0.0, EMBED_STD, (1, width)))
    return np.concatenate(rows, axis=0).astype(dtype)


class FrozenEncoder:
    """Embedding (+ positions) followed by L bidirectional pre-norm blocks."""

    def __init__(self, seed: int, layers: int, width: int, vocab_size: int,
                 max_len: int, dtype=np.float32):
        if width % ENCODER_HEADS != 0:
            raise ShapeError(f"encoder width {width} not divisible by {ENCODER_HEADS} heads")
        rng = component_rng(seed, SEED_ENCODER)
        self.seed = seed
        self.layers = layers
        self.width = width
        self.vocab_size = vocab_size
        self.max_len = max_len
        self.dtype = dtype
        self.embed = Tensor(_aligned_embedding(rng, vocab_size, width, dtype))
        self.pos = Tensor(rng.normal(0.0, EMBED_STD, (max_len, width)).astype(dtype))
        self.blocks = [init_block(rng, width, ENCODER_HEADS, trainable=False, dtype=dtype)
                       for _ in range(layers)]

    def named_tensors(self) -> list[tuple[str, Tensor]]:
        out = [("embed", self.embed), ("pos", self.pos)]
        for i, blk in enumerate(self.blocks):
            out += [(f"block{i}.{n}", t) for n, t in blk.named_tensors()]
        return out

    def state_bytes(self) -> bytes:
        return b"".join(name.encode() + t.data.tobytes() for name, t in self.named_tensors())

    def encode(self, seq: TokenSequence, include_embedding: bool = False) -> np.ndarray:
        """Hidden states of every block for one sequence: a [T x L x d] stack.

        With include_embedding the embedding-stage output is prepended as
        an extra leading layer ([T x (L+1) x d]).
        """
        ids = seq.ids
        if not ids:
            raise ContractError("cannot encode an empty sequence")
        if len(ids) > self.max_len:
            raise ContractError(f"sequence length {len(ids)} exceeds max length {self.max_len}")
        t = len(ids)
        x = T.add(T.embedding(self.embed, ids), Tensor(self.pos.data[:t]))
        states = [x.data] if include_embedding else []
        h = T.reshape(x, (1, t, self.width))
        for blk in self.blocks:
            h = block_forward(h, blk)
            states.append(h.data.reshape(t, self.width))
        return np.stack(states, axis=1)


class FrozenDecoderLM:
    """Small frozen causal transformer with an output head.

    Consumes a soft prefix Z (projected source rows) followed by the
    embedded, BOS-shifted target tokens; logits are returned for the
    target positions only. Gradients flow into Z, never into the decoder.
    """

    def __init__(self, seed: int, width: int, vocab_size: int, max_positions: int,
                 dtype=np.float32):
        if width % DECODER_HEADS != 0:
            raise ShapeError(f"decoder width {width} not divisible by {DECODER_HEADS} heads")
        rng = component_rng(seed, SEED_DECODER)
        self.seed = seed
        self.width = width
        self.vocab_size = vocab_size
        self.max_positions = max_positions
        self.dtype = dtype
        # 1/sqrt(width) init: a pretrained LM has O(1) logit sensitivity, and
        # the 0.02 scale used for the encoder would cap logits near zero here.
        std = width**-0.5
        self.embed = Tensor(rng.normal(0.0, std, (vocab_size, width)).astype(dtype))
        self.pos = Tensor(rng.normal(0.0, std, (max_positions, width)).astype(dtype))
        self.blocks = [init_block(rng, width, DECODER_HEADS, trainable=False, dtype=dtype,
                                  init_std=std)
                       for _ in range(DECODER_BLOCKS)]
        self.final_gain = Tensor(np.ones(width, dtype=dtype))
        self.final_bias = Tensor(np.zeros(width, dtype=dtype))
        self.head = Tensor(rng.normal(0.0, std, (width, vocab_size)).astype(dtype))

    def named_tensors(self) -> list[tuple[str, Tensor]]:
        out = [("embed", self.embed), ("pos", self.pos)]
        for i, blk in enumerate(self.blocks):
            out += [(f"block{i}.{n}", t) for n, t in blk.named_tensors()]
        out += [("final_gain", self.final_gain), ("final_bias", self.final_bias), ("head", self.head)]
        return out

    def state_bytes(self) -> bytes:
        return b"".join(name.encode() + t.data.tobytes() for name, t in self.named_tensors())

    def logits(self, z: Tensor, target: TokenSequence) -> Tensor:
        """Per-position logits [K x V] for the target, conditioned on Z."""
        if z.ndim != 2 or z.shape[1] != self.width:
            raise ShapeError(f"prefix width {z.shape} does not match decoder width {self.width}")
        if not target.ids:
            raise ContractError("cannot score an empty target")
        t = z.shape[0]
        k = len(target.ids)
        rows = t + k
        if rows > self.max_positions:
            raise ContractError(f"{rows} positions exceed decoder maximum {self.max_positions}")
        teacher = [BOS_ID] + target.ids[:-1]
        emb = T.embedding(self.embed, teacher)
        seq = T.add(T.concat([z, emb], axis=0), Tensor(self.pos.data[:rows]))
        h = T.reshape(seq, (1, rows, self.width))
        mask = causal_mask(rows, dtype=self.dtype)
        for blk in self.blocks:
            h = block_forward(h, blk, mask)
        h = T.layer_norm(h, self.final_gain, self.final_bias)
        flat = T.reshape(h, (rows, self.width))
        logits = T.matmul(flat, self.head)
        return T.slice_axis(logits, 0, t, rows)
