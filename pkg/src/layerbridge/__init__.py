"""Depth-wise fusion of frozen encoder layers into a frozen decoder LM."""

from .bridge import BridgeModel, batch_forward, bridge_forward, project
from .config import RunConfig, build_config
from .data import InstructionExample, load_checkpoint, load_jsonl, save_checkpoint
from .fusion import (
    FusedSequence,
    GlobalFusionParams,
    TokenWiseFusionParams,
    effective_temperature,
    global_alpha,
    global_fuse,
    last_layer_fuse,
    tokenwise_fuse,
)
from .models import FrozenDecoderLM, FrozenEncoder
from .tensor import Tape, Tensor, backward, finite_diff_grad
from .trainer import cosine_lr, train
from .vocab import TokenSequence, Vocabulary, default_vocab, detokenize, tokenize

__all__ = [
    "BridgeModel", "FusedSequence", "FrozenDecoderLM", "FrozenEncoder",
    "GlobalFusionParams", "InstructionExample", "RunConfig", "Tape", "Tensor",
    "TokenSequence", "TokenWiseFusionParams", "Vocabulary", "backward",
    "batch_forward", "bridge_forward", "build_config", "cosine_lr",
    "default_vocab", "detokenize", "effective_temperature", "finite_diff_grad",
    "global_alpha", "global_fuse", "last_layer_fuse", "load_checkpoint",
    "load_jsonl", "project", "save_checkpoint", "tokenize", "tokenwise_fuse",
    "train",
]
