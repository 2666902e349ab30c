"""Dataset ingestion, toy-task generation, and binary serialization.

File formats owned here:

* instruction data: JSONL with keys ``source``, ``target``, optional ``lang``
* hidden-state stacks: magic ``LFHS``, version u32, counts (N, L, d) u32,
  then per example T u32 followed by T*L*d little-endian float32 values
* checkpoints: magic ``LFCK``, version u32, JSON header (canonical key
  order) echoing the run config, then the trainable tensors sorted by name

All writers are canonical: equal in-memory state produces byte-equal files.
"""

from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass

import numpy as np

from .bridge import BridgeModel
from .config import RunConfig
from .errors import (
    CompatibilityError,
    ConfigError,
    ContractError,
    FileLengthError,
    FormatError,
    SchemaError,
)
from .models import SEED_DATA, component_rng
from .vocab import CUE_WORDS, LABEL_WORDS, Vocabulary, content_word_ids

HIDDEN_MAGIC = b"LFHS"
CHECKPOINT_MAGIC = b"LFCK"
FORMAT_VERSION = 1

# Header fields that must match between a checkpoint and the active config.
STRUCTURAL_FIELDS = (
    "L", "d", "d_prime", "V", "max_T", "heads", "fusion_mode",
    "include_embedding_layer", "base_temp", "factor", "temp_init",
    "tau_override", "seed", "precision",
)


@dataclass
class InstructionExample:
    source: str
    target: str
    lang: str = "en"
    line_no: int | None = None


# ---------------------------------------------------------------------------
# JSONL instruction data
# ---------------------------------------------------------------------------


def load_jsonl(path) -> list[InstructionExample]:
    examples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise SchemaError(f"{path}:{lineno}: expected an object")
            for key in ("source", "target"):
                if key not in obj or not isinstance(obj[key], str) or not obj[key].strip():
                    raise SchemaError(f"{path}:{lineno}: missing or empty {key!r}")
            examples.append(InstructionExample(
                source=obj["source"], target=obj["target"],
                lang=str(obj.get("lang", "en")), line_no=lineno))
    if not examples:
        warnings.warn(f"{path}: no examples loaded")
    return examples


def save_jsonl(path, examples) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(json.dumps({"source": ex.source, "target": ex.target, "lang": ex.lang},
                                sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# toy tasks
# ---------------------------------------------------------------------------

TOY_KINDS = ("copy", "tagmap", "xnli-like")

# cue word -> entailment-style label, by position in the word lists
_CUE_TO_LABEL = dict(zip(CUE_WORDS, LABEL_WORDS))


def generate_examples(kind: str, n: int, seed: int, vocab: Vocabulary) -> list[InstructionExample]:
    """Deterministic synthetic instruction data.

    ``copy``      a two-filler-plus-answer body; the target is the source
                  tail (the answer word). Answer words come from a small
                  alphabet disjoint from the fillers, because a frozen
                  random decoder has no positional-retrieval circuits and
                  can only learn identity-based selection.
    ``tagmap``    target tags each source word through a seeded fixed map.
    ``xnli-like`` a cue word embedded in filler decides a 3-way label;
                  labels are balanced by construction.
    """
    if kind not in TOY_KINDS:
        raise ConfigError(f"unknown toy task kind {kind!r}, expected one of {TOY_KINDS}")
    if n < 1:
        raise ContractError(f"n must be >= 1, got {n}")
    rng = component_rng(seed, SEED_DATA)
    words = [vocab.tokens[i] for i in content_word_ids(vocab)]
    if len(words) < 3:
        raise ConfigError("vocabulary has too few content words for toy tasks")
    examples = []
    if kind == "copy":
        n_answers = max(2, len(words) // 3)
        answers, fillers = words[:n_answers], words[n_answers:]
        for _ in range(n):
            body = [fillers[int(rng.integers(0, len(fillers)))] for _ in range(2)]
            body.append(answers[int(rng.integers(0, len(answers)))])
            examples.append(InstructionExample("copy " + " ".join(body), body[-1]))
    elif kind == "tagmap":
        tag_of = {w: LABEL_WORDS[int(rng.integers(0, len(LABEL_WORDS)))] for w in words}
        for _ in range(n):
            k = int(rng.integers(2, 5))
            body = [words[i] for i in rng.integers(0, len(words), k)]
            examples.append(InstructionExample("tag " + " ".join(body),
                                               " ".join(tag_of[w] for w in body)))
    else:
        cues = list(CUE_WORDS) * (n // len(CUE_WORDS) + 1)
        for i in range(n):
            cue = cues[i]
            premise = [words[j] for j in rng.integers(0, len(words), 3)]
            hypothesis = [words[j] for j in rng.integers(0, len(words), 2)]
            source = "nli " + " ".join(premise) + f" {cue} " + " ".join(hypothesis)
            examples.append(InstructionExample(source, _CUE_TO_LABEL[cue]))
        rng.shuffle(examples)
    return examples


def shift_script(examples, vocab: Vocabulary) -> list[InstructionExample]:
    """Remap every source word through the twin bijection (targets stay put).

    Emulates evaluating the same task in an unseen script: the frozen
    encoder embeds twins close to the originals, the way a multilingual
    encoder aligns languages.
    """
    offset = vocab.twin_offset()
    out = []
    for ex in examples:
        shifted = []
        for word in ex.source.split():
            wid = vocab.index.get(word)
            if wid is None or wid >= offset:
                shifted.append(word)
            else:
                shifted.append(vocab.tokens[wid + offset])
        out.append(InstructionExample(" ".join(shifted), ex.target, lang="shifted"))
    return out


def gen_toy_task(kind: str, n: int, seed: int, vocab: Vocabulary, path=None):
    """Generate a toy split, optionally writing it as JSONL."""
    examples = generate_examples(kind, n, seed, vocab)
    if path is not None:
        save_jsonl(path, examples)
    return examples


# ---------------------------------------------------------------------------
# hidden-state stacks
# ---------------------------------------------------------------------------


def export_hidden_states(path, stacks) -> None:
    stacks = [np.asarray(s) for s in stacks]
    if not stacks:
        raise ContractError("no stacks to export")
    shapes = {s.shape[1:] for s in stacks}
    if any(s.ndim != 3 for s in stacks) or len(shapes) != 1:
        raise ContractError(f"stacks must share one (L, d), got {sorted(shapes)}")
    l, d = stacks[0].shape[1:]
    with open(path, "wb") as fh:
        fh.write(HIDDEN_MAGIC)
        fh.write(struct.pack("<4I", FORMAT_VERSION, len(stacks), l, d))
        for s in stacks:
            fh.write(struct.pack("<I", s.shape[0]))
            fh.write(np.ascontiguousarray(s, dtype="<f4").tobytes())


def import_hidden_states(path) -> list[np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 20:
        raise FileLengthError(f"{path}: too short for a hidden-state header")
    if blob[:4] != HIDDEN_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}")
    version, n, l, d = struct.unpack_from("<4I", blob, 4)
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    stacks = []
    offset = 20
    for _ in range(n):
        if offset + 4 > len(blob):
            raise FileLengthError(f"{path}: truncated before example count {len(stacks)}")
        (t,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        nbytes = t * l * d * 4
        if offset + nbytes > len(blob):
            raise FileLengthError(f"{path}: truncated inside example {len(stacks)}")
        arr = np.frombuffer(blob, dtype="<f4", count=t * l * d, offset=offset).reshape(t, l, d)
        stacks.append(arr.copy())
        offset += nbytes
    if offset != len(blob):
        raise FormatError(f"{path}: {len(blob) - offset} trailing bytes")
    return stacks


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def _config_header(config: RunConfig) -> dict:
    fields = {name: getattr(config, name) for name in (
        "L", "d", "d_prime", "V", "max_T", "heads", "fusion_mode", "base_temp",
        "factor", "temp_init", "tau_override", "include_embedding_layer",
        "loss_reduction", "epochs", "lr_base", "batch", "seed", "precision", "grad_clip",
    )}
    return {"format_version": FORMAT_VERSION, "config": fields}


def checkpoint_bytes(model: BridgeModel) -> bytes:
    """Serialize the trainable tensors (sorted by name) behind a config header."""
    header = json.dumps(_config_header(model.config), sort_keys=True,
                        separators=(",", ":")).encode("utf-8")
    out = [CHECKPOINT_MAGIC, struct.pack("<2I", FORMAT_VERSION, len(header)), header]
    tensors = sorted(model.trainables(), key=lambda nt: nt[0])
    out.append(struct.pack("<I", len(tensors)))
    for name, t in tensors:
        nb = name.encode("utf-8")
        out.append(struct.pack("<H", len(nb)))
        out.append(nb)
        out.append(struct.pack("<B", t.ndim))
        out.append(struct.pack(f"<{t.ndim}I", *t.shape) if t.ndim else b"")
        out.append(np.ascontiguousarray(t.data, dtype="<f4").tobytes())
    return b"".join(out)


def save_checkpoint(model: BridgeModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(model))


def _read_checkpoint(blob: bytes, path):
    if len(blob) < 12 or blob[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint file")
    version, header_len = struct.unpack_from("<2I", blob, 4)
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if len(blob) < 12 + header_len + 4:
        raise FileLengthError(f"{path}: truncated header")
    header = json.loads(blob[12:12 + header_len].decode("utf-8"))
    offset = 12 + header_len
    tensors = {}
    try:
        (count,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", blob, offset)
            offset += 2
            name = blob[offset:offset + nlen].decode("utf-8")
            offset += nlen
            (ndim,) = struct.unpack_from("<B", blob, offset)
            offset += 1
            shape = struct.unpack_from(f"<{ndim}I", blob, offset) if ndim else ()
            offset += 4 * ndim
            nvals = int(np.prod(shape)) if ndim else 1
            if offset + 4 * nvals > len(blob):
                raise FileLengthError(f"{path}: truncated tensor {name}")
            tensors[name] = np.frombuffer(blob, dtype="<f4", count=nvals, offset=offset).reshape(shape)
            offset += 4 * nvals
    except struct.error as exc:
        raise FileLengthError(f"{path}: truncated tensor table") from exc
    return header, tensors


def load_checkpoint(path, expect: RunConfig | None = None,
                    vocab: Vocabulary | None = None) -> BridgeModel:
    """Rebuild a bridge model: backbones from the header seed, trainables
    from the stored tensors. With ``expect``, structural fields must match."""
    with open(path, "rb") as fh:
        blob = fh.read()
    header, tensors = _read_checkpoint(blob, path)
    config = RunConfig(**header["config"])
    if expect is not None:
        mismatched = [f for f in STRUCTURAL_FIELDS
                      if getattr(expect, f) != getattr(config, f)]
        if mismatched:
            raise CompatibilityError(
                f"{path}: checkpoint differs from the active config in: {', '.join(mismatched)}")
    model = BridgeModel(config, vocab=vocab)
    expected = {name for name, _ in model.trainables()}
    stored = set(tensors)
    if expected != stored:
        missing = sorted(expected - stored)
        extra = sorted(stored - expected)
        raise CompatibilityError(f"{path}: tensor set mismatch (missing {missing}, extra {extra})")
    for name, t in model.trainables():
        arr = tensors[name].astype(t.data.dtype)
        if arr.shape != t.shape:
            raise CompatibilityError(f"{path}: {name} has shape {arr.shape}, expected {t.shape}")
        t.data[...] = arr
    return model
