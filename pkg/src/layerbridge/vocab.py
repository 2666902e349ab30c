"""Whitespace tokenizer with byte fallback over an explicit vocabulary file.

Vocabulary file format: UTF-8 text, one token per line, line number = id.
Ids 0-3 are reserved for PAD, UNK, BOS, EOS. Byte-fallback tokens use the
surface form ``<0xNN>``; a word not in the vocabulary is split into its
bytes when every byte token exists, and maps to UNK otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import ConfigError, ContractError

PAD_ID = 0
UNK_ID = 1
BOS_ID = 2
EOS_ID = 3
RESERVED = ("<pad>", "<unk>", "<bos>", "<eos>")

LABEL_WORDS = ("entailment", "neutral", "contradiction")
CUE_WORDS = ("then", "maybe", "but")
TASK_MARKERS = ("copy", "tag", "nli")


@dataclass
class TokenSequence:
    ids: list[int]

    def __len__(self) -> int:
        return len(self.ids)


@dataclass
class Vocabulary:
    tokens: list[str]
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        if len(self.tokens) < len(RESERVED):
            raise ConfigError(f"vocabulary needs at least {len(RESERVED)} entries")
        self.index = {}
        for i, tok in enumerate(self.tokens):
            if tok in self.index:
                raise ConfigError(f"duplicate vocabulary token {tok!r} at id {i}")
            self.index[tok] = i

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def byte_ids(self) -> dict[int, int]:
        out = {}
        for i, tok in enumerate(self.tokens):
            if len(tok) == 6 and tok.startswith("<0x") and tok.endswith(">"):
                try:
                    out[int(tok[3:5], 16)] = i
                except ValueError:
                    pass
        return out

    def twin_offset(self) -> int:
        """Id offset between a surface token and its shifted-script twin."""
        return len(self.tokens) // 2


def load_vocab(path) -> Vocabulary:
    with open(path, encoding="utf-8") as fh:
        tokens = [line.rstrip("\n") for line in fh]
    while tokens and tokens[-1] == "":
        tokens.pop()
    return Vocabulary(tokens)


def write_vocab(path, vocab: Vocabulary) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for tok in vocab.tokens:
            fh.write(tok + "\n")


def default_vocab(size: int) -> Vocabulary:
    """Standard toy vocabulary: reserved ids, label words, cue words, task
    markers, filler content words, then shifted-script twins of the whole
    lower half (twin of id j is j + size//2, surface form ``z`` + base).
    """
    if size < 24 or size % 2 != 0:
        raise ConfigError(f"default vocabulary needs an even size >= 24, got {size}")
    half = size // 2
    base = list(RESERVED) + list(LABEL_WORDS) + list(CUE_WORDS) + list(TASK_MARKERS)
    if len(base) > half:
        raise ConfigError(f"vocabulary size {size} too small for the toy word lists")
    base += [f"w{i:02d}" for i in range(half - len(base))]
    return Vocabulary(base + ["z" + tok for tok in base])


def content_word_ids(vocab: Vocabulary) -> list[int]:
    """Ids of the filler words (the w## entries in the lower half)."""
    return [i for i, tok in enumerate(vocab.tokens[: vocab.twin_offset()]) if tok.startswith("w") and tok[1:].isdigit()]


def tokenize(text: str, vocab: Vocabulary) -> TokenSequence:
    """Deterministic whitespace split with byte fallback for unknown words."""
    if not text.strip():
        raise ContractError("cannot tokenize empty text")
    byte_ids = vocab.byte_ids
    ids: list[int] = []
    for word in text.split():
        wid = vocab.index.get(word)
        if wid is not None:
            ids.append(wid)
            continue
        raw = word.encode("utf-8")
        if byte_ids and all(b in byte_ids for b in raw):
            ids.extend(byte_ids[b] for b in raw)
        else:
            ids.append(UNK_ID)
    return TokenSequence(ids)


def detokenize(seq: TokenSequence, vocab: Vocabulary) -> str:
    """Inverse of tokenize for in-vocabulary text (single-space joined)."""
    words: list[str] = []
    pending: bytearray = bytearray()
    byte_values = {i: b for b, i in vocab.byte_ids.items()}

    def flush():
        if pending:
            words.append(pending.decode("utf-8", errors="replace"))
            pending.clear()

    for i in seq.ids:
        if i in byte_values:
            pending.append(byte_values[i])
        else:
            flush()
            words.append(vocab.tokens[i])
    flush()
    return " ".join(words)
