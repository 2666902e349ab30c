"""Accuracy via label scoring, layer-weight inspection, latency benchmark.

Classification accuracy avoids free generation: the predicted label is the
candidate whose forced decoding gives the smallest bridge loss (ties break
by label order). The latency benchmark times the full single-example
forward pass, single-threaded, validation off, encoder cache off, and
normalizes by the number of scored target positions.
"""

from __future__ import annotations

import dataclasses
import statistics
import time
from dataclasses import dataclass, field

import numpy as np

from .bridge import BridgeModel
from .config import RunConfig
from .data import InstructionExample
from .errors import ConfigError, DataError
from .fusion import weights_csv
from .tensor import finite_checks
from .trainer import snapshot_layer_weights
from .vocab import tokenize


@dataclass
class EvalReport:
    n: int
    correct: int
    accuracy: float
    per_lang: dict = field(default_factory=dict)       # lang -> (n, correct, accuracy)
    confusion: dict = field(default_factory=dict)      # (true, predicted) -> count

    def to_csv(self) -> str:
        lines = ["lang,n,correct,accuracy"]
        lines.append(f"all,{self.n},{self.correct},{self.accuracy:.6f}")
        for lang in sorted(self.per_lang):
            n, c, a = self.per_lang[lang]
            lines.append(f"{lang},{n},{c},{a:.6f}")
        return "\n".join(lines) + "\n"

    def summary_text(self) -> str:
        lines = [f"accuracy {self.correct}/{self.n} = {self.accuracy:.4f}"]
        for lang in sorted(self.per_lang):
            n, c, a = self.per_lang[lang]
            lines.append(f"  [{lang}] {c}/{n} = {a:.4f}")
        if self.confusion:
            lines.append("confusion (true -> predicted: count):")
            for (t, p), cnt in sorted(self.confusion.items()):
                lines.append(f"  {t} -> {p}: {cnt}")
        return "\n".join(lines) + "\n"


def evaluate_accuracy(model: BridgeModel, examples, labels) -> EvalReport:
    """Score every candidate label per example and pick the loss argmin."""
    labels = list(labels)
    if not labels:
        raise ConfigError("label set must be nonempty")
    examples = list(examples)
    label_seqs = [tokenize(lab, model.vocab) for lab in labels]
    correct = 0
    per_lang: dict = {}
    confusion: dict = {}
    for ex in examples:
        if ex.target not in labels:
            where = f"line {ex.line_no}" if ex.line_no is not None else "unknown line"
            raise DataError(f"target {ex.target!r} not in label set ({where})")
        src = tokenize(ex.source, model.vocab)
        z, _ = model.project_source(src)  # shared across candidate labels
        losses = [model.target_loss(z, seq)[0].item() for seq in label_seqs]
        predicted = labels[int(np.argmin(losses))]
        hit = predicted == ex.target
        correct += hit
        n, c = per_lang.get(ex.lang, (0, 0))
        per_lang[ex.lang] = (n + 1, c + hit)
        confusion[(ex.target, predicted)] = confusion.get((ex.target, predicted), 0) + 1
    per_lang = {lang: (n, c, c / n) for lang, (n, c) in per_lang.items()}
    n_total = len(examples)
    return EvalReport(n=n_total, correct=correct,
                      accuracy=correct / n_total if n_total else 0.0,
                      per_lang=per_lang, confusion=confusion)


def inspect_layer_weights(model: BridgeModel, probe=None) -> str:
    """Layer-weight CSV: one row per layer (global/last), or mean plus
    per-token rows over the probe set (token-wise)."""
    if model.config.fusion_mode != "tokenwise":
        return weights_csv(snapshot_layer_weights(model))
    probe = list(probe or [])
    if not probe:
        raise ConfigError("token-wise inspection needs probe examples")
    rows = []
    for ex in probe:
        stack = model.encode_stack(tokenize(ex.source, model.vocab))
        rows.append(model.fuse_stack(stack).weights)
    return weights_csv(np.concatenate(rows, axis=0))


@dataclass
class LatencyReport:
    mode: str
    mean_ms: float
    median_ms: float
    p95_ms: float
    warmup: int
    reps: int


def latency_csv(reports) -> str:
    lines = ["mode,mean_ms,median_ms,p95_ms"]
    lines += [f"{r.mode},{r.mean_ms:.6f},{r.median_ms:.6f},{r.p95_ms:.6f}" for r in reports]
    return "\n".join(lines) + "\n"


def latency_bench(config: RunConfig, example: InstructionExample, reps: int = 50,
                  warmup: int = 5, modes=("last", "global", "tokenwise")) -> list[LatencyReport]:
    """Wall-clock per-token forward latency for each fusion mode.

    All modes share the same backbones (same seed) and the same input, so
    the only difference is the fusion path itself. Repetitions are
    interleaved round-robin across modes; timing them mode-by-mode picks up
    a systematic warm-up bias against whichever mode runs first.
    """
    if reps < 30:
        raise ConfigError(f"reps must be >= 30, got {reps}")
    if warmup < 5:
        raise ConfigError(f"warmup must be >= 5, got {warmup}")
    models = {}
    for mode in modes:
        cfg = dataclasses.replace(config, fusion_mode=mode).validate()
        models[mode] = BridgeModel(cfg)
        models[mode].cache_encoder = False
    vocab = next(iter(models.values())).vocab
    src = tokenize(example.source, vocab)
    tgt = tokenize(example.target, vocab)
    per_token = len(tgt.ids) + 1  # EOS position is scored too
    times: dict[str, list[float]] = {mode: [] for mode in modes}
    with finite_checks(False):
        for _ in range(warmup):
            for model in models.values():
                model.forward_ids(src, tgt)
        for _ in range(reps):
            for mode, model in models.items():
                t0 = time.perf_counter()
                model.forward_ids(src, tgt)
                times[mode].append((time.perf_counter() - t0) * 1e3 / per_token)
    return [LatencyReport(
        mode=mode,
        mean_ms=float(np.mean(times[mode])),
        median_ms=float(statistics.median(times[mode])),
        p95_ms=float(np.percentile(times[mode], 95)),
        warmup=warmup, reps=reps) for mode in modes]
