"""Adam training of the fusion + projection parameters with cosine decay.

The optimizer is pinned to Adam (0.9/0.999/1e-8, no weight decay); the
schedule is lr_base * 0.5 * (1 + cos(pi * step / total_steps)). Training is
bit-deterministic for a fixed config and seed: data order, gradient
accumulation order, and parameter updates all follow one canonical order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bridge import BridgeModel, batch_forward
from .config import RunConfig
from .errors import ContractError, ShapeError
from .models import SEED_DATA, component_rng
from .tensor import Tape, Tensor, backward, finite_checks
from .vocab import tokenize


def cosine_lr(step: int, total_steps: int, lr_base: float) -> float:
    if total_steps < 1:
        raise ContractError(f"total_steps must be >= 1, got {total_steps}")
    if not 0 <= step <= total_steps:
        raise ContractError(f"step {step} outside [0, {total_steps}]")
    return lr_base * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


@dataclass
class OptimState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: list[tuple[str, Tensor]], grads: dict, state: OptimState, lr: float) -> None:
    """Bias-corrected Adam update, applied in the given parameter order.

    ``grads`` maps parameter name to a gradient array; parameters without
    an entry are skipped (their moments do not advance either).
    """
    state.step += 1
    t = state.step
    for name, p in params:
        g = grads.get(name)
        if g is None:
            continue
        g = np.asarray(g, dtype=p.data.dtype)
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match {name} {p.shape}")
        if state.weight_decay:
            g = g + state.weight_decay * p.data
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.m[name] = m
        state.v[name] = v
        m_hat = m / (1.0 - state.beta1**t)
        v_hat = v / (1.0 - state.beta2**t)
        p.data -= (lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.data.dtype)


@dataclass
class TrainRunLog:
    steps: list = field(default_factory=list)        # (step, lr, loss)
    epoch_means: list = field(default_factory=list)  # mean loss per epoch
    final_weights: np.ndarray | None = None          # layer-weight snapshot

    def to_csv(self) -> str:
        lines = ["step,lr,loss"]
        lines += [f"{s},{lr!r},{loss!r}" for s, lr, loss in self.steps]
        return "\n".join(lines) + "\n"

    def summary_text(self, config: RunConfig) -> str:
        lines = ["# train summary", config.echo(), ""]
        for i, mean in enumerate(self.epoch_means):
            lines.append(f"epoch {i} mean loss = {mean!r}")
        if self.steps:
            lines.append(f"final step loss = {self.steps[-1][2]!r}")
        if self.final_weights is not None:
            row = ",".join(f"{w:.6f}" for w in np.atleast_1d(self.final_weights))
            lines.append(f"layer weights = {row}")
        return "\n".join(lines) + "\n"


def _grad_global_norm(grads: dict) -> float:
    total = 0.0
    for g in grads.values():
        total += float(np.sum(np.asarray(g, dtype=np.float64) ** 2))
    return math.sqrt(total)


def snapshot_layer_weights(model: BridgeModel, probe=None) -> np.ndarray:
    """Current layer-weight distribution: direct for global/last modes, mean
    over the probe examples' tokens for token-wise mode."""
    mode = model.config.fusion_mode
    if mode != "tokenwise":
        return model.fuse_stack(np.zeros((1, model.config.fused_layers, model.config.d),
                                         dtype=model.config.np_dtype)).weights
    if not probe:
        return np.full(model.config.fused_layers, 1.0 / model.config.fused_layers)
    rows = []
    for ex in probe:
        stack = model.encode_stack(tokenize(ex.source, model.vocab))
        rows.append(model.fuse_stack(stack).weights)
    return np.concatenate(rows, axis=0).mean(axis=0)


def train(model: BridgeModel, dataset, config: RunConfig) -> TrainRunLog:
    """Run epochs * ceil(N / batch) optimizer steps over the dataset.

    Only the model's trainable tensors are updated; a NaN loss aborts with
    the failing step number.
    """
    dataset = list(dataset)
    if not dataset:
        raise ContractError("training dataset must be nonempty")
    log = TrainRunLog()
    if config.epochs == 0:
        log.final_weights = snapshot_layer_weights(model, dataset[: min(8, len(dataset))])
        return log
    n = len(dataset)
    steps_per_epoch = math.ceil(n / config.batch)
    total_steps = config.epochs * steps_per_epoch
    params = model.trainables()
    state = OptimState()
    rng = component_rng(config.seed, SEED_DATA)
    step = 0
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        epoch_losses = []
        for b in range(steps_per_epoch):
            batch = [dataset[i] for i in order[b * config.batch:(b + 1) * config.batch]]
            lr = cosine_lr(step, total_steps, config.lr_base)
            # Per-op NaN checks stay off on the training fast path; the
            # per-step loss check below is the abort point instead.
            with finite_checks(False), Tape() as tape:
                loss = batch_forward(model, batch)
            loss_val = loss.item()
            if not math.isfinite(loss_val):
                raise RuntimeError(f"non-finite loss {loss_val} at step {step}")
            with finite_checks(False):
                grad_map = backward(tape, loss)
            grads = {name: grad_map[p.tid].data for name, p in params if p.tid in grad_map}
            if config.grad_clip is not None:
                norm = _grad_global_norm(grads)
                if norm > config.grad_clip:
                    scale_by = config.grad_clip / norm
                    grads = {k: g * scale_by for k, g in grads.items()}
            adam_step(params, grads, state, lr)
            log.steps.append((step, lr, loss_val))
            epoch_losses.append(loss_val)
            step += 1
        log.epoch_means.append(float(np.mean(epoch_losses)))
    log.final_weights = snapshot_layer_weights(model, dataset[: min(8, len(dataset))])
    return log
