"""Whole-bridge gradient acceptance check against the finite-difference oracle.

Runs the full loss at small dimensions in float64 and compares the analytic
gradient of every trainable tensor (both fusion strategies) against central
differences, reporting the worst per-tensor relative error.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from . import tensor as T
from .bridge import BridgeModel
from .config import RunConfig
from .models import component_rng
from .tensor import Tape, backward, finite_diff_grad, grad_rel_error
from .vocab import TokenSequence

GRAD_TOL = 1e-6

# Desk dimensions for the gradient acceptance gate.
CHECK_CONFIG = RunConfig(L=4, d=8, d_prime=16, V=32, max_T=8, precision="f64",
                         heads=4, seed=0)

SEED_GRADCHECK = 99


def random_pairs(seed: int, v: int, n_examples: int = 1, max_src: int = 6,
                 max_tgt: int = 3) -> list[tuple[TokenSequence, TokenSequence]]:
    """Random (source, target) id sequences drawn from the non-reserved range."""
    rng = component_rng(seed, SEED_GRADCHECK)
    lo, hi = 4, v // 2
    pairs = []
    for _ in range(n_examples):
        ts = int(rng.integers(2, max_src + 1))
        tk = int(rng.integers(1, max_tgt + 1))
        pairs.append((TokenSequence([int(x) for x in rng.integers(lo, hi, ts)]),
                      TokenSequence([int(x) for x in rng.integers(lo, hi, tk)])))
    return pairs


def bridge_grad_errors(model: BridgeModel, pairs, eps: float = 1e-5) -> dict[str, float]:
    """Relative error per trainable tensor for the mean loss over ``pairs``."""

    def loss_value(_ignored=None) -> float:
        return float(np.mean([model.forward_ids(s, t)[0].item() for s, t in pairs]))

    with Tape() as tape:
        losses = [T.reshape(model.forward_ids(s, t)[0], (1,)) for s, t in pairs]
        loss = T.scale(T.sum_all(T.concat(losses, axis=0)) if len(losses) > 1
                       else T.reshape(losses[0], ()), 1.0 / len(losses))
    grads = backward(tape, loss)
    errors = {}
    for name, p in model.trainables():
        if p.tid not in grads:
            raise AssertionError(f"no gradient recorded for trainable {name}")
        numeric = finite_diff_grad(loss_value, p, eps)
        errors[name] = grad_rel_error(grads[p.tid].data, numeric.data)
    return errors


def run_grad_check(seed: int, n_examples: int = 1, eps: float = 1e-5,
                   modes=("global", "tokenwise")) -> dict[str, float]:
    """Gradient errors for every trainable of every fusion strategy at one seed."""
    results: dict[str, float] = {}
    for mode in modes:
        cfg = dataclasses.replace(CHECK_CONFIG, fusion_mode=mode, seed=seed).validate()
        model = BridgeModel(cfg)
        pairs = random_pairs(seed, cfg.V, n_examples=n_examples)
        for name, err in bridge_grad_errors(model, pairs, eps=eps).items():
            results[f"{mode}.{name}"] = err
    return results
