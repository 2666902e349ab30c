"""Optimizer, schedule, and the end-to-end training loop: loss descent,
freezing, scheduler conformance, and bit determinism."""

import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from layerbridge.bridge import BridgeModel
from layerbridge.config import RunConfig
from layerbridge.data import checkpoint_bytes, generate_examples
from layerbridge.errors import ContractError, ShapeError
from layerbridge.tensor import Tensor
from layerbridge.trainer import OptimState, TrainRunLog, adam_step, cosine_lr, train
from layerbridge.vocab import default_vocab

COPY_RUN = dict(seed=2, lr_base=3e-2, epochs=30)


def copy_setup(n=100, **overrides):
    cfg = RunConfig(**{**COPY_RUN, **overrides})
    vocab = default_vocab(cfg.V)
    data = generate_examples("copy", n, cfg.seed, vocab)
    return cfg, vocab, data


class TestCosineLr:
    def test_endpoints_and_midpoint(self):
        assert cosine_lr(0, 100, 3e-5) == 3e-5
        assert cosine_lr(100, 100, 3e-5) == pytest.approx(0.0, abs=1e-20)
        assert cosine_lr(50, 100, 3e-5) == pytest.approx(1.5e-5, rel=1e-12)

    def test_step_out_of_range(self):
        with pytest.raises(ContractError):
            cosine_lr(11, 10, 1e-3)
        with pytest.raises(ContractError):
            cosine_lr(0, 0, 1e-3)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(min_value=1, max_value=10_000), st.integers(min_value=0, max_value=10_000))
    def test_bounded_and_decreasing(self, total, step):
        step = min(step, total)
        lr = cosine_lr(step, total, 1.0)
        assert 0.0 <= lr <= 1.0
        if step + 1 <= total:
            assert cosine_lr(step + 1, total, 1.0) <= lr


class TestAdamStep:
    def test_zero_gradient_leaves_params(self):
        p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
        before = p.data.copy()
        adam_step([("p", p)], {"p": np.zeros(2)}, OptimState(), lr=0.1)
        assert np.array_equal(p.data, before)

    def test_first_step_magnitude_is_lr(self):
        p = Tensor(np.array([1.0, 1.0]), requires_grad=True)
        adam_step([("p", p)], {"p": np.array([0.5, -3.0])}, OptimState(), lr=0.1)
        # bias correction makes the first update lr * sign(g) up to eps
        assert np.allclose(p.data, [1.0 - 0.1, 1.0 + 0.1], atol=1e-6)

    def test_quadratic_descent_monotone(self):
        p = Tensor(np.array([1.0]), requires_grad=True)
        state = OptimState()
        values = [float(p.data[0] ** 2)]
        for _ in range(10):
            adam_step([("p", p)], {"p": 2.0 * p.data}, state, lr=0.05)
            values.append(float(p.data[0] ** 2))
        assert all(b < a for a, b in zip(values, values[1:]))

    def test_shape_mismatch(self):
        p = Tensor(np.zeros(3), requires_grad=True)
        with pytest.raises(ShapeError):
            adam_step([("p", p)], {"p": np.zeros(4)}, OptimState(), lr=0.1)


class TestTrain:
    def test_copy_task_loss_halves(self):
        cfg, vocab, data = copy_setup()
        model = BridgeModel(cfg, vocab=vocab)
        log = train(model, data, cfg)
        assert log.epoch_means[-1] <= 0.5 * log.epoch_means[0]

    def test_step_count_and_scheduler_conformance(self):
        cfg, vocab, data = copy_setup(n=20, epochs=2, batch=8)
        model = BridgeModel(cfg, vocab=vocab)
        log = train(model, data, cfg)
        total = 2 * math.ceil(20 / 8)
        assert [s for s, _, _ in log.steps] == list(range(total))
        for step, lr, _ in log.steps:
            assert lr == cosine_lr(step, total, cfg.lr_base)

    def test_zero_epochs_is_identity(self):
        cfg, vocab, data = copy_setup(n=10, epochs=0)
        model = BridgeModel(cfg, vocab=vocab)
        before = checkpoint_bytes(model)
        log = train(model, data, cfg)
        assert log.steps == [] and log.epoch_means == []
        assert checkpoint_bytes(model) == before

    def test_frozen_backbones_and_trainables_move(self):
        cfg, vocab, data = copy_setup(n=24, epochs=1)
        model = BridgeModel(cfg, vocab=vocab)
        frozen_before = model.frozen_state_bytes()
        trainable_before = {name: p.data.copy() for name, p in model.trainables()}
        train(model, data, cfg)
        assert model.frozen_state_bytes() == frozen_before
        for name, p in model.trainables():
            assert not np.array_equal(p.data, trainable_before[name]), name

    def test_bit_deterministic_checkpoints_and_logs(self):
        def run():
            cfg, vocab, data = copy_setup(n=40, epochs=2)
            model = BridgeModel(cfg, vocab=vocab)
            log = train(model, data, cfg)
            return checkpoint_bytes(model), log.to_csv(), log.summary_text(cfg)

        c1, l1, s1 = run()
        c2, l2, s2 = run()
        assert c1 == c2 and l1 == l2 and s1 == s2

    def test_loss_decrease_median_over_seeds(self):
        finals, initials = [], []
        for seed in range(5):
            cfg, vocab, data = copy_setup(n=32, epochs=2, seed=seed)
            model = BridgeModel(cfg, vocab=vocab)
            log = train(model, data, cfg)
            initials.append(log.steps[0][2])
            finals.append(log.steps[-1][2])
        assert np.median(finals) < np.median(initials)

    def test_empty_dataset_rejected(self):
        cfg, vocab, _ = copy_setup()
        with pytest.raises(ContractError):
            train(BridgeModel(cfg, vocab=vocab), [], cfg)

    def test_grad_clip_path_runs(self):
        cfg, vocab, data = copy_setup(n=16, epochs=1, grad_clip=0.001)
        model = BridgeModel(cfg, vocab=vocab)
        log = train(model, data, cfg)
        assert len(log.steps) == 2


class TestTrainRunLog:
    def test_csv_round_trips_lr_exactly(self):
        log = TrainRunLog(steps=[(0, 3e-5, 4.125), (1, cosine_lr(1, 7, 3e-5), 3.5)])
        lines = log.to_csv().strip().splitlines()
        assert lines[0] == "step,lr,loss"
        parsed = [line.split(",") for line in lines[1:]]
        assert float(parsed[1][1]) == cosine_lr(1, 7, 3e-5)
        assert float(parsed[0][2]) == 4.125
