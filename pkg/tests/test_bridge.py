"""Bridge pipeline: projection, end-to-end loss, frozen-gradient property,
and the last-layer mode's equivalence to a hand-wired pipeline."""

import math

import numpy as np
import pytest

from layerbridge import tensor as T
from layerbridge.bridge import BridgeModel, batch_forward, init_projection, project
from layerbridge.config import RunConfig
from layerbridge.data import InstructionExample
from layerbridge.errors import ContractError, ShapeError
from layerbridge.fusion import FusedSequence, last_layer_fuse
from layerbridge.gradcheck import bridge_grad_errors, random_pairs
from layerbridge.tensor import Tape, Tensor, backward
from layerbridge.vocab import EOS_ID, TokenSequence

SMALL = dict(L=4, d=8, d_prime=16, V=32, max_T=16, precision="f64")


def small_model(mode="global", seed=0, **kw):
    return BridgeModel(RunConfig(fusion_mode=mode, seed=seed, **{**SMALL, **kw}))


def proj_params(weight, bias):
    from layerbridge.bridge import ProjectionParams

    return ProjectionParams(weight=Tensor(weight, requires_grad=True),
                            bias=Tensor(bias, requires_grad=True))


class TestProject:
    def test_identity(self):
        rng = np.random.default_rng(0)
        fused = FusedSequence(vectors=Tensor(rng.normal(size=(3, 4))), weights=np.ones(1))
        p = proj_params(np.eye(4), np.zeros(4))
        assert np.array_equal(project(fused, p).data, fused.vectors.data)

    def test_zero_vector_gives_bias(self):
        fused = FusedSequence(vectors=Tensor(np.zeros((2, 3))), weights=np.ones(1))
        p = proj_params(np.zeros((3, 5)), np.arange(5.0))
        assert np.array_equal(project(fused, p).data, np.broadcast_to(np.arange(5.0), (2, 5)))

    def test_hand_case(self):
        # paper-orientation W_p rows [[1,0],[0,1],[1,1]] maps (2,5) -> (2,5,7)
        fused = FusedSequence(vectors=Tensor([[2.0, 5.0]]), weights=np.ones(1))
        p = proj_params(np.array([[1.0, 0.0, 1.0], [0.0, 1.0, 1.0]]), np.zeros(3))
        assert np.array_equal(project(fused, p).data, [[2.0, 5.0, 7.0]])

    def test_dimension_mismatch(self):
        fused = FusedSequence(vectors=Tensor(np.ones((2, 3))), weights=np.ones(1))
        with pytest.raises(ShapeError):
            project(fused, proj_params(np.ones((4, 5)), np.zeros(5)))


class TestBridgeForward:
    def test_untrained_loss_near_vocab_entropy(self):
        model = BridgeModel(RunConfig(precision="f64", seed=5))
        ex = InstructionExample("nli w00 w01 then w02 w03", "entailment")
        loss, diag = model.forward(ex)
        bound = 2.0 * math.log(64.0)
        assert 0.0 <= loss.item() <= bound
        assert abs(loss.item() - math.log(64.0)) < 1.0
        assert np.all(diag["per_position_loss"] >= 0.0)

    def test_bit_identical_losses(self):
        model = small_model("tokenwise", seed=2)
        ex = InstructionExample("nli w00 w01 then w02", "entailment")
        a = model.forward(ex)[0].item()
        b = model.forward(ex)[0].item()
        assert a == b

    def test_empty_source_or_target(self):
        model = small_model()
        with pytest.raises(ContractError):
            model.forward(InstructionExample("  ", "entailment"))
        with pytest.raises(ContractError):
            model.forward_ids(TokenSequence([4]), TokenSequence([]))

    @pytest.mark.parametrize("mode", ["last", "global", "tokenwise"])
    def test_gradients_match_finite_differences(self, mode):
        model = small_model(mode, seed=4)
        errs = bridge_grad_errors(model, random_pairs(4, 32, n_examples=1))
        assert max(errs.values()) <= 1e-6, errs

    def test_diagnostics_weights_normalized(self):
        for mode in ("last", "global", "tokenwise"):
            model = small_model(mode, seed=6)
            _, diag = model.forward(InstructionExample("nli w00 w01 but w02", "neutral"))
            rows = np.atleast_2d(diag["weights"])
            assert np.allclose(rows.sum(axis=-1), 1.0, atol=1e-6)
            assert np.all(rows >= 0.0)


class TestFrozenGradients:
    def test_no_gradient_entries_for_backbones(self):
        model = small_model("tokenwise", seed=1)
        with Tape() as tape:
            loss, _ = model.forward(InstructionExample("nli w00 w01 then w02", "entailment"))
        grads = backward(tape, loss)
        frozen_ids = {t.tid for _, t in model.encoder.named_tensors()}
        frozen_ids |= {t.tid for _, t in model.decoder.named_tensors()}
        assert not frozen_ids & set(grads)
        for name, p in model.trainables():
            assert p.tid in grads, name


class TestLastModeEquivalence:
    def test_matches_hand_wired_final_layer_pipeline(self):
        model = small_model("last", seed=3)
        rng = np.random.default_rng(33)
        for _ in range(100):
            src = TokenSequence([int(x) for x in rng.integers(4, 16, rng.integers(2, 8))])
            tgt = TokenSequence([int(x) for x in rng.integers(4, 16, rng.integers(1, 4))])
            loss, _ = model.forward_ids(src, tgt)

            stack = model.encoder.encode(src)
            z = stack[:, -1, :] @ model.projection.weight.data + model.projection.bias.data
            full = TokenSequence(tgt.ids + [EOS_ID])
            logits = model.decoder.logits(Tensor(z), full).data
            shifted = logits - logits.max(axis=-1, keepdims=True)
            logp = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
            hand = float(-logp[np.arange(len(full.ids)), full.ids].mean())
            assert abs(loss.item() - hand) <= 1e-12


class TestBatchForward:
    def test_single_equals_forward(self):
        model = small_model(seed=7)
        ex = InstructionExample("nli w00 w01 maybe w02", "neutral")
        assert batch_forward(model, [ex]).item() == model.forward(ex)[0].item()

    def test_mean_of_two(self):
        model = small_model(seed=8)
        a = InstructionExample("nli w00 w01 then w02", "entailment")
        b = InstructionExample("nli w03 w04 but w05", "contradiction")
        la = model.forward(a)[0].item()
        lb = model.forward(b)[0].item()
        assert batch_forward(model, [a, b]).item() == pytest.approx((la + lb) / 2.0, rel=1e-15)

    def test_order_independent(self):
        model = small_model(seed=9)
        a = InstructionExample("nli w00 w01 then w02", "entailment")
        b = InstructionExample("nli w03 w04 but w05", "contradiction")
        assert batch_forward(model, [a, b]).item() == pytest.approx(
            batch_forward(model, [b, a]).item(), rel=1e-15)

    def test_empty_batch(self):
        with pytest.raises(ContractError):
            batch_forward(small_model(), [])


class TestLossReduction:
    def test_sum_mode_scales_by_positions(self):
        mean_model = small_model(seed=10, loss_reduction="mean")
        sum_model = small_model(seed=10, loss_reduction="sum")
        src = TokenSequence([4, 5, 6])
        tgt = TokenSequence([7, 8])
        lm = mean_model.forward_ids(src, tgt)[0].item()
        ls = sum_model.forward_ids(src, tgt)[0].item()
        assert ls == pytest.approx(lm * 3.0, rel=1e-12)  # 2 target tokens + EOS
