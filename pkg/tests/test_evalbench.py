"""Label-scoring evaluation, layer-weight inspection, latency harness."""

import statistics
import time
import warnings

import numpy as np
import pytest

from layerbridge.bridge import BridgeModel
from layerbridge.config import RunConfig
from layerbridge.data import InstructionExample, generate_examples
from layerbridge.errors import ConfigError, DataError
from layerbridge.evalbench import (
    evaluate_accuracy,
    inspect_layer_weights,
    latency_bench,
    latency_csv,
)
from layerbridge.tensor import finite_checks
from layerbridge.trainer import train
from layerbridge.vocab import LABEL_WORDS, TokenSequence, default_vocab

LABELS = list(LABEL_WORDS)


def trained_model(seed=0, n=120, epochs=20, mode="global"):
    cfg = RunConfig(fusion_mode=mode, seed=seed, lr_base=3e-2, epochs=epochs)
    vocab = default_vocab(cfg.V)
    data = generate_examples("xnli-like", n, cfg.seed, vocab)
    model = BridgeModel(cfg, vocab=vocab)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        train(model, data, cfg)
    return model, data


class TestEvaluateAccuracy:
    def test_saturated_model_scores_one(self):
        model, data = trained_model()
        report = evaluate_accuracy(model, data, LABELS)
        assert report.accuracy == 1.0

    def test_untrained_prediction_deterministic(self):
        ex = InstructionExample("nli w00 w01 maybe w02 w03", "neutral")
        preds = []
        for _ in range(2):
            model = BridgeModel(RunConfig(seed=9))
            report = evaluate_accuracy(model, [ex], LABELS)
            preds.append(sorted(report.confusion))
        assert preds[0] == preds[1]

    def test_empty_label_set(self):
        with pytest.raises(ConfigError):
            evaluate_accuracy(BridgeModel(RunConfig(seed=0)), [], [])

    def test_target_outside_labels_names_line(self):
        model = BridgeModel(RunConfig(seed=0))
        bad = InstructionExample("nli w00 then w01", "w05", line_no=12)
        with pytest.raises(DataError, match="12"):
            evaluate_accuracy(model, [bad], LABELS)

    def test_shuffle_invariant(self):
        model, data = trained_model(n=60, epochs=4)
        a = evaluate_accuracy(model, data, LABELS).accuracy
        order = np.random.default_rng(0).permutation(len(data))
        b = evaluate_accuracy(model, [data[i] for i in order], LABELS).accuracy
        assert a == b

    def test_report_invariants(self):
        model, data = trained_model(n=60, epochs=2)
        report = evaluate_accuracy(model, data, LABELS)
        assert 0.0 <= report.accuracy <= 1.0
        per_label_counts = {}
        for (true, _), cnt in report.confusion.items():
            per_label_counts[true] = per_label_counts.get(true, 0) + cnt
        assert sum(per_label_counts.values()) == report.n
        assert report.to_csv().splitlines()[0] == "lang,n,correct,accuracy"


class TestInspectWeights:
    def test_global_zero_logits_uniform(self):
        model = BridgeModel(RunConfig(fusion_mode="global", seed=0))
        model.gparams.layer_logits.data[...] = 0.0
        lines = inspect_layer_weights(model).strip().splitlines()
        assert lines[0] == "layer,weight"
        assert len(lines) == 1 + 8
        assert all(line.endswith("0.125000") for line in lines[1:])

    def test_trained_rows_sum_to_one(self):
        model, _ = trained_model(n=60, epochs=3)
        lines = inspect_layer_weights(model).strip().splitlines()[1:]
        total = sum(float(line.split(",")[1]) for line in lines)
        assert abs(total - 1.0) <= 1e-6

    def test_last_mode_exports_one_hot(self):
        model = BridgeModel(RunConfig(fusion_mode="last", seed=0))
        lines = inspect_layer_weights(model).strip().splitlines()[1:]
        weights = [float(line.split(",")[1]) for line in lines]
        assert weights == [0.0] * 7 + [1.0]

    def test_tokenwise_mean_matches_per_token_rows(self):
        model = BridgeModel(RunConfig(fusion_mode="tokenwise", seed=1))
        probe = generate_examples("xnli-like", 3, 0, model.vocab)
        lines = inspect_layer_weights(model, probe).strip().splitlines()
        assert lines[0] == "token_index,layer,weight"
        mean_rows = {}
        token_rows = {}
        for line in lines[1:]:
            token, layer, w = line.split(",")
            if token == "mean":
                mean_rows[int(layer)] = float(w)
            else:
                token_rows.setdefault(int(layer), []).append(float(w))
        for layer, w in mean_rows.items():
            assert w == pytest.approx(np.mean(token_rows[layer]), abs=2e-6)

    def test_tokenwise_requires_probe(self):
        model = BridgeModel(RunConfig(fusion_mode="tokenwise", seed=0))
        with pytest.raises(ConfigError):
            inspect_layer_weights(model)


BENCH_EX = InstructionExample("nli w00 w01 then w02 w03", "entailment")


class TestLatencyBench:
    def test_rep_and_warmup_floors(self):
        cfg = RunConfig(seed=0)
        with pytest.raises(ConfigError):
            latency_bench(cfg, BENCH_EX, reps=29)
        with pytest.raises(ConfigError):
            latency_bench(cfg, BENCH_EX, reps=30, warmup=4)

    def test_report_shape_and_csv(self):
        reports = latency_bench(RunConfig(seed=0), BENCH_EX, reps=30)
        assert [r.mode for r in reports] == ["last", "global", "tokenwise"]
        for r in reports:
            assert r.p95_ms >= r.median_ms >= 0.0
            assert r.reps == 30 and r.warmup == 5
        csv = latency_csv(reports)
        assert csv.splitlines()[0] == "mode,mean_ms,median_ms,p95_ms"
        assert len(csv.strip().splitlines()) == 4

    def test_tokenwise_at_least_global(self):
        reports = {r.mode: r for r in latency_bench(RunConfig(seed=0), BENCH_EX, reps=40)}
        assert reports["tokenwise"].median_ms >= reports["global"].median_ms

    def test_last_and_global_within_band(self):
        reports = {r.mode: r for r in latency_bench(RunConfig(seed=0), BENCH_EX, reps=60)}
        gap = abs(reports["last"].median_ms - reports["global"].median_ms)
        assert gap <= 0.10 * reports["global"].median_ms

    def test_doubling_source_roughly_doubles_last_mode(self):
        # linear regime: width large enough that per-op data cost dominates
        cfg = RunConfig(L=2, d=512, d_prime=64, V=64, max_T=80, fusion_mode="last", seed=0)
        model = BridgeModel(cfg)
        model.cache_encoder = False
        tgt = TokenSequence([5, 6])
        medians = {}
        with finite_checks(False):
            for t_len in (16, 32):
                src = TokenSequence([int(x) for x in
                                     np.random.default_rng(0).integers(4, 30, t_len)])
                for _ in range(5):
                    model.forward_ids(src, tgt)
                times = []
                for _ in range(30):
                    t0 = time.perf_counter()
                    model.forward_ids(src, tgt)
                    times.append(time.perf_counter() - t0)
                medians[t_len] = statistics.median(times)
        ratio = medians[32] / medians[16]
        assert 1.3 <= ratio <= 2.7, medians
