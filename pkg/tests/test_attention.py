import math

import numpy as np
import pytest

from star.attention import (
    AttentionConfig,
    ErrorReport,
    attention_forward,
    bitwidth_sweep,
    error_metrics,
    min_integer_bits,
    reference_attention,
    synth_logits,
    tiled_matmul,
)
from star.fxp import FxFormat
from star.softmax_engine import EngineConfig, SoftmaxEngine, reference_softmax

from helpers import kl_scalar

CFG93 = EngineConfig(input_format=FxFormat(9, 3))

# Measured once on the fixed seed below; regression guard, not a theory bound.
FROZEN_ATTENTION_MAX_ABS_ERR = 0.04537515401415762


class TestAttentionConfig:
    def test_head_split_must_divide(self):
        with pytest.raises(ValueError):
            AttentionConfig(seq_len=4, d_model=10, n_heads=3)

    def test_d_head(self):
        assert AttentionConfig(seq_len=4, d_model=32, n_heads=4).d_head == 8


class TestTiledMatmul:
    def test_matches_dense_product(self):
        rng = np.random.default_rng(1)
        a, b = rng.normal(size=(50, 33)), rng.normal(size=(33, 21))
        out, tiles = tiled_matmul(a, b, tile=16)
        assert np.allclose(out, a @ b, rtol=1e-12, atol=1e-12)
        assert tiles == math.ceil(50 / 16) * math.ceil(21 / 16) * math.ceil(33 / 16)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            tiled_matmul(np.zeros((2, 3)), np.zeros((4, 2)), 2)


class TestAttentionForward:
    def test_single_token_copies_value_row(self):
        acfg = AttentionConfig(seq_len=1, d_model=8, n_heads=2)
        rng = np.random.default_rng(5)
        q, k, v = (rng.normal(size=(1, 8)) for _ in range(3))
        out, traces = attention_forward(q, k, v, acfg, CFG93)
        assert np.array_equal(out, v)  # softmax of a singleton is exactly [1.0]
        assert traces[0][0].outputs.tolist() == [1.0]

    def test_equal_keys_give_uniform_attention(self):
        acfg = AttentionConfig(seq_len=8, d_model=16, n_heads=1)
        rng = np.random.default_rng(6)
        q = rng.normal(size=(8, 16))
        k = np.tile(rng.normal(size=(1, 16)), (8, 1))
        v = rng.normal(size=(8, 16))
        out, traces = attention_forward(q, k, v, acfg, CFG93)
        for t in traces[0]:
            assert np.all(np.abs(t.outputs - 1.0 / 8) <= 2.0**-CFG93.divider_frac_bits)
        col_mean = v.mean(axis=0)
        assert np.abs(out - col_mean).max() < 8 * 2.0**-16 * np.abs(v).max() + 1e-12

    def test_random_case_tracks_float_oracle(self):
        acfg = AttentionConfig(seq_len=16, d_model=32, n_heads=2)
        rng = np.random.default_rng(321)
        q, k, v = (rng.normal(size=(16, 32)) for _ in range(3))
        out, _ = attention_forward(q, k, v, acfg, CFG93)
        err = np.abs(out - reference_attention(q, k, v, acfg)).max()
        assert abs(err - FROZEN_ATTENTION_MAX_ABS_ERR) <= 1e-12

    def test_rows_bit_identical_to_standalone_engine(self):
        acfg = AttentionConfig(seq_len=12, d_model=16, n_heads=2)
        rng = np.random.default_rng(77)
        q, k, v = (rng.normal(size=(12, 16)) for _ in range(3))
        _, traces = attention_forward(q, k, v, acfg, CFG93)
        engine = SoftmaxEngine(CFG93)
        for h in range(acfg.n_heads):
            cols = slice(h * acfg.d_head, (h + 1) * acfg.d_head)
            scores = (q[:, cols] @ k[:, cols].T) / math.sqrt(acfg.d_head)
            for i in range(acfg.seq_len):
                standalone = engine.run(scores[i])
                assert np.array_equal(standalone.output_raws, traces[h][i].output_raws)

    def test_shape_mismatch_rejected(self):
        acfg = AttentionConfig(seq_len=4, d_model=8, n_heads=1)
        good = np.zeros((4, 8))
        with pytest.raises(ValueError):
            attention_forward(good, good, np.zeros((4, 7)), acfg, CFG93)

    def test_seq_len_capped_by_engine(self):
        acfg = AttentionConfig(seq_len=8, d_model=8, n_heads=1)
        cfg = EngineConfig(input_format=FxFormat(9, 3), max_seq_len=4)
        with pytest.raises(ValueError):
            attention_forward(np.zeros((8, 8)), np.zeros((8, 8)), np.zeros((8, 8)), acfg, cfg)

    def test_unscaled_scores_flag(self):
        acfg = AttentionConfig(seq_len=4, d_model=4, n_heads=1, scale_scores=False)
        rng = np.random.default_rng(8)
        q, k, v = (rng.normal(size=(4, 4)) * 0.5 for _ in range(3))
        out, _ = attention_forward(q, k, v, acfg, CFG93)
        assert np.abs(out - reference_attention(q, k, v, acfg)).max() < 0.05


class TestErrorMetrics:
    def test_identical_matrices(self):
        p = np.array([[0.25, 0.75], [0.6, 0.4]])
        r = error_metrics(p, p)
        assert r.max_abs_error == 0 and r.mean_abs_error == 0
        assert r.mean_kl_divergence == 0 and r.argmax_agreement == 1.0

    def test_displaced_argmax_counts_rows(self):
        oracle = np.array([[0.7, 0.2, 0.1], [0.1, 0.8, 0.1], [0.2, 0.2, 0.6], [0.5, 0.3, 0.2]])
        engine = oracle.copy()
        engine[1] = [0.8, 0.1, 0.1]  # argmax moved from column 1 to 0
        r = error_metrics(engine, oracle)
        assert r.argmax_agreement == 1.0 - 1.0 / 4

    def test_tied_engine_maximum_counts_as_agreement(self):
        oracle = np.array([[0.2, 0.5, 0.3]])
        engine = np.array([[0.5, 0.5, 0.0]])  # oracle argmax ties the engine max
        assert error_metrics(engine, oracle).argmax_agreement == 1.0

    def test_random_pair_matches_scalar_recomputation(self):
        rng = np.random.default_rng(13)
        oracle = rng.dirichlet(np.ones(6), size=9)
        engine = np.maximum(oracle + rng.normal(0, 0.01, size=oracle.shape), 0.0)
        r = error_metrics(engine, oracle)
        abs_err = [
            [abs(engine[i, j] - oracle[i, j]) for j in range(6)] for i in range(9)
        ]
        assert r.max_abs_error == max(max(row) for row in abs_err)
        assert math.isclose(
            r.mean_abs_error, sum(sum(row) / 6 for row in abs_err) / 9, rel_tol=1e-12
        )
        assert math.isclose(
            r.mean_kl_divergence,
            sum(kl_scalar(oracle[i], engine[i]) for i in range(9)) / 9,
            rel_tol=1e-12,
        )

    def test_kl_floor_applies_to_engine_zeros(self):
        oracle = np.array([[0.5, 0.5]])
        engine = np.array([[1.0, 0.0]])
        r = error_metrics(engine, oracle)
        assert math.isclose(r.mean_kl_divergence, kl_scalar(oracle[0], engine[0]), rel_tol=1e-12)
        assert r.mean_kl_divergence > 10  # log(0.5/1e-12) scale

    def test_validation(self):
        with pytest.raises(ValueError):
            error_metrics(np.zeros((2, 2)), np.zeros((3, 2)))
        with pytest.raises(ValueError):
            error_metrics(np.full((1, 2), 0.5), np.array([[0.9, 0.3]]))  # rows must sum to 1


class TestBitwidthSweep:
    def test_representable_corpus_leaves_only_table_and_divider_error(self):
        fmt = FxFormat(9, 3)
        rng = np.random.default_rng(10)
        corpus = rng.integers(-64, 64, size=(8, 16)) * fmt.step  # exactly on the grid
        result = bitwidth_sweep(corpus, [fmt], CFG93)
        row = result.rows[0]
        assert row.saturation_events == 0
        trace = SoftmaxEngine(CFG93).run(corpus[0])
        assert np.array_equal(trace.quantized_values, corpus[0])  # no input quantization error
        assert row.report.max_abs_error < 1e-4

    def test_studied_formats_order_by_precision(self):
        corpus = synth_logits({"kind": "gaussian", "mean": 0.0, "std": 2.0, "vectors": 16}, 64, seed=99)
        formats = [FxFormat(9, 3), FxFormat(8, 2), FxFormat(7, 2)]
        result = bitwidth_sweep(corpus, formats, CFG93)
        e9, e8, e7 = (r.report.max_abs_error for r in result.rows)
        assert e9 <= e8 <= e7
        assert result.logit_min == corpus.min() and result.logit_max == corpus.max()

    def test_toy_format_matches_brute_force(self):
        fmt = FxFormat(3, 1)
        cfg = EngineConfig(input_format=fmt)
        corpus = np.array([[0.5, -1.0, 1.5], [0.0, 0.0, -2.0]])
        result = bitwidth_sweep(corpus, [fmt], cfg)
        probs = np.stack([SoftmaxEngine(cfg).run(row).outputs for row in corpus])
        oracle = np.stack([reference_softmax(row) for row in corpus])
        direct = error_metrics(probs, oracle)
        assert result.rows[0].report == direct

    def test_empty_corpus_rejected(self):
        with pytest.raises(ValueError):
            bitwidth_sweep(np.zeros((0, 4)), [FxFormat(9, 3)], CFG93)


class TestMinIntegerBits:
    def test_known_ranges(self):
        assert min_integer_bits(np.array([0.0]), 2) == 1
        # 7.9 rounds to raw 32 at 2 frac bits: needs 2**(I+1) > 32 -> I = 5
        assert min_integer_bits(np.array([7.9]), 2) == 5
        # signed 4 integer bits at 2 frac bits span exactly [-8.0, 7.75]
        assert min_integer_bits(np.array([-8.0, 7.75]), 2) == 4
        assert min_integer_bits(np.array([-8.25, 7.75]), 2) == 5

    def test_covers_without_saturation(self):
        rng = np.random.default_rng(20)
        corpus = rng.normal(0, 5, size=(4, 32))
        for frac in (1, 2, 3):
            bits = min_integer_bits(corpus, frac)
            from star.fxp import quantize_array

            _, sat = quantize_array(corpus.ravel(), FxFormat(bits + frac, frac))
            assert sat == 0
            if bits > 1:
                _, sat_small = quantize_array(corpus.ravel(), FxFormat(bits - 1 + frac, frac))
                assert sat_small > 0


class TestSynthLogits:
    def test_deterministic(self):
        spec = {"kind": "gaussian", "mean": 0.0, "std": 2.0, "vectors": 8}
        a = synth_logits(spec, 32, seed=5)
        b = synth_logits(spec, 32, seed=5)
        assert np.array_equal(a, b)
        assert a.shape == (8, 32)

    def test_degenerate_uniform_is_zero(self):
        corpus = synth_logits({"kind": "uniform", "lo": 0.0, "hi": 0.0, "vectors": 3}, 16, seed=0)
        assert np.all(corpus == 0.0)

    def test_gaussian_sample_mean_within_standard_error(self):
        corpus = synth_logits({"kind": "gaussian", "mean": 0.0, "std": 2.0, "vectors": 100}, 100, seed=8)
        n = corpus.size
        assert abs(corpus.mean()) < 3 * 2.0 / math.sqrt(n)

    @pytest.mark.parametrize(
        "spec",
        [
            {"kind": "triangular"},
            {"kind": "gaussian", "std": -1.0},
            {"kind": "uniform", "lo": 2.0, "hi": 1.0},
            {"kind": "gaussian", "vectors": 0},
            "gaussian",
        ],
    )
    def test_invalid_specs_rejected(self, spec):
        with pytest.raises(ValueError):
            synth_logits(spec, 8, seed=0)
