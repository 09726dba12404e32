"""Finite-difference verification suite and its negative control."""

import numpy as np

from tagsum.encoder import GraphEncoderConfig
from tagsum.gradcheck import (
    check_contrastive_gradients,
    check_encoder_gradients,
    check_scl_gradients,
    compare_gradients,
    relative_error,
    run_grad_check,
)


class TestEncoderGradients:
    def test_minimal_config_passes(self):
        cfg = GraphEncoderConfig(layers=1, hidden=4, heads=1,
                                 positional_dim=2, text_dim=3)
        results = check_encoder_gradients(cfg, num_nodes=3, seed=0)
        assert all(ok for _, ok in results.values()), results

    def test_two_layer_with_attention_passes(self):
        cfg = GraphEncoderConfig(layers=2, hidden=8, heads=2,
                                 positional_dim=3, text_dim=5)
        results = check_encoder_gradients(cfg, num_nodes=3, seed=1)
        assert all(ok for _, ok in results.values()), results

    def test_input_gradient_included(self):
        cfg = GraphEncoderConfig(layers=1, hidden=4, heads=1,
                                 positional_dim=2, text_dim=3)
        results = check_encoder_gradients(cfg, num_nodes=3, seed=2)
        assert "input.features" in results
        err, ok = results["input.features"]
        assert ok and err < 1e-4


class TestLossGradients:
    def test_contrastive(self):
        results = check_contrastive_gradients(batch=3, dim=5, seed=0)
        assert all(ok for _, ok in results.values()), results

    def test_supervised_contrastive(self):
        results = check_scl_gradients(batch=4, dim=5, seed=0)
        assert all(ok for _, ok in results.values()), results


class TestNegativeControl:
    def test_corrupted_gradient_detected(self):
        analytic = {"w": np.array([1.0, 2.0, 3.0])}
        numeric = {"w": np.array([1.0, 2.0, 3.0])}
        ok_before = compare_gradients(analytic, numeric)["w"][1]
        assert ok_before
        analytic["w"] = analytic["w"] + np.array([0.0, 1e-2, 0.0])
        err, ok_after = compare_gradients(analytic, numeric)["w"]
        assert not ok_after
        assert err > 1e-3

    def test_relative_error_symmetric_floor(self):
        a = np.array([1e-12])
        b = np.array([0.0])
        assert relative_error(a, b) < 1e-4


class TestFullSuite:
    def test_report_passes_and_prints(self):
        report = run_grad_check(trials=2, seed=0)
        assert report.passed
        text = report.to_text()
        assert "PASS" in text
        assert "input.features" in text

    def test_worst_error_reported(self):
        report = run_grad_check(trials=1, seed=3)
        assert 0.0 < report.worst < 1e-4
