# Copyright © 2025 mlx-popcast contributors.

import unittest

import numpy as np

from mlx_popcast.drift import (
    DriftBuffer,
    DriftConfig,
    DriftSample,
    DriftState,
    EmptyTrainSet,
    InsufficientCalibrationData,
    NotDriftSample,
    UncalibratedConfig,
    calibrate,
    calibrate_thresholds,
    drift_indicator,
    growth_gate,
    push_drift,
    sample_anchor,
)
from mlx_popcast.tuner.datasets import ArrayDataset

GRID = [i / 100 for i in range(101)]


def calibrated(**kwargs):
    params = dict(gamma_low=0.15, gamma_high=0.85, delta_y=1.0)
    params.update(kwargs)
    return DriftConfig(**params)


def sample(vid, e, gamma, cfg, at=0.0):
    return DriftSample.from_reveal(vid, np.ones(4) * len(vid), 10.0, 10.0 + e, gamma, at, cfg)


def train_set(n=20):
    X = np.arange(n * 4, dtype=np.float64).reshape(n, 4)
    return ArrayDataset(X, np.arange(n, dtype=np.float64), ids=[f"t{i}" for i in range(n)])


class TestCalibration(unittest.TestCase):

    def test_grid(self):
        errors = [1.0, 2.0, 3.0, 4.0] * 5
        low, high, delta = calibrate_thresholds(errors, GRID, DriftConfig())
        self.assertAlmostEqual(low, 0.15, places=12)
        self.assertAlmostEqual(high, 0.85, places=12)
        self.assertAlmostEqual(delta, 3.25, places=12)

    def test_undefined_gammas_are_dropped(self):
        gammas = GRID + [None] * 50
        low, high, _ = calibrate_thresholds([1.0] * 20, gammas, DriftConfig())
        self.assertAlmostEqual(low, 0.15, places=12)
        self.assertAlmostEqual(high, 0.85, places=12)

    def test_override(self):
        _, _, delta = calibrate_thresholds(
            [0.0] * 20, GRID, DriftConfig(delta_y_override=0.7)
        )
        self.assertEqual(delta, 0.7)

    def test_errors(self):
        with self.assertRaises(InsufficientCalibrationData):
            calibrate_thresholds([1.0] * 20, GRID[:9], DriftConfig())
        with self.assertRaises(InsufficientCalibrationData):
            calibrate_thresholds([1.0] * 5, GRID, DriftConfig())
        with self.assertRaises(InsufficientCalibrationData):
            calibrate_thresholds([1.0] * 20, [0.5] * 20, DriftConfig())
        with self.assertRaises(InsufficientCalibrationData):
            calibrate_thresholds([0.0] * 20, GRID, DriftConfig())

    def test_calibrate_config(self):
        cfg = calibrate(DriftConfig(trigger_M=4), [1.0, 2.0, 3.0, 4.0] * 5, GRID)
        self.assertTrue(cfg.calibrated)
        self.assertEqual(cfg.trigger_M, 4)
        self.assertEqual(DriftConfig.from_dict(cfg.to_dict()), cfg)

    def test_config_validation(self):
        with self.assertRaises(ValueError):
            DriftConfig(tail_fraction=0.5)
        with self.assertRaises(ValueError):
            DriftConfig(gamma_low=0.2)
        with self.assertRaises(ValueError):
            DriftConfig(gamma_low=0.9, gamma_high=0.1)
        with self.assertRaises(ValueError):
            DriftConfig(gate="closed")
        with self.assertRaises(UncalibratedConfig):
            DriftConfig().require_calibrated()


class TestGate(unittest.TestCase):

    def test_growth_gate(self):
        cfg = calibrated()
        self.assertEqual(growth_gate(0.15, cfg), 1)
        self.assertEqual(growth_gate(0.85, cfg), 1)
        self.assertEqual(growth_gate(0.05, cfg), 1)
        self.assertEqual(growth_gate(0.5, cfg), 0)
        self.assertEqual(growth_gate(None, cfg), 0)
        self.assertEqual(growth_gate(0.5, calibrated(gate="open")), 1)
        self.assertEqual(growth_gate(None, calibrated(gate="open")), 1)

    def test_drift_indicator(self):
        cfg = calibrated()
        self.assertEqual(drift_indicator(1.5, 0.9, cfg), 1)
        self.assertEqual(drift_indicator(-1.5, 0.1, cfg), 1)
        self.assertEqual(drift_indicator(1.0, 0.9, cfg), 0)
        self.assertEqual(drift_indicator(5.0, 0.5, cfg), 0)

    def test_sample(self):
        s = sample("v1", -2.0, 0.9, calibrated())
        self.assertEqual(s.e, -2.0)
        self.assertEqual(s.d, 1)
        self.assertNotIn("feature", s.to_dict())


class TestBuffers(unittest.TestCase):

    def test_drift_buffer_fifo(self):
        cfg = calibrated()
        buffer = DriftBuffer(3)
        for i in range(5):
            push_drift(buffer, sample(f"v{i}", 2.0, 0.9, cfg))
        self.assertEqual([s.video_id for s in buffer], ["v2", "v3", "v4"])
        with self.assertRaises(NotDriftSample):
            push_drift(buffer, sample("v9", 0.1, 0.9, cfg))

    def test_sample_anchor(self):
        cfg = calibrated(cap_anchor=5, seed=1)
        a = sample_anchor(train_set(), cfg)
        b = sample_anchor(train_set(), cfg)
        self.assertEqual(len(a), 5)
        self.assertEqual(a.ids, b.ids)
        self.assertEqual(len(set(a.ids)), 5)
        for i, vid in enumerate(a.ids):
            self.assertEqual(a.y[i], float(vid[1:]))
        self.assertEqual(len(sample_anchor(train_set(3), cfg)), 3)
        with self.assertRaises(EmptyTrainSet):
            sample_anchor(ArrayDataset(np.zeros((0, 4)), np.zeros(0)), cfg)


class TestDriftState(unittest.TestCase):

    def test_trigger_and_reset(self):
        cfg = calibrated(trigger_M=2, cap_drift=3, cap_anchor=4)
        state = DriftState(cfg, train_set())
        self.assertFalse(state.observe(sample("v0", 2.0, 0.9, cfg)))
        self.assertFalse(state.observe(sample("v1", 0.1, 0.9, cfg)))
        self.assertTrue(state.observe(sample("v2", 2.0, 0.05, cfg)))
        X, y, ids, n_drift, n_anchor = state.adaptation_set()
        self.assertEqual((n_drift, n_anchor), (2, 4))
        self.assertEqual(ids[:2], ["v0", "v2"])
        self.assertEqual(X.shape, (6, 4))
        self.assertEqual(y.shape, (6,))
        state.reset()
        self.assertEqual(state.snapshot()["new_samples"], 0)
        self.assertEqual(state.snapshot()["buffer_size"], 2)
        # Anchors are redrawn for the next trigger.
        _, _, ids2, _, _ = state.adaptation_set()
        self.assertEqual(ids2[:2], ids[:2])
        self.assertEqual(len(ids2), 6)

    def test_without_anchors(self):
        cfg = calibrated(trigger_M=1)
        state = DriftState(cfg)
        self.assertTrue(state.observe(sample("v0", 2.0, 0.9, cfg)))
        _, _, ids, n_drift, n_anchor = state.adaptation_set()
        self.assertEqual((ids, n_drift, n_anchor), (["v0"], 1, 0))

    def test_needs_calibration(self):
        with self.assertRaises(UncalibratedConfig):
            DriftState(DriftConfig())


if __name__ == "__main__":
    unittest.main()
