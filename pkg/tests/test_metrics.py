# Copyright © 2025 mlx-popcast contributors.

import unittest
from types import SimpleNamespace

import numpy as np

from mlx_popcast.drift import DriftConfig
from mlx_popcast.metrics import (
    EmptyInput,
    LengthMismatch,
    compute_metrics,
    gate_confusion,
    group_by_growth,
    grouped_metrics,
    metrics_table,
)


class TestMetrics(unittest.TestCase):

    def test_perfect_predictions(self):
        y = [1.0, 2.0, 3.0, 4.0]
        report = compute_metrics(y, y)
        self.assertEqual(report.nmse, 0.0)
        self.assertEqual(report.mae, 0.0)
        self.assertAlmostEqual(report.src, 1.0)
        self.assertAlmostEqual(report.pcc, 1.0)
        self.assertEqual(report.n, 4)
        self.assertEqual(report.flags, [])

    def test_mean_predictor(self):
        y = np.array([1.0, 2.0, 3.0, 4.0])
        report = compute_metrics(np.full(4, y.mean()), y)
        self.assertAlmostEqual(report.nmse, 1.0)
        self.assertAlmostEqual(report.mae, 1.0)
        self.assertIsNone(report.src)
        self.assertIsNone(report.pcc)
        self.assertEqual(len(report.flags), 1)

    def test_known_values(self):
        report = compute_metrics([2.0, 1.0, 4.0, 3.0], [1.0, 2.0, 3.0, 4.0])
        # Squared errors all 1, population variance 1.25.
        self.assertAlmostEqual(report.nmse, 0.8)
        self.assertAlmostEqual(report.mae, 1.0)
        self.assertAlmostEqual(report.src, 0.6)
        self.assertAlmostEqual(report.pcc, 0.6)

    def test_ties_use_average_ranks(self):
        report = compute_metrics([1.0, 1.0, 2.0], [1.0, 2.0, 3.0])
        self.assertAlmostEqual(report.src, np.sqrt(3) / 2)

    def test_degenerate(self):
        report = compute_metrics([1.0], [2.0])
        self.assertIsNone(report.nmse)
        self.assertIsNone(report.src)
        self.assertEqual(report.mae, 1.0)
        self.assertEqual(len(report.flags), 2)
        with self.assertRaises(LengthMismatch):
            compute_metrics([1.0, 2.0], [1.0])
        with self.assertRaises(EmptyInput):
            compute_metrics([], [])

    def test_groups(self):
        groups = group_by_growth([0.05, 0.5, 0.95, None, 0.1], 0.1, 0.9)
        self.assertEqual(groups["delayed_viral"], [0, 4])
        self.assertEqual(groups["typical"], [1])
        self.assertEqual(groups["initial_viral"], [2])
        self.assertEqual(groups["undefined"], [3])

    def test_grouped_metrics(self):
        preds = [
            SimpleNamespace(y_hat=1.0, y=2.0, gamma=0.05),
            SimpleNamespace(y_hat=2.0, y=2.0, gamma=0.5),
            SimpleNamespace(y_hat=3.0, y=5.0, gamma=0.5),
        ]
        log = SimpleNamespace(predictions=preds)
        cfg = DriftConfig(gamma_low=0.1, gamma_high=0.9, delta_y=1.0)
        grouped = grouped_metrics(log, cfg)
        self.assertEqual(list(grouped), ["delayed_viral", "typical"])
        self.assertEqual(grouped["delayed_viral"].n, 1)
        self.assertAlmostEqual(grouped["typical"].mae, 1.0)

    def test_table(self):
        report = compute_metrics([2.0, 1.0, 4.0, 3.0], [1.0, 2.0, 3.0, 4.0])
        text = metrics_table(
            [
                {"method": "shortscast", "mode": "prequential", "report": report},
                {"method": "none", "mode": "test", "n": 4, "mae": 1.5},
            ]
        )
        lines = text.splitlines()
        self.assertEqual(len(lines), 3)
        self.assertEqual([c.strip() for c in lines[0].split(",")][:3], ["method", "mode", "n"])
        cells = [c.strip() for c in lines[1].split(",")]
        self.assertEqual(cells, ["shortscast", "prequential", "4", "0.8000", "1.0000", "0.6000", "0.6000"])
        self.assertEqual([c.strip() for c in lines[2].split(",")][4], "1.5000")

    def test_gate_confusion(self):
        decisions = [
            SimpleNamespace(video_id="a", d=1),
            SimpleNamespace(video_id="b", d=1),
            SimpleNamespace(video_id="c", d=0),
            SimpleNamespace(video_id="d", d=0),
            SimpleNamespace(video_id="z", d=1),
        ]
        truth = {"a": True, "b": False, "c": True, "d": False}
        result = gate_confusion(decisions, truth)
        self.assertEqual((result["tp"], result["fp"], result["fn"], result["tn"]), (1, 1, 1, 1))
        self.assertEqual(result["precision"], 0.5)
        self.assertEqual(result["recall"], 0.5)


if __name__ == "__main__":
    unittest.main()
