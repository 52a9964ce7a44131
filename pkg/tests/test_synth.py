# Copyright © 2025 mlx-popcast contributors.

import os
import tempfile
import unittest

import numpy as np

from mlx_popcast.core import growth_ratio
from mlx_popcast.datasets import load_dataset
from mlx_popcast.featurizer import FeaturizerConfig, featurize_manifest
from mlx_popcast.synth import (
    MIN_TARGET,
    InvalidMixture,
    SynthConfig,
    generate,
    write_synth,
)
from mlx_popcast.utils import read_json


class TestSynth(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.test_dir_fid = tempfile.TemporaryDirectory()
        cls.test_dir = cls.test_dir_fid.name

    @classmethod
    def tearDownClass(cls):
        cls.test_dir_fid.cleanup()

    def test_shapes(self):
        manifest, truth = generate(SynthConfig(n_videos=50, seed=1))
        self.assertEqual(len(manifest.records), 50)
        self.assertEqual(len(manifest.cards), 150)
        self.assertEqual(len(manifest.saliency), 50)
        self.assertEqual(len(truth.videos), 50)
        times = [r.upload_time for r in manifest.records]
        self.assertEqual(times, sorted(times))
        for r in manifest.records:
            self.assertGreaterEqual(r.y, MIN_TARGET - 1e-9)

    def test_growth_types(self):
        manifest, truth = generate(SynthConfig(n_videos=200, seed=2))
        for r in manifest.records:
            g = growth_ratio(r.curve)
            kind = truth.videos[r.video_id].growth_type
            if kind == "initial_viral":
                self.assertGreaterEqual(g, 0.8)
            elif kind == "delayed_viral":
                self.assertLessEqual(g, 0.15)
            else:
                self.assertTrue(0.3 <= g <= 0.6, g)
        kinds = [t.growth_type for t in truth.videos.values()]
        self.assertGreater(kinds.count("typical"), kinds.count("initial_viral"))

    def test_deterministic(self):
        a, ta = generate(SynthConfig(n_videos=20, seed=3))
        b, tb = generate(SynthConfig(n_videos=20, seed=3))
        c, _ = generate(SynthConfig(n_videos=20, seed=4))
        self.assertEqual(a.records, b.records)
        self.assertEqual(a.cards, b.cards)
        self.assertEqual(ta.to_dict(), tb.to_dict())
        self.assertNotEqual(a.records, c.records)

    def test_drift_flags(self):
        cfg = SynthConfig(n_videos=100, drift_times=[50 * 3600 - 1], seed=5)
        _, truth = generate(cfg)
        for i in range(100):
            t = truth.videos[f"v{i:05d}"]
            self.assertEqual(t.drift_regime, int(i >= 50))
            self.assertEqual(
                t.is_drift_affected, i >= 50 and t.growth_type != "typical"
            )
        self.assertTrue(any(truth.drift_flags().values()))

    def test_noise_free_targets(self):
        manifest, truth = generate(SynthConfig(n_videos=30, noise_sigma=0.0, seed=6))
        for r in manifest.records:
            y_star = truth.videos[r.video_id].y_star
            if MIN_TARGET < y_star < 24:
                # Day-7 views are the target rounded to a whole count.
                self.assertLessEqual(abs(2**r.y - 2**y_star), 0.5 + 1e-6)

    def test_targets_linear_in_features(self):
        dims = {"title": 32, "transcript": 8, "d1": 32, "d2": 32, "d3": 32, "meta": 8}
        feat = {"block_dims": dims, "hash_seed": 3}
        cfg = SynthConfig(
            n_videos=400,
            drift_times=[200 * 3600 - 1],
            noise_sigma=0.0,
            featurizer=feat,
            seed=9,
        )
        manifest, truth = generate(cfg)
        X, _, ids = featurize_manifest(manifest, 2, FeaturizerConfig.from_dict(feat))
        y_star = np.array([truth.videos[v].y_star for v in ids])
        A = np.hstack([X, np.ones((len(ids), 1))])
        # One linear map per drift regime.
        for regime in (0, 1):
            rows = [truth.videos[v].drift_regime == regime for v in ids]
            coef, *_ = np.linalg.lstsq(A[rows], y_star[rows], rcond=None)
            residual = A[rows] @ coef - y_star[rows]
            self.assertLess(np.abs(residual).max(), 1e-8)

    def test_snapshots_share_sources(self):
        manifest, _ = generate(SynthConfig(n_videos=5, seed=7))
        urls = [set(manifest.card("v00000", t).urls()) for t in (0, 1, 2)]
        self.assertEqual(len(urls[0] & urls[1] & urls[2]), 3)
        self.assertEqual(len(urls[0] - urls[1]), 3)

    def test_invalid(self):
        with self.assertRaises(InvalidMixture):
            SynthConfig(mixture={"typical": 1.0})
        with self.assertRaises(InvalidMixture):
            SynthConfig(
                mixture={"initial_viral": 0.5, "delayed_viral": 0.5, "typical": 0.5}
            )
        with self.assertRaises(ValueError):
            SynthConfig(n_videos=0)

    def test_write(self):
        manifest, truth = generate(SynthConfig(n_videos=10, seed=8))
        dataset_path, truth_path = write_synth(manifest, truth, self.test_dir)
        loaded = load_dataset(dataset_path)
        self.assertEqual(loaded.records, manifest.records)
        self.assertEqual(read_json(truth_path), truth.to_dict())
        self.assertTrue(os.path.exists(os.path.join(self.test_dir, "truth.json")))


if __name__ == "__main__":
    unittest.main()
