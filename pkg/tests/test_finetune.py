# Copyright © 2024 Apple Inc.
# Copyright © 2025 mlx-popcast contributors.

import sys
import unittest
from io import StringIO

import mlx.core as mx
import numpy as np
from mlx.utils import tree_flatten

import mlx_popcast  # noqa: F401
from mlx_popcast.models.predictor import Model, ModelArgs, predict
from mlx_popcast.tuner.callbacks import HistoryCallback
from mlx_popcast.tuner.datasets import ArrayDataset
from mlx_popcast.tuner.trainer import (
    DivergenceDetected,
    EmptyBatch,
    EmptySplit,
    TrainConfig,
    grad_check,
    offline_train,
    online_update,
)


def linear_dataset(n=64, d=12, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    w = rng.normal(size=d)
    y = 10.0 + X @ w
    saliency = rng.uniform(size=(n, 3))
    return ArrayDataset(X, y, saliency)


def small_config(**kwargs):
    params = dict(
        hidden_dims=16,
        head_dims=8,
        rank=2,
        batch_size=16,
        epochs_max=3,
        lr_offline=1e-2,
        lr_schedule="constant",
    )
    params.update(kwargs)
    return TrainConfig(**params)


def flat(model):
    return {k: np.array(v) for k, v in tree_flatten(model.parameters())}


class TestTrainConfig(unittest.TestCase):

    def test_defaults(self):
        cfg = TrainConfig()
        self.assertEqual(cfg.adapter_scale, 2.0)
        self.assertEqual(cfg.alpha, 0.5)
        self.assertEqual(cfg.lr_online, 1.2e-4)
        self.assertEqual(TrainConfig(rank=8).adapter_scale, 4.0)
        self.assertEqual(TrainConfig.from_dict({"rank": 4, "other": 1}).rank, 4)

    def test_validation(self):
        with self.assertRaises(ValueError):
            TrainConfig(rank=0)
        with self.assertRaises(ValueError):
            TrainConfig(lr_online=0.0)
        with self.assertRaises(ValueError):
            TrainConfig(lr_schedule="linear")
        with self.assertRaises(ValueError):
            TrainConfig(dropout=1.0)


class TestOfflineTraining(unittest.TestCase):
    def setUp(self):
        self.capturedOutput = StringIO()
        sys.stdout = self.capturedOutput

    def tearDown(self):
        sys.stdout = sys.__stdout__

    def test_fits_training_data(self):
        data = linear_dataset()
        cfg = small_config(epochs_max=30, patience=30)
        history = HistoryCallback()
        model = offline_train(data, data, cfg, training_callback=history, verbose=True)
        mse = float(np.mean((predict(model, data.X) - data.y) ** 2))
        self.assertLess(mse, 0.5 * np.var(data.y))
        self.assertEqual(len(history.train_history), len(history.val_history))
        self.assertLessEqual(len(history.val_history), 30)
        self.assertIn("Epoch 1: Train loss", self.capturedOutput.getvalue())
        # The adapters never leave their initialisation offline.
        for v in (model.fc1.lora_b, model.fc2.lora_b):
            self.assertTrue(mx.array_equal(v, mx.zeros_like(v)))
        self.assertEqual(model.version, 0)

    def test_returns_best_epoch(self):
        data = linear_dataset()
        history = HistoryCallback()
        model = offline_train(data, data, small_config(), training_callback=history)
        best = min(r["val_mse"] for r in history.val_history)
        mse = float(np.mean((predict(model, data.X) - data.y) ** 2))
        self.assertAlmostEqual(mse, best, places=8)

    def test_deterministic(self):
        data = linear_dataset()
        a = offline_train(data, data, small_config(seed=3))
        b = offline_train(data, data, small_config(seed=3))
        self.assertTrue(np.array_equal(predict(a, data.X), predict(b, data.X)))

    def test_memorizes_single_sample(self):
        data = linear_dataset(n=1)
        cfg = small_config(
            batch_size=1,
            epochs_max=300,
            patience=300,
            lr_schedule="cosine",
            weight_decay=0.0,
        )
        history = HistoryCallback()
        offline_train(data, data, cfg, training_callback=history)
        self.assertLess(min(r["train_loss"] for r in history.train_history), 1e-3)

    def test_errors(self):
        data = linear_dataset(n=16)
        empty = ArrayDataset(np.zeros((0, 12)), np.zeros(0))
        with self.assertRaises(EmptySplit):
            offline_train(empty, data, small_config())
        with self.assertRaises(EmptySplit):
            offline_train(data, empty, small_config())
        with self.assertRaises(DivergenceDetected):
            offline_train(
                data, data, small_config(lr_offline=1e200, batch_size=4, grad_clip=0)
            )


class TestOnlineUpdate(unittest.TestCase):

    def setUp(self):
        mx.random.seed(0)
        self.model = Model(ModelArgs(input_dims=12, hidden_dims=8, head_dims=4, rank=2))
        rng = np.random.default_rng(0)
        self.X = rng.normal(size=(10, 12))
        self.y = rng.normal(loc=3.0, size=10)
        self.cfg = TrainConfig(lr_online=1e-2, batch_online=4)

    def test_only_adapters_and_head_move(self):
        before = flat(self.model)
        new = online_update(self.model, self.X, self.y, self.cfg)
        after = flat(new)
        self.assertEqual(new.version, 1)
        self.assertEqual(self.model.version, 0)
        for k, v in before.items():
            self.assertTrue(np.array_equal(flat(self.model)[k], v))
            if k.startswith("saliency_head") or ".linear." in k:
                self.assertTrue(np.array_equal(after[k], v), k)
        self.assertFalse(np.array_equal(after["fc2.lora_b"], before["fc2.lora_b"]))
        self.assertFalse(np.array_equal(after["head.out.bias"], before["head.out.bias"]))
        self.assertEqual(online_update(new, self.X, self.y, self.cfg).version, 2)

    def test_zero_gradient_is_a_no_op(self):
        x = self.X[:1]
        y = predict(self.model, x)
        new = online_update(self.model, x, y, self.cfg)
        before, after = flat(self.model), flat(new)
        for k in before:
            self.assertTrue(np.array_equal(before[k], after[k]), k)

    def test_deterministic(self):
        a = online_update(self.model, self.X, self.y, self.cfg)
        b = online_update(self.model, self.X, self.y, self.cfg)
        self.assertTrue(np.array_equal(predict(a, self.X), predict(b, self.X)))

    def test_reduces_error(self):
        cfg = TrainConfig(lr_online=1e-2, batch_online=10)
        model = self.model
        start = np.mean((predict(model, self.X) - self.y) ** 2)
        for _ in range(20):
            model = online_update(model, self.X, self.y, cfg)
        self.assertLess(np.mean((predict(model, self.X) - self.y) ** 2), start)

    def test_empty(self):
        with self.assertRaises(EmptyBatch):
            online_update(self.model, np.zeros((0, 12)), np.zeros(0), self.cfg)


class TestGradCheck(unittest.TestCase):

    def setUp(self):
        mx.random.seed(0)
        model = Model(ModelArgs(input_dims=12, hidden_dims=8, head_dims=4, rank=2))
        rng = np.random.default_rng(1)
        self.X = rng.normal(size=(4, 12))
        self.y = rng.normal(size=4)
        # Move the adapters away from zero so every factor has a gradient.
        self.model = online_update(model, self.X, self.y, TrainConfig(lr_online=0.05))

    def test_matches_finite_differences(self):
        err = grad_check(self.model, self.X, self.y, num_entries=32)
        self.assertLess(err, 1e-4)
        err = grad_check(self.model, self.X[0], self.y[0], num_entries=8)
        self.assertLess(err, 1e-4)

    def test_detects_wrong_gradients(self):
        def doubled(grads):
            return {k: 2 * v for k, v in grads.items()}

        err = grad_check(self.model, self.X, self.y, num_entries=64, transform=doubled)
        self.assertGreater(err, 0.1)

    def test_leaves_model_unchanged(self):
        before = flat(self.model)
        grad_check(self.model, self.X, self.y)
        after = flat(self.model)
        for k in before:
            self.assertTrue(np.array_equal(before[k], after[k]))


if __name__ == "__main__":
    unittest.main()
