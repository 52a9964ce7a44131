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
from mlx_popcast.tuner.utils import (
    adapter_deltas,
    build_schedule,
    freeze_for_offline,
    freeze_for_online,
    fuse_adapters,
    print_trainable_parameters,
)


def n_trainable(model):
    return sum(v.size for _, v in tree_flatten(model.trainable_parameters()))


class TestTunerUtils(unittest.TestCase):
    def setUp(self):
        self.capturedOutput = StringIO()
        sys.stdout = self.capturedOutput
        mx.random.seed(0)
        self.model = Model(ModelArgs(input_dims=12, hidden_dims=8, head_dims=4, rank=2))

    def tearDown(self):
        sys.stdout = sys.__stdout__

    def test_freeze_for_offline(self):
        freeze_for_offline(self.model)
        names = {k for k, _ in tree_flatten(self.model.trainable_parameters())}
        self.assertFalse(any(k.endswith(("lora_a", "lora_b")) for k in names))
        self.assertIn("saliency_head.weight", names)
        # fc1 104, fc2 72, head 41 and saliency head 27 entries.
        self.assertEqual(n_trainable(self.model), 244)

    def test_freeze_for_online(self):
        freeze_for_online(self.model)
        names = {k for k, _ in tree_flatten(self.model.trainable_parameters())}
        self.assertEqual(
            names,
            {
                "fc1.lora_a",
                "fc1.lora_b",
                "fc2.lora_a",
                "fc2.lora_b",
                "head.fc.weight",
                "head.fc.bias",
                "head.out.weight",
                "head.out.bias",
            },
        )
        self.assertEqual(n_trainable(self.model), 113)

    def test_print_trainable_parameters(self):
        freeze_for_online(self.model)
        print_trainable_parameters(self.model)
        expected_output = "Trainable parameters: 35.759% (0.113K/0.316K)\n"
        self.assertEqual(self.capturedOutput.getvalue(), expected_output)

    def test_fuse_adapters(self):
        self.model.fc1.lora_b = 0.1 * mx.ones_like(self.model.fc1.lora_b)
        self.model.fc2.lora_b = -0.1 * mx.ones_like(self.model.fc2.lora_b)
        fused = fuse_adapters(self.model)
        X = np.random.default_rng(0).normal(size=(6, 12))
        self.assertTrue(np.allclose(predict(fused, X), predict(self.model, X), atol=1e-10))
        for d in adapter_deltas(fused).values():
            self.assertTrue(np.all(d == 0))
        deltas = adapter_deltas(self.model)
        self.assertEqual(sorted(deltas), ["fc1", "fc2"])
        self.assertEqual(deltas["fc1"].shape, (8, 12))
        self.assertFalse(np.all(deltas["fc1"] == 0))

    def test_build_schedule(self):
        config = {"name": "cosine_decay", "arguments": [1e-3, 100], "warmup": 10}
        schedule = build_schedule(config)
        self.assertEqual(schedule(mx.array(0)).item(), 0.0)
        self.assertAlmostEqual(schedule(mx.array(10)).item(), 1e-3, delta=1e-9)
        self.assertLess(schedule(mx.array(100)).item(), 1e-3)
        constant = build_schedule({"name": "cosine_decay", "arguments": [1e-3, 100]})
        self.assertAlmostEqual(constant(mx.array(0)).item(), 1e-3, delta=1e-9)


if __name__ == "__main__":
    unittest.main()
