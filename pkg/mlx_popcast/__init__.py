# Copyright © 2025 mlx-popcast contributors.

import mlx.core as mx

from ._version import __version__

# float64 arithmetic is only available on the CPU device.
mx.set_default_device(mx.cpu)

from .core import PopcastError
from .datasets import DatasetManifest, load_dataset
from .models.predictor import Model, ModelArgs, load_checkpoint, save_checkpoint
