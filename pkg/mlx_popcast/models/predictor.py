# Copyright © 2025 mlx-popcast contributors.

import inspect
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Tuple, Union

import mlx.core as mx
import mlx.nn as nn
import numpy as np
from mlx.utils import tree_flatten

from ..core import PopcastError
from ..tuner.lora import LoRALinear
from ..utils import read_json, write_json

DTYPE = mx.float64
ADAPTED_LAYERS = ("fc1", "fc2")


class DimensionMismatch(PopcastError):
    pass


@dataclass
class ModelArgs:
    input_dims: int
    hidden_dims: int = 256
    head_dims: int = 64
    rank: int = 16
    adapter_scale: float = 2.0
    dropout: float = 0.0
    n_saliency: int = 3
    target_mean: float = 0.0
    target_std: float = 1.0

    @classmethod
    def from_dict(cls, params):
        return cls(
            **{
                k: v
                for k, v in params.items()
                if k in inspect.signature(cls).parameters
            }
        )


class RegressionHead(nn.Module):
    def __init__(self, hidden_dims: int, head_dims: int, dropout: float = 0.0):
        super().__init__()
        self.fc = nn.Linear(hidden_dims, head_dims)
        self.dropout = nn.Dropout(p=dropout)
        self.out = nn.Linear(head_dims, 1)

    def __call__(self, h):
        return self.out(self.dropout(nn.gelu_approx(self.fc(h)))).squeeze(-1)


class Model(nn.Module):
    """
    Popularity regressor over hashed video and evidence features.

    Two adapted projections form the base encoder whose output ``h`` feeds a
    two-layer regression head and a saliency head with one output per
    evidence dimension. Predictions are returned in log2 view units.
    """

    def __init__(self, args: ModelArgs):
        super().__init__()
        self.args = args
        self.fc1 = LoRALinear(
            args.input_dims,
            args.hidden_dims,
            r=args.rank,
            dropout=args.dropout,
            scale=args.adapter_scale,
        )
        self.fc2 = LoRALinear(
            args.hidden_dims,
            args.hidden_dims,
            r=args.rank,
            dropout=args.dropout,
            scale=args.adapter_scale,
        )
        self.head = RegressionHead(args.hidden_dims, args.head_dims, args.dropout)
        self.saliency_head = nn.Linear(args.hidden_dims, args.n_saliency)
        self.version = 0
        self.set_dtype(DTYPE)

    def __call__(self, x: mx.array) -> Tuple[mx.array, mx.array, mx.array]:
        if x.shape[-1] != self.args.input_dims:
            raise DimensionMismatch(
                f"Expected {self.args.input_dims} input features, got {x.shape[-1]}."
            )
        h = nn.gelu_approx(self.fc2(nn.gelu_approx(self.fc1(x))))
        y_hat = self.args.target_mean + self.args.target_std * self.head(h)
        return y_hat, self.saliency_head(h), h

    def clone(self) -> "Model":
        """A new model sharing no mutable state with this one."""
        model = Model(self.args)
        model.update(self.parameters())
        model.version = self.version
        return model

    def base_parameters(self):
        """Frozen-during-adaptation weights: the encoder projections."""
        return {
            k: v
            for k, v in tree_flatten(self.parameters())
            if k.startswith(ADAPTED_LAYERS) and ".linear." in k
        }

    def adapter_parameters(self):
        return {
            k: v
            for k, v in tree_flatten(self.parameters())
            if k.endswith(("lora_a", "lora_b"))
        }


def predict(model: Model, X: np.ndarray, batch_size: int = 1024) -> np.ndarray:
    """Batched forward pass returning the popularity predictions."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    out = []
    for s in range(0, X.shape[0], batch_size):
        y_hat, _, _ = model(mx.array(X[s : s + batch_size], dtype=DTYPE))
        mx.eval(y_hat)
        out.append(np.array(y_hat))
    if not out:
        return np.zeros(0, dtype=np.float64)
    return np.concatenate(out)


def hidden_states(model: Model, X: np.ndarray, batch_size: int = 1024) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    out = []
    for s in range(0, X.shape[0], batch_size):
        _, _, h = model(mx.array(X[s : s + batch_size], dtype=DTYPE))
        mx.eval(h)
        out.append(np.array(h))
    return np.concatenate(out)


def _config_path(path: Path) -> Path:
    return path.with_suffix(".json")


def save_checkpoint(model: Model, path: Union[str, Path]):
    """
    Save all parameters to an ``.npz`` archive in float64. The model
    arguments and version counter go to a JSON file of the same stem.
    """
    path = Path(path)
    if path.suffix != ".npz":
        raise ValueError(f"Checkpoints are .npz archives, got {path}.")
    path.parent.mkdir(parents=True, exist_ok=True)
    weights = dict(tree_flatten(model.parameters()))
    mx.savez(str(path), **weights)
    write_json(
        _config_path(path),
        {
            "format": "mlx_popcast",
            "model_args": asdict(model.args),
            "version": model.version,
        },
    )


def load_checkpoint(path: Union[str, Path]) -> Model:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Checkpoint not found: {path}")
    config_path = _config_path(path)
    if path.suffix != ".npz" or not config_path.exists():
        raise PopcastError(f"{path} is not an mlx_popcast checkpoint.")
    config = read_json(config_path)
    if config.get("format") != "mlx_popcast":
        raise PopcastError(f"{path} is not an mlx_popcast checkpoint.")
    model = Model(ModelArgs.from_dict(config["model_args"]))
    model.load_weights(list(mx.load(str(path)).items()), strict=True)
    model.version = int(config["version"])
    mx.eval(model.parameters())
    return model
