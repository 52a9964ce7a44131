# Copyright © 2024 Apple Inc.
# Copyright © 2025 mlx-popcast contributors.

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional

import mlx.core as mx
import mlx.nn as nn
import mlx.optimizers as optim
import numpy as np
from mlx.utils import tree_flatten, tree_unflatten

from ..core import PopcastError
from ..models.predictor import DTYPE, Model, ModelArgs, predict
from .callbacks import TrainingCallback
from .datasets import ArrayDataset
from .utils import (
    build_schedule,
    freeze_for_offline,
    freeze_for_online,
    print_trainable_parameters,
)


class EmptySplit(PopcastError):
    pass


class EmptyBatch(PopcastError):
    pass


class DivergenceDetected(PopcastError):
    pass


@dataclass
class TrainConfig:
    alpha: float = field(default=0.5, metadata={"help": "Weight of the regression term."})
    lr_offline: float = field(default=1e-3, metadata={"help": "Peak offline learning rate."})
    lr_online: float = field(default=1.2e-4, metadata={"help": "Adapter learning rate."})
    rank: int = field(default=16, metadata={"help": "Adapter rank."})
    adapter_scale: Optional[float] = field(
        default=None, metadata={"help": "Adapter scale, 32 / rank when unset."}
    )
    epochs_max: int = field(default=7, metadata={"help": "Offline epochs."})
    patience: int = field(
        default=2, metadata={"help": "Epochs without val improvement before stopping."}
    )
    batch_online: int = field(default=4, metadata={"help": "Online minibatch size."})
    seed: int = 0
    batch_size: int = field(default=32, metadata={"help": "Offline minibatch size."})
    hidden_dims: int = 256
    head_dims: int = 64
    dropout: float = 0.0
    weight_decay: float = 0.01
    grad_clip: float = field(
        default=1.0, metadata={"help": "Global gradient norm bound, 0 disables."}
    )
    warmup_ratio: float = 0.05
    lr_schedule: str = field(
        default="cosine", metadata={"help": "Offline schedule: cosine or constant."}
    )

    def __post_init__(self):
        if self.adapter_scale is None:
            self.adapter_scale = 32 / self.rank if self.rank >= 1 else None
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative.")
        if self.rank < 1:
            raise ValueError("The adapter rank must be at least 1.")
        if min(self.lr_offline, self.lr_online) <= 0:
            raise ValueError("Learning rates must be positive.")
        if min(self.epochs_max, self.batch_online, self.batch_size) < 1:
            raise ValueError("Epoch and batch sizes must be at least 1.")
        if self.patience < 1:
            raise ValueError("patience must be at least 1.")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must lie in [0, 1).")
        if self.lr_schedule not in ("cosine", "constant"):
            raise ValueError(f"Unknown learning rate schedule {self.lr_schedule}.")

    @classmethod
    def from_dict(cls, params: Dict) -> "TrainConfig":
        return cls(**{k: v for k, v in params.items() if k in cls.__dataclass_fields__})


def joint_loss(model, x, y, s, mask, alpha):
    """Saliency error on rows with a target plus ``alpha`` times the squared error."""
    y_hat, s_hat, _ = model(x)
    saliency = mx.mean(mx.square(s_hat - s), axis=-1) * mask
    return mx.mean(saliency + alpha * mx.square(y_hat - y))


def regression_loss(model, x, y):
    y_hat, _, _ = model(x)
    return mx.mean(mx.square(y_hat - y))


def iterate_batches(dataset: ArrayDataset, batch_size: int, rng=None, train=False):
    n = len(dataset)
    idx = rng.permutation(n) if train else np.arange(n)
    for s in range(0, n, batch_size):
        b = idx[s : s + batch_size]
        yield (
            mx.array(dataset.X[b], dtype=DTYPE),
            mx.array(dataset.y[b], dtype=DTYPE),
            mx.array(dataset.saliency[b], dtype=DTYPE),
            mx.array(dataset.mask[b], dtype=DTYPE),
        )


def evaluate(model: Model, dataset: ArrayDataset) -> float:
    """Mean squared error of the popularity predictions in log2 units."""
    model.eval()
    y_hat = predict(model, dataset.X)
    return float(np.mean((y_hat - dataset.y) ** 2))


def offline_train(
    train: ArrayDataset,
    val: ArrayDataset,
    cfg: TrainConfig = None,
    training_callback: TrainingCallback = None,
    verbose: bool = False,
) -> Model:
    """
    Train base, head and saliency head jointly with the adapters frozen at
    their zero-product initialisation.

    Training stops once the validation MSE has not improved for
    ``cfg.patience`` epochs and the best validation epoch is returned.
    """
    cfg = cfg or TrainConfig()
    if len(train) == 0:
        raise EmptySplit("The training split is empty.")
    if len(val) == 0:
        raise EmptySplit("The validation split is empty.")

    mx.random.seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    target_std = float(np.std(train.y))
    args = ModelArgs(
        input_dims=train.X.shape[1],
        hidden_dims=cfg.hidden_dims,
        head_dims=cfg.head_dims,
        rank=cfg.rank,
        adapter_scale=cfg.adapter_scale,
        dropout=cfg.dropout,
        target_mean=float(np.mean(train.y)),
        target_std=target_std if target_std > 1e-12 else 1.0,
    )
    model = Model(args)
    freeze_for_offline(model)
    if verbose:
        print_trainable_parameters(model)

    total_steps = math.ceil(len(train) / cfg.batch_size) * cfg.epochs_max
    if cfg.lr_schedule == "cosine":
        learning_rate = build_schedule(
            {
                "name": "cosine_decay",
                "arguments": [cfg.lr_offline, total_steps],
                "warmup": int(cfg.warmup_ratio * total_steps),
            }
        )
    else:
        learning_rate = cfg.lr_offline
    optimizer = optim.AdamW(learning_rate=learning_rate, weight_decay=cfg.weight_decay)

    loss_value_and_grad = nn.value_and_grad(
        model, lambda m, x, y, s, mask: joint_loss(m, x, y, s, mask, cfg.alpha)
    )

    best_val = math.inf
    best_params = None
    stale = 0
    for epoch in range(1, cfg.epochs_max + 1):
        tic = time.perf_counter()
        model.train()
        losses, steps = 0.0, 0
        for batch in iterate_batches(train, cfg.batch_size, rng, train=True):
            lvalue, grad = loss_value_and_grad(model, *batch)
            if cfg.grad_clip > 0:
                grad, _ = optim.clip_grad_norm(grad, cfg.grad_clip)
            optimizer.update(model, grad)
            mx.eval(model.parameters(), optimizer.state, lvalue)
            lvalue = lvalue.item()
            if not math.isfinite(lvalue):
                raise DivergenceDetected(f"Non-finite training loss at epoch {epoch}.")
            losses += lvalue
            steps += 1
        train_loss = losses / steps
        train_time = time.perf_counter() - tic

        val_mse = evaluate(model, val)
        lr = optimizer.learning_rate.item()
        if verbose:
            print(
                f"Epoch {epoch}: Train loss {train_loss:.3f}, "
                f"Val MSE {val_mse:.3f}, "
                f"Learning Rate {lr:.3e}, "
                f"Took {train_time:.3f}s",
                flush=True,
            )
        if training_callback is not None:
            training_callback.on_train_loss_report(
                {
                    "epoch": epoch,
                    "train_loss": train_loss,
                    "learning_rate": lr,
                    "train_time": train_time,
                }
            )
            training_callback.on_val_loss_report({"epoch": epoch, "val_mse": val_mse})

        if not math.isfinite(val_mse):
            raise DivergenceDetected(f"Non-finite validation MSE at epoch {epoch}.")
        if val_mse < best_val:
            best_val = val_mse
            best_params = model.parameters()
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                if verbose:
                    print(f"Early stopping after epoch {epoch}.", flush=True)
                break

    model.update(best_params)
    mx.eval(model.parameters())
    model.eval()
    return model


def online_update(
    model: Model,
    X: np.ndarray,
    y: np.ndarray,
    cfg: TrainConfig = None,
) -> Model:
    """
    One shuffled pass of adapter and head descent over an adaptation set.

    The input model is left untouched: the update is applied to a copy whose
    version counter is one higher. The shuffle is seeded by ``cfg.seed`` and
    the input version, so replays are deterministic.
    """
    cfg = cfg or TrainConfig()
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y.shape[0] == 0:
        raise EmptyBatch("online_update needs at least one sample.")

    new = model.clone()
    freeze_for_online(new)
    if cfg.dropout > 0:
        new.train()
    else:
        new.eval()

    # No weight decay so a zero gradient leaves every parameter unchanged.
    optimizer = optim.Adam(learning_rate=cfg.lr_online)
    loss_value_and_grad = nn.value_and_grad(new, regression_loss)
    order = np.random.default_rng([cfg.seed, model.version]).permutation(y.shape[0])
    for s in range(0, y.shape[0], cfg.batch_online):
        b = order[s : s + cfg.batch_online]
        lvalue, grad = loss_value_and_grad(
            new, mx.array(X[b], dtype=DTYPE), mx.array(y[b], dtype=DTYPE)
        )
        optimizer.update(new, grad)
        mx.eval(new.parameters(), optimizer.state, lvalue)

    new.eval()
    new.version = model.version + 1
    return new


def grad_check(
    model: Model,
    X: np.ndarray,
    y: np.ndarray,
    epsilon: float = 1e-5,
    num_entries: int = 16,
    seed: int = 0,
    floor: float = 1e-3,
    transform: Callable[[Dict[str, mx.array]], Dict[str, mx.array]] = None,
) -> float:
    """
    Compare analytic online-loss gradients with central differences.

    Args:
        model (Model): The model to check, left unchanged.
        X, y: One sample or a batch of samples.
        epsilon (float): Finite difference step.
        num_entries (int): Number of adapter and head entries sampled.
        seed (int): Seed of the entry sampling.
        floor (float): Lower bound of the relative error denominator, so that
          entries with vanishing gradients are compared in absolute terms.
        transform (callable): Optional map applied to the flattened analytic
          gradients before the comparison.

    Returns:
        The largest relative deviation over the sampled entries.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive.")
    scratch = model.clone()
    freeze_for_online(scratch)
    scratch.eval()
    x = mx.array(np.atleast_2d(np.asarray(X, dtype=np.float64)), dtype=DTYPE)
    y = mx.array(np.atleast_1d(np.asarray(y, dtype=np.float64)), dtype=DTYPE)

    _, grads = nn.value_and_grad(scratch, regression_loss)(scratch, x, y)
    mx.eval(grads)
    grads = dict(tree_flatten(grads))
    if transform is not None:
        grads = transform(grads)
    params = dict(tree_flatten(scratch.trainable_parameters()))
    names = sorted(params)

    def loss_with(name, value):
        scratch.update(tree_unflatten([(name, mx.array(value, dtype=DTYPE))]))
        return regression_loss(scratch, x, y).item()

    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(num_entries):
        name = names[rng.integers(len(names))]
        base = np.array(params[name])
        j = int(rng.integers(base.size))
        plus, minus = base.copy(), base.copy()
        plus.flat[j] += epsilon
        minus.flat[j] -= epsilon
        numeric = (loss_with(name, plus) - loss_with(name, minus)) / (2 * epsilon)
        scratch.update(tree_unflatten([(name, params[name])]))
        analytic = float(np.array(grads[name]).flat[j])
        err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)
        worst = max(worst, err)
    return worst
