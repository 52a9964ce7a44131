# Copyright © 2024 Apple Inc.
# Copyright © 2025 mlx-popcast contributors.
from typing import Dict

import mlx.core as mx
import mlx.nn as nn
import mlx.optimizers as opt
import numpy as np
from mlx.utils import tree_flatten

from .lora import LoRALinear

ADAPTER_KEYS = ["lora_a", "lora_b"]


def build_schedule(schedule_config: Dict):
    """
    Build a learning rate schedule from the given config.
    """
    schedule_fn = getattr(opt.schedulers, schedule_config["name"])
    arguments = schedule_config["arguments"]
    initial_lr = arguments[0]
    bound_schedule_fn = schedule_fn(*arguments)
    if warmup_steps := schedule_config.get("warmup", 0):
        warmup_init = schedule_config.get("warmup_init", 0.0)
        warmup_fn = opt.schedulers.linear_schedule(
            warmup_init, initial_lr, warmup_steps
        )
        return opt.schedulers.join_schedules(
            [warmup_fn, bound_schedule_fn], [warmup_steps + 1]
        )
    else:
        return bound_schedule_fn


def freeze_for_offline(model: nn.Module) -> nn.Module:
    """Everything but the adapter factors is trained offline."""
    model.unfreeze()
    model.freeze(keys=ADAPTER_KEYS)
    return model


def freeze_for_online(model: nn.Module) -> nn.Module:
    """Online updates touch the adapter factors and the regression head only."""
    model.freeze()
    for _, m in model.named_modules():
        if isinstance(m, LoRALinear):
            m.unfreeze(keys=ADAPTER_KEYS, recurse=False)
    model.head.unfreeze()
    return model


def fuse_adapters(model: nn.Module) -> nn.Module:
    """
    Return a copy of the model whose adapted weights hold ``W + scale * A @ B``
    and whose adapters are zeroed.
    """
    fused = model.clone()
    for _, m in fused.named_modules():
        if isinstance(m, LoRALinear):
            m.linear.weight = m.linear.weight + m.delta().astype(m.linear.weight.dtype)
            m.lora_b = mx.zeros_like(m.lora_b)
    mx.eval(fused.parameters())
    return fused


def adapter_deltas(model: nn.Module) -> Dict[str, np.ndarray]:
    """Materialised weight update of every adapted layer."""
    deltas = {}
    for name, m in model.named_modules():
        if isinstance(m, LoRALinear):
            d = m.delta()
            mx.eval(d)
            deltas[name] = np.array(d)
    return deltas


def nparams(module):
    return sum(v.size for _, v in tree_flatten(module.parameters()))


def print_trainable_parameters(model):
    total_p = nparams(model) / 10**3
    trainable_p = (
        sum(v.size for _, v in tree_flatten(model.trainable_parameters())) / 10**3
    )
    print(
        f"Trainable parameters: {(trainable_p * 100 / total_p):.3f}% "
        f"({trainable_p:.3f}K/{total_p:.3f}K)"
    )
