# Copyright © 2024 Apple Inc.
# Copyright © 2025 mlx-popcast contributors.

import math

import mlx.core as mx
import mlx.nn as nn


class LoRALinear(nn.Module):
    """
    A linear layer with a low-rank adapter ``scale * A @ B`` added to its
    (frozen during adaptation) weight. ``B`` starts at zero so a fresh
    adapter leaves the base layer's output unchanged.
    """

    @staticmethod
    def from_base(
        linear: nn.Linear,
        r: int = 16,
        dropout: float = 0.0,
        scale: float = 2.0,
    ):
        output_dims, input_dims = linear.weight.shape
        lora_lin = LoRALinear(
            input_dims=input_dims,
            output_dims=output_dims,
            r=r,
            dropout=dropout,
            scale=scale,
            bias="bias" in linear,
        )
        lora_lin.linear = linear
        return lora_lin

    def delta(self) -> mx.array:
        """The materialised ``(output_dims, input_dims)`` weight update."""
        return (self.scale * self.lora_b.T) @ self.lora_a.T

    def fuse(self) -> nn.Linear:
        linear = self.linear
        bias = "bias" in linear
        weight = linear.weight
        output_dims, input_dims = weight.shape
        fused_linear = nn.Linear(input_dims, output_dims, bias=bias)
        fused_linear.weight = weight + self.delta().astype(weight.dtype)
        if bias:
            fused_linear.bias = linear.bias
        return fused_linear

    def __init__(
        self,
        input_dims: int,
        output_dims: int,
        r: int = 16,
        dropout: float = 0.0,
        scale: float = 2.0,
        bias: bool = True,
    ):
        super().__init__()

        self.linear = nn.Linear(input_dims, output_dims, bias=bias)
        self.dropout = nn.Dropout(p=dropout)
        self.scale = scale
        self.rank = r

        bound = 1 / math.sqrt(input_dims)
        self.lora_a = mx.random.uniform(
            low=-bound,
            high=bound,
            shape=(input_dims, r),
        )
        self.lora_b = mx.zeros(shape=(r, output_dims))

    def __call__(self, x):
        y = self.linear(x)
        z = (self.dropout(x) @ self.lora_a) @ self.lora_b
        return y + (self.scale * z).astype(x.dtype)
