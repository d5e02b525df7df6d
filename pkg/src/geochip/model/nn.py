"""Layers for the transformer encoder and convolutional segmentation head.

Modules hold Parameters and expose named_params() for optimizers,
checkpoints, and weight copying. Forward passes take a Context carrying the
train/eval flag and the dropout RNG so eval mode is fully deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from geochip.model.tensor import (
    Parameter,
    Tensor,
    conv2d,
    conv_transpose2x2,
    gelu,
    log_softmax,
    softmax,
)


@dataclass
class Context:
    train: bool = False
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))


class Module:
    def named_params(self, prefix: str = ""):
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                yield f"{prefix}{name}", value
            elif isinstance(value, Module):
                yield from value.named_params(f"{prefix}{name}.")
            elif isinstance(value, list):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_params(f"{prefix}{name}.{i}.")

    def param_count(self) -> int:
        return sum(p.data.size for _n, p in self.named_params())


def _init_linear(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = float(np.sqrt(6.0 / (fan_in + fan_out)))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(np.float32)


class Linear(Module):
    def __init__(self, rng, fan_in: int, fan_out: int):
        self.w = Parameter(_init_linear(rng, fan_in, fan_out))
        self.b = Parameter(np.zeros(fan_out, dtype=np.float32))

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.w + self.b


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-6):
        self.gamma = Parameter(np.ones(dim, dtype=np.float32))
        self.beta = Parameter(np.zeros(dim, dtype=np.float32))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        mu = x.mean(axis=-1, keepdims=True)
        centered = x - mu
        var = (centered * centered).mean(axis=-1, keepdims=True)
        return centered * (var + self.eps) ** -0.5 * self.gamma + self.beta


class MultiHeadSelfAttention(Module):
    def __init__(self, rng, dim: int, num_heads: int):
        assert dim % num_heads == 0, "embed dim must divide num_heads"
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.qkv = Linear(rng, dim, 3 * dim)
        self.out = Linear(rng, dim, dim)

    def __call__(self, x: Tensor) -> Tensor:
        b, n, d = x.shape
        h, hd = self.num_heads, self.head_dim
        qkv = self.qkv(x)  # (B, N, 3D)
        qkv = qkv.reshape(b, n, 3, h, hd).transpose(2, 0, 3, 1, 4)  # (3, B, H, N, hd)
        q, k, v = _split3(qkv)
        scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(hd))
        attn = softmax(scores, axis=-1)
        mixed = attn @ v  # (B, H, N, hd)
        merged = mixed.transpose(0, 2, 1, 3).reshape(b, n, d)
        return self.out(merged)


def _split3(qkv: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    """Split the leading axis of (3, ...) into three tensors with gradients."""
    parts = []
    for idx in range(3):
        part = Tensor(qkv.data[idx], parents=(qkv,))

        def backward(g, idx=idx):
            if qkv.grad is None:
                qkv.grad = np.zeros_like(qkv.data)
            qkv.grad[idx] += g
        part._backward = backward
        parts.append(part)
    return parts[0], parts[1], parts[2]


class Mlp(Module):
    def __init__(self, rng, dim: int, hidden: int):
        self.fc1 = Linear(rng, dim, hidden)
        self.fc2 = Linear(rng, hidden, dim)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(gelu(self.fc1(x)))


class TransformerBlock(Module):
    """Pre-norm block: x + attn(ln(x)), then x + mlp(ln(x))."""

    def __init__(self, rng, dim: int, num_heads: int, mlp_ratio: int):
        self.norm1 = LayerNorm(dim)
        self.attn = MultiHeadSelfAttention(rng, dim, num_heads)
        self.norm2 = LayerNorm(dim)
        self.mlp = Mlp(rng, dim, dim * mlp_ratio)

    def __call__(self, x: Tensor) -> Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class BatchNorm2d(Module):
    """Channel batch-norm with running stats (momentum 0.1); eval freezes them."""

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1):
        self.gamma = Parameter(np.ones(channels, dtype=np.float32))
        self.beta = Parameter(np.zeros(channels, dtype=np.float32))
        self.eps = eps
        self.momentum = momentum
        self.running_mean = np.zeros(channels, dtype=np.float32)
        self.running_var = np.ones(channels, dtype=np.float32)

    def __call__(self, x: Tensor, ctx: Context) -> Tensor:
        c = x.shape[1]
        if ctx.train:
            mu = x.mean(axis=(0, 2, 3), keepdims=True)
            centered = x - mu
            var = (centered * centered).mean(axis=(0, 2, 3), keepdims=True)
            self.running_mean = ((1 - self.momentum) * self.running_mean
                                 + self.momentum * mu.data.reshape(c).astype(np.float32))
            self.running_var = ((1 - self.momentum) * self.running_var
                                + self.momentum * var.data.reshape(c).astype(np.float32))
        else:
            mu = Tensor(self.running_mean.reshape(1, c, 1, 1).astype(x.dtype))
            var = Tensor(self.running_var.reshape(1, c, 1, 1).astype(x.dtype))
            centered = x - mu
        xhat = centered * (var + self.eps) ** -0.5
        return xhat * self.gamma.reshape(1, c, 1, 1) + self.beta.reshape(1, c, 1, 1)


class Dropout:
    def __init__(self, rate: float):
        self.rate = rate

    def __call__(self, x: Tensor, ctx: Context) -> Tensor:
        if not ctx.train or self.rate <= 0.0:
            return x
        keep = 1.0 - self.rate
        mask = (ctx.rng.random(x.shape) < keep).astype(x.dtype) / keep
        return x * Tensor(mask)


class Conv2d(Module):
    def __init__(self, rng, cin: int, cout: int, k: int, pad: int = 0):
        fan_in = cin * k * k
        bound = float(np.sqrt(6.0 / (fan_in + cout * k * k)))
        self.w = Parameter(rng.uniform(-bound, bound,
                                       size=(cout, cin, k, k)).astype(np.float32))
        self.b = Parameter(np.zeros(cout, dtype=np.float32))
        self.pad = pad

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.w, self.b, pad=self.pad)


class ConvTranspose2x2(Module):
    def __init__(self, rng, cin: int, cout: int):
        fan_in = cin * 4
        bound = float(np.sqrt(6.0 / (fan_in + cout * 4)))
        self.w = Parameter(rng.uniform(-bound, bound,
                                       size=(cin, cout, 2, 2)).astype(np.float32))
        self.b = Parameter(np.zeros(cout, dtype=np.float32))

    def __call__(self, x: Tensor) -> Tensor:
        return conv_transpose2x2(x, self.w, self.b)


__all__ = [
    "Context", "Module", "Linear", "LayerNorm", "MultiHeadSelfAttention", "Mlp",
    "TransformerBlock", "BatchNorm2d", "Dropout", "Conv2d", "ConvTranspose2x2",
    "softmax", "log_softmax", "gelu",
]
