"""Minimal reverse-mode autodiff over numpy arrays.

Covers exactly what the segmentation model needs: broadcasting arithmetic,
matmul, exp/log/tanh/pow, axis reductions, reshape/transpose, and a conv2d
primitive. Gradients accumulate in float; graphs are built eagerly and freed
after backward(). Dtype follows the inputs, so the same model code runs in
float32 for training and float64 for gradient checking.
"""

from __future__ import annotations

import numpy as np

from geochip.errors import GeochipError


class TrainingNumericsError(GeochipError):
    """NaN or Inf showed up in gradients."""


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, parents=(), backward=None):
        self.data = np.asarray(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward

    # ------------------------------------------------------------- plumbing
    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() needs a scalar loss")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is None or node.grad is None:
                continue
            node._backward(node.grad)
            # free the closure so intermediate buffers can be collected
            node._backward = None
            node._parents = ()

    def _accumulate(self, grad: np.ndarray):
        if not np.all(np.isfinite(grad)):
            raise TrainingNumericsError("non-finite gradient encountered")
        if self.grad is None:
            self.grad = grad.copy()
        else:
            self.grad += grad

    # ------------------------------------------------------------ operators
    @staticmethod
    def _lift(other) -> "Tensor":
        return other if isinstance(other, Tensor) else Tensor(np.asarray(other))

    def __add__(self, other):
        other = self._lift(other)
        out = Tensor(self.data + other.data, parents=(self, other))

        def backward(g):
            if self.requires_grad or self._parents:
                self._accumulate(_unbroadcast(g, self.data.shape))
            if other.requires_grad or other._parents:
                other._accumulate(_unbroadcast(g, other.data.shape))
        out._backward = backward
        return out

    __radd__ = __add__

    def __neg__(self):
        out = Tensor(-self.data, parents=(self,))

        def backward(g):
            self._accumulate(-g)
        out._backward = backward
        return out

    def __sub__(self, other):
        return self + (-self._lift(other))

    def __rsub__(self, other):
        return self._lift(other) + (-self)

    def __mul__(self, other):
        other = self._lift(other)
        out = Tensor(self.data * other.data, parents=(self, other))

        def backward(g):
            if self.requires_grad or self._parents:
                self._accumulate(_unbroadcast(g * other.data, self.data.shape))
            if other.requires_grad or other._parents:
                other._accumulate(_unbroadcast(g * self.data, other.data.shape))
        out._backward = backward
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._lift(other)
        return self * other ** -1.0

    def __rtruediv__(self, other):
        return self._lift(other) * self ** -1.0

    def __pow__(self, exponent: float):
        out = Tensor(self.data ** exponent, parents=(self,))

        def backward(g):
            self._accumulate(g * exponent * self.data ** (exponent - 1.0))
        out._backward = backward
        return out

    def __matmul__(self, other):
        other = self._lift(other)
        out = Tensor(self.data @ other.data, parents=(self, other))

        def backward(g):
            if self.requires_grad or self._parents:
                ga = g @ np.swapaxes(other.data, -1, -2)
                self._accumulate(_unbroadcast(ga, self.data.shape))
            if other.requires_grad or other._parents:
                gb = np.swapaxes(self.data, -1, -2) @ g
                other._accumulate(_unbroadcast(gb, other.data.shape))
        out._backward = backward
        return out

    # ---------------------------------------------------------- elementwise
    def exp(self):
        value = np.exp(self.data)
        out = Tensor(value, parents=(self,))

        def backward(g):
            self._accumulate(g * value)
        out._backward = backward
        return out

    def log(self):
        out = Tensor(np.log(self.data), parents=(self,))

        def backward(g):
            self._accumulate(g / self.data)
        out._backward = backward
        return out

    def tanh(self):
        value = np.tanh(self.data)
        out = Tensor(value, parents=(self,))

        def backward(g):
            self._accumulate(g * (1.0 - value * value))
        out._backward = backward
        return out

    def sqrt(self):
        return self ** 0.5

    # ------------------------------------------------------------ reductions
    def sum(self, axis=None, keepdims: bool = False):
        out = Tensor(self.data.sum(axis=axis, keepdims=keepdims), parents=(self,))
        in_shape = self.data.shape

        def backward(g):
            if axis is None:
                grad = np.broadcast_to(g, in_shape)
            else:
                axes = axis if isinstance(axis, tuple) else (axis,)
                if not keepdims:
                    g = np.expand_dims(g, axes)
                grad = np.broadcast_to(g, in_shape)
            self._accumulate(np.ascontiguousarray(grad))
        out._backward = backward
        return out

    def mean(self, axis=None, keepdims: bool = False):
        if axis is None:
            n = self.data.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            n = 1
            for a in axes:
                n *= self.data.shape[a]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # ----------------------------------------------------------- shape ops
    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = Tensor(self.data.reshape(shape), parents=(self,))
        in_shape = self.data.shape

        def backward(g):
            self._accumulate(g.reshape(in_shape))
        out._backward = backward
        return out

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        out = Tensor(self.data.transpose(axes), parents=(self,))
        inverse = np.argsort(axes)

        def backward(g):
            self._accumulate(g.transpose(inverse))
        out._backward = backward
        return out


class Parameter(Tensor):
    """Trainable leaf tensor."""

    __slots__ = ()

    def __init__(self, data):
        super().__init__(np.asarray(data), requires_grad=True)


# ---------------------------------------------------------------- functions

def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x - x.data.max(axis=axis, keepdims=True)  # detached max: exact
    e = shifted.exp()
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x - x.data.max(axis=axis, keepdims=True)
    return shifted - shifted.exp().sum(axis=axis, keepdims=True).log()


def gelu(x: Tensor) -> Tensor:
    # tanh approximation
    c = float(np.sqrt(2.0 / np.pi))
    return 0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None, pad: int = 0) -> Tensor:
    """Stride-1 2-D convolution: x (B,Ci,H,W), weight (Co,Ci,kh,kw) -> (B,Co,H',W')."""
    xd, wd = x.data, weight.data
    batch, cin, h, w = xd.shape
    cout, cin_w, kh, kw = wd.shape
    assert cin == cin_w, f"conv2d channel mismatch: {cin} vs {cin_w}"
    if pad:
        xp = np.zeros((batch, cin, h + 2 * pad, w + 2 * pad), dtype=xd.dtype)
        xp[:, :, pad:pad + h, pad:pad + w] = xd
    else:
        xp = xd
    oh = xp.shape[2] - kh + 1
    ow = xp.shape[3] - kw + 1
    out_val = np.zeros((batch, cout, oh, ow), dtype=xd.dtype)
    for di in range(kh):
        for dj in range(kw):
            patch = xp[:, :, di:di + oh, dj:dj + ow]
            out_val += np.einsum("bchw,oc->bohw", patch, wd[:, :, di, dj],
                                 optimize=True)
    parents = (x, weight) if bias is None else (x, weight, bias)
    if bias is not None:
        out_val = out_val + bias.data.reshape(1, cout, 1, 1)
    out = Tensor(out_val, parents=parents)

    def backward(g):
        if x.requires_grad or x._parents:
            gxp = np.zeros_like(xp)
            for di in range(kh):
                for dj in range(kw):
                    gxp[:, :, di:di + oh, dj:dj + ow] += np.einsum(
                        "bohw,oc->bchw", g, wd[:, :, di, dj], optimize=True)
            gx = gxp[:, :, pad:pad + h, pad:pad + w] if pad else gxp
            x._accumulate(gx)
        if weight.requires_grad or weight._parents:
            gw = np.zeros_like(wd)
            for di in range(kh):
                for dj in range(kw):
                    patch = xp[:, :, di:di + oh, dj:dj + ow]
                    gw[:, :, di, dj] = np.einsum("bohw,bchw->oc", g, patch,
                                                 optimize=True)
            weight._accumulate(gw)
        if bias is not None and (bias.requires_grad or bias._parents):
            bias._accumulate(g.sum(axis=(0, 2, 3)))
    out._backward = backward
    return out


def conv_transpose2x2(x: Tensor, weight: Tensor, bias: Tensor | None) -> Tensor:
    """Stride-2 kernel-2 transposed conv (exact 2x upsample, no overlap).

    x (B,Ci,H,W), weight (Ci,Co,2,2) -> (B,Co,2H,2W). Composite of matmul and
    shape ops, so the backward pass comes for free.
    """
    batch, cin, h, w = x.shape
    cin_w, cout = weight.shape[0], weight.shape[1]
    assert cin == cin_w
    flat = x.transpose(0, 2, 3, 1).reshape(batch, h * w, cin)
    wmat = weight.reshape(cin, cout * 4)
    mixed = flat @ wmat  # (B, H*W, Co*4)
    mixed = mixed.reshape(batch, h, w, cout, 2, 2)
    mixed = mixed.transpose(0, 3, 1, 4, 2, 5)  # B, Co, H, 2, W, 2
    out = mixed.reshape(batch, cout, 2 * h, 2 * w)
    if bias is not None:
        out = out + bias.reshape(1, cout, 1, 1)
    return out
