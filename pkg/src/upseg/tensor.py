"""Dense float64 tensors with reverse-mode automatic differentiation.

Every primitive the segmentation architecture needs lives here: convolution,
transposed convolution, max-pooling, relu, channel softmax, channel concat,
nearest-neighbour upsampling and cross entropy. Each op records a backward
closure; `backward()` replays them in reverse topological order.

Tensors are immutable once they enter a graph: ops never write into their
inputs, and optimizers rebind `.data` to fresh arrays instead of mutating.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DomainError, ShapeError, UsageError

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (forward-only evaluation)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """N-dimensional float64 array, canonical image layout N x C x H x W."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward_fn = None

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise UsageError("item() requires a scalar tensor")
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, scalar):
        return scale(self, scalar)

    __rmul__ = __mul__


@dataclass
class Parameter:
    """Named trainable tensor; names are unique within a ModelGraph."""

    name: str
    tensor: Tensor

    @property
    def size(self) -> int:
        return self.tensor.data.size


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _make_node(data, parents, backward_fn) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    return out


def _accumulate(tensor: Tensor, grad: np.ndarray) -> None:
    if not tensor.requires_grad:
        return
    if tensor.grad is None:
        tensor.grad = grad
    else:
        tensor.grad = tensor.grad + grad


def backward(loss: Tensor) -> None:
    """Populate `.grad` on every tensor the scalar `loss` depends on."""
    if loss.data.size != 1:
        raise UsageError("backward expects a scalar loss tensor")
    topo: list[Tensor] = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward_fn is not None and node.grad is not None:
            node._backward_fn(node.grad)


def zero_grads(tensors) -> None:
    """Reset grads to zero arrays; unused parameters then stay at zero."""
    for t in tensors:
        t = t.tensor if isinstance(t, Parameter) else t
        t.grad = np.zeros_like(t.data)


# ---------------------------------------------------------------------------
# primitives


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"add shape mismatch: {a.shape} vs {b.shape}")
    out_data = a.data + b.data

    def bwd(g):
        _accumulate(a, g)
        _accumulate(b, g)

    return _make_node(out_data, (a, b), bwd)


def scale(x: Tensor, factor) -> Tensor:
    """Multiply by a python scalar or a constant array (no gradient flows
    into the factor)."""
    x = as_tensor(x)
    s = float(factor) if np.isscalar(factor) else np.asarray(factor, dtype=np.float64)
    out_data = x.data * s
    if out_data.shape != x.shape:
        raise ShapeError(f"scale factor broadcasts {x.shape} to "
                         f"{out_data.shape}; factors must preserve shape")

    def bwd(g):
        _accumulate(x, g * s)

    return _make_node(out_data, (x,), bwd)


def reduce_sum(x: Tensor) -> Tensor:
    """Sum every element into a scalar tensor."""
    x = as_tensor(x)
    out_data = np.float64(x.data.sum())

    def bwd(g):
        _accumulate(x, np.broadcast_to(g, x.shape).astype(np.float64))

    return _make_node(out_data, (x,), bwd)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1,
           padding: int = 0) -> Tensor:
    """2-D convolution; weight layout (C_out, C_in, K_h, K_w)."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ShapeError("conv2d expects 4-d input and weight")
    n, c_in, h, w = x.shape
    c_out, wc_in, kh, kw = weight.shape
    if wc_in != c_in:
        raise ShapeError(f"conv2d channel mismatch: input {c_in}, weight {wc_in}")
    if bias.shape != (c_out,):
        raise ShapeError(f"conv2d bias must have shape ({c_out},)")
    if stride < 1:
        raise ShapeError("conv2d stride must be >= 1")
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    if kh > h + 2 * padding or kw > w + 2 * padding or oh < 1 or ow < 1:
        raise ShapeError(f"conv2d kernel {kh}x{kw} too large for input "
                         f"{h}x{w} with padding {padding}")

    cols = kernels.im2col(x.data, kh, kw, stride, padding)   # (N, C*KH*KW, OH*OW)
    wmat = weight.data.reshape(c_out, c_in * kh * kw)
    out_data = (wmat @ cols + bias.data.reshape(1, c_out, 1)).reshape(n, c_out, oh, ow)

    def bwd(g):
        gmat = g.reshape(n, c_out, oh * ow)
        if bias.requires_grad:
            _accumulate(bias, g.sum(axis=(0, 2, 3)))
        if weight.requires_grad:
            g2 = gmat.transpose(1, 0, 2).reshape(c_out, n * oh * ow)
            c2 = cols.transpose(1, 0, 2).reshape(c_in * kh * kw, n * oh * ow)
            _accumulate(weight, (g2 @ c2.T).reshape(weight.shape))
        if x.requires_grad:
            dcols = wmat.T @ gmat
            _accumulate(x, kernels.col2im(dcols, x.shape, kh, kw, stride, padding))

    return _make_node(out_data, (x, weight, bias), bwd)


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Tensor,
                     stride: int = 1) -> Tensor:
    """Transposed convolution, the adjoint of conv2d with the same kernel.

    Weight layout (C_in, C_out, K_h, K_w); output extent (H-1)*stride + K_h.
    """
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ShapeError("conv_transpose2d expects 4-d input and weight")
    n, c_in, h, w = x.shape
    wc_in, c_out, kh, kw = weight.shape
    if wc_in != c_in:
        raise ShapeError(f"conv_transpose2d channel mismatch: input {c_in}, "
                         f"weight {wc_in}")
    if bias.shape != (c_out,):
        raise ShapeError(f"conv_transpose2d bias must have shape ({c_out},)")
    if stride < 1:
        raise ShapeError("conv_transpose2d stride must be >= 1")
    oh = (h - 1) * stride + kh
    ow = (w - 1) * stride + kw

    wmat = weight.data.reshape(c_in, c_out * kh * kw)
    xmat = x.data.reshape(n, c_in, h * w)
    cols = np.matmul(wmat.T, xmat)                           # (N, C_out*KH*KW, H*W)
    out_data = kernels.col2im(cols, (n, c_out, oh, ow), kh, kw, stride, 0)
    out_data += bias.data.reshape(1, c_out, 1, 1)

    def bwd(g):
        gcols = kernels.im2col(g, kh, kw, stride, 0)         # (N, C_out*KH*KW, H*W)
        if bias.requires_grad:
            _accumulate(bias, g.sum(axis=(0, 2, 3)))
        if weight.requires_grad:
            x2 = x.data.transpose(1, 0, 2, 3).reshape(c_in, n * h * w)
            g2 = gcols.transpose(1, 0, 2).reshape(c_out * kh * kw, n * h * w)
            _accumulate(weight, (x2 @ g2.T).reshape(weight.shape))
        if x.requires_grad:
            _accumulate(x, np.matmul(wmat, gcols).reshape(x.shape))

    return _make_node(out_data, (x, weight, bias), bwd)


def maxpool2d(x: Tensor, window: int = 2, stride: int = 2) -> Tensor:
    """Max pooling; gradient routes to the first maximum in row-major window order."""
    x = as_tensor(x)
    n, c, h, w = x.shape
    if window > h or window > w:
        raise ShapeError(f"maxpool window {window} exceeds input extent {h}x{w}")
    oh = (h - window) // stride + 1
    ow = (w - window) // stride + 1
    offsets = [(dy, dx) for dy in range(window) for dx in range(window)]
    stacked = np.stack(
        [x.data[:, :, dy:dy + stride * oh:stride, dx:dx + stride * ow:stride]
         for dy, dx in offsets], axis=-1)
    amax = np.argmax(stacked, axis=-1)                       # first max wins ties
    out_data = np.take_along_axis(stacked, amax[..., None], axis=-1)[..., 0]

    def bwd(g):
        if not x.requires_grad:
            return
        dx = np.zeros_like(x.data)
        for k, (dy, dxo) in enumerate(offsets):
            mask = amax == k
            dx[:, :, dy:dy + stride * oh:stride,
               dxo:dxo + stride * ow:stride] += np.where(mask, g, 0.0)
        _accumulate(x, dx)

    return _make_node(out_data, (x,), bwd)


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out_data = np.maximum(x.data, 0.0)

    def bwd(g):
        _accumulate(x, np.where(x.data > 0.0, g, 0.0))

    return _make_node(out_data, (x,), bwd)


def softmax_channel(x: Tensor) -> Tensor:
    """Softmax over the channel axis; output channels sum to 1 per pixel."""
    x = as_tensor(x)
    if x.data.ndim != 4:
        raise ShapeError("softmax_channel expects an N x C x H x W tensor")
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=1, keepdims=True)

    def bwd(g):
        inner = (g * y).sum(axis=1, keepdims=True)
        _accumulate(x, y * (g - inner))

    return _make_node(y, (x,), bwd)


def concat_channels(tensors) -> Tensor:
    """Concatenate along the channel axis; N, H, W must match."""
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat_channels needs at least one tensor")
    ref = ts[0].shape
    for t in ts[1:]:
        if t.data.ndim != 4 or (t.shape[0], t.shape[2], t.shape[3]) != (ref[0], ref[2], ref[3]):
            raise ShapeError(f"concat_channels extent mismatch: {ref} vs {t.shape}")
    out_data = np.concatenate([t.data for t in ts], axis=1)
    splits = np.cumsum([t.shape[1] for t in ts])[:-1]

    def bwd(g):
        for t, piece in zip(ts, np.split(g, splits, axis=1)):
            _accumulate(t, piece)

    return _make_node(out_data, tuple(ts), bwd)


def upsample_nearest(x: Tensor, factor: int) -> Tensor:
    """Integer-factor nearest-neighbour upsampling (pixel replication)."""
    x = as_tensor(x)
    f = int(factor)
    if f < 1:
        raise ShapeError("upsample factor must be a positive integer")
    n, c, h, w = x.shape
    out_data = np.repeat(np.repeat(x.data, f, axis=2), f, axis=3)

    def bwd(g):
        _accumulate(x, g.reshape(n, c, h, f, w, f).sum(axis=(3, 5)))

    return _make_node(out_data, (x,), bwd)


def _target_array(target, spatial_shape):
    t = target.data if isinstance(target, Tensor) else np.asarray(target)
    t = np.squeeze(t, axis=1) if t.ndim == 4 and t.shape[1] == 1 else t
    if t.shape != spatial_shape:
        raise ShapeError(f"target shape {t.shape} does not match logits "
                         f"spatial shape {spatial_shape}")
    return t


def cross_entropy(logits: Tensor, target) -> Tensor:
    """Mean per-pixel cross entropy.

    One logit channel means the binary sigmoid formulation with a {0, 1}
    mask; several channels mean softmax with integer class indices.
    """
    logits = as_tensor(logits)
    if logits.data.ndim != 4:
        raise ShapeError("cross_entropy expects N x C x H x W logits")
    n, c, h, w = logits.shape
    t = _target_array(target, (n, h, w))
    count = n * h * w

    if c == 1:
        tv = t.astype(np.float64)
        if not np.isin(tv, (0.0, 1.0)).all():
            raise DomainError("binary cross_entropy target must be a 0/1 mask")
        z = logits.data[:, 0]
        # stable: max(z,0) - z*t + log(1 + exp(-|z|))
        loss = np.maximum(z, 0.0) - z * tv + np.log1p(np.exp(-np.abs(z)))
        out_data = np.float64(loss.mean())

        def bwd(g):
            sig = 1.0 / (1.0 + np.exp(-z))
            _accumulate(logits, (g * (sig - tv) / count)[:, None])

        return _make_node(out_data, (logits,), bwd)

    ti = t.astype(np.int64)
    if (ti < 0).any() or (ti >= c).any():
        raise DomainError(f"target class index out of range for {c} classes")
    zmax = logits.data.max(axis=1, keepdims=True)
    ez = np.exp(logits.data - zmax)
    lse = np.log(ez.sum(axis=1)) + zmax[:, 0]
    z_true = np.take_along_axis(logits.data, ti[:, None], axis=1)[:, 0]
    out_data = np.float64((lse - z_true).mean())

    def bwd(g):
        soft = ez / ez.sum(axis=1, keepdims=True)
        onehot = np.zeros_like(soft)
        np.put_along_axis(onehot, ti[:, None], 1.0, axis=1)
        _accumulate(logits, g * (soft - onehot) / count)

    return _make_node(out_data, (logits,), bwd)
