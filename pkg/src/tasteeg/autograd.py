"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation records its inputs and an adjoint closure on the output
tensor; ``backward(loss)`` replays the recorded graph in reverse
topological order. Gradients accumulate into the ``grad`` buffers of
``requires_grad`` tensors, so repeated backward calls without
``zero_grad`` sum their contributions.

The conv2d/maxpool2d hot paths dispatch to :mod:`tasteeg.kernels`
(compiled extension or numpy fallback); everything else is plain numpy.
"""
from __future__ import annotations

import contextlib

import numpy as np

from . import kernels


class ShapeError(ValueError):
    """A tensor operation received arguments with incompatible extents."""


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording (e.g. for evaluation forward passes)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """N-dimensional float64 array node in the autodiff graph.

    ``grad`` is a same-shape buffer present iff ``requires_grad``; leaf
    tensors keep their accumulated gradient until ``zero_grad``.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if self.requires_grad else None
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def item(self):
        return float(self.data)

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0.0

    def backward(self):
        backward(self)

    # operator sugar used by tests and the attention block
    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward_fn):
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.grad = np.zeros_like(out.data)
        out._parents = parents
        out._backward = backward_fn
    return out


def backward(loss: Tensor) -> None:
    """Populate ``grad`` for every requires_grad tensor reachable from loss.

    ``loss`` must be scalar. Non-leaf gradients are recomputed from scratch
    on each call; leaf gradients accumulate across calls.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward expects a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad:
        return

    order = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))

    for node in order:
        if node._parents:  # non-leaf: fresh adjoint for this pass
            node.grad[...] = 0.0
    loss.grad[...] = 1.0
    for node in reversed(order):
        if node._backward is not None:
            node._backward()


# ---------------------------------------------------------------------------
# elementwise / structural ops


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"add: shape mismatch {a.shape} vs {b.shape}")
    out_data = a.data + b.data

    def grad_fn():
        if a.requires_grad:
            a.grad += out.grad
        if b.requires_grad:
            b.grad += out.grad

    out = _make(out_data, (a, b), grad_fn)
    return out


def mul(a, b):
    """Elementwise product; the second operand may be a python scalar."""
    a = _as_tensor(a)
    if np.isscalar(b):
        c = float(b)

        def grad_scalar():
            if a.requires_grad:
                a.grad += c * out.grad

        out = _make(a.data * c, (a,), grad_scalar)
        return out
    b = _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"mul: shape mismatch {a.shape} vs {b.shape}")

    def grad_fn():
        if a.requires_grad:
            a.grad += b.data * out.grad
        if b.requires_grad:
            b.grad += a.data * out.grad

    out = _make(a.data * b.data, (a, b), grad_fn)
    return out


def tsum(x):
    """Sum of all elements, as a scalar tensor."""
    x = _as_tensor(x)

    def grad_fn():
        x.grad += out.grad

    out = _make(x.data.sum(), (x,), grad_fn)
    return out


def reshape(x, shape):
    x = _as_tensor(x)
    old = x.data.shape
    out_data = x.data.reshape(shape)

    def grad_fn():
        x.grad += out.grad.reshape(old)

    out = _make(out_data, (x,), grad_fn)
    return out


# ---------------------------------------------------------------------------
# activations


def relu(x):
    x = _as_tensor(x)
    mask = x.data > 0  # derivative at exactly 0 is 0

    def grad_fn():
        x.grad += mask * out.grad

    out = _make(np.where(mask, x.data, 0.0), (x,), grad_fn)
    return out


def sigmoid(x):
    x = _as_tensor(x)
    s = _sigmoid(x.data)

    def grad_fn():
        x.grad += s * (1.0 - s) * out.grad

    out = _make(s, (x,), grad_fn)
    return out


def _sigmoid(z):
    # stable on both tails
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def pointwise(x, kind):
    """Elementwise activation, kind in {"relu", "sigmoid"}."""
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ValueError(f"unknown pointwise kind: {kind!r}")


# ---------------------------------------------------------------------------
# linear algebra layers


def linear(x, w, b):
    """x (N,D) @ w(K,D)^T + b(K) -> (N,K)."""
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"linear: input {x.shape} incompatible with weight {w.shape}")
    if b.shape != (w.shape[0],):
        raise ShapeError(f"linear: bias {b.shape} incompatible with weight {w.shape}")
    out_data = x.data @ w.data.T + b.data

    def grad_fn():
        if x.requires_grad:
            x.grad += out.grad @ w.data
        if w.requires_grad:
            w.grad += out.grad.T @ x.data
        if b.requires_grad:
            b.grad += out.grad.sum(axis=0)

    out = _make(out_data, (x, w, b), grad_fn)
    return out


def conv2d(x, w, b, stride=(1, 1), padding=(0, 0)):
    """2-D cross-correlation with zero padding.

    x: (N,Cin,H,W), w: (Cout,Cin,kh,kw), b: (Cout,). Output extents follow
    floor((ext + 2*pad - kernel)/stride) + 1.
    """
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    sh, sw = stride
    ph, pw = padding
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d: expected 4-D input/weight, got {x.shape}/{w.shape}")
    n, cin, h, wid = x.shape
    cout, cin_w, kh, kw = w.shape
    if cin != cin_w:
        raise ShapeError(f"conv2d: input channels {cin} != weight channels {cin_w}")
    if b.shape != (cout,):
        raise ShapeError(f"conv2d: bias {b.shape} incompatible with weight {w.shape}")
    if kh > h + 2 * ph or kw > wid + 2 * pw:
        raise ShapeError(
            f"conv2d: kernel {kh}x{kw} larger than padded input "
            f"{h + 2 * ph}x{wid + 2 * pw}")
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (wid + 2 * pw - kw) // sw + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: output extent {ho}x{wo} < 1")

    out_data = kernels.conv2d_forward(x.data, w.data, b.data, (sh, sw), (ph, pw))

    def grad_fn():
        dx, dw = kernels.conv2d_backward(
            x.data, w.data, out.grad, (sh, sw), (ph, pw), need_dx=x.requires_grad)
        if x.requires_grad:
            x.grad += dx
        if w.requires_grad:
            w.grad += dw
        if b.requires_grad:
            b.grad += out.grad.sum(axis=(0, 2, 3))

    out = _make(out_data, (x, w, b), grad_fn)
    return out


def conv1d(x, w, b):
    """Length-preserving 1-D cross-correlation along the last axis.

    x: (N,C) batch of sequences, w: (3,) kernel, b: scalar; zero padding 1.
    This is the channel-interaction convolution of the attention block.
    """
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    if x.ndim != 2 or w.shape != (3,):
        raise ShapeError(f"conv1d: expected (N,C) input and (3,) kernel, got {x.shape}/{w.shape}")
    xp = np.pad(x.data, ((0, 0), (1, 1)))
    c = x.shape[1]
    out_data = (w.data[0] * xp[:, :c] + w.data[1] * xp[:, 1:c + 1]
                + w.data[2] * xp[:, 2:] + b.data)

    def grad_fn():
        g = out.grad
        if x.requires_grad:
            gp = np.pad(g, ((0, 0), (1, 1)))
            x.grad += (w.data[2] * gp[:, :c] + w.data[1] * gp[:, 1:c + 1]
                       + w.data[0] * gp[:, 2:])
        if w.requires_grad:
            w.grad[0] += float((g * xp[:, :c]).sum())
            w.grad[1] += float((g * xp[:, 1:c + 1]).sum())
            w.grad[2] += float((g * xp[:, 2:]).sum())
        if b.requires_grad:
            b.grad += g.sum()

    out = _make(out_data, (x, w, b), grad_fn)
    return out


# ---------------------------------------------------------------------------
# pooling


def maxpool2d(x, kernel, stride=None):
    """Max pooling with floor semantics; stride defaults to the kernel.

    The gradient routes to the argmax cell; ties break to the first maximal
    cell in row-major order.
    """
    x = _as_tensor(x)
    kh, kw = kernel
    sh, sw = stride if stride is not None else kernel
    if x.ndim != 4:
        raise ShapeError(f"maxpool2d: expected 4-D input, got {x.shape}")
    n, c, h, w = x.shape
    if kh > h or kw > w:
        raise ShapeError(f"maxpool2d: kernel {kh}x{kw} larger than input {h}x{w}")

    out_data, idx = kernels.maxpool2d_forward(x.data, (kh, kw), (sh, sw))

    def grad_fn():
        if x.requires_grad:
            x.grad += kernels.maxpool2d_backward((n, c, h, w), idx, out.grad)

    out = _make(out_data, (x,), grad_fn)
    return out


def global_avg_pool(x):
    """Mean over the spatial dims: (N,C,H,W) -> (N,C)."""
    x = _as_tensor(x)
    n, c, h, w = x.shape
    area = h * w

    def grad_fn():
        x.grad += np.broadcast_to(out.grad[:, :, None, None] / area, x.shape)

    out = _make(x.data.mean(axis=(2, 3)), (x,), grad_fn)
    return out


def global_max_pool(x):
    """Max over the spatial dims: (N,C,H,W) -> (N,C); gradient to the
    first (row-major) argmax cell."""
    x = _as_tensor(x)
    n, c, h, w = x.shape
    flat = x.data.reshape(n, c, h * w)
    idx = flat.argmax(axis=2)
    out_data = np.take_along_axis(flat, idx[:, :, None], axis=2)[:, :, 0]

    def grad_fn():
        g = np.zeros((n, c, h * w))
        np.put_along_axis(g, idx[:, :, None], out.grad[:, :, None], axis=2)
        x.grad += g.reshape(x.shape)

    out = _make(out_data, (x,), grad_fn)
    return out


def global_pool(x):
    """(average, max) pooled statistics over H x W, each (N,C)."""
    return global_avg_pool(x), global_max_pool(x)


def scale_channels(x, s):
    """Multiply each (N,C) channel plane of x (N,C,H,W) by s (N,C)."""
    x, s = _as_tensor(x), _as_tensor(s)
    if s.shape != x.shape[:2]:
        raise ShapeError(f"scale_channels: weights {s.shape} vs input {x.shape}")
    out_data = x.data * s.data[:, :, None, None]

    def grad_fn():
        if x.requires_grad:
            x.grad += out.grad * s.data[:, :, None, None]
        if s.requires_grad:
            s.grad += (out.grad * x.data).sum(axis=(2, 3))

    out = _make(out_data, (x, s), grad_fn)
    return out


# ---------------------------------------------------------------------------
# loss


def softmax_cross_entropy(logits, labels, sample_weights=None):
    """Mean over the batch of -log softmax(logits)[label].

    labels: (N,) integer class indices. With ``sample_weights`` (N,), each
    per-sample loss is scaled before the division by N, which is what the
    dual-label loss needs to keep its two terms summing to a plain mean.
    """
    logits = _as_tensor(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2:
        raise ShapeError(f"softmax_cross_entropy: expected (N,K) logits, got {logits.shape}")
    n, k = logits.shape
    if labels.shape != (n,):
        raise ValueError(f"labels shape {labels.shape} does not match batch {n}")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"label out of range [0,{k}): {labels.min()}..{labels.max()}")
    weights = np.ones(n) if sample_weights is None else np.asarray(sample_weights, dtype=np.float64)

    z = logits.data - logits.data.max(axis=1, keepdims=True)
    ez = np.exp(z)
    p = ez / ez.sum(axis=1, keepdims=True)
    nll = z[np.arange(n), labels] - np.log(ez.sum(axis=1))
    out_data = -(weights * nll).sum() / n

    def grad_fn():
        if logits.requires_grad:
            d = p.copy()
            d[np.arange(n), labels] -= 1.0
            logits.grad += float(out.grad) * d * (weights / n)[:, None]

    out = _make(out_data, (logits,), grad_fn)
    return out


def softmax(logits_data):
    """Plain-array softmax used at prediction time (not differentiated)."""
    z = logits_data - logits_data.max(axis=1, keepdims=True)
    ez = np.exp(z)
    return ez / ez.sum(axis=1, keepdims=True)
