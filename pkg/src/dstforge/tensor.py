"""Reverse-mode autograd on numpy arrays.

Everything trains in float32. Passing float64 arrays in keeps the whole graph
in float64, which is what the finite-difference tests rely on; no op silently
changes dtype. Layout for images is NCHW throughout.
"""

from __future__ import annotations

import numpy as np

DEFAULT_DTYPE = np.float32

_FLOAT_DTYPES = (np.float32, np.float64)


class GraphError(RuntimeError):
    """Raised when backward is asked to walk a graph that was already consumed."""


def _as_array(data, dtype=None) -> np.ndarray:
    a = np.asarray(data)
    if a.dtype not in _FLOAT_DTYPES:
        a = a.astype(dtype or DEFAULT_DTYPE)
    elif dtype is not None and a.dtype != dtype:
        a = a.astype(dtype)
    return a


class Tensor:
    """An ndarray plus the bookkeeping needed to run backward through it.

    Interior nodes hold a closure (`_grad_fn`) that routes the incoming
    gradient to `_parents`. Leaves have neither. `grad` is filled in by
    :func:`backward` and accumulates across multiple uses of the same node.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_grad_fn", "_consumed")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _grad_fn=None):
        self.data = _as_array(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = tuple(_parents)
        self._grad_fn = _grad_fn
        self._consumed = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = "Parameter" if isinstance(self, Parameter) else "Tensor"
        return f"{tag}(shape={self.data.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"


class Parameter(Tensor):
    """Trainable leaf: a tensor with a momentum buffer and a name."""

    __slots__ = ("momentum", "name")

    def __init__(self, data, name: str = ""):
        super().__init__(data, requires_grad=True)
        self.momentum = np.zeros_like(self.data)
        self.name = name


def _make(data, parents, grad_fn) -> Tensor:
    req = any(p.requires_grad for p in parents)
    if not req:
        return Tensor(data)
    return Tensor(data, requires_grad=True, _parents=parents, _grad_fn=grad_fn)


def _accum(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g.copy()
    else:
        t.grad += g


# ---------------------------------------------------------------------------
# ops


def linear_forward(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """y = x @ w.T + b for x (n, f_in), w (f_out, f_in), b (f_out,)."""
    if x.data.ndim != 2 or w.data.ndim != 2:
        raise ValueError(f"linear_forward expects 2-d x and w, got {x.data.shape} and {w.data.shape}")
    if x.data.shape[1] != w.data.shape[1]:
        raise ValueError(f"linear_forward: x has {x.data.shape[1]} features, w expects {w.data.shape[1]}")
    y = x.data @ w.data.T + b.data

    def grad_fn(dy):
        _accum(x, dy @ w.data)
        _accum(w, dy.T @ x.data)
        _accum(b, dy.sum(axis=0))

    return _make(y, (x, w, b), grad_fn)


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, oh: int, ow: int) -> np.ndarray:
    n, c = xp.shape[:2]
    cols = np.empty((n, c, kh, kw, oh, ow), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride]
    return cols.reshape(n, c * kh * kw, oh * ow)


def conv2d_forward(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-d cross-correlation, NCHW.

    Args:
        x: input (n, c_in, h, w).
        w: kernels (c_out, c_in, kh, kw).
        b: bias (c_out,).
        stride: spatial step, same in both directions.
        padding: zero padding applied symmetrically before the sweep.

    Returns:
        Tensor of shape (n, c_out, oh, ow) with oh = (h + 2p - kh)//stride + 1.
    """
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ValueError(f"conv2d_forward expects 4-d x and w, got {x.data.shape} and {w.data.shape}")
    n, c_in, h, wid = x.data.shape
    c_out, c_in_w, kh, kw = w.data.shape
    if c_in != c_in_w:
        raise ValueError(f"conv2d_forward: x has {c_in} channels, kernels expect {c_in_w}")
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (wid + 2 * padding - kw) // stride + 1
    if oh <= 0 or ow <= 0:
        raise ValueError(f"conv2d_forward: kernel {kh}x{kw} does not fit input {h}x{wid} with padding {padding}")

    if padding:
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        xp = x.data
    cols = _im2col(xp, kh, kw, stride, oh, ow)  # (n, c_in*kh*kw, oh*ow)
    wmat = w.data.reshape(c_out, -1)
    y = np.matmul(wmat, cols)  # (n, c_out, oh*ow)
    y = y.reshape(n, c_out, oh, ow) + b.data.reshape(1, c_out, 1, 1)

    def grad_fn(dy):
        dymat = dy.reshape(n, c_out, oh * ow)
        _accum(w, np.einsum("nco,nio->ci", dymat, cols, optimize=True).reshape(w.data.shape))
        _accum(b, dy.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            dcols = np.matmul(wmat.T, dymat)  # (n, c_in*kh*kw, oh*ow)
            dcols = dcols.reshape(n, c_in, kh, kw, oh, ow)
            dxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += dcols[:, :, i, j]
            if padding:
                dxp = dxp[:, :, padding : padding + h, padding : padding + wid]
            _accum(x, dxp)

    return _make(y, (x, w, b), grad_fn)


def relu(x: Tensor) -> Tensor:
    y = np.maximum(x.data, 0)

    def grad_fn(dy):
        _accum(x, dy * (x.data > 0))

    return _make(y, (x,), grad_fn)


def maxpool2x2(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2. Both spatial dims must be even."""
    if x.data.ndim != 4:
        raise ValueError(f"maxpool2x2 expects 4-d input, got {x.data.shape}")
    n, c, h, w = x.data.shape
    if h % 2 or w % 2:
        raise ValueError(f"maxpool2x2 needs even spatial dims, got {h}x{w}")
    oh, ow = h // 2, w // 2
    windows = x.data.reshape(n, c, oh, 2, ow, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, oh, ow, 4)
    idx = windows.argmax(axis=-1)  # first max wins on ties
    y = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]

    def grad_fn(dy):
        dwin = np.zeros_like(windows)
        np.put_along_axis(dwin, idx[..., None], dy[..., None], axis=-1)
        dx = dwin.reshape(n, c, oh, ow, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        _accum(x, dx)

    return _make(y, (x,), grad_fn)


def flatten(x: Tensor) -> Tensor:
    """Collapse everything past the batch axis; element count is preserved."""
    n = x.data.shape[0]
    y = x.data.reshape(n, -1)

    def grad_fn(dy):
        _accum(x, dy.reshape(x.data.shape))

    return _make(y, (x,), grad_fn)


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy between softmax(logits) and integer labels.

    Stable log-sum-exp form; returns a scalar tensor. Labels must lie in
    [0, classes).
    """
    labels = np.asarray(labels)
    if logits.data.ndim != 2:
        raise ValueError(f"softmax_cross_entropy expects 2-d logits, got {logits.data.shape}")
    n, classes = logits.data.shape
    if labels.shape != (n,):
        raise ValueError(f"softmax_cross_entropy: {n} rows of logits but labels shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise ValueError(f"softmax_cross_entropy: label outside [0, {classes})")

    z = logits.data - logits.data.max(axis=1, keepdims=True)
    ez = np.exp(z)
    sez = ez.sum(axis=1, keepdims=True)
    log_probs = z - np.log(sez)
    loss = -log_probs[np.arange(n), labels].mean(dtype=logits.data.dtype)

    def grad_fn(dy):
        softmax = ez / sez
        softmax[np.arange(n), labels] -= 1
        _accum(logits, dy * softmax / logits.data.dtype.type(n))

    return _make(np.asarray(loss, dtype=logits.data.dtype), (logits,), grad_fn)


# ---------------------------------------------------------------------------
# backward


def backward(loss: Tensor):
    """Run reverse-mode accumulation from a scalar loss.

    Nodes are visited in a fixed reverse-topological order, so gradient
    accumulation happens in a deterministic sequence. Each graph can be walked
    once; a second backward through any already-consumed node raises
    :class:`GraphError`.
    """
    if loss.data.ndim != 0 and loss.data.size != 1:
        raise ValueError(f"backward expects a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad:
        raise ValueError("backward: loss does not require grad (no trainable inputs)")

    topo: list[Tensor] = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        if node._consumed:
            raise GraphError("backward through a stale graph: this graph was already consumed")
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._grad_fn is not None:
            node._grad_fn(node.grad)
            node._consumed = True
