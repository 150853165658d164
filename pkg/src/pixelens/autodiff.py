"""Reverse-mode automatic differentiation for small convolutional image nets.

A deliberately small tape: each op returns a Tensor holding the forward
value and, when any input requires gradients, a closure that maps the
output cotangent to input cotangents. backward() walks the tape in reverse
topological order from a scalar loss.

Arrays are channels-last. Elementwise ops take any shape; the spatial ops
(conv2d, apply_kernels) take (H, W, C) or (N, H, W, C). Training runs in
float32; gradient checking casts to float64.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
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

    @property
    def dtype(self):
        return self.data.dtype

    def detach(self):
        return stop_gradient(self)

    def backward(self):
        """Accumulate gradients of this scalar into every reachable tensor."""
        if self.size != 1:
            raise ValueError(f"backward() needs a scalar, got shape {self.shape}")
        topo = _toposort(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)


class Parameter(Tensor):
    """A trainable tensor carrying first/second-moment slots and a step count."""

    __slots__ = ("name", "m", "v", "step")

    def __init__(self, values, name=""):
        super().__init__(np.array(values), requires_grad=True)
        self.name = name
        self.m = np.zeros_like(self.data)
        self.v = np.zeros_like(self.data)
        self.step = 0


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _toposort(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def _accumulate(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, copy=True)  # own the buffer, g may alias a view
    else:
        t.grad += g


def _make(data, parents, backward):
    out = Tensor(data, any(p.requires_grad for p in parents))
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g, shape):
    """Sum g down to `shape` (reverse of numpy broadcasting)."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- elementwise ------------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))
    return _make(out_data, (a, b), backward)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data - b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))
    return _make(out_data, (a, b), backward)


def neg(a):
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: _accumulate(a, -g))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data * b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))
    return _make(out_data, (a, b), backward)


def absolute(a):
    """|x|; subgradient sign(x) with sign(0) = 0."""
    a = as_tensor(a)
    return _make(np.abs(a.data), (a,), lambda g: _accumulate(a, g * np.sign(a.data)))


def exp(a):
    a = as_tensor(a)
    out_data = np.exp(a.data)
    return _make(out_data, (a,), lambda g: _accumulate(a, g * out_data))


def expm1(a):
    a = as_tensor(a)
    out_data = np.expm1(a.data)
    return _make(out_data, (a,), lambda g: _accumulate(a, g * np.exp(a.data)))


def sqrt(a):
    a = as_tensor(a)
    out_data = np.sqrt(a.data)
    return _make(out_data, (a,), lambda g: _accumulate(a, g * (0.5 / out_data)))


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0), (a,), lambda g: _accumulate(a, g * mask))


def leaky_relu(a, slope=0.01):
    a = as_tensor(a)
    mask = a.data > 0
    scale = np.where(mask, np.asarray(1, a.dtype), np.asarray(slope, a.dtype))
    return _make(a.data * scale, (a,), lambda g: _accumulate(a, g * scale))


def stop_gradient(a):
    """Identity forward, exactly zero gradient backward (no tape edge at all)."""
    a = as_tensor(a)
    return Tensor(a.data, requires_grad=False)


# -- reductions / shaping ---------------------------------------------------

def sum_(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.shape))
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            _accumulate(a, np.broadcast_to(gg, a.shape))
    return _make(out_data, (a,), backward)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out_data = a.data.mean(axis=axis, keepdims=keepdims)
    if axis is None:
        count = a.size
    elif isinstance(axis, tuple):
        count = int(np.prod([a.shape[ax] for ax in axis]))
    else:
        count = a.shape[axis]

    def backward(g):
        scale = np.asarray(1.0 / count, a.dtype)
        if axis is None:
            _accumulate(a, np.broadcast_to(g * scale, a.shape))
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            _accumulate(a, np.broadcast_to(gg * scale, a.shape))
    return _make(out_data, (a,), backward)


def reshape(a, shape):
    a = as_tensor(a)
    return _make(a.data.reshape(shape), (a,),
                 lambda g: _accumulate(a, g.reshape(a.shape)))


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            _accumulate(t, piece)
    return _make(out_data, tensors, backward)


def narrow(a, axis, start, length):
    """Slice `length` entries from `start` along `axis`."""
    a = as_tensor(a)
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)

    def backward(g):
        full = np.zeros(a.shape, dtype=g.dtype)
        full[index] = g
        _accumulate(a, full)
    return _make(a.data[index], (a,), backward)


def take_rows(a, indices):
    """Gather rows of a 2-D tensor; backward scatter-adds."""
    a = as_tensor(a)
    if a.ndim != 2:
        raise ValueError(f"take_rows needs a 2-D tensor, got shape {a.shape}")
    indices = np.asarray(indices, dtype=np.int64)

    def backward(g):
        full = np.zeros(a.shape, dtype=g.dtype)
        np.add.at(full, indices, g)
        _accumulate(a, full)
    return _make(a.data[indices], (a,), backward)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul needs 2-D operands, got {a.shape} @ {b.shape}")
    out_data = a.data @ b.data

    def backward(g):
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)
    return _make(out_data, (a, b), backward)


# -- softmax ----------------------------------------------------------------

def softmax_channels(a):
    """Softmax over the last axis, max-subtracted for stability."""
    a = as_tensor(a)
    if a.shape[-1] < 2:
        raise ValueError("softmax_channels needs at least 2 channels")
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        dot = (g * out_data).sum(axis=-1, keepdims=True)
        _accumulate(a, out_data * (g - dot))
    return _make(out_data, (a,), backward)


# -- spatial ops ------------------------------------------------------------

def _spatial_4d(x):
    """View (H,W,C) as (1,H,W,C); returns (array, had_batch_dim)."""
    if x.ndim == 3:
        return x[None], False
    if x.ndim == 4:
        return x, True
    raise ValueError(f"expected (H,W,C) or (N,H,W,C), got shape {x.shape}")


def conv2d(x, w, b=None, stride=1, padding="same"):
    """2-D convolution, zero 'same' padding, stride 1, odd square kernels.

    x: (H,W,Cin) or (N,H,W,Cin); w: (k,k,Cin,Cout); b: (Cout,) or None.
    """
    x, w = as_tensor(x), as_tensor(w)
    if stride != 1:
        raise ValueError(f"only stride 1 is supported, got {stride}")
    if padding != "same":
        raise ValueError(f"only 'same' padding is supported, got {padding!r}")
    if w.ndim != 4 or w.shape[0] != w.shape[1] or w.shape[0] % 2 == 0:
        raise ValueError(f"kernel must be (k,k,Cin,Cout) with odd k, got {w.shape}")
    xd, batched = _spatial_4d(x.data)
    k = w.shape[0]
    cin, cout = w.shape[2], w.shape[3]
    if xd.shape[-1] != cin:
        raise ValueError(f"input has {xd.shape[-1]} channels, kernel expects {cin}")
    n, h, wd = xd.shape[0], xd.shape[1], xd.shape[2]
    p = k // 2

    padded = np.pad(xd, ((0, 0), (p, p), (p, p), (0, 0)))
    # windows: (N, H, W, Cin, k, k) -> cols (N*H*W, k*k*Cin) matching
    # w reshaped (k*k*Cin, Cout) in (dy, dx, c) order
    windows = sliding_window_view(padded, (k, k), axis=(1, 2))
    cols = np.ascontiguousarray(windows.transpose(0, 1, 2, 4, 5, 3)).reshape(
        n * h * wd, k * k * cin)
    wmat = w.data.reshape(k * k * cin, cout)
    out_data = cols @ wmat
    out_data = out_data.reshape(n, h, wd, cout)
    if not batched:
        out_data = out_data[0]

    if b is not None:
        b = as_tensor(b)
        if b.shape != (cout,):
            raise ValueError(f"bias must be ({cout},), got {b.shape}")

    def backward(g):
        gf = g if batched else g[None]
        g2 = gf.reshape(n * h * wd, cout)
        if w.requires_grad:
            _accumulate(w, (cols.T @ g2).reshape(w.shape))
        if x.requires_grad:
            dcols = (g2 @ wmat.T).reshape(n, h, wd, k, k, cin)
            dpad = np.zeros_like(padded)
            for dy in range(k):
                for dx in range(k):
                    dpad[:, dy:dy + h, dx:dx + wd, :] += dcols[:, :, :, dy, dx, :]
            dx_full = dpad[:, p:p + h, p:p + wd, :]
            _accumulate(x, dx_full if batched else dx_full[0])

    out = _make(out_data, (x, w), backward)
    if b is not None:
        out = add(out, b)
    return out


def apply_kernels(image, kernels, ksize):
    """Filter each pixel with its own k*k kernel; replicate-padded borders.

    image: (H,W,C) or (N,H,W,C); kernels: (H,W,k*k) or (N,H,W,k*k), one
    flattened kernel per pixel, row-major (dy, dx). Kernel weights are used
    as given (normalize upstream, e.g. with softmax_channels).
    """
    image, kernels = as_tensor(image), as_tensor(kernels)
    if ksize % 2 == 0 or ksize < 1:
        raise ValueError(f"kernel size must be odd and positive, got {ksize}")
    xd, batched = _spatial_4d(image.data)
    kd, kbatched = _spatial_4d(kernels.data)
    if batched != kbatched or xd.shape[:3] != kd.shape[:3]:
        raise ValueError(
            f"image {image.shape} and kernels {kernels.shape} disagree")
    if kd.shape[-1] != ksize * ksize:
        raise ValueError(
            f"kernels last dim {kd.shape[-1]} != ksize^2 = {ksize * ksize}")
    n, h, w, c = xd.shape
    r = ksize // 2

    padded = np.pad(xd, ((0, 0), (r, r), (r, r), (0, 0)), mode="edge")
    windows = sliding_window_view(padded, (ksize, ksize), axis=(1, 2))
    # windows: (N,H,W,C,k,k); kernels reshaped (N,H,W,k,k)
    kw = kd.reshape(n, h, w, ksize, ksize)
    out_data = np.einsum("nhwcij,nhwij->nhwc", windows, kw, optimize=True)
    if not batched:
        out_data = out_data[0]

    def backward(g):
        gf = g if batched else g[None]
        if kernels.requires_grad:
            dk = np.einsum("nhwc,nhwcij->nhwij", gf, windows, optimize=True)
            dk = dk.reshape(kd.shape)
            _accumulate(kernels, dk if kbatched else dk[0])
        if image.requires_grad:
            dpad = np.zeros_like(padded)
            for dy in range(ksize):
                for dx in range(ksize):
                    dpad[:, dy:dy + h, dx:dx + w, :] += kw[:, :, :, dy, dx, None] * gf
            # fold replicate padding back: edge rows/cols absorb their copies
            dpad[:, r, :, :] += dpad[:, :r, :, :].sum(axis=1)
            dpad[:, r + h - 1, :, :] += dpad[:, r + h:, :, :].sum(axis=1)
            core = dpad[:, r:r + h, :, :]
            core[:, :, r, :] += core[:, :, :r, :].sum(axis=2)
            core[:, :, r + w - 1, :] += core[:, :, r + w:, :].sum(axis=2)
            dx_full = core[:, :, r:r + w, :]
            _accumulate(image, dx_full if batched else dx_full[0])

    return _make(out_data, (image, kernels), backward)
