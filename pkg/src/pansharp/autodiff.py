"""Dense 4-D tensors with reverse-mode automatic differentiation.

A Tensor wraps a float32/float64 numpy array laid out as
(batch, channels, height, width); scalars produced by reductions have
shape (). Operations build a computation graph; `backward` on a scalar
loss fills the `grad` buffer of every reachable tensor that has
`requires_grad` set. Grad buffers accumulate across backward calls
until cleared.

Tensors are immutable after construction except for the grad buffer
(and parameter data, which the optimizer rebinds between iterations).
"""

from __future__ import annotations

import contextlib

import numpy as np

from . import _kernels

_FLOAT_DTYPES = (np.float32, np.float64)
_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (inference paths)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple = ()
        self._backward = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=False)

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    # arithmetic sugar; scalars become constant tensors
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __repr__(self):
        return (
            f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, "
            f"requires_grad={self.requires_grad})"
        )


class Parameter(Tensor):
    """A named trainable tensor."""

    __slots__ = ("name",)

    def __init__(self, name: str, data, dtype=np.float32):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.data.shape})"


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def _as_tensor(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _result(data, parents, backward_fn) -> Tensor:
    """Wrap an op result, attaching the graph edge if grads are live."""
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def backward(loss: Tensor):
    """Populate grads of every reachable requires_grad tensor with d(loss)/d(t).

    Contributions accumulate into existing grad buffers; call zero_grad
    (or clear grads) between optimization steps.
    """
    if loss.data.size != 1:
        raise ValueError(
            f"backward requires a scalar loss, got shape {loss.data.shape}"
        )
    if not loss.requires_grad:
        return

    # iterative post-order topological sort over the requires_grad subgraph
    order = []
    visited = {id(loss)}
    stack = [(loss, iter(loss._parents))]
    while stack:
        node, parents = stack[-1]
        advanced = False
        for p in parents:
            if p.requires_grad and id(p) not in visited:
                visited.add(id(p))
                stack.append((p, iter(p._parents)))
                advanced = True
                break
        if not advanced:
            order.append(node)
            stack.pop()

    flowing = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = flowing.pop(id(node), None)
        if g is None:
            continue
        if node.grad is None:
            node.grad = g.copy()
        else:
            node.grad = node.grad + g
        if node._backward is None:
            continue
        for parent, contrib in node._backward(g):
            if not parent.requires_grad:
                continue
            key = id(parent)
            if key in flowing:
                flowing[key] = flowing[key] + contrib
            else:
                flowing[key] = contrib


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum-reduce g back to `shape` (adjoint of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a: Tensor, b) -> Tensor:
    a = _as_tensor(a, None)
    b = _as_tensor(b, a.dtype)
    data = a.data + b.data

    def back(g):
        return [(a, _unbroadcast(g, a.data.shape)), (b, _unbroadcast(g, b.data.shape))]

    return _result(data, (a, b), back)


def sub(a: Tensor, b) -> Tensor:
    a = _as_tensor(a, None)
    b = _as_tensor(b, a.dtype)
    data = a.data - b.data

    def back(g):
        return [(a, _unbroadcast(g, a.data.shape)), (b, _unbroadcast(-g, b.data.shape))]

    return _result(data, (a, b), back)


def mul(a: Tensor, b) -> Tensor:
    a = _as_tensor(a, None)
    b = _as_tensor(b, a.dtype)
    data = a.data * b.data

    def back(g):
        return [
            (a, _unbroadcast(g * b.data, a.data.shape)),
            (b, _unbroadcast(g * a.data, b.data.shape)),
        ]

    return _result(data, (a, b), back)


def div(a: Tensor, b) -> Tensor:
    a = _as_tensor(a, None)
    b = _as_tensor(b, a.dtype)
    data = a.data / b.data

    def back(g):
        return [
            (a, _unbroadcast(g / b.data, a.data.shape)),
            (b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)),
        ]

    return _result(data, (a, b), back)


def absolute(a: Tensor) -> Tensor:
    data = np.abs(a.data)

    def back(g):
        return [(a, g * np.sign(a.data))]

    return _result(data, (a,), back)


# ---------------------------------------------------------------------------
# activations


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    data = np.where(mask, a.data, 0)

    def back(g):
        return [(a, g * mask)]

    return _result(data, (a,), back)


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    mask = a.data > 0
    s = a.dtype.type(slope)
    data = np.where(mask, a.data, s * a.data)

    def back(g):
        return [(a, np.where(mask, g, s * g))]

    return _result(data, (a,), back)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    data = np.empty_like(x)
    pos = x >= 0
    data[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    data[~pos] = ex / (1.0 + ex)

    def back(g):
        return [(a, g * data * (1.0 - data))]

    return _result(data, (a,), back)


# ---------------------------------------------------------------------------
# convolution and normalization


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2-D convolution (cross-correlation) with zero padding."""
    if x.data.ndim != 4:
        raise ValueError(f"conv2d input must be 4-D (N,C,H,W), got {x.data.ndim}-D")
    if weight.data.ndim != 4:
        raise ValueError(f"conv2d weight must be 4-D (O,C,k,k), got {weight.data.ndim}-D")
    n, c_in, h, w = x.data.shape
    c_out, c_w, kh, kw = weight.data.shape
    if kh != kw:
        raise ValueError(f"conv2d expects square kernels, got {kh}x{kw}")
    if c_in != c_w:
        raise ValueError(
            f"channel axis mismatch: input has {c_in} channels (axis 1), "
            f"weight expects {c_w}"
        )
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if padding < 0:
        raise ValueError(f"padding must be >= 0, got {padding}")
    h_out = (h + 2 * padding - kh) // stride + 1
    w_out = (w + 2 * padding - kw) // stride + 1
    if h_out < 1 or w_out < 1:
        raise ValueError(
            f"kernel {kh}x{kw} does not fit input {h}x{w} with padding {padding}"
        )

    dtype = np.result_type(x.data, weight.data)
    parents = [x, weight]
    if bias is not None:
        if bias.data.shape != (c_out,):
            raise ValueError(
                f"bias must have shape ({c_out},), got {bias.data.shape}"
            )
        dtype = np.result_type(dtype, bias.data)
        b_arr = bias.data.astype(dtype, copy=False)
        parents.append(bias)
    else:
        b_arr = np.zeros(c_out, dtype=dtype)

    xd = x.data.astype(dtype, copy=False)
    wd = weight.data.astype(dtype, copy=False)
    if padding > 0:
        xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        xp = np.ascontiguousarray(xd)
    out = np.empty((n, c_out, h_out, w_out), dtype=dtype)
    _kernels.conv2d_forward(xp, np.ascontiguousarray(wd), b_arr, out, stride)

    def back(g):
        g = np.ascontiguousarray(g)
        grads = []
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            _kernels.conv2d_grad_x(g, np.ascontiguousarray(wd), gxp, stride)
            if padding > 0:
                gx = gxp[:, :, padding:padding + h, padding:padding + w]
            else:
                gx = gxp
            grads.append((x, gx.astype(x.dtype, copy=False)))
        if weight.requires_grad:
            gw = np.empty_like(wd)
            _kernels.conv2d_grad_w(xp, g, gw, stride)
            grads.append((weight, gw.astype(weight.dtype, copy=False)))
        if bias is not None and bias.requires_grad:
            grads.append((bias, g.sum(axis=(0, 2, 3)).astype(bias.dtype, copy=False)))
        return grads

    return _result(out, parents, back)


def instance_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-(sample, channel) normalization to zero mean/unit variance."""
    if x.data.ndim != 4:
        raise ValueError(f"instance_norm input must be 4-D, got {x.data.ndim}-D")
    n, c, h, w = x.data.shape
    if h * w < 2:
        raise ValueError(f"instance_norm needs H*W >= 2 per channel, got {h}x{w}")
    xd = np.ascontiguousarray(x.data)
    out = np.empty_like(xd)
    mean = np.empty((n, c), dtype=xd.dtype)
    inv_std = np.empty((n, c), dtype=xd.dtype)
    _kernels.instance_norm_forward(xd, out, mean, inv_std, xd.dtype.type(eps))

    def back(g):
        gx = np.empty_like(out)
        _kernels.instance_norm_backward(np.ascontiguousarray(g), out, inv_std, gx)
        return [(x, gx)]

    return _result(out, (x,), back)


def filter2d_replicate(x: Tensor, kernel: np.ndarray) -> Tensor:
    """Depthwise correlation with a fixed 2-D kernel; replicate-edge padding.

    The kernel is a constant (no gradient); spatial size is preserved,
    so the kernel side must be odd.
    """
    if x.data.ndim != 4:
        raise ValueError(f"filter2d input must be 4-D, got {x.data.ndim}-D")
    k = kernel.shape[0]
    if kernel.shape != (k, k) or k % 2 == 0:
        raise ValueError(f"kernel must be square with odd size, got {kernel.shape}")
    q = k // 2
    n, c, h, w = x.data.shape
    kern = np.ascontiguousarray(kernel.astype(x.dtype, copy=False))
    xp = np.pad(x.data, ((0, 0), (0, 0), (q, q), (q, q)), mode="edge")
    out = np.empty_like(x.data)
    _kernels.filter2d_forward(np.ascontiguousarray(xp), kern, out, )

    def back(g):
        # full correlation with the flipped kernel gives the padded-input grad
        gp = np.pad(g, ((0, 0), (0, 0), (k - 1, k - 1), (k - 1, k - 1)))
        gxp = np.empty((n, c, h + 2 * q, w + 2 * q), dtype=g.dtype)
        _kernels.filter2d_forward(
            np.ascontiguousarray(gp), kern[::-1, ::-1].copy(), gxp
        )
        # adjoint of replicate padding: clamp is separable, reduce rows then cols
        gr = gxp[:, :, q:q + h, :].copy()
        if q:
            gr[:, :, 0, :] += gxp[:, :, :q, :].sum(axis=2)
            gr[:, :, -1, :] += gxp[:, :, q + h:, :].sum(axis=2)
        gx = gr[:, :, :, q:q + w].copy()
        if q:
            gx[:, :, :, 0] += gr[:, :, :, :q].sum(axis=3)
            gx[:, :, :, -1] += gr[:, :, :, q + w:].sum(axis=3)
        return [(x, gx)]

    return _result(out, (x,), back)


def separable_map(x: Tensor, row_mat: np.ndarray, col_mat: np.ndarray) -> Tensor:
    """Fixed separable linear map: out = row_mat @ x @ col_mat.T per channel."""
    if x.data.ndim != 4:
        raise ValueError(f"separable_map input must be 4-D, got {x.data.ndim}-D")
    rm = row_mat.astype(x.dtype, copy=False)
    cm = col_mat.astype(x.dtype, copy=False)
    data = np.einsum("oh,nchw,pw->ncop", rm, x.data, cm, optimize=True)

    def back(g):
        gx = np.einsum("oh,ncop,pw->nchw", rm, g, cm, optimize=True)
        return [(x, gx)]

    return _result(data, (x,), back)


# ---------------------------------------------------------------------------
# channel / spatial rearrangement


def global_avg_pool(x: Tensor) -> Tensor:
    """Squeeze each channel to its mean: (N,C,H,W) -> (N,C,1,1)."""
    if x.data.ndim != 4:
        raise ValueError(f"global_avg_pool input must be 4-D, got {x.data.ndim}-D")
    n, c, h, w = x.data.shape
    data = x.data.mean(axis=(2, 3), keepdims=True)

    def back(g):
        return [(x, np.broadcast_to(g / (h * w), x.data.shape).astype(g.dtype))]

    return _result(data, (x,), back)


def channel_max(x: Tensor) -> Tensor:
    """Per-pixel maximum over channels; gradient routes to the first argmax."""
    if x.data.ndim != 4:
        raise ValueError(f"channel_max input must be 4-D, got {x.data.ndim}-D")
    if x.data.shape[1] < 1:
        raise ValueError("channel_max requires at least one channel")
    idx = np.argmax(x.data, axis=1)[:, None, :, :]
    data = np.take_along_axis(x.data, idx, axis=1)

    def back(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, idx, g, axis=1)
        return [(x, gx)]

    return _result(data, (x,), back)


def channel_mean(x: Tensor) -> Tensor:
    """Per-pixel mean over channels: (N,C,H,W) -> (N,1,H,W)."""
    if x.data.ndim != 4:
        raise ValueError(f"channel_mean input must be 4-D, got {x.data.ndim}-D")
    c = x.data.shape[1]
    data = x.data.mean(axis=1, keepdims=True)

    def back(g):
        return [(x, np.broadcast_to(g / c, x.data.shape).astype(g.dtype))]

    return _result(data, (x,), back)


def concat_channels(*tensors: Tensor) -> Tensor:
    """Join along the channel axis; all other axes must match."""
    if len(tensors) < 2:
        raise ValueError("concat_channels needs at least two tensors")
    shapes = [t.data.shape for t in tensors]
    base = shapes[0]
    for s in shapes[1:]:
        if len(s) != 4 or (s[0], s[2], s[3]) != (base[0], base[2], base[3]):
            raise ValueError(
                f"concat_channels: non-channel axes differ, {base} vs {s}"
            )
    data = np.concatenate([t.data for t in tensors], axis=1)
    splits = np.cumsum([s[1] for s in shapes])[:-1]

    def back(g):
        parts = np.split(g, splits, axis=1)
        return list(zip(tensors, parts))

    return _result(data, tensors, back)


def repeat_channels(x: Tensor, n: int) -> Tensor:
    """Replicate along the channel axis n times; gradient sums the copies."""
    if x.data.ndim != 4:
        raise ValueError(f"repeat_channels input must be 4-D, got {x.data.ndim}-D")
    c = x.data.shape[1]
    data = np.repeat(x.data, n, axis=1) if c > 1 else np.broadcast_to(
        x.data, (x.data.shape[0], n, x.data.shape[2], x.data.shape[3])
    ).copy()
    if c > 1:
        def back(g):
            gs = g.reshape(g.shape[0], c, n, g.shape[2], g.shape[3]).sum(axis=2)
            return [(x, gs)]
    else:
        def back(g):
            return [(x, g.sum(axis=1, keepdims=True))]

    return _result(data, (x,), back)


def channel_slice(x: Tensor, start: int, stop: int) -> Tensor:
    """View channels [start, stop); gradient scatters back into the slice."""
    if x.data.ndim != 4:
        raise ValueError(f"channel_slice input must be 4-D, got {x.data.ndim}-D")
    if not (0 <= start < stop <= x.data.shape[1]):
        raise ValueError(
            f"channel slice [{start}:{stop}) out of range for {x.data.shape[1]} channels"
        )
    data = x.data[:, start:stop].copy()

    def back(g):
        gx = np.zeros_like(x.data)
        gx[:, start:stop] = g
        return [(x, gx)]

    return _result(data, (x,), back)


def batch_slice(x: Tensor, index: int) -> Tensor:
    """Select one batch item, keeping a leading axis of 1."""
    if x.data.ndim != 4:
        raise ValueError(f"batch_slice input must be 4-D, got {x.data.ndim}-D")
    if not (0 <= index < x.data.shape[0]):
        raise ValueError(f"batch index {index} out of range for {x.data.shape[0]}")
    data = x.data[index:index + 1].copy()

    def back(g):
        gx = np.zeros_like(x.data)
        gx[index:index + 1] = g
        return [(x, gx)]

    return _result(data, (x,), back)


def spatial_crop(x: Tensor, height: int, width: int) -> Tensor:
    """Keep the top-left height x width region; gradient zero-pads back."""
    if x.data.ndim != 4:
        raise ValueError(f"spatial_crop input must be 4-D, got {x.data.ndim}-D")
    if height > x.data.shape[2] or width > x.data.shape[3]:
        raise ValueError(
            f"crop {height}x{width} exceeds input {x.data.shape[2]}x{x.data.shape[3]}"
        )
    data = x.data[:, :, :height, :width].copy()

    def back(g):
        gx = np.zeros_like(x.data)
        gx[:, :, :height, :width] = g
        return [(x, gx)]

    return _result(data, (x,), back)


def block_mean(x: Tensor, block_h: int, block_w: int) -> Tensor:
    """Mean over non-overlapping blocks; remainder margins are dropped."""
    if x.data.ndim != 4:
        raise ValueError(f"block_mean input must be 4-D, got {x.data.ndim}-D")
    n, c, h, w = x.data.shape
    nh, nw = h // block_h, w // block_w
    if nh < 1 or nw < 1:
        raise ValueError(
            f"block {block_h}x{block_w} does not fit input {h}x{w}"
        )
    hc, wc = nh * block_h, nw * block_w
    v = x.data[:, :, :hc, :wc].reshape(n, c, nh, block_h, nw, block_w)
    data = v.mean(axis=(3, 5))

    def back(g):
        gx = np.zeros_like(x.data)
        scaled = g / (block_h * block_w)
        gx[:, :, :hc, :wc] = np.broadcast_to(
            scaled[:, :, :, None, :, None],
            (n, c, nh, block_h, nw, block_w),
        ).reshape(n, c, hc, wc)
        return [(x, gx)]

    return _result(data, (x,), back)


# ---------------------------------------------------------------------------
# reductions


def sum_all(x: Tensor) -> Tensor:
    data = x.data.sum()

    def back(g):
        return [(x, np.full_like(x.data, g))]

    return _result(np.asarray(data), (x,), back)


def mean_all(x: Tensor) -> Tensor:
    size = x.data.size
    data = x.data.mean()

    def back(g):
        return [(x, np.full_like(x.data, g / size))]

    return _result(np.asarray(data), (x,), back)


def l1_mean(a: Tensor, b: Tensor) -> Tensor:
    """Mean of |a - b| over all elements."""
    if a.data.shape != b.data.shape:
        raise ValueError(
            f"l1_mean shape mismatch: {a.data.shape} vs {b.data.shape}"
        )
    diff = a.data - b.data
    size = diff.size
    data = np.abs(diff).mean()

    def back(g):
        s = np.sign(diff) * (g / size)
        return [(a, s), (b, -s)]

    return _result(np.asarray(data), (a, b), back)


def sq_mean(a: Tensor, target: float) -> Tensor:
    """Mean of (a - target)^2 over all elements, target a plain scalar."""
    t = a.dtype.type(target)
    diff = a.data - t
    size = diff.size
    data = (diff * diff).mean()

    def back(g):
        return [(a, diff * (2.0 * g / size))]

    return _result(np.asarray(data), (a,), back)
