"""A small reverse-mode autodiff engine over numpy arrays.

Every op returns a new :class:`Tensor` that remembers its parents and a
closure mapping the output gradient to parent gradients. Graph recording is
decided per op (any parent requiring grad), so there is no global mode flag
and independent graphs can be built from different threads.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, DimensionError, UnsupportedKernelError
from .fft import fft2_channels

_FLOATS = (np.float32, np.float64)


class Tensor:
    """Dense float array plus the bookkeeping of a graph node."""

    __slots__ = ("data", "grad", "requires_grad", "parents", "op", "_backward")
    # make ndarray <op> Tensor dispatch to the reflected Tensor operator
    __array_ufunc__ = None

    def __init__(self, data, requires_grad=False, dtype=None, parents=(), op="leaf", backward=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.type not in _FLOATS:
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.parents = tuple(parents)
        self.op = op
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self):
        return mean(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return reshape(self, shape)

    def backward(self):
        backward(self)


class Parameter(Tensor):
    """A named leaf tensor that always requires grad."""

    __slots__ = ("name",)

    def __init__(self, name, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _make(data, parents, op, backward):
    req = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=req, parents=parents if req else (), op=op,
                  backward=backward if req else None)


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _pair(a, b):
    # constants adopt the dtype of the tensor operand
    if not isinstance(a, Tensor):
        a = Tensor(a, dtype=b.dtype if isinstance(b, Tensor) else None)
    if not isinstance(b, Tensor):
        b = Tensor(b, dtype=a.dtype)
    return a, b


# elementwise ------------------------------------------------------------------

def add(a, b):
    a, b = _pair(a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), "add", bw)


def sub(a, b):
    a, b = _pair(a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), "sub", bw)


def mul(a, b):
    a, b = _pair(a, b)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), "mul", bw)


def div(a, b):
    a, b = _pair(a, b)
    out = a.data / b.data

    def bw(g):
        ga = g / b.data
        return _unbroadcast(ga, a.shape), _unbroadcast(-ga * out, b.shape)

    return _make(out, (a, b), "div", bw)


def neg(a):
    return _make(-a.data, (a,), "neg", lambda g: (-g,))


def relu(a):
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0).astype(a.dtype, copy=False), (a,), "relu",
                 lambda g: (g * mask,))


def softplus(a):
    x = a.data
    out = np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))
    sig = 0.5 * (1 + np.tanh(0.5 * x))
    return _make(out, (a,), "softplus", lambda g: (g * sig,))


def square(a):
    return _make(a.data * a.data, (a,), "square", lambda g: (2 * g * a.data,))


# reductions and shape ---------------------------------------------------------

def tsum(a, axis=None):
    out = a.data.sum(axis=axis)

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return _make(out, (a,), "sum", bw)


def mean(a):
    n = a.size
    return _make(a.data.mean(), (a,), "mean",
                 lambda g: (np.full(a.shape, g / n, dtype=a.dtype),))


def reshape(a, shape):
    return _make(a.data.reshape(shape), (a,), "reshape", lambda g: (g.reshape(a.shape),))


def concat(tensors, axis=1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), "concat", bw)


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]

    def bw(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _make(np.stack([t.data for t in tensors], axis=axis), tuple(tensors), "stack", bw)


def getitem(a, idx):
    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return _make(a.data[idx], (a,), "getitem", bw)


def softmax(v, axis=-1):
    """Softmax with max-subtraction; ``axis`` defaults to the last axis."""
    if v.size == 0 or v.shape[axis] == 0:
        raise ContractError("softmax of an empty vector")
    shifted = v.data - v.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (v,), "softmax", bw)


# convolution ------------------------------------------------------------------

def _pad_nhwc(x, p):
    n, c, h, w = x.shape
    xp = np.zeros((n, h + 2 * p, w + 2 * p, c), dtype=x.dtype)
    xp[:, p:p + h, p:p + w, :] = x.transpose(0, 2, 3, 1)
    return xp


def _im2col(x, k, dilation):
    """Columns ``[N*H*W, k*k*C]`` ordered (ki, kj, c)."""
    n, c, h, w = x.shape
    span = dilation * (k - 1) + 1
    win = sliding_window_view(_pad_nhwc(x, span // 2), (span, span), axis=(1, 2))
    if dilation > 1:
        win = win[..., ::dilation, ::dilation]
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(n * h * w, k * k * c)


def _conv_dense(x, w, dilation):
    n, _, h, wd = x.shape
    cout, cin, k, _ = w.shape
    cols = _im2col(x, k, dilation)
    wm = w.transpose(2, 3, 1, 0).reshape(k * k * cin, cout)
    out = (cols @ wm).reshape(n, h, wd, cout).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(out), cols


def _padded(x, p):
    n, c, h, w = x.shape
    xp = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=x.dtype)
    xp[:, :, p:p + h, p:p + w] = x
    return xp


def _conv_depthwise(x, w, dilation):
    n, c, h, wd = x.shape
    k = w.shape[-1]
    xp = _padded(x, dilation * (k - 1) // 2)
    out = np.zeros_like(x)
    tmp = np.empty_like(x)
    taps = w[:, 0, :, :, None, None]
    for i in range(k):
        for j in range(k):
            sl = xp[:, :, i * dilation:i * dilation + h, j * dilation:j * dilation + wd]
            np.multiply(sl, taps[:, i, j], out=tmp)
            out += tmp
    return out, xp


def _conv_grouped(x, w, dilation, groups):
    n, cin, h, wd = x.shape
    cout, cg, k, _ = w.shape
    xp = _padded(x, dilation * (k - 1) // 2)
    span = dilation * (k - 1) + 1
    win = sliding_window_view(xp, (span, span), axis=(2, 3))[..., ::dilation, ::dilation]
    wing = win.reshape(n, groups, cg, h, wd, k, k)
    wg = w.reshape(groups, cout // groups, cg, k, k)
    out = np.einsum("ngchwij,gocij->ngohw", wing, wg, optimize=True)
    return out.reshape(n, cout, h, wd), wing


def _conv_raw(x, w, dilation, groups):
    cout, cg = w.shape[:2]
    if groups == 1:
        return _conv_dense(x, w, dilation)
    if cg == 1 and cout == groups:
        return _conv_depthwise(x, w, dilation)
    return _conv_grouped(x, w, dilation, groups)


def _transpose_kernel(w, groups):
    cout, cg, k, _ = w.shape
    og = cout // groups
    wt = w.reshape(groups, og, cg, k, k).transpose(0, 2, 1, 3, 4).reshape(groups * cg, og, k, k)
    return np.ascontiguousarray(wt[:, :, ::-1, ::-1])


def _kernel_grad(g, cache, kernel, dilation, groups):
    cout, cg, k, _ = kernel.shape
    n, _, h, wd = g.shape
    if groups == 1:
        gm = g.transpose(0, 2, 3, 1).reshape(-1, cout)
        return (cache.T @ gm).reshape(k, k, cg, cout).transpose(3, 2, 0, 1)
    if cg == 1 and cout == groups:
        gw = np.empty(kernel.shape, dtype=g.dtype)
        for i in range(k):
            for j in range(k):
                sl = cache[:, :, i * dilation:i * dilation + h, j * dilation:j * dilation + wd]
                gw[:, 0, i, j] = np.einsum("nchw,nchw->c", g, sl)
        return gw
    gg = g.reshape(n, groups, cout // groups, h, wd)
    return np.einsum("ngohw,ngchwij->gocij", gg, cache, optimize=True).reshape(kernel.shape)


def conv2d(x, kernel, dilation=1, groups=1):
    """Stride-1 'same' convolution (cross-correlation) with zero padding."""
    if x.ndim != 4 or kernel.ndim != 4:
        raise DimensionError(f"conv2d expects 4-d input and kernel, got {x.shape} and {kernel.shape}")
    n, cin, h, wd = x.shape
    cout, cg, k, k2 = kernel.shape
    if k != k2:
        raise DimensionError(f"kernel must be square, got {kernel.shape}")
    if k % 2 == 0:
        raise UnsupportedKernelError(f"kernel size {k} is even")
    if groups < 1 or cin % groups or cout % groups:
        raise DimensionError(f"groups={groups} must divide Cin={cin} and Cout={cout}")
    if cg != cin // groups:
        raise DimensionError(f"kernel expects {cg * groups} input channels, input has {cin}")
    if dilation < 1:
        raise DimensionError(f"dilation must be >= 1, got {dilation}")

    out, cache = _conv_raw(x.data, kernel.data, dilation, groups)

    def bw(g):
        gx = gw = None
        if x.requires_grad:
            gx, _ = _conv_raw(g, _transpose_kernel(kernel.data, groups), dilation, groups)
        if kernel.requires_grad:
            gw = _kernel_grad(g, cache, kernel.data, dilation, groups)
        return gx, gw

    return _make(out, (x, kernel), f"conv2d[d={dilation},g={groups}]", bw)


# fourier transform ------------------------------------------------------------

def fft2(x, inverse=False):
    """Unitary 2D DFT of a tensor with (real, imag) at axis -3.

    The adjoint of a unitary transform is its inverse, so the backward pass
    is the opposite-direction transform.
    """
    out = fft2_channels(x.data, inverse)
    return _make(out, (x,), "ifft2" if inverse else "fft2",
                 lambda g: (fft2_channels(g, not inverse),))


def ifft2(x):
    return fft2(x, inverse=True)


# backward ---------------------------------------------------------------------

def _topo_order(root):
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
        for p in reversed(node.parents):
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root):
    """Populate ``.grad`` on every node that ``root`` depends on."""
    if root.size != 1:
        raise ContractError(f"backward needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        return
    order = _topo_order(root)
    grads = {id(root): np.ones_like(root.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        node.grad = g if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        for parent, pg in zip(node.parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


def grad(root, params):
    """Gradients of scalar ``root`` for each named parameter.

    ``params`` maps names to leaf tensors. Parameters not reachable from
    ``root`` get zeros.
    """
    for p in params.values():
        p.grad = None
    backward(root)
    return {name: (p.grad if p.grad is not None else np.zeros_like(p.data))
            for name, p in params.items()}
