"""float64 reverse-mode autodiff on numpy arrays.

Small by design: dense tensors, a fixed op set, and an explicit backward
pass.  Every op validates operand shapes up front (raising ShapeError with
the op name and the offending shapes) and verifies its output is finite;
NaN or Inf anywhere is an error state, never silently carried forward.

All arithmetic is float64 and purely numpy, so repeated runs on the same
machine produce bit-identical results.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor", "ShapeError", "NonFiniteError", "no_grad", "is_grad_enabled",
    "add", "sub", "mul", "div", "neg", "pow_", "matmul", "conv2d",
    "relu", "sigmoid", "tanh", "exp", "log", "abs_", "sqrt",
    "softmax", "log_softmax", "layer_norm",
    "sum_", "mean", "reshape", "transpose", "concat", "stack",
    "broadcast_to", "take_along_last", "dropout",
    "backward", "gradients", "zero_grad",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested op."""

    def __init__(self, op, detail):
        super().__init__(f"{op}: {detail}")
        self.op = op


class NonFiniteError(FloatingPointError):
    """A forward op produced NaN or Inf (divergence or a bug)."""

    def __init__(self, op):
        super().__init__(f"{op}: non-finite values in output")
        self.op = op


# Gradient recording is a process-wide switch; no_grad() flips it off for a
# block (extraction, evaluation) so no graph is retained.
_GRAD_ENABLED = [True]


def is_grad_enabled():
    return _GRAD_ENABLED[0]


class no_grad:
    """Context manager: ops inside build no graph and keep no parents."""

    def __enter__(self):
        self._prev = _GRAD_ENABLED[0]
        _GRAD_ENABLED[0] = False
        return self

    def __exit__(self, *exc):
        _GRAD_ENABLED[0] = self._prev
        return False


def _assert_finite(op, arr):
    # One-pass cheap screen: any NaN/Inf contaminates the sum.  The exact
    # elementwise check only runs when the screen trips, so the common case
    # costs a single reduction.
    if not np.isfinite(arr.sum()):
        if not np.isfinite(arr).all():
            raise NonFiniteError(op)


class Tensor:
    """A dense float64 array plus an optional autodiff node.

    Leaves are built directly (requires_grad=True marks a trainable
    parameter); interior nodes come out of the ops below.  .grad is filled
    by backward() and holds a float64 array of the same shape.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self._op = "leaf"

    # --- introspection ---------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(()))

    def numpy(self):
        """The underlying array (not a copy; treat as read-only)."""
        return self.data

    def detach(self):
        """A new leaf sharing this tensor's data, cut from the graph."""
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.grad = None
        out.requires_grad = False
        out._parents = ()
        out._backward = None
        out._op = "detach"
        return out

    def __repr__(self):
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag}, op={self._op})"

    # --- operator sugar ---------------------------------------------------

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

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return pow_(self, p)

    def __getitem__(self, key):
        return _getitem(self, key)


def _lift(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _node(data, op, parents, backward_fn):
    _assert_finite(op, data)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._op = op
    if _GRAD_ENABLED[0] and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _accum(t, g):
    if t.requires_grad:
        t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g, shape):
    """Sum gradient g down to `shape` (reverses numpy broadcasting)."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(op, a, b):
    try:
        np.broadcast_shapes(a.data.shape, b.data.shape)
    except ValueError:
        raise ShapeError(op, f"cannot broadcast {a.data.shape} with {b.data.shape}") from None


# --- arithmetic ------------------------------------------------------------


def add(a, b):
    a, b = _lift(a), _lift(b)
    _check_broadcast("add", a, b)
    data = a.data + b.data

    def bwd(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _node(data, "add", (a, b), bwd)


def sub(a, b):
    a, b = _lift(a), _lift(b)
    _check_broadcast("sub", a, b)
    data = a.data - b.data

    def bwd(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(-g, b.data.shape))

    return _node(data, "sub", (a, b), bwd)


def mul(a, b):
    a, b = _lift(a), _lift(b)
    _check_broadcast("mul", a, b)
    data = a.data * b.data

    def bwd(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _node(data, "mul", (a, b), bwd)


def div(a, b):
    a, b = _lift(a), _lift(b)
    _check_broadcast("div", a, b)
    with np.errstate(all="ignore"):        # NonFiniteError is the error path
        data = a.data / b.data

    def bwd(g):
        _accum(a, _unbroadcast(g / b.data, a.data.shape))
        _accum(b, _unbroadcast(-g * data / b.data, b.data.shape))

    return _node(data, "div", (a, b), bwd)


def neg(a):
    a = _lift(a)

    def bwd(g):
        _accum(a, -g)

    return _node(-a.data, "neg", (a,), bwd)


def pow_(a, p):
    """Elementwise a**p for a constant (non-tensor) exponent."""
    a = _lift(a)
    p = float(p)
    with np.errstate(all="ignore"):
        data = a.data ** p

    def bwd(g):
        _accum(a, g * p * a.data ** (p - 1.0))

    return _node(data, "pow", (a,), bwd)


def sqrt(a):
    return pow_(a, 0.5)


# --- linear algebra ---------------------------------------------------------


def matmul(a, b):
    a, b = _lift(a), _lift(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul", f"operands must be at least 2-d, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError("matmul", f"inner dims differ: {a.data.shape} @ {b.data.shape}")
    data = a.data @ b.data

    def bwd(g):
        _accum(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.data.shape))
        _accum(b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape))

    return _node(data, "matmul", (a, b), bwd)


def conv2d(x, w, stride=1, padding=0):
    """2-d cross-correlation: x (B,Cin,H,W) with kernels w (Cout,Cin,kh,kw).

    Exact direct computation: windows are unrolled once into a column
    matrix and every pass (forward, both gradients) is a single GEMM; the
    column matrix is cached on the graph node so backward never re-copies.
    1x1 kernels skip the unroll entirely.
    """
    x, w = _lift(x), _lift(w)
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError("conv2d", f"need x (B,C,H,W) and w (O,C,kh,kw), got {x.data.shape} and {w.data.shape}")
    B, Cin, H, W = x.data.shape
    Cout, Cw, kh, kw = w.data.shape
    if Cin != Cw:
        raise ShapeError("conv2d", f"channel mismatch: x has {Cin}, w expects {Cw}")
    s, p = int(stride), int(padding)
    if H + 2 * p < kh or W + 2 * p < kw:
        raise ShapeError("conv2d", f"kernel ({kh},{kw}) larger than padded input ({H + 2 * p},{W + 2 * p})")

    if kh == 1 and kw == 1 and s == 1 and p == 0:
        return _conv1x1(x, w, B, Cin, H, W, Cout)

    Ho = (H + 2 * p - kh) // s + 1
    Wo = (W + 2 * p - kw) // s + 1
    # channels-last padded buffer; one fused transpose-copy fills the interior
    xp = np.zeros((B, H + 2 * p, W + 2 * p, Cin))
    xp[:, p:p + H, p:p + W, :] = x.data.transpose(0, 2, 3, 1)
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    cols = win[:, ::s, ::s].reshape(B * Ho * Wo, Cin * kh * kw)   # the one big copy
    wmat = w.data.reshape(Cout, Cin * kh * kw)
    out = cols @ wmat.T
    data = np.ascontiguousarray(out.reshape(B, Ho, Wo, Cout).transpose(0, 3, 1, 2))

    def bwd(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(B * Ho * Wo, Cout)
        if w.requires_grad:
            _accum(w, (g2.T @ cols).reshape(Cout, Cin, kh, kw))
        if x.requires_grad:
            if s == 1:
                # input grad is a full correlation of g with the flipped,
                # channel-transposed kernel: one GEMM, no scatter
                q = kh - 1
                gl = np.zeros((B, Ho + 2 * q, Wo + 2 * (kw - 1), Cout))
                gl[:, q:q + Ho, kw - 1:kw - 1 + Wo, :] = g.transpose(0, 2, 3, 1)
                wing = np.lib.stride_tricks.sliding_window_view(gl, (kh, kw), axis=(1, 2))
                Hp, Wp = H + 2 * p, W + 2 * p
                colsg = wing.reshape(B * Hp * Wp, Cout * kh * kw)
                wflip = np.ascontiguousarray(
                    w.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)).reshape(Cin, -1)
                gxp = (colsg @ wflip.T).reshape(B, Hp, Wp, Cin)
            else:
                gcols = (g2 @ wmat).reshape(B, Ho, Wo, Cin, kh, kw)
                gxp = np.zeros_like(xp)
                for u in range(kh):
                    for v in range(kw):
                        gxp[:, u:u + s * Ho:s, v:v + s * Wo:s, :] += gcols[:, :, :, :, u, v]
            gx = gxp[:, p:p + H, p:p + W, :] if p else gxp
            _accum(x, np.ascontiguousarray(gx.transpose(0, 3, 1, 2)))

    return _node(data, "conv2d", (x, w), bwd)


def _conv1x1(x, w, B, Cin, H, W, Cout):
    x2 = np.ascontiguousarray(x.data.transpose(0, 2, 3, 1)).reshape(B * H * W, Cin)
    wmat = w.data.reshape(Cout, Cin)
    out = x2 @ wmat.T
    data = np.ascontiguousarray(out.reshape(B, H, W, Cout).transpose(0, 3, 1, 2))

    def bwd(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(B * H * W, Cout)
        if w.requires_grad:
            _accum(w, (g2.T @ x2).reshape(Cout, Cin, 1, 1))
        if x.requires_grad:
            gx = (g2 @ wmat).reshape(B, H, W, Cin)
            _accum(x, np.ascontiguousarray(gx.transpose(0, 3, 1, 2)))

    return _node(data, "conv2d", (x, w), bwd)


# --- elementwise nonlinearities ---------------------------------------------


def relu(a):
    a = _lift(a)
    data = np.maximum(a.data, 0.0)

    def bwd(g):
        _accum(a, g * (a.data > 0.0))

    return _node(data, "relu", (a,), bwd)


def sigmoid(a):
    a = _lift(a)
    x = a.data
    # stable in both tails
    data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                    np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def bwd(g):
        _accum(a, g * data * (1.0 - data))

    return _node(data, "sigmoid", (a,), bwd)


def tanh(a):
    a = _lift(a)
    data = np.tanh(a.data)

    def bwd(g):
        _accum(a, g * (1.0 - data * data))

    return _node(data, "tanh", (a,), bwd)


def exp(a):
    a = _lift(a)
    with np.errstate(all="ignore"):
        data = np.exp(a.data)

    def bwd(g):
        _accum(a, g * data)

    return _node(data, "exp", (a,), bwd)


def log(a):
    a = _lift(a)
    with np.errstate(all="ignore"):
        data = np.log(a.data)

    def bwd(g):
        _accum(a, g / a.data)

    return _node(data, "log", (a,), bwd)


def abs_(a):
    a = _lift(a)

    def bwd(g):
        _accum(a, g * np.sign(a.data))

    return _node(np.abs(a.data), "abs", (a,), bwd)


# --- normalizations ----------------------------------------------------------


def softmax(a, axis=-1):
    a = _lift(a)
    m = a.data.max(axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    data = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * data).sum(axis=axis, keepdims=True)
        _accum(a, data * (g - dot))

    return _node(data, "softmax", (a,), bwd)


def log_softmax(a, axis=-1):
    a = _lift(a)
    m = a.data.max(axis=axis, keepdims=True)
    z = a.data - m
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    data = z - lse
    soft = np.exp(data)

    def bwd(g):
        _accum(a, g - soft * g.sum(axis=axis, keepdims=True))

    return _node(data, "log_softmax", (a,), bwd)


def layer_norm(a, eps=1e-5):
    """Normalize over the last axis to zero mean, unit variance."""
    a = _lift(a)
    mu = a.data.mean(axis=-1, keepdims=True)
    var = ((a.data - mu) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    data = (a.data - mu) * inv

    def bwd(g):
        gm = g.mean(axis=-1, keepdims=True)
        gy = (g * data).mean(axis=-1, keepdims=True)
        _accum(a, inv * (g - gm - data * gy))

    return _node(data, "layer_norm", (a,), bwd)


# --- reductions ---------------------------------------------------------------


def _expand_reduced(g, axis, keepdims, shape):
    if axis is None:
        return np.broadcast_to(np.asarray(g), shape)
    if not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def sum_(a, axis=None, keepdims=False):
    a = _lift(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        _accum(a, _expand_reduced(g, axis, keepdims, a.data.shape))

    return _node(np.asarray(data), "sum", (a,), bwd)


def mean(a, axis=None, keepdims=False):
    a = _lift(a)
    data = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size / max(data.size, 1)

    def bwd(g):
        _accum(a, _expand_reduced(g, axis, keepdims, a.data.shape) / count)

    return _node(np.asarray(data), "mean", (a,), bwd)


# --- shape ops -----------------------------------------------------------------


def reshape(a, shape):
    a = _lift(a)
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", f"cannot view {a.data.shape} as {shape}") from None
    orig = a.data.shape

    def bwd(g):
        _accum(a, g.reshape(orig))

    return _node(data, "reshape", (a,), bwd)


def transpose(a, axes):
    a = _lift(a)
    data = np.transpose(a.data, axes)
    inverse = tuple(np.argsort(axes))

    def bwd(g):
        _accum(a, np.transpose(g, inverse))

    return _node(data, "transpose", (a,), bwd)


def concat(tensors, axis=0):
    ts = [_lift(t) for t in tensors]
    if not ts:
        raise ShapeError("concat", "empty input list")
    try:
        data = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError("concat", f"shapes {[t.data.shape for t in ts]} on axis {axis}") from None
    sizes = np.cumsum([t.data.shape[axis] for t in ts])[:-1]

    def bwd(g):
        for t, piece in zip(ts, np.split(g, sizes, axis=axis)):
            _accum(t, piece)

    return _node(data, "concat", tuple(ts), bwd)


def stack(tensors, axis=0):
    ax = axis if axis >= 0 else axis + tensors[0].ndim + 1
    expanded = []
    for t in tensors:
        t = _lift(t)
        shape = t.data.shape[:ax] + (1,) + t.data.shape[ax:]
        expanded.append(reshape(t, shape))
    return concat(expanded, axis=ax)


def broadcast_to(a, shape):
    a = _lift(a)
    try:
        data = np.broadcast_to(a.data, shape)
    except ValueError:
        raise ShapeError("broadcast_to", f"cannot broadcast {a.data.shape} to {shape}") from None

    def bwd(g):
        _accum(a, _unbroadcast(g, a.data.shape))

    return _node(data, "broadcast_to", (a,), bwd)


def _getitem(a, key):
    a = _lift(a)
    data = a.data[key]

    def bwd(g):
        buf = np.zeros_like(a.data)
        np.add.at(buf, key, g)
        _accum(a, buf)

    return _node(np.asarray(data), "getitem", (a,), bwd)


def take_along_last(a, idx):
    """Pick one entry per row along the last axis: a (..., C), idx (...)."""
    a = _lift(a)
    idx = np.asarray(idx)
    if idx.shape != a.data.shape[:-1]:
        raise ShapeError("take_along_last", f"index shape {idx.shape} vs data {a.data.shape}")
    data = np.take_along_axis(a.data, idx[..., None], axis=-1)[..., 0]

    def bwd(g):
        buf = np.zeros_like(a.data)
        np.put_along_axis(buf, idx[..., None], g[..., None], axis=-1)
        _accum(a, buf)

    return _node(data, "take_along_last", (a,), bwd)


def dropout(a, p, rng, training=True):
    """Inverted dropout; identity when not training or p == 0."""
    if not training or p <= 0.0:
        return _lift(a)
    mask = (rng.random(a.shape) >= p) / (1.0 - p)
    return mul(a, Tensor(mask))


# --- backward pass ---------------------------------------------------------------


def backward(loss):
    """Populate .grad on every requires_grad node reachable from `loss`.

    loss must be scalar.  Iterative topological order, so graph depth is
    not limited by Python recursion.
    """
    if loss.data.size != 1:
        raise ShapeError("backward", f"loss must be scalar, got shape {loss.data.shape}")
    topo = []
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
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def gradients(loss, params):
    """backward() plus collection into a name -> array dict.

    Parameters not reached by the graph get an explicit zero gradient of
    the right shape.
    """
    backward(loss)
    return {name: (p.grad if p.grad is not None else np.zeros_like(p.data))
            for name, p in params.items()}


def zero_grad(params):
    for p in params.values():
        p.grad = None
