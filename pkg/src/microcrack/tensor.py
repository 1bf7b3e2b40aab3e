"""Dense float64 tensors with reverse-mode autodiff.

Every differentiable op builds its output through :func:`_make`, which
records the parents and a closure mapping the output gradient to one
gradient per parent. :meth:`Tensor.backward` walks the recorded graph in
reverse topological order, visiting each node once.
"""
from __future__ import annotations

import contextlib
import math

import numpy as np
from scipy import special

from . import kernels

_grad_enabled = True


class ShapeError(ValueError):
    pass


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad=False):
        self.data = np.array(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self.op = "leaf"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    # graph traversal ---------------------------------------------------

    def backward(self):
        if self.data.size != 1:
            raise ShapeError(f"backward needs a scalar root, got shape {self.shape}")
        if not self.requires_grad:
            return
        order = _topo_order(self)
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if not node._parents:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            node.grad = g
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # operator sugar ----------------------------------------------------

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
        return mul(self, -1.0)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)


def _topo_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def graph_nodes(root):
    """Recorded graph reachable from ``root`` as ``(op, parent positions)``, inputs first."""
    order = _topo_order(root)
    pos = {id(n): i for i, n in enumerate(order)}
    return [(n.op, tuple(pos[id(p)] for p in n._parents if id(p) in pos)) for n in order]


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward, op):
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _check_broadcast(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ------------------------------------------------------------ elementwise

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                            _unbroadcast(g * a.data, b.shape) if b.requires_grad else None), "mul")


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("div", a, b)
    out = a.data / b.data
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape) if a.requires_grad else None,
                            _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None), "div")


def power(a, p):
    p = float(p)
    return _make(a.data ** p, (a,), lambda g: (g * p * a.data ** (p - 1.0),), "pow")


def exp(a):
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sigmoid(a):
    out = special.expit(a.data)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


_ERF_SCALE = 2.0 / math.sqrt(math.pi)


def erf(a):
    return _make(special.erf(a.data), (a,), lambda g: (g * _ERF_SCALE * np.exp(-a.data * a.data),), "erf")


def clip(a, lo=None, hi=None):
    out = np.clip(a.data, lo, hi)
    inside = np.ones(a.shape, dtype=bool)
    if lo is not None:
        inside &= a.data >= lo
    if hi is not None:
        inside &= a.data <= hi
    return _make(out, (a,), lambda g: (g * inside,), "clip")


def where(mask, a, b):
    """Select ``a`` where ``mask`` (a plain boolean array) holds, else ``b``."""
    mask = np.asarray(mask, dtype=bool)
    a, b = as_tensor(a), as_tensor(b)
    out = np.where(mask, a.data, b.data)
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(np.where(mask, g, 0.0), a.shape),
                            _unbroadcast(np.where(mask, 0.0, g), b.shape)), "where")


def gt(a, value=0.0):
    """Comparison mask; not differentiable, returns a boolean ndarray."""
    return as_tensor(a).data > value


def softmax(a, axis=-1):
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (a,), back, "softmax")


# --------------------------------------------------------------- reductions

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum_(a, axis=None, keepdims=False):
    axes = _norm_axis(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, (a,), back, "sum")


def mean(a, axis=None, keepdims=False):
    axes = _norm_axis(axis, a.ndim)
    n = 1
    for ax in axes:
        n *= a.shape[ax]
    return sum_(a, axes, keepdims) * (1.0 / n)


# ------------------------------------------------------------------ shape

def reshape(a, shape):
    shape = tuple(shape)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}") from None
    return _make(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def flatten(a, start=1):
    return reshape(a, a.shape[:start] + (-1,))


def transpose(a, axes):
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    if b.ndim == 2 and a.ndim > 2:
        # (..., n) @ (n, m): one flat GEMM instead of a broadcast batch of small ones
        lead = a.shape[:-1]
        a2 = a.data.reshape(-1, a.shape[-1])
        out = (a2 @ b.data).reshape(lead + (b.shape[1],))

        def back_flat(g):
            g2 = g.reshape(-1, b.shape[1])
            ga = (g2 @ b.data.T).reshape(a.shape) if a.requires_grad else None
            gb = a2.T @ g2 if b.requires_grad else None
            return ga, gb

        return _make(out, (a, b), back_flat, "matmul")
    out = a.data @ b.data

    def back(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), back, "matmul")


# --------------------------------------------------------- convolutions

def _pair(v):
    return (v, v) if isinstance(v, int) else tuple(v)


def conv2d(x, w, b=None, stride=1, padding=0):
    """Direct cross-correlation. ``x`` is (B, C, H, W), ``w`` is (O, C, kh, kw)."""
    x, w = as_tensor(x), as_tensor(w)
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d: input {x.shape} incompatible with kernel {w.shape}")
    B, C, H, W = x.shape
    O, _, kh, kw = w.shape
    Ho = (H + 2 * ph - kh) // sh + 1
    Wo = (W + 2 * pw - kw) // sw + 1
    if Ho < 1 or Wo < 1:
        raise ShapeError(f"conv2d: kernel {(kh, kw)} larger than padded input {(H + 2 * ph, W + 2 * pw)}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if ph or pw else x.data
    acc = np.zeros((B, Ho, Wo, O))
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, :, i:i + sh * (Ho - 1) + 1:sh, j:j + sw * (Wo - 1) + 1:sw]
            acc += np.tensordot(patch, w.data[:, :, i, j], axes=([1], [1]))
    out = acc.transpose(0, 3, 1, 2)
    parents = (x, w)
    if b is not None:
        b = as_tensor(b)
        out = out + b.data.reshape(1, O, 1, 1)
        parents = (x, w, b)
    out = np.ascontiguousarray(out)

    def back(g):
        gxp = np.zeros_like(xp) if x.requires_grad else None
        gw = np.zeros_like(w.data) if w.requires_grad else None
        for i in range(kh):
            for j in range(kw):
                sl = (slice(None), slice(None),
                      slice(i, i + sh * (Ho - 1) + 1, sh), slice(j, j + sw * (Wo - 1) + 1, sw))
                if gw is not None:
                    gw[:, :, i, j] = np.tensordot(g, xp[sl], axes=([0, 2, 3], [0, 2, 3]))
                if gxp is not None:
                    gxp[sl] += np.tensordot(g, w.data[:, :, i, j], axes=([1], [0])).transpose(0, 3, 1, 2)
        gx = None
        if gxp is not None:
            gx = gxp[:, :, ph:ph + H, pw:pw + W] if ph or pw else gxp
        grads = (gx, gw)
        if b is not None:
            grads += (g.sum(axis=(0, 2, 3)),)
        return grads

    return _make(out, parents, back, "conv2d")


def conv_transpose2d(x, w, b=None, stride=1, padding=0):
    """Adjoint of :func:`conv2d`. ``w`` is (C_in, C_out, kh, kw)."""
    x, w = as_tensor(x), as_tensor(w)
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"conv_transpose2d: input {x.shape} incompatible with kernel {w.shape}")
    B, C, H, W = x.shape
    _, O, kh, kw = w.shape
    Hf = (H - 1) * sh + kh
    Wf = (W - 1) * sw + kw
    Ho, Wo = Hf - 2 * ph, Wf - 2 * pw
    if Ho < 1 or Wo < 1:
        raise ShapeError(f"conv_transpose2d: padding {(ph, pw)} consumes the whole output {(Hf, Wf)}")
    full = np.zeros((B, O, Hf, Wf))
    for i in range(kh):
        for j in range(kw):
            full[:, :, i:i + sh * (H - 1) + 1:sh, j:j + sw * (W - 1) + 1:sw] += (
                np.tensordot(x.data, w.data[:, :, i, j], axes=([1], [0])).transpose(0, 3, 1, 2))
    out = full[:, :, ph:ph + Ho, pw:pw + Wo]
    parents = (x, w)
    if b is not None:
        b = as_tensor(b)
        out = out + b.data.reshape(1, O, 1, 1)
        parents = (x, w, b)
    out = np.ascontiguousarray(out)

    def back(g):
        gfull = np.zeros((B, O, Hf, Wf))
        gfull[:, :, ph:ph + Ho, pw:pw + Wo] = g
        gx = np.zeros_like(x.data) if x.requires_grad else None
        gw = np.zeros_like(w.data) if w.requires_grad else None
        for i in range(kh):
            for j in range(kw):
                gs = gfull[:, :, i:i + sh * (H - 1) + 1:sh, j:j + sw * (W - 1) + 1:sw]
                if gx is not None:
                    gx += np.tensordot(gs, w.data[:, :, i, j], axes=([1], [1])).transpose(0, 3, 1, 2)
                if gw is not None:
                    gw[:, :, i, j] = np.tensordot(x.data, gs, axes=([0, 2, 3], [0, 2, 3]))
        grads = (gx, gw)
        if b is not None:
            grads += (g.sum(axis=(0, 2, 3)),)
        return grads

    return _make(out, parents, back, "conv_transpose2d")


def max_pool2d(x, kernel):
    """Non-overlapping max pool (stride == kernel, floor). Ties go to the first maximum."""
    x = as_tensor(x)
    kh, kw = _pair(kernel)
    if x.ndim != 4 or x.shape[2] < kh or x.shape[3] < kw:
        raise ShapeError(f"max_pool2d: kernel {(kh, kw)} does not fit input {x.shape}")
    out, idx = kernels.maxpool_forward(np.ascontiguousarray(x.data), kh, kw)
    return _make(out, (x,), lambda g: (kernels.maxpool_backward(g, idx, x.shape, kh, kw),), "max_pool2d")


# -------------------------------------------------------------- checking

class GradCheckError(RuntimeError):
    pass


def grad_check(build_fn, inputs, eps=1e-5, indices=None):
    """Largest relative gap between backward() and central differences.

    ``inputs`` are Tensors; their ``.data`` is perturbed in place and restored.
    ``indices`` optionally restricts the check to ``(input_pos, flat_index)``
    pairs. The relative error of one element is
    ``|a - n| / max(|a|, |n|, 1e-12)``.
    """
    if not 0.0 < eps <= 1e-3:
        raise ValueError(f"eps must lie in (0, 1e-3], got {eps}")
    inputs = [as_tensor(t) for t in inputs]
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    root = build_fn(*inputs)
    root.backward()
    analytic = [np.zeros(t.shape) if t.grad is None else t.grad.copy() for t in inputs]
    if indices is None:
        indices = [(k, i) for k, t in enumerate(inputs) for i in range(t.size)]
    worst = 0.0
    with no_grad():
        for k, i in indices:
            flat = inputs[k].data.reshape(-1)
            orig = flat[i]
            flat[i] = orig + eps
            fp = build_fn(*inputs).item()
            flat[i] = orig - eps
            fm = build_fn(*inputs).item()
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise GradCheckError(f"non-finite loss when perturbing input {k} element {i}")
            num = (fp - fm) / (2.0 * eps)
            a = analytic[k].reshape(-1)[i]
            err = abs(a - num) / max(abs(a), abs(num), 1e-12)
            worst = max(worst, err)
    return worst
