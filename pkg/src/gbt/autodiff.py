"""Minimal reverse-mode autodiff on dense numpy arrays.

A Tensor wraps an ndarray value together with an optional gradient and a
record of the operation that produced it. backward() walks the graph in a
fixed topological order, so gradient accumulation is deterministic and
repeated runs are bit-identical.

Only the operator set the view-synthesis model needs is implemented; no
general broadcasting beyond elementwise ops, no dynamic shapes.
"""
from __future__ import annotations

import math

import numpy as np

from .errors import ShapeMismatch

_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


class Tensor:
    """A node in the computation graph: value, lazily allocated grad, and
    the parent records needed for the backward pass."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad=False, parents=(), backward_fn=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in parents)
        self._parents = parents if self.requires_grad else ()
        self._backward_fn = backward_fn if self.requires_grad else None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"

    def accumulate_grad(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self):
        self.grad = None

    def backward(self, seed=None):
        """Accumulates gradients into every requires_grad ancestor.

        `seed` defaults to ones (a scalar output gets d(out)/d(out) = 1).
        Traversal order is a deterministic function of graph structure.
        """
        if seed is None:
            seed = np.ones_like(self.data)
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in visited or not node.requires_grad:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in reversed(node._parents):
                stack.append((p, False))
        self.accumulate_grad(seed)
        for node in reversed(topo):
            if node._backward_fn is not None:
                node._backward_fn(node.grad)

    # Operator sugar; the real work lives in the module-level functions.
    def __add__(self, other):
        return add(self, _wrap(other, self.dtype))

    def __sub__(self, other):
        return sub(self, _wrap(other, self.dtype))

    def __mul__(self, other):
        return mul(self, _wrap(other, self.dtype))

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _wrap(x, dtype):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _unbroadcast(grad, shape):
    """Sums `grad` down to `shape` (reverses numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g, b.shape))

    return Tensor(out_data, parents=(a, b), backward_fn=backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data - b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate_grad(-_unbroadcast(g, b.shape))

    return Tensor(out_data, parents=(a, b), backward_fn=backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g * a.data, b.shape))

    return Tensor(out_data, parents=(a, b), backward_fn=backward)


def neg(a: Tensor) -> Tensor:
    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(-g)

    return Tensor(-a.data, parents=(a,), backward_fn=backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """np.matmul semantics; batch dims must match exactly or be absent."""
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeMismatch(f"matmul {a.shape} @ {b.shape}")
    out_data = np.matmul(a.data, b.data)

    def backward(g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            a.accumulate_grad(_unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            b.accumulate_grad(_unbroadcast(gb, b.shape))

    return Tensor(out_data, parents=(a, b), backward_fn=backward)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x @ w + b with b broadcast over leading axes."""
    out = matmul(x, w)
    if b is not None:
        out = add(out, b)
    return out


def reshape(a: Tensor, shape) -> Tensor:
    old_shape = a.data.shape

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g.reshape(old_shape))

    return Tensor(a.data.reshape(shape), parents=(a,), backward_fn=backward)


def transpose(a: Tensor, axes) -> Tensor:
    inv = np.argsort(axes)

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g.transpose(inv))

    return Tensor(a.data.transpose(axes), parents=(a,), backward_fn=backward)


def concat(xs, axis=-1) -> Tensor:
    xs = list(xs)
    out_data = np.concatenate([x.data for x in xs], axis=axis)
    sizes = [x.data.shape[axis] for x in xs]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for x, lo, hi in zip(xs, offsets[:-1], offsets[1:]):
            if x.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                x.accumulate_grad(g[tuple(idx)])

    return Tensor(out_data, parents=tuple(xs), backward_fn=backward)


def sum_(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if not a.requires_grad:
            return
        if axis is None:
            a.accumulate_grad(np.broadcast_to(g, a.data.shape).copy())
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        a.accumulate_grad(np.broadcast_to(g, a.data.shape).copy())

    return Tensor(out_data, parents=(a,), backward_fn=backward)


def mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    count = a.data.size if axis is None else a.data.shape[axis]
    return mul(sum_(a, axis=axis, keepdims=keepdims),
               Tensor(np.asarray(1.0 / count, dtype=a.dtype)))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g * mask)

    return Tensor(np.where(mask, a.data, 0.0).astype(a.dtype, copy=False),
                  parents=(a,), backward_fn=backward)


def sigmoid(a: Tensor) -> Tensor:
    y = 1.0 / (1.0 + np.exp(-a.data))

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g * y * (1.0 - y))

    return Tensor(y.astype(a.dtype, copy=False), parents=(a,), backward_fn=backward)


def gelu(a: Tensor) -> Tensor:
    """tanh-approximate gelu."""
    x = a.data
    u = _GELU_C * (x + _GELU_A * x ** 3)
    t = np.tanh(u)

    def backward(g):
        if a.requires_grad:
            du = _GELU_C * (1.0 + 3.0 * _GELU_A * x ** 2)
            local = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t ** 2) * du
            a.accumulate_grad(g * local)

    return Tensor((0.5 * x * (1.0 + t)).astype(a.dtype, copy=False),
                  parents=(a,), backward_fn=backward)


def softmax(a: Tensor, axis=-1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        if a.requires_grad:
            dot = (g * y).sum(axis=axis, keepdims=True)
            a.accumulate_grad(y * (g - dot))

    return Tensor(y.astype(a.dtype, copy=False), parents=(a,), backward_fn=backward)


def softmax_with_bias(logits: Tensor, bias: Tensor, axis=-1) -> Tensor:
    """Numerically stable softmax of (logits + bias) along `axis`.

    Callers pass the additive attention bias (e.g. a nonpositive
    distance penalty); shapes must broadcast.
    """
    try:
        np.broadcast_shapes(logits.shape, bias.shape)
    except ValueError as exc:
        raise ShapeMismatch(str(exc)) from None
    return softmax(add(logits, bias), axis=axis)


def layernorm(x: Tensor, gain: Tensor, shift: Tensor, eps=1e-5) -> Tensor:
    """Standardizes the last axis, then applies the elementwise affine."""
    d = x.data.shape[-1]
    if gain.data.shape != (d,) or shift.data.shape != (d,):
        raise ShapeMismatch(f"layernorm affine shapes {gain.shape}/{shift.shape} vs d={d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = ((x.data - mu) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out_data = (xhat * gain.data + shift.data).astype(x.dtype, copy=False)

    def backward(g):
        if gain.requires_grad:
            gain.accumulate_grad((g * xhat).reshape(-1, d).sum(axis=0))
        if shift.requires_grad:
            shift.accumulate_grad(g.reshape(-1, d).sum(axis=0))
        if x.requires_grad:
            dxhat = g * gain.data
            m1 = dxhat.mean(axis=-1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
            x.accumulate_grad((dxhat - m1 - xhat * m2) * inv)

    return Tensor(out_data, parents=(x, gain, shift), backward_fn=backward)


def _im2col(x, kh, kw, stride, pad):
    """[N,C,H,W] -> windows [N, C, kh, kw, OH, OW]."""
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    # win: [N, C, H', W', kh, kw]
    win = win[:, :, ::stride, ::stride, :, :]
    return win.transpose(0, 1, 4, 5, 2, 3)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride=1, pad=0) -> Tensor:
    """2D convolution, NCHW input, [F, C, kh, kw] kernel."""
    n, c, h, wd = x.data.shape
    f, c2, kh, kw = w.data.shape
    if c != c2:
        raise ShapeMismatch(f"conv2d channels {c} vs kernel {c2}")
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wd + 2 * pad - kw) // stride + 1
    cols = _im2col(x.data, kh, kw, stride, pad)  # [N,C,kh,kw,OH,OW]
    cols_mat = np.ascontiguousarray(cols.transpose(0, 4, 5, 1, 2, 3)).reshape(
        n * oh * ow, c * kh * kw)
    w_mat = w.data.reshape(f, c * kh * kw)
    out = cols_mat @ w_mat.T  # [N*OH*OW, F]
    if b is not None:
        out = out + b.data
    out_data = out.reshape(n, oh, ow, f).transpose(0, 3, 1, 2)
    out_data = np.ascontiguousarray(out_data, dtype=x.dtype)

    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        g_mat = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n * oh * ow, f)
        if b is not None and b.requires_grad:
            b.accumulate_grad(g_mat.sum(axis=0))
        if w.requires_grad:
            w.accumulate_grad((g_mat.T @ cols_mat).reshape(w.data.shape))
        if x.requires_grad:
            dcols = (g_mat @ w_mat).reshape(n, oh, ow, c, kh, kw)
            dx = np.zeros((n, c, h + 2 * pad, wd + 2 * pad), dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    dx[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += (
                        dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2))
            if pad:
                dx = dx[:, :, pad:-pad, pad:-pad]
            x.accumulate_grad(dx)

    return Tensor(out_data, parents=parents, backward_fn=backward)


class Adam:
    """Bias-corrected Adam over a named, ordered parameter mapping."""

    def __init__(self, params: dict[str, Tensor], lr=1e-3, beta1=0.9,
                 beta2=0.999, eps=1e-8):
        self.params = {k: p for k, p in params.items() if p.requires_grad}
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def step(self):
        self.step_count += 1
        c1 = 1.0 - self.beta1 ** self.step_count
        c2 = 1.0 - self.beta2 ** self.step_count
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m = self.m[k]
            v = self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(
                p.data.dtype, copy=False)

    def state_arrays(self):
        """Flat view of optimizer state for checkpointing."""
        out = {}
        for k in self.params:
            out[f"adam.m.{k}"] = self.m[k]
            out[f"adam.v.{k}"] = self.v[k]
        return out

    def load_state_arrays(self, arrays, step_count):
        for k in self.params:
            self.m[k] = arrays[f"adam.m.{k}"].astype(self.m[k].dtype).reshape(self.m[k].shape)
            self.v[k] = arrays[f"adam.v.{k}"].astype(self.v[k].dtype).reshape(self.v[k].shape)
        self.step_count = step_count


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: Adam):
    """Functional single Adam update: assigns grads, steps, clears grads."""
    for k, g in grads.items():
        if g.shape != params[k].data.shape:
            raise ShapeMismatch(f"grad shape {g.shape} vs param {params[k].data.shape}")
        params[k].grad = g
    state.step()
    state.zero_grad()


def grad_check(f, inputs, h=1e-5):
    """Worst relative error between analytic and central-difference
    gradients of the scalar-valued `f` over every input coordinate.

    Inputs should be float64 Tensors with requires_grad=True. The error
    denominator is floored at 1e-6 so coordinates whose true gradient is
    negligible are not dominated by finite-difference roundoff.
    """
    for x in inputs:
        x.zero_grad()
    out = f()
    out.backward()
    worst = 0.0
    for x in inputs:
        analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()
        flat = x.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(f().data)
            flat[i] = orig - h
            fm = float(f().data)
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * h)
            a = float(analytic.reshape(-1)[i])
            err = abs(a - numeric) / max(1e-6, abs(a) + abs(numeric))
            worst = max(worst, err)
    return worst
