"""Minimal reverse-mode autodiff on numpy arrays.

A Tensor wraps a float32 (training) or float64 (verification) ndarray and
records the ops applied to it on a tape. Calling ``backward()`` on a scalar
result walks the tape in reverse topological order. Every op output is
checked for NaN/Inf; non-finite values raise immediately instead of
propagating.
"""

from __future__ import annotations

import contextlib
import numpy as np


class NonFiniteError(FloatingPointError):
    """An op produced NaN or Inf."""


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (key-encoder forward, eval)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _check_finite(arr, what="op result"):
    # cheap first pass: NaN/Inf propagate through the sum; a finite sum of
    # finite values can only look non-finite via overflow, so confirm hits
    # with a full scan before raising
    if not np.isfinite(arr.sum()) and not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values in {what}")
    return arr


def _unbroadcast(grad, shape):
    """Reduce a broadcasted gradient back to the original operand shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        _check_finite(arr, "tensor init")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    # ---- construction helpers -------------------------------------------

    @staticmethod
    def _from_op(data, parents, backward, what="op result"):
        _check_finite(data, what)
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out._parents = ()
        out._backward = None
        out.requires_grad = False
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    def detach(self):
        t = Tensor.__new__(Tensor)
        t.data = self.data
        t.grad = None
        t.requires_grad = False
        t._parents = ()
        t._backward = None
        return t

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # ---- autodiff --------------------------------------------------------

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output")
        topo, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def _accum(self, g):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = g.astype(self.data.dtype, copy=True)
        else:
            self.grad += g

    def zero_grad(self):
        self.grad = None

    # ---- elementwise arithmetic ------------------------------------------

    @staticmethod
    def _coerce(x, like):
        if isinstance(x, Tensor):
            return x
        return Tensor(np.asarray(x, dtype=like.data.dtype))

    def __add__(self, other):
        other = Tensor._coerce(other, self)
        a, b = self, other

        def bwd(g):
            a._accum(_unbroadcast(g, a.shape))
            b._accum(_unbroadcast(g, b.shape))

        return Tensor._from_op(a.data + b.data, (a, b), bwd)

    __radd__ = __add__

    def __sub__(self, other):
        other = Tensor._coerce(other, self)
        a, b = self, other

        def bwd(g):
            a._accum(_unbroadcast(g, a.shape))
            b._accum(_unbroadcast(-g, b.shape))

        return Tensor._from_op(a.data - b.data, (a, b), bwd)

    def __rsub__(self, other):
        return Tensor._coerce(other, self) - self

    def __mul__(self, other):
        other = Tensor._coerce(other, self)
        a, b = self, other

        def bwd(g):
            a._accum(_unbroadcast(g * b.data, a.shape))
            b._accum(_unbroadcast(g * a.data, b.shape))

        return Tensor._from_op(a.data * b.data, (a, b), bwd)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = Tensor._coerce(other, self)
        a, b = self, other

        def bwd(g):
            a._accum(_unbroadcast(g / b.data, a.shape))
            b._accum(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

        return Tensor._from_op(a.data / b.data, (a, b), bwd)

    def __rtruediv__(self, other):
        return Tensor._coerce(other, self) / self

    def __neg__(self):
        a = self

        def bwd(g):
            a._accum(-g)

        return Tensor._from_op(-a.data, (a,), bwd)

    def __pow__(self, p):
        if not isinstance(p, (int, float)):
            raise TypeError("only scalar exponents supported")
        a = self

        def bwd(g):
            a._accum(g * p * a.data ** (p - 1))

        return Tensor._from_op(a.data ** p, (a,), bwd)

    # ---- reductions / reshaping -------------------------------------------

    def sum(self, axis=None, keepdims=False):
        a = self

        def bwd(g):
            if axis is None:
                a._accum(np.broadcast_to(g, a.shape))
            else:
                gg = g if keepdims else np.expand_dims(g, axis)
                a._accum(np.broadcast_to(gg, a.shape))

        return Tensor._from_op(a.data.sum(axis=axis, keepdims=keepdims), (a,), bwd)

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        old = a.shape

        def bwd(g):
            a._accum(g.reshape(old))

        return Tensor._from_op(a.data.reshape(shape), (a,), bwd)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        a = self
        inv = tuple(np.argsort(axes))

        def bwd(g):
            a._accum(g.transpose(inv))

        return Tensor._from_op(a.data.transpose(axes), (a,), bwd)

    def swapaxes(self, i, j):
        axes = list(range(self.ndim))
        axes[i], axes[j] = axes[j], axes[i]
        return self.transpose(tuple(axes))

    # ---- linear algebra ----------------------------------------------------

    def __matmul__(self, other):
        if not isinstance(other, Tensor):
            raise TypeError("matmul requires a Tensor operand")
        a, b = self, other
        if a.ndim < 2 or b.ndim < 2:
            raise DimensionError("matmul operands must have ndim >= 2")
        if a.shape[-1] != b.shape[-2]:
            raise DimensionError(
                f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")

        if a.ndim > 2 and b.ndim == 2:
            # batched input x shared weight: flatten to one GEMM instead of
            # materializing a per-batch weight gradient
            kk, mm = b.shape
            out_shape = a.shape[:-1] + (mm,)

            def bwd(g):
                g2 = g.reshape(-1, mm)
                a._accum((g2 @ b.data.T).reshape(a.shape))
                b._accum(a.data.reshape(-1, kk).T @ g2)

            return Tensor._from_op(
                (a.data.reshape(-1, kk) @ b.data).reshape(out_shape),
                (a, b), bwd)

        def bwd(g):
            ga = g @ np.swapaxes(b.data, -1, -2)
            gb = np.swapaxes(a.data, -1, -2) @ g
            a._accum(_unbroadcast(ga, a.shape))
            b._accum(_unbroadcast(gb, b.shape))

        return Tensor._from_op(a.data @ b.data, (a, b), bwd)

    # ---- nonlinearities ------------------------------------------------------

    def exp(self):
        a = self
        out_data = np.exp(a.data)

        def bwd(g):
            a._accum(g * out_data)

        return Tensor._from_op(out_data, (a,), bwd)

    def log(self):
        a = self

        def bwd(g):
            a._accum(g / a.data)

        return Tensor._from_op(np.log(a.data), (a,), bwd)

    def sqrt(self):
        a = self
        out_data = np.sqrt(a.data)

        def bwd(g):
            a._accum(g * 0.5 / out_data)

        return Tensor._from_op(out_data, (a,), bwd)

    def gelu(self):
        """GELU, tanh form: 0.5*x*(1 + tanh(sqrt(2/pi)*(x + 0.044715*x^3)))."""
        a = self
        x = a.data
        # dtype-matched constants keep float32 inputs from upcasting
        c = x.dtype.type(np.sqrt(2.0 / np.pi))
        k3 = x.dtype.type(0.044715)
        half = x.dtype.type(0.5)
        x2 = x * x
        t = np.tanh(c * (x + k3 * x2 * x))

        def bwd(g):
            du = c * (1.0 + 3.0 * k3 * x2)
            a._accum(g * (half * (1.0 + t) + half * x * (1.0 - t * t) * du))

        return Tensor._from_op(half * x * (1.0 + t), (a,), bwd)

    # ---- indexing -----------------------------------------------------------

    def gather_rows(self, idx):
        """Select rows along axis 0; idx may be any integer array shape."""
        a = self
        idx = np.asarray(idx, dtype=np.intp)

        def bwd(g):
            ga = np.zeros_like(a.data)
            np.add.at(ga, idx.ravel(), g.reshape(-1, *a.shape[1:]))
            a._accum(ga)

        return Tensor._from_op(a.data[idx], (a,), bwd)

    def gather_axis1(self, idx):
        """Batched row gather: x[b, idx[b, n]] for x of shape (B, N, ...)."""
        a = self
        idx = np.asarray(idx, dtype=np.intp)
        if idx.ndim != 2 or idx.shape[0] != a.shape[0]:
            raise DimensionError(f"gather_axis1 idx shape {idx.shape} vs {a.shape}")
        batch = np.arange(a.shape[0])[:, None]

        def bwd(g):
            ga = np.zeros_like(a.data)
            np.add.at(ga, (batch, idx), g)
            a._accum(ga)

        return Tensor._from_op(a.data[batch, idx], (a, ), bwd)


def concat(tensors, axis=0):
    tensors = list(tensors)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            t._accum(g[tuple(sl)])

    return Tensor._from_op(
        np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bwd)


def softmax(x: Tensor, axis=-1) -> Tensor:
    """Numerically stable softmax along ``axis`` (max-subtracted)."""
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        x._accum(out_data * (g - dot))

    return Tensor._from_op(out_data, (x,), bwd)


def log_softmax(x: Tensor, axis=-1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out_data = z - lse

    def bwd(g):
        sm = np.exp(out_data)
        x._accum(g - sm * g.sum(axis=axis, keepdims=True))

    return Tensor._from_op(out_data, (x,), bwd)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps=1e-5) -> Tensor:
    """Normalize over the last axis to zero mean / unit variance, then affine."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    d = x.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out_data = (gamma.data * xhat + beta.data).astype(x.data.dtype)

    def bwd(g):
        dxhat = g * gamma.data
        gx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        x._accum(gx.astype(x.data.dtype))
        red = tuple(range(g.ndim - 1))
        gamma._accum((g * xhat).sum(axis=red))
        beta._accum(g.sum(axis=red))

    return Tensor._from_op(out_data, (x, gamma, beta), bwd)
