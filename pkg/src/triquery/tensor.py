"""Dense n-d tensors with reverse-mode gradients on numpy storage.

Two float precisions are supported: f32 for training, f64 for gradient
checking. Every operation validates that its result is finite; NaN or Inf
anywhere raises :class:`NumericError` naming the producing op, which is the
diagnostic surface the training loop relies on.
"""

from __future__ import annotations

import numpy as np

FLOAT_DTYPES = (np.float32, np.float64)

# Logit value used to structurally exclude keys from attention. Large enough
# that exp() underflows to exactly 0 after max-shift, small enough to stay
# finite in f32.
BIG_NEG = -1e9


class NumericError(RuntimeError):
    """A computation produced a non-finite value or an invalid numeric state."""


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


_GRAD_ENABLED = [True]


class no_grad:
    """Context manager disabling graph recording (inference / oracles)."""

    def __enter__(self):
        _GRAD_ENABLED.append(False)
        return self

    def __exit__(self, *exc):
        _GRAD_ENABLED.pop()
        return False


def grad_enabled() -> bool:
    return _GRAD_ENABLED[-1]


def _first_nonfinite_index(arr):
    bad = ~np.isfinite(arr)
    idx = np.argwhere(bad)
    return tuple(int(i) for i in idx[0]) if idx.size else None


def _check_finite(arr, op: str):
    if not np.all(np.isfinite(arr)):
        raise NumericError(
            f"non-finite value produced by op '{op}' at index "
            f"{_first_nonfinite_index(arr)}"
        )


def _as_float_array(x, dtype=None):
    arr = np.asarray(x)
    if arr.dtype not in FLOAT_DTYPES:
        arr = arr.astype(np.float64 if dtype is None else dtype)
    elif dtype is not None and arr.dtype != dtype:
        arr = arr.astype(dtype)
    return arr


def _unbroadcast(grad, shape):
    """Reduce ``grad`` back to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    keep = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if keep:
        grad = grad.sum(axis=keep, keepdims=True)
    return grad


class Tensor:
    """A numpy array plus optional gradient tracking.

    Tensors are immutable values once created; only optimizer code mutates
    parameter storage in place, between graph constructions.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_bwd", "_op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = _as_float_array(data, dtype)
        _check_finite(arr, "tensor")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad) and grad_enabled()
        self._parents = ()
        self._bwd = None
        self._op = "leaf"

    # -- construction -----------------------------------------------------

    @staticmethod
    def _from_op(data, parents, bwd, op):
        _check_finite(data, op)
        t = Tensor.__new__(Tensor)
        t.data = data
        t.grad = None
        t._op = op
        if grad_enabled() and any(p.requires_grad for p in parents):
            t.requires_grad = True
            t._parents = tuple(parents)
            t._bwd = bwd
        else:
            t.requires_grad = False
            t._parents = ()
            t._bwd = None
        return t

    # -- basic introspection ----------------------------------------------

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

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, op={self._op})"

    def numpy(self):
        """Raw value array. Treat as read-only."""
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def _accum(self, g):
        # non-finite gradients are trapped at the leaves they accumulate into;
        # intermediate hops skip the check for speed
        if self._bwd is None:
            _check_finite(g, f"grad:{self._op}")
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype)
        else:
            self.grad += g

    # -- autodiff ----------------------------------------------------------

    def backward(self):
        """Reverse-mode sweep from a scalar. Populates .grad on reachable leaves."""
        if self.data.size != 1:
            raise ShapeError("backward() requires a scalar loss")
        if not self.requires_grad:
            raise NumericError("backward() on a tensor with no tracked parents")
        order = []
        seen = set()
        stack = [(self, False)]
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
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._bwd is not None and node.grad is not None:
                node._bwd(node.grad)

    # -- elementwise arithmetic ---------------------------------------------

    def _coerce(self, other):
        if isinstance(other, Tensor):
            return other
        return Tensor(_as_float_array(other, self.data.dtype))

    def __add__(self, other):
        b = self._coerce(other)
        a = self

        def bwd(g):
            if a.requires_grad:
                a._accum(_unbroadcast(g, a.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(g, b.shape))

        return Tensor._from_op(a.data + b.data, (a, b), bwd, "add")

    __radd__ = __add__

    def __sub__(self, other):
        b = self._coerce(other)
        a = self

        def bwd(g):
            if a.requires_grad:
                a._accum(_unbroadcast(g, a.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(-g, b.shape))

        return Tensor._from_op(a.data - b.data, (a, b), bwd, "sub")

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __neg__(self):
        a = self

        def bwd(g):
            if a.requires_grad:
                a._accum(-g)

        return Tensor._from_op(-a.data, (a,), bwd, "neg")

    def __mul__(self, other):
        b = self._coerce(other)
        a = self

        def bwd(g):
            if a.requires_grad:
                a._accum(_unbroadcast(g * b.data, a.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(g * a.data, b.shape))

        return Tensor._from_op(a.data * b.data, (a, b), bwd, "mul")

    __rmul__ = __mul__

    def __truediv__(self, other):
        b = self._coerce(other)
        a = self

        def bwd(g):
            if a.requires_grad:
                a._accum(_unbroadcast(g / b.data, a.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

        return Tensor._from_op(a.data / b.data, (a, b), bwd, "div")

    def __rtruediv__(self, other):
        return self._coerce(other) / self

    def __pow__(self, p):
        if not isinstance(p, (int, float)):
            raise ShapeError("power exponent must be a constant scalar")
        a = self

        def bwd(g):
            if a.requires_grad:
                a._accum(g * p * a.data ** (p - 1))

        return Tensor._from_op(a.data**p, (a,), bwd, "pow")

    # -- matmul and structure ------------------------------------------------

    def __matmul__(self, other):
        b = self._coerce(other)
        a = self
        if a.ndim < 2 or b.ndim < 2:
            raise ShapeError("matmul requires operands with ndim >= 2")
        if a.shape[-1] != b.shape[-2]:
            raise ShapeError(f"matmul inner dims disagree: {a.shape} @ {b.shape}")

        def bwd(g):
            if a.requires_grad:
                a._accum(_unbroadcast(g @ b.data.swapaxes(-1, -2), a.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(a.data.swapaxes(-1, -2) @ g, b.shape))

        return Tensor._from_op(a.data @ b.data, (a, b), bwd, "matmul")

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        old = a.shape

        def bwd(g):
            if a.requires_grad:
                a._accum(g.reshape(old))

        return Tensor._from_op(a.data.reshape(shape), (a,), bwd, "reshape")

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        a = self
        inv = np.argsort(axes)

        def bwd(g):
            if a.requires_grad:
                a._accum(g.transpose(inv))

        return Tensor._from_op(a.data.transpose(axes), (a,), bwd, "transpose")

    def swapaxes(self, i, j):
        a = self

        def bwd(g):
            if a.requires_grad:
                a._accum(g.swapaxes(i, j))

        return Tensor._from_op(a.data.swapaxes(i, j), (a,), bwd, "swapaxes")

    @property
    def T(self):
        if self.ndim != 2:
            raise ShapeError(".T is defined for 2-d tensors only")
        return self.swapaxes(0, 1)

    def __getitem__(self, idx):
        a = self
        out = a.data[idx]
        if np.isscalar(out) or out.ndim == 0:
            out = np.asarray(out)

        def bwd(g):
            if a.requires_grad:
                buf = np.zeros_like(a.data)
                np.add.at(buf, idx, g)
                a._accum(buf)

        return Tensor._from_op(np.ascontiguousarray(out), (a,), bwd, "index")

    # -- reductions ------------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        a = self

        def bwd(g):
            if not a.requires_grad:
                return
            if axis is None:
                a._accum(np.broadcast_to(g, a.shape).copy())
                return
            gg = g
            if not keepdims:
                gg = np.expand_dims(g, axis)
            a._accum(np.broadcast_to(gg, a.shape).copy())

        return Tensor._from_op(
            np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), bwd, "sum"
        )

    def mean(self, axis=None, keepdims=False):
        if axis is None:
            n = self.size
        elif isinstance(axis, tuple):
            n = int(np.prod([self.shape[ax] for ax in axis]))
        else:
            n = self.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # -- pointwise nonlinearities -----------------------------------------------

    def exp(self):
        a = self
        with np.errstate(over="ignore", under="ignore"):
            out = np.exp(a.data)

        def bwd(g):
            if a.requires_grad:
                a._accum(g * out)

        return Tensor._from_op(out, (a,), bwd, "exp")

    def log(self):
        a = self
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.log(a.data)

        def bwd(g):
            if a.requires_grad:
                a._accum(g / a.data)

        return Tensor._from_op(out, (a,), bwd, "log")

    def sqrt(self):
        a = self
        with np.errstate(invalid="ignore"):
            out = np.sqrt(a.data)

        def bwd(g):
            if a.requires_grad:
                a._accum(g * 0.5 / out)

        return Tensor._from_op(out, (a,), bwd, "sqrt")

    def tanh(self):
        a = self
        out = np.tanh(a.data)

        def bwd(g):
            if a.requires_grad:
                a._accum(g * (1.0 - out * out))

        return Tensor._from_op(out, (a,), bwd, "tanh")

    def sigmoid(self):
        a = self
        # stable two-branch logistic
        out = np.where(
            a.data >= 0,
            1.0 / (1.0 + np.exp(-np.abs(a.data))),
            np.exp(-np.abs(a.data)) / (1.0 + np.exp(-np.abs(a.data))),
        ).astype(a.data.dtype)

        def bwd(g):
            if a.requires_grad:
                a._accum(g * out * (1.0 - out))

        return Tensor._from_op(out, (a,), bwd, "sigmoid")

    def relu(self):
        a = self
        mask = a.data > 0

        def bwd(g):
            if a.requires_grad:
                a._accum(g * mask)

        return Tensor._from_op(a.data * mask, (a,), bwd, "relu")

    def clip(self, lo, hi):
        """Clamp values; gradient passes only where the input was in range."""
        a = self
        mask = (a.data >= lo) & (a.data <= hi)

        def bwd(g):
            if a.requires_grad:
                a._accum(g * mask)

        return Tensor._from_op(np.clip(a.data, lo, hi), (a,), bwd, "clip")


# -- free functions ---------------------------------------------------------


def concat(tensors, axis=0):
    tensors = [t if isinstance(t, Tensor) else Tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        parts = np.split(g, splits, axis=axis)
        for t, p in zip(tensors, parts):
            if t.requires_grad:
                t._accum(p)

    out = np.concatenate([t.data for t in tensors], axis=axis)
    return Tensor._from_op(out, tuple(tensors), bwd, "concat")


def stack(tensors, axis=0):
    tensors = [t if isinstance(t, Tensor) else Tensor(t) for t in tensors]

    def bwd(g):
        parts = np.split(g, len(tensors), axis=axis)
        for t, p in zip(tensors, parts):
            if t.requires_grad:
                t._accum(p.reshape(t.shape))

    out = np.stack([t.data for t in tensors], axis=axis)
    return Tensor._from_op(out, tuple(tensors), bwd, "stack")


def where(cond, a, b):
    """Select by a constant boolean array; gradients route per element."""
    cond = np.asarray(cond, bool)
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = b if isinstance(b, Tensor) else a._coerce(b)

    def bwd(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * cond, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * ~cond, b.shape))

    return Tensor._from_op(np.where(cond, a.data, b.data), (a, b), bwd, "where")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax: slices along ``axis`` sum to 1."""
    if not isinstance(x, Tensor):
        x = Tensor(x)
    if x.shape == () or axis >= x.ndim or axis < -x.ndim:
        raise ShapeError(f"softmax axis {axis} invalid for shape {x.shape}")
    if x.shape[axis] == 0:
        raise ShapeError("softmax over an empty axis")
    if not np.all(np.isfinite(x.data)):
        raise NumericError(
            f"softmax input non-finite at index {_first_nonfinite_index(x.data)}"
        )
    shift = np.max(x.data, axis=axis, keepdims=True)  # constant under the graph
    e = (x - Tensor(shift)).exp()
    return e / e.sum(axis=axis, keepdims=True)


def backward(loss: Tensor, params) -> dict:
    """Run reverse-mode from a scalar loss over the given parameter set.

    Populates ``p.tensor.grad`` for every reachable parameter; parameters the
    loss does not touch receive an explicit zero gradient. Returns a map from
    parameter name to its gradient as a fresh Tensor.
    """
    params = list(params)
    for p in params:
        p.tensor.grad = None
    loss.backward()
    grads = {}
    for p in params:
        if p.tensor.grad is None:
            p.tensor.grad = np.zeros_like(p.tensor.data)
        grads[p.name] = Tensor(p.tensor.grad.copy())
    return grads


# -- fixed linear maps --------------------------------------------------------

_INTERP_CACHE = {}


def _interp_matrix(n_in: int, n_out: int, dtype) -> np.ndarray:
    """Bilinear 1-d interpolation matrix mapping n_in samples to n_out."""
    key = (n_in, n_out, np.dtype(dtype).name)
    m = _INTERP_CACHE.get(key)
    if m is not None:
        return m
    m = np.zeros((n_out, n_in), dtype=dtype)
    scale = n_in / n_out
    for i in range(n_out):
        src = (i + 0.5) * scale - 0.5
        src = min(max(src, 0.0), n_in - 1.0)
        lo = int(np.floor(src))
        hi = min(lo + 1, n_in - 1)
        w = src - lo
        m[i, lo] += 1.0 - w
        m[i, hi] += w
    _INTERP_CACHE[key] = m
    return m


def upsample_bilinear(x: Tensor, h_out: int, w_out: int) -> Tensor:
    """Resize the trailing two axes of ``x`` bilinearly to (h_out, w_out)."""
    h_in, w_in = x.shape[-2], x.shape[-1]
    if (h_in, w_in) == (h_out, w_out):
        return x
    rows = Tensor(_interp_matrix(h_in, h_out, x.dtype))
    cols = Tensor(_interp_matrix(w_in, w_out, x.dtype).T)
    return rows @ x @ cols
