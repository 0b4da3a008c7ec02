"""Parameters and the small set of kernels the whole pipeline composes:
linear layers, two-layer MLPs, and single-head scaled dot-product attention.
"""

from __future__ import annotations

import hashlib
import math

import numpy as np

from .tensor import Tensor, ShapeError, softmax

GELU_C = math.sqrt(2.0 / math.pi)


class Param:
    """A named trainable tensor with a reproducible initializer."""

    __slots__ = ("name", "tensor", "init_spec")

    def __init__(self, name: str, tensor: Tensor, init_spec: dict):
        if not tensor.requires_grad:
            raise ValueError(f"param '{name}' must track gradients")
        self.name = name
        self.tensor = tensor
        self.init_spec = init_spec

    @property
    def data(self):
        return self.tensor.data

    def __repr__(self):
        return f"Param({self.name}, shape={self.tensor.shape})"


def _name_seed(seed: int, name: str) -> int:
    h = hashlib.blake2b(f"{seed}:{name}".encode(), digest_size=8).digest()
    return int.from_bytes(h, "little")


class ParamFactory:
    """Creates and registers every parameter of one model instance.

    Initialization depends only on (model seed, parameter name), so the same
    config always produces bit-identical parameters regardless of construction
    order. Names must be unique.
    """

    def __init__(self, seed: int, dtype=np.float32):
        self.seed = int(seed)
        self.dtype = np.dtype(dtype)
        self.registry: dict[str, Param] = {}

    def _register(self, name: str, arr: np.ndarray, spec: dict) -> Param:
        if name in self.registry:
            raise ValueError(f"duplicate parameter name '{name}'")
        t = Tensor(arr.astype(self.dtype), requires_grad=True)
        p = Param(name, t, spec)
        self.registry[name] = p
        return p

    def uniform(self, name: str, shape, fan_in: int) -> Param:
        bound = 1.0 / math.sqrt(max(1, fan_in))
        rng = np.random.default_rng(_name_seed(self.seed, name))
        arr = rng.uniform(-bound, bound, size=shape)
        spec = {"init": "uniform_fan_in", "fan_in": fan_in, "seed": self.seed}
        return self._register(name, arr, spec)

    def zeros(self, name: str, shape) -> Param:
        return self._register(name, np.zeros(shape), {"init": "zeros", "seed": self.seed})

    def params(self) -> list[Param]:
        return list(self.registry.values())

    def load_state(self, state: dict[str, np.ndarray]):
        """Overwrite parameter values from a checkpoint state dict."""
        missing = set(self.registry) - set(state)
        extra = set(state) - set(self.registry)
        if missing or extra:
            raise ValueError(
                f"checkpoint mismatch: missing={sorted(missing)[:4]} extra={sorted(extra)[:4]}"
            )
        for name, arr in state.items():
            p = self.registry[name]
            if tuple(arr.shape) != tuple(p.data.shape):
                raise ValueError(f"shape mismatch for '{name}'")
            p.tensor.data = arr.astype(self.dtype)
            p.tensor.grad = None


def gelu(x: Tensor) -> Tensor:
    """Smooth tanh-form gaussian-error linear unit."""
    inner = (x + (x * x * x) * 0.044715) * GELU_C
    return x * (inner.tanh() + 1.0) * 0.5


class Linear:
    """y = x W + b with W of shape (d_in, d_out)."""

    def __init__(self, factory: ParamFactory, name: str, d_in: int, d_out: int, bias=True):
        self.w = factory.uniform(f"{name}.weight", (d_in, d_out), fan_in=d_in)
        self.b = factory.zeros(f"{name}.bias", (d_out,)) if bias else None
        self.d_in, self.d_out = d_in, d_out

    def __call__(self, x: Tensor) -> Tensor:
        squeeze = x.ndim == 1
        if squeeze:
            x = x.reshape(1, -1)
        if x.shape[-1] != self.d_in:
            raise ShapeError(f"linear expects last dim {self.d_in}, got {x.shape}")
        y = x @ self.w.tensor
        if self.b is not None:
            y = y + self.b.tensor
        return y.reshape(y.shape[1:]) if squeeze else y


class MLP:
    """Two linear layers around one smooth nonlinearity (hidden = 2x input).

    ``single_layer=True`` degenerates to one linear map, used where a bare
    projection is wanted under the same interface.
    """

    def __init__(
        self,
        factory: ParamFactory,
        name: str,
        d_in: int,
        d_out: int,
        hidden: int | None = None,
        single_layer: bool = False,
    ):
        self.single = single_layer
        if single_layer:
            self.l1 = Linear(factory, f"{name}.l1", d_in, d_out)
            self.l2 = None
        else:
            hidden = hidden or 2 * d_in
            self.l1 = Linear(factory, f"{name}.l1", d_in, hidden)
            self.l2 = Linear(factory, f"{name}.l2", hidden, d_out)

    def __call__(self, x: Tensor) -> Tensor:
        if self.single:
            return self.l1(x)
        return self.l2(gelu(self.l1(x)))

    def zero_output(self):
        """Zero the final layer so the MLP (and any residual on it) vanishes."""
        last = self.l1 if self.single else self.l2
        last.w.data[:] = 0.0
        if last.b is not None:
            last.b.data[:] = 0.0


def scaled_dot_attention(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    bias: Tensor | None = None,
    scale_logits: bool = True,
    return_weights: bool = False,
):
    """Single-head attention: softmax(q kT [/ sqrt(c)] + bias) v.

    Accepts leading batch dimensions; q is [..., n, c], k and v [..., m, c],
    bias [..., n, m]. Output rows are convex combinations of v rows.
    """
    if q.ndim < 2 or k.ndim < 2 or v.ndim < 2:
        raise ShapeError("attention operands need ndim >= 2")
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError(f"q/k width mismatch: {q.shape} vs {k.shape}")
    if k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"k/v key-count mismatch: {k.shape} vs {v.shape}")
    logits = q @ k.swapaxes(-1, -2)
    if scale_logits:
        logits = logits * (1.0 / math.sqrt(q.shape[-1]))
    if bias is not None:
        if bias.shape[-2:] != (q.shape[-2], k.shape[-2]):
            raise ShapeError(f"bias shape {bias.shape} does not match logits")
        logits = logits + bias
    w = softmax(logits, axis=-1)
    out = w @ v
    return (out, w) if return_weights else out


class CrossAttention:
    """Projection triple (queries/keys/values) feeding the attention kernel.

    ``out_proj=True`` adds a final linear map, the conventional hook for
    residual branches that must be zeroable.
    """

    def __init__(
        self,
        factory: ParamFactory,
        name: str,
        c_q: int,
        c_kv: int | None = None,
        c: int | None = None,
        out_proj: bool = False,
        scale_logits: bool = True,
    ):
        c_kv = c_kv if c_kv is not None else c_q
        c = c if c is not None else c_q
        self.wq = Linear(factory, f"{name}.wq", c_q, c, bias=False)
        self.wk = Linear(factory, f"{name}.wk", c_kv, c, bias=False)
        self.wv = Linear(factory, f"{name}.wv", c_kv, c, bias=False)
        self.wo = Linear(factory, f"{name}.wo", c, c) if out_proj else None
        self.scale_logits = scale_logits

    def __call__(self, q_in: Tensor, kv_in: Tensor, bias=None, return_weights=False):
        out = scaled_dot_attention(
            self.wq(q_in),
            self.wk(kv_in),
            self.wv(kv_in),
            bias=bias,
            scale_logits=self.scale_logits,
            return_weights=return_weights,
        )
        if return_weights:
            out, w = out
        if self.wo is not None:
            out = self.wo(out)
        return (out, w) if return_weights else out
