"""Reverse-mode automatic differentiation for small dense networks.

Everything is float64 numpy. A forward pass records its operations on a
``Tape``; each tape supports exactly one reverse sweep, after which it is
consumed (reusing it raises). Parameters live in a ``ParamStore`` together
with their gradient buffers and Adam moment accumulators. Gradient
accumulation is additive until ``zero_grad`` so that interleaved losses
cannot silently leak gradients into each other.

The first optimizer or polyak call packs a store's tensors into one
contiguous backing vector (parameters become views), which keeps the
per-update cost a handful of vectorized operations regardless of how many
tensors the store holds. After packing, parameter values are mutated in
place and the store refuses new tensors.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

__all__ = [
    "Tape",
    "Var",
    "Param",
    "ParamStore",
    "Mlp",
    "adam_step",
    "polyak_update",
    "save_checkpoint",
    "load_checkpoint",
    "concat",
    "minimum",
    "linear",
    "softplus",
]

_CHECKPOINT_MAGIC = b"TECKPT01"


class Param:
    """One named float64 tensor plus gradient and Adam moment buffers."""

    __slots__ = ("name", "value", "grad", "m", "v")

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = np.array(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.m = np.zeros_like(self.value)
        self.v = np.zeros_like(self.value)


class ParamStore:
    """Ordered collection of named parameters sharing one optimizer state."""

    def __init__(self):
        self._params: dict[str, Param] = {}
        self.step_count = 0
        self._packed = False
        self._backing: dict[str, np.ndarray] = {}

    def create(self, name: str, value: np.ndarray) -> Param:
        if self._packed:
            raise RuntimeError(f"store is frozen after first optimizer use; cannot add {name!r}")
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        p = Param(name, value)
        self._params[name] = p
        return p

    def __getitem__(self, name: str) -> Param:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def params(self) -> list[Param]:
        return list(self._params.values())

    def names(self) -> list[str]:
        return list(self._params)

    @property
    def size(self) -> int:
        return sum(p.value.size for p in self._params.values())

    def zero_grad(self) -> None:
        if self._packed:
            self._backing["grad"].fill(0.0)
        else:
            for p in self._params.values():
                p.grad.fill(0.0)

    def _pack(self) -> None:
        """Re-point every tensor at a slice of one contiguous vector."""
        if self._packed:
            return
        total = self.size
        for field in ("value", "grad", "m", "v"):
            self._backing[field] = np.empty(total, dtype=np.float64)
        offset = 0
        for p in self._params.values():
            n = p.value.size
            for field in ("value", "grad", "m", "v"):
                flat = self._backing[field][offset : offset + n]
                flat[:] = getattr(p, field).ravel()
                setattr(p, field, flat.reshape(p.value.shape))
            offset += n
        self._packed = True

    def copy_values_from(self, other: "ParamStore") -> None:
        """Overwrite values (not moments) with those of a same-shaped store."""
        if self.names() != other.names():
            raise ValueError("stores hold different parameter sets")
        for p, q in zip(self.params(), other.params()):
            if p.value.shape != q.value.shape:
                raise ValueError(f"shape mismatch for {p.name!r}: {p.value.shape} vs {q.value.shape}")
            p.value[...] = q.value

    def state_arrays(self) -> dict[str, dict[str, np.ndarray]]:
        return {
            p.name: {"value": p.value.copy(), "m": p.m.copy(), "v": p.v.copy()}
            for p in self._params.values()
        }

    def load_state(self, state: dict, step_count: int = 0) -> None:
        for name, fields in state.items():
            if name not in self._params:
                raise KeyError(f"unknown parameter {name!r}")
            p = self._params[name]
            for field in ("value", "m", "v"):
                arr = np.asarray(fields[field], dtype=np.float64).reshape(p.value.shape)
                getattr(p, field)[...] = arr
        self.step_count = step_count


class Tape:
    """Operation record for a single forward pass / reverse sweep."""

    __slots__ = ("_nodes", "_consumed")

    def __init__(self):
        self._nodes: list[Var] = []
        self._consumed = False

    def param(self, p: Param) -> "Var":
        """Wrap a parameter as a leaf; its gradient flows into ``p.grad``."""
        return Var(p.value, self, param=p)

    def backward(self, output: "Var", output_grad=None) -> None:
        if self._consumed:
            raise RuntimeError("tape already consumed; rerun the forward pass")
        if output.tape is not self:
            raise ValueError("output var does not belong to this tape")
        if output_grad is None:
            output.grad = np.ones_like(output.value)
        else:
            grad = np.asarray(output_grad, dtype=np.float64)
            if grad.shape != output.value.shape:
                raise ValueError(f"output_grad shape {grad.shape} != output shape {output.value.shape}")
            output.grad = grad
        for node in reversed(self._nodes):
            if node.grad is None:
                continue
            if node._backward is not None:
                node._backward(node.grad)
            if node._param is not None:
                node._param.grad += node.grad
        self._consumed = True


def _accum(var: "Var | None", g: np.ndarray) -> None:
    if var is None:
        return
    var.grad = g if var.grad is None else var.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a gradient back to the shape of a broadcast operand."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


class Var:
    """Taped float64 array node."""

    __slots__ = ("value", "grad", "tape", "_backward", "_param")

    def __init__(self, value, tape: Tape, backward=None, param: Param | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.tape = tape
        self._backward = backward
        self._param = param
        tape._nodes.append(self)

    @property
    def shape(self):
        return self.value.shape

    # -- binary ops (other side may be a Var on the same tape or a constant)

    def _other(self, other):
        if isinstance(other, Var):
            if other.tape is not self.tape:
                raise ValueError("operands recorded on different tapes")
            return other, other.value
        return None, np.asarray(other, dtype=np.float64)

    def __add__(self, other):
        ovar, oval = self._other(other)
        out = Var(self.value + oval, self.tape)

        def backward(g, a=self, b=ovar, ashape=self.value.shape, bshape=oval.shape):
            _accum(a, _unbroadcast(g, ashape))
            if b is not None:
                _accum(b, _unbroadcast(g, bshape))

        out._backward = backward
        return out

    __radd__ = __add__

    def __sub__(self, other):
        ovar, oval = self._other(other)
        out = Var(self.value - oval, self.tape)

        def backward(g, a=self, b=ovar, ashape=self.value.shape, bshape=oval.shape):
            _accum(a, _unbroadcast(g, ashape))
            if b is not None:
                _accum(b, _unbroadcast(-g, bshape))

        out._backward = backward
        return out

    def __rsub__(self, other):
        return self.__neg__().__add__(other)

    def __mul__(self, other):
        ovar, oval = self._other(other)
        out = Var(self.value * oval, self.tape)

        def backward(g, a=self, b=ovar, aval=self.value, bval=oval):
            _accum(a, _unbroadcast(g * bval, aval.shape))
            if b is not None:
                _accum(b, _unbroadcast(g * aval, bval.shape))

        out._backward = backward
        return out

    __rmul__ = __mul__

    def __neg__(self):
        out = Var(-self.value, self.tape)

        def backward(g, a=self):
            _accum(a, -g)

        out._backward = backward
        return out

    # -- elementwise

    def tanh(self):
        y = np.tanh(self.value)
        out = Var(y, self.tape)

        def backward(g, a=self, y=y):
            _accum(a, g * (1.0 - y * y))

        out._backward = backward
        return out

    def relu(self):
        y = np.maximum(self.value, 0.0)
        out = Var(y, self.tape)

        def backward(g, a=self, mask=(self.value > 0.0)):
            _accum(a, g * mask)

        out._backward = backward
        return out

    def exp(self):
        y = np.exp(self.value)
        out = Var(y, self.tape)

        def backward(g, a=self, y=y):
            _accum(a, g * y)

        out._backward = backward
        return out

    def log(self):
        out = Var(np.log(self.value), self.tape)

        def backward(g, a=self, x=self.value):
            _accum(a, g / x)

        out._backward = backward
        return out

    def square(self):
        out = Var(self.value * self.value, self.tape)

        def backward(g, a=self, x=self.value):
            _accum(a, g * (2.0 * x))

        out._backward = backward
        return out

    def clip(self, lo: float, hi: float):
        out = Var(np.clip(self.value, lo, hi), self.tape)
        mask = (self.value >= lo) & (self.value <= hi)

        def backward(g, a=self, mask=mask):
            _accum(a, g * mask)

        out._backward = backward
        return out

    # -- reductions / shape

    def sum(self, axis=None):
        out = Var(self.value.sum(axis=axis), self.tape)

        def backward(g, a=self, axis=axis, shape=self.value.shape):
            if axis is None:
                _accum(a, np.broadcast_to(g, shape).copy())
            else:
                _accum(a, np.broadcast_to(np.expand_dims(g, axis), shape).copy())

        out._backward = backward
        return out

    def mean(self, axis=None):
        n = self.value.size if axis is None else self.value.shape[axis]
        return self.sum(axis=axis) * (1.0 / n)

    def reshape(self, shape):
        out = Var(self.value.reshape(shape), self.tape)

        def backward(g, a=self, shape=self.value.shape):
            _accum(a, g.reshape(shape))

        out._backward = backward
        return out

    def slice_cols(self, start: int, stop: int):
        out = Var(self.value[:, start:stop], self.tape)

        def backward(g, a=self, start=start, stop=stop, shape=self.value.shape):
            full = np.zeros(shape)
            full[:, start:stop] = g
            _accum(a, full)

        out._backward = backward
        return out

    def backward(self, output_grad=None) -> None:
        self.tape.backward(self, output_grad)


def softplus(x: Var) -> Var:
    """log(1 + exp(x)) computed stably; gradient is the logistic sigmoid."""
    y = np.logaddexp(0.0, x.value)
    out = Var(y, x.tape)

    def backward(g, a=x, sig=1.0 / (1.0 + np.exp(-x.value))):
        _accum(a, g * sig)

    out._backward = backward
    return out


def minimum(a: Var, b: Var) -> Var:
    """Elementwise min; the gradient follows the smaller operand (ties: first)."""
    if a.tape is not b.tape:
        raise ValueError("operands recorded on different tapes")
    take_a = a.value <= b.value
    out = Var(np.where(take_a, a.value, b.value), a.tape)

    def backward(g, a=a, b=b, take_a=take_a):
        _accum(a, g * take_a)
        _accum(b, g * ~take_a)

    out._backward = backward
    return out


def concat(a, b, tape: Tape) -> Var:
    """Column-concatenate two batches; either operand may be a constant."""
    avar = a if isinstance(a, Var) else None
    bvar = b if isinstance(b, Var) else None
    aval = a.value if avar is not None else np.asarray(a, dtype=np.float64)
    bval = b.value if bvar is not None else np.asarray(b, dtype=np.float64)
    out = Var(np.concatenate([aval, bval], axis=1), tape)
    na = aval.shape[1]

    def backward(g, avar=avar, bvar=bvar, na=na):
        _accum(avar, g[:, :na])
        _accum(bvar, g[:, na:])

    out._backward = backward
    return out


def linear(x, w, b, tape: Tape) -> Var:
    """Fused affine map ``x @ w + b``; any operand may be a constant array."""
    xvar = x if isinstance(x, Var) else None
    wvar = w if isinstance(w, Var) else None
    bvar = b if isinstance(b, Var) else None
    xval = x.value if xvar is not None else np.asarray(x, dtype=np.float64)
    wval = w.value if wvar is not None else np.asarray(w, dtype=np.float64)
    bval = b.value if bvar is not None else np.asarray(b, dtype=np.float64)
    out = Var(xval @ wval + bval, tape)

    def backward(g, xvar=xvar, wvar=wvar, bvar=bvar, xval=xval, wval=wval):
        if xvar is not None:
            _accum(xvar, g @ wval.T)
        if wvar is not None:
            _accum(wvar, xval.T @ g)
        if bvar is not None:
            _accum(bvar, g.sum(axis=0))

    out._backward = backward
    return out


_ACTIVATIONS = {
    "tanh": (np.tanh, lambda v: v.tanh()),
    "relu": (lambda x: np.maximum(x, 0.0), lambda v: v.relu()),
}


class Mlp:
    """Dense network with a linear output layer; parameters live in a store."""

    def __init__(self, store: ParamStore, name: str, in_dim: int, hidden, out_dim: int,
                 rng: np.random.Generator, activation: str = "tanh"):
        hidden = tuple(hidden)
        if len(hidden) < 1:
            raise ValueError(f"{name}: at least one hidden layer is required")
        if activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}; choose from {sorted(_ACTIVATIONS)}")
        self.name = name
        self.in_dim = in_dim
        self.widths = (in_dim, *hidden, out_dim)
        self.activation = activation
        self.store = store
        self.layers: list[tuple[Param, Param]] = []
        for i, (fan_in, fan_out) in enumerate(zip(self.widths[:-1], self.widths[1:])):
            bound = 1.0 / np.sqrt(fan_in)
            w = store.create(f"{name}.w{i}", rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            b = store.create(f"{name}.b{i}", rng.uniform(-bound, bound, size=(fan_out,)))
            self.layers.append((w, b))

    def _check_input(self, x: np.ndarray) -> None:
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ValueError(
                f"{self.name}: layer 0 expects input of shape (batch, {self.in_dim}), got {x.shape}"
            )

    def forward(self, x, tape: Tape, frozen: bool = False) -> Var:
        """Taped forward pass.

        With ``frozen=True`` the parameters enter as constants: gradients
        still flow through to the input batch but are not accumulated into
        this network's store.
        """
        xval = x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)
        self._check_input(xval)
        act = _ACTIVATIONS[self.activation][1]
        h = x
        last = len(self.layers) - 1
        for i, (w, b) in enumerate(self.layers):
            if frozen:
                h = linear(h, w.value, b.value, tape)
            else:
                h = linear(h, tape.param(w), tape.param(b), tape)
            if i < last:
                h = act(h)
        return h

    def forward_np(self, x: np.ndarray) -> np.ndarray:
        """Plain numpy forward pass with no tape (targets, rollouts)."""
        x = np.asarray(x, dtype=np.float64)
        self._check_input(x)
        act = _ACTIVATIONS[self.activation][0]
        h = x
        last = len(self.layers) - 1
        for i, (w, b) in enumerate(self.layers):
            h = h @ w.value + b.value
            if i < last:
                h = act(h)
        return h


def adam_step(store: ParamStore, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """Bias-corrected Adam update over every tensor in the store."""
    store._pack()
    g = store._backing["grad"]
    if not np.isfinite(g).all():
        for p in store.params():
            if not np.isfinite(p.grad).all():
                raise FloatingPointError(f"nonfinite gradient in {p.name!r}")
    store.step_count += 1
    t = store.step_count
    m, v, val = store._backing["m"], store._backing["v"], store._backing["value"]
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * (g * g)
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    val -= lr * m_hat / (np.sqrt(v_hat) + eps)


def polyak_update(target_store: ParamStore, online_store: ParamStore, tau: float) -> None:
    """Exponential target tracking: target <- (1 - tau) * target + tau * online."""
    if not 0.0 < tau <= 1.0:
        raise ValueError(f"tau must be in (0, 1], got {tau}")
    if target_store.names() != online_store.names():
        raise ValueError("target and online stores hold different parameter sets")
    for p, q in zip(target_store.params(), online_store.params()):
        if p.value.shape != q.value.shape:
            raise ValueError(f"shape mismatch for {p.name!r}: {p.value.shape} vs {q.value.shape}")
    target_store._pack()
    online_store._pack()
    t = target_store._backing["value"]
    t *= 1.0 - tau
    t += tau * online_store._backing["value"]


def save_checkpoint(path, stores: dict[str, ParamStore], meta: dict | None = None) -> None:
    """Write stores to a flat, byte-stable binary file.

    Layout: magic, u64 header length, JSON header (sorted keys), then the
    raw row-major float64 payload (value, m, v per record, in header order).
    """
    header: dict = {"meta": meta or {}, "stores": {}}
    payload: list[bytes] = []
    for store_name in sorted(stores):
        store = stores[store_name]
        records = []
        for p in store.params():
            records.append({"name": p.name, "shape": list(p.value.shape)})
            for field in ("value", "m", "v"):
                payload.append(np.ascontiguousarray(getattr(p, field), dtype=np.float64).tobytes())
        header["stores"][store_name] = {"step_count": store.step_count, "records": records}
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as f:
        f.write(_CHECKPOINT_MAGIC)
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for chunk in payload:
            f.write(chunk)


def load_checkpoint(path):
    """Read a checkpoint; returns (state, meta) with ParamStore-loadable state."""
    raw = Path(path).read_bytes()
    if raw[: len(_CHECKPOINT_MAGIC)] != _CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    n = struct.unpack("<Q", raw[8:16])[0]
    header = json.loads(raw[16 : 16 + n].decode())
    offset = 16 + n
    state: dict = {}
    for store_name in sorted(header["stores"]):
        entry = header["stores"][store_name]
        params = {}
        for rec in entry["records"]:
            shape = tuple(rec["shape"])
            count = int(np.prod(shape)) if shape else 1
            fields = {}
            for field in ("value", "m", "v"):
                arr = np.frombuffer(raw, dtype=np.float64, count=count, offset=offset).reshape(shape)
                fields[field] = arr.copy()
                offset += count * 8
            params[rec["name"]] = fields
        state[store_name] = {"step_count": entry["step_count"], "params": params}
    return state, header["meta"]
