"""Reverse-mode autodiff over numpy arrays.

Only the handful of operations the extraction model needs are provided.  The
graph is built eagerly as operations run (define-by-run) and consumed by a
single call to :func:`backward`.
"""
from __future__ import annotations

import itertools
import json
import struct
from collections import OrderedDict
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import CheckpointError, DegenerateMaskError, DimensionError, GradientError

_DTYPE = np.float64
_ids = itertools.count()


def set_default_dtype(dtype) -> None:
    """Switch between 64-bit (verification) and 32-bit (fast) mode."""
    global _DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype}")
    _DTYPE = dtype.type


def default_dtype():
    return _DTYPE


class Tensor:
    """An array with an optional gradient and a link into the autodiff graph."""

    __slots__ = ("data", "grad", "requires_grad", "name", "node_id", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _backward=None):
        arr = np.asarray(data)
        if arr.dtype.kind != "f":
            arr = arr.astype(_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self.node_id = next(_ids)
        self._parents = _parents
        self._backward = _backward
        self._consumed = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def values(self):
        return self.data

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def backward(self):
        backward(self)

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=_DTYPE))


def parameter(values, name=None) -> Tensor:
    return Tensor(np.asarray(values, dtype=_DTYPE), requires_grad=True, name=name)


def _result(data, parents, backward_fn) -> Tensor:
    parents = tuple(parents)
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=parents, _backward=backward_fn)
    return Tensor(data)


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf requiring grad."""
    if loss.data.size != 1:
        raise GradientError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise GradientError("graph already consumed by a previous backward pass")
    if not loss.requires_grad:
        return

    order = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.node_id in seen:
            continue
        seen.add(node.node_id)
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and p.node_id not in seen:
                stack.append((p, False))

    grads = {loss.node_id: np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(node.node_id, None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            prev = grads.get(parent.node_id)
            grads[parent.node_id] = pg if prev is None else prev + pg
        # release the graph so it cannot be replayed
        node._parents = ()
        node._backward = None
        node.requires_grad = False
        node._consumed = True


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(op, a.shape, b.shape) from None


# ---------------------------------------------------------------------------
# elementwise / structural ops


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    return add(a, scale(b, -1.0))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(a.data * b.data, (a, b), bw)


def scale(a: Tensor, c: float) -> Tensor:
    return _result(a.data * c, (a,), lambda g: (g * c,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a @ b`` for a (..., n, k) with b either (k, m) or (..., k, m)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError("matmul", a.shape, b.shape)
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise DimensionError("matmul", a.shape, b.shape)
    out = a.data @ b.data

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        if b.ndim == 2:
            k, m = b.shape
            gb = a.data.reshape(-1, k).T @ g.reshape(-1, m)
        else:
            gb = np.swapaxes(a.data, -1, -2) @ g
        return ga, gb

    return _result(out, (a, b), bw)


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _result(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),))


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError("reshape", old, shape) from None
    return _result(out, (a,), lambda g: (g.reshape(old),))


def expand(a: Tensor, shape) -> Tensor:
    """Broadcast ``a`` to ``shape`` (size-1 axes repeated)."""
    try:
        out = np.broadcast_to(a.data, shape)
    except ValueError:
        raise DimensionError("expand", a.shape, shape) from None
    return _result(out, (a,), lambda g: (_unbroadcast(g, a.shape),))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise DimensionError("concat", ref, t.shape)
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax) for i in range(len(tensors))
        )

    return _result(np.concatenate([t.data for t in tensors], axis=ax), tensors, bw)


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    ax = axis % a.ndim
    index = [slice(None)] * a.ndim
    index[ax] = slice(start, stop)
    index = tuple(index)

    def bw(g):
        full = np.zeros_like(a.data)
        full[index] = g
        return (full,)

    return _result(a.data[index], (a,), bw)


def embedding_lookup(table: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise DimensionError("embedding_lookup", table.shape, ids.shape)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"embedding id out of range [0, {table.shape[0]})")

    def bw(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (gt,)

    return _result(table.data[ids], (table,), bw)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _result(a.data * mask, (a,), lambda g: (g * mask,))


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)
    return _result(s, (a,), lambda g: (g * s * (1.0 - s),))


def tensor_sum(a: Tensor) -> Tensor:
    return _result(np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def tensor_mean(a: Tensor) -> Tensor:
    n = a.data.size
    return _result(
        np.asarray(a.data.mean()), (a,), lambda g: (np.broadcast_to(g / n, a.shape).copy(),)
    )


def masked_softmax(logits: Tensor, mask) -> Tensor:
    """Softmax over the last axis restricted to positions where ``mask`` is true.

    Masked-out positions receive exactly 0.0.  A row with no valid position
    raises :class:`DegenerateMaskError`.
    """
    mask = np.asarray(mask, dtype=bool)
    try:
        mask = np.broadcast_to(mask, logits.shape)
    except ValueError:
        raise DimensionError("masked_softmax", logits.shape, mask.shape) from None
    if not mask.any(axis=-1).all():
        raise DegenerateMaskError("masked_softmax: a row has no valid position")
    x = np.where(mask, logits.data, -np.inf)
    x = x - x.max(axis=-1, keepdims=True)
    e = np.exp(x)
    e[~mask] = 0.0
    p = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return _result(p, (logits,), bw)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    if gain.shape != (x.shape[-1],) or bias.shape != (x.shape[-1],):
        raise DimensionError("layer_norm", x.shape, gain.shape)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc**2).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    d = x.shape[-1]

    def bw(g):
        red = tuple(range(g.ndim - 1))
        ggain = (g * xhat).sum(axis=red)
        gbias = g.sum(axis=red)
        gx_hat = g * gain.data
        gx = inv / d * (d * gx_hat - gx_hat.sum(-1, keepdims=True) - xhat * (gx_hat * xhat).sum(-1, keepdims=True))
        return gx, ggain, gbias

    return _result(xhat * gain.data + bias.data, (x, gain, bias), bw)


def max_pool_over_positions(x: Tensor, mask) -> Tensor:
    """Elementwise max of rows of ``x`` (..., T, d) selected by ``mask`` (..., S, T).

    Returns (..., S, d).  Ties route the gradient to the first maximal row.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape[:-2] != x.shape[:-2] or mask.shape[-1] != x.shape[-2]:
        raise DimensionError("max_pool_over_positions", x.shape, mask.shape)
    if not mask.any(axis=-1).all():
        raise DegenerateMaskError("max_pool_over_positions: empty span")
    xe = x.data[..., None, :, :]  # (..., 1, T, d)
    filled = np.where(mask[..., None], xe, -np.inf)  # (..., S, T, d)
    idx = filled.argmax(axis=-2)  # (..., S, d)
    out = np.take_along_axis(filled, idx[..., None, :], axis=-2)[..., 0, :]

    def bw(g):
        T = x.shape[-2]
        onehot = idx[..., None, :] == np.arange(T)[:, None]  # (..., S, T, d)
        return ((onehot * g[..., None, :]).sum(axis=-3),)

    return _result(out, (x,), bw)


def mean_pool_over_positions(x: Tensor, mask) -> Tensor:
    mask = np.asarray(mask, dtype=bool)
    if mask.shape[:-2] != x.shape[:-2] or mask.shape[-1] != x.shape[-2]:
        raise DimensionError("mean_pool_over_positions", x.shape, mask.shape)
    counts = mask.sum(axis=-1, keepdims=True)
    if (counts == 0).any():
        raise DegenerateMaskError("mean_pool_over_positions: empty span")
    weights = Tensor((mask / counts).astype(x.data.dtype))
    return matmul(weights, x)


def dropout(x: Tensor, p: float, train: bool, rng: np.random.Generator | None = None) -> Tensor:
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not train or p == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in train mode needs a generator")
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    keep = keep.astype(x.data.dtype)
    return _result(x.data * keep, (x,), lambda g: (g * keep,))


def _log_softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def cross_entropy(logits: Tensor, targets, weights=None, reduction: str = "sum") -> Tensor:
    """Softmax cross-entropy over the last axis against integer ``targets``.

    ``weights`` (same shape as targets) zeroes out padding or unused rows.
    """
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != logits.shape[:-1]:
        raise DimensionError("cross_entropy", logits.shape, targets.shape)
    w = np.ones(targets.shape) if weights is None else np.asarray(weights, dtype=float)
    logp = _log_softmax(logits.data)
    picked = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
    total = -(picked * w).sum()
    denom = max(w.sum(), 1.0) if reduction == "mean" else 1.0

    def bw(g):
        p = np.exp(logp)
        onehot = np.zeros_like(p)
        np.put_along_axis(onehot, targets[..., None], 1.0, axis=-1)
        return (g * (p - onehot) * (w / denom)[..., None],)

    return _result(np.asarray(total / denom, dtype=logits.data.dtype), (logits,), bw)


def binary_cross_entropy_with_logits(logits: Tensor, targets, weights=None, reduction: str = "sum") -> Tensor:
    targets = np.asarray(targets, dtype=logits.data.dtype)
    if targets.shape != logits.shape:
        raise DimensionError("binary_cross_entropy_with_logits", logits.shape, targets.shape)
    w = np.ones(targets.shape) if weights is None else np.asarray(weights, dtype=float)
    z = logits.data
    # log(1 + exp(-|z|)) form is stable for both signs
    per = np.maximum(z, 0) - z * targets + np.log1p(np.exp(-np.abs(z)))
    denom = max(w.sum(), 1.0) if reduction == "mean" else 1.0
    s = _sigmoid(z)

    def bw(g):
        return (g * (s - targets) * w / denom,)

    return _result(np.asarray((per * w).sum() / denom, dtype=z.dtype), (logits,), bw)


# ---------------------------------------------------------------------------
# parameters, optimizer, checkpoints


class ParameterStore:
    """Ordered collection of named learnable tensors."""

    def __init__(self):
        self._params: "OrderedDict[str, Tensor]" = OrderedDict()

    def add(self, name: str, values) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = parameter(values, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name) -> Tensor:
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params.items())

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params)

    def tensors(self):
        return list(self._params.values())

    def num_values(self) -> int:
        return int(sum(t.data.size for t in self._params.values()))

    def zero_grad(self, prefix: str | None = None):
        for name, t in self._params.items():
            if prefix is None or name.startswith(prefix):
                t.grad = np.zeros_like(t.data)

    def state(self) -> dict:
        return {n: t.data.copy() for n, t in self._params.items()}

    def load_state(self, state: dict):
        for n, t in self._params.items():
            if n not in state:
                raise CheckpointError(f"missing parameter {n!r}")
            if state[n].shape != t.shape:
                raise CheckpointError(f"parameter {n!r}: shape {state[n].shape} != {t.shape}")
            t.data = state[n].astype(t.data.dtype, copy=True)

    def save(self, path, meta: dict | None = None):
        save_checkpoint(path, self, meta)

    def load(self, path) -> dict:
        return load_checkpoint(path, self)


_MAGIC = b"ARGEXCK1"


def save_checkpoint(path, store: ParameterStore, meta: dict | None = None):
    """Write a manifest header followed by raw little-endian values."""
    manifest = []
    offset = 0
    blobs = []
    for name, t in store:
        arr = np.ascontiguousarray(t.data, dtype=t.data.dtype.newbyteorder("<"))
        manifest.append(
            {"name": name, "shape": list(t.shape), "dtype": arr.dtype.str, "offset": offset}
        )
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    header = json.dumps({"tensors": manifest, "meta": meta or {}}, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for b in blobs:
            f.write(b)


def read_checkpoint(path) -> tuple[dict, dict]:
    raw = Path(path).read_bytes()
    if raw[:8] != _MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16 : 16 + hlen])
    body = raw[16 + hlen :]
    arrays = {}
    for entry in header["tensors"]:
        dt = np.dtype(entry["dtype"])
        n = int(np.prod(entry["shape"], dtype=np.int64))
        arr = np.frombuffer(body, dtype=dt, count=n, offset=entry["offset"])
        arrays[entry["name"]] = arr.reshape(entry["shape"]).astype(dt.newbyteorder("="))
    return arrays, header.get("meta", {})


def load_checkpoint(path, store: ParameterStore) -> dict:
    arrays, meta = read_checkpoint(path)
    extra = set(arrays) - set(store.names())
    if extra:
        raise CheckpointError(f"checkpoint has unknown parameters: {sorted(extra)}")
    store.load_state(arrays)
    return meta


class Adam:
    """Adam with bias correction; zeroes gradients after every step."""

    def __init__(self, store: ParameterStore, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8,
                 only: Callable[[str], bool] | None = None):
        self.store = store
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.only = only
        self.m = {}
        self.v = {}
        for name, p in store:
            if only is None or only(name):
                self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)

    def step(self):
        params = [(n, p) for n, p in self.store if n in self.m]
        for name, p in params:
            if p.grad is None:
                raise GradientError(f"adam_step: parameter {name!r} has no gradient")
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for name, p in params:
            g = p.grad
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.grad = np.zeros_like(p.data)

