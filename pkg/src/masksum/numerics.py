"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every op records its parents and a closure mapping the output gradient to
one gradient per parent. ``backward`` walks the graph in reverse
topological order; the graph is rebuilt on every forward pass.
"""

from __future__ import annotations

import contextlib
import struct
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import special

DTYPE = np.float64
CHECKPOINT_VERSION = 1

_GRAD_ENABLED = True


class DimensionError(ValueError):
    pass


class NumericError(ArithmeticError):
    pass


class BackwardError(RuntimeError):
    pass


@contextlib.contextmanager
def no_grad():
    """Run forward passes without recording a graph."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad: bool = False, op: str = "leaf"):
        self.data = np.asarray(data, dtype=DTYPE)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.op = op
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None
        self._consumed = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=DTYPE, copy=True)
        else:
            self.grad += g

    def backward(self) -> None:
        backward(self)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, tuple(axes) if axes else None)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data) -> Tensor:
    return Tensor(np.array(data, dtype=DTYPE, copy=True), requires_grad=True)


def _make(data: np.ndarray, parents: Sequence[Tensor], op: str, backward_fn: BackwardFn) -> Tensor:
    out = Tensor(data, op=op)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape``, undoing numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
    return order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every tensor reachable from the scalar ``loss``.

    Leaf gradients accumulate into existing buffers, so several losses can be
    backpropagated in turn (gradient accumulation). A given loss graph can be
    backpropagated only once.
    """
    if loss.size != 1:
        raise BackwardError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise BackwardError("backward already ran on this graph; rebuild it before calling again")
    if not loss.requires_grad:
        raise BackwardError("loss does not depend on any tensor with requires_grad=True")
    order = _topological(loss)
    pending: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape, dtype=DTYPE)}
    for node in reversed(order):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node._accumulate(g)
            continue
        node.grad = g
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in pending:
                pending[key] = pending[key] + pg
            else:
                pending[key] = pg
    for node in order:
        node._consumed = True


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data + b.data, (a, b), "add",
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data - b.data, (a, b), "sub",
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data * b.data, (a, b), "mul",
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return _make(out, (a, b), "div",
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * out / b.data, b.shape)))


def power(a: Tensor, exponent: float) -> Tensor:
    return _make(a.data ** exponent, (a,), "pow",
                 lambda g: (g * exponent * a.data ** (exponent - 1),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), "exp", lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise NumericError("log of non-positive value")
    return _make(np.log(a.data), (a,), "log", lambda g: (g / a.data,))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, (a,), "tanh", lambda g: (g * (1.0 - out * out),))


def relu(a: Tensor) -> Tensor:
    on = a.data > 0
    return _make(np.where(on, a.data, 0.0), (a,), "relu", lambda g: (g * on,))


_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(a: Tensor) -> Tensor:
    """Exact (erf) GELU, as in BERT."""
    x = a.data
    cdf = 0.5 * (1.0 + special.erf(x * _INV_SQRT2))
    pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
    return _make(x * cdf, (a,), "gelu", lambda g: (g * (cdf + x * pdf),))


def dropout(a: Tensor, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    if not training or rate <= 0.0:
        return a
    keep = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return _make(a.data * keep, (a,), "dropout", lambda g: (g * keep,))


# ---------------------------------------------------------------------------
# linear algebra and shape
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix product with numpy batch broadcasting over leading dims."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def bw(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data @ b.data, (a, b), "matmul", bw)


def reshape(a: Tensor, shape) -> Tensor:
    return _make(a.data.reshape(shape), (a,), "reshape", lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes=None) -> Tensor:
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), "transpose", lambda g: (g.transpose(inverse),))


def take(a: Tensor, index) -> Tensor:
    """Basic or advanced indexing; gradient scatters back with ``np.add.at``."""

    def bw(g):
        full = np.zeros(a.shape, dtype=DTYPE)
        np.add.at(full, index, g)
        return (full,)

    return _make(a.data[index], (a,), "index", bw)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, "concat", bw)


def tensor_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)

    return _make(out, (a,), "sum", bw)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return tensor_sum(a, axis, keepdims) * (1.0 / count)


# ---------------------------------------------------------------------------
# normalization and losses
# ---------------------------------------------------------------------------

def softmax_lastdim(x: Tensor) -> Tensor:
    if not np.all(np.isfinite(x.data)):
        raise NumericError("softmax input contains non-finite values")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _make(out, (x,), "softmax", bw)


def log_softmax_lastdim(x: Tensor) -> Tensor:
    if not np.all(np.isfinite(x.data)):
        raise NumericError("log_softmax input contains non-finite values")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    probs = np.exp(out)

    def bw(g):
        return (g - probs * g.sum(axis=-1, keepdims=True),)

    return _make(out, (x,), "log_softmax", bw)


def layernorm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-12) -> Tensor:
    """Normalize over the last dim, then scale and shift."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    n = x.shape[-1]

    def bw(g):
        gx = gy = gb = None
        gxhat = g * gain.data
        if x.requires_grad:
            gx = inv / n * (n * gxhat - gxhat.sum(axis=-1, keepdims=True)
                            - xhat * (gxhat * xhat).sum(axis=-1, keepdims=True))
        if gain.requires_grad:
            gy = _unbroadcast(g * xhat, gain.shape)
        if bias.requires_grad:
            gb = _unbroadcast(g, bias.shape)
        return gx, gy, gb

    return _make(xhat * gain.data + bias.data, (x, gain, bias), "layernorm", bw)


def embedding_lookup(table: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise DimensionError(f"ids out of range for table with {table.shape[0]} rows")

    def bw(g):
        full = np.zeros(table.shape, dtype=DTYPE)
        np.add.at(full, ids, g)
        return (full,)

    return _make(table.data[ids], (table,), "embedding", bw)


def cross_entropy(logits: Tensor, targets, ignore_index: int | None = None) -> Tensor:
    """Mean negative log-likelihood over rows whose target is not ``ignore_index``."""
    targets = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2 or logits.shape[0] != targets.shape[0]:
        raise DimensionError(f"cross_entropy shape mismatch: logits {logits.shape}, targets {targets.shape}")
    keep = np.ones(targets.shape, dtype=bool) if ignore_index is None else targets != ignore_index
    count = int(keep.sum())
    if count == 0:
        raise ValueError("cross_entropy: every target is ignored")
    if not np.all(np.isfinite(logits.data)):
        raise NumericError("cross_entropy logits contain non-finite values")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    rows = np.nonzero(keep)[0]
    loss = -logp[rows, targets[rows]].sum() / count

    def bw(g):
        grad = np.exp(logp)
        grad[rows, targets[rows]] -= 1.0
        grad[~keep] = 0.0
        return (grad * (g / count),)

    return _make(np.asarray(loss), (logits,), "cross_entropy", bw)


# ---------------------------------------------------------------------------
# parameters, optimizer, checkpoint
# ---------------------------------------------------------------------------

ParameterSet = Mapping[str, Tensor]


def zero_grad(params: ParameterSet) -> None:
    for p in params.values():
        p.grad = None


class Adam:
    """Adam with bias correction. Gradients are read, never modified."""

    def __init__(self, params: ParameterSet, lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = dict(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self) -> None:
        zero_grad(self.params)

    def step(self) -> None:
        missing = [k for k, p in self.params.items() if p.grad is None]
        if missing:
            raise BackwardError(f"parameters without gradients: {', '.join(missing)}")
        b1, b2 = self.betas
        self.step_count += 1
        c1 = 1.0 - b1 ** self.step_count
        c2 = 1.0 - b2 ** self.step_count
        for k, p in self.params.items():
            g = p.grad
            m = self.m[k]
            v = self.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def adam_step(optimizer: Adam) -> None:
    optimizer.step()


def save_parameters(path, params: ParameterSet, header: Mapping[str, object] | None = None) -> None:
    """Write parameters as little-endian binary records.

    Layout: u32 version, u32 header length, UTF-8 ``key=value`` header lines,
    then per parameter: u32 name length, name bytes, u32 rank, u32 dims,
    raw ``<f8`` values.
    """
    text = "".join(f"{k}={v}\n" for k, v in (header or {}).items()).encode("utf-8")
    chunks = [struct.pack("<II", CHECKPOINT_VERSION, len(text)), text]
    for name, p in params.items():
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack(f"<I{p.ndim}I", p.ndim, *p.shape))
        chunks.append(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def load_parameters(path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 8:
        raise ValueError(f"{path}: truncated checkpoint")
    version, hlen = struct.unpack_from("<II", blob, 0)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos = 8
    header: dict[str, str] = {}
    for line in blob[pos:pos + hlen].decode("utf-8").splitlines():
        key, _, value = line.partition("=")
        header[key] = value
    pos += hlen
    arrays: dict[str, np.ndarray] = {}
    while pos < len(blob):
        (nlen,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        name = blob[pos:pos + nlen].decode("utf-8")
        pos += nlen
        (rank,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        dims = struct.unpack_from(f"<{rank}I", blob, pos)
        pos += 4 * rank
        count = int(np.prod(dims)) if rank else 1
        arrays[name] = np.frombuffer(blob, dtype="<f8", count=count, offset=pos).reshape(dims).astype(DTYPE)
        pos += 8 * count
    return arrays, header


def assign_parameters(params: ParameterSet, arrays: Mapping[str, np.ndarray]) -> None:
    missing = sorted(set(params) - set(arrays))
    if missing:
        raise KeyError(f"checkpoint lacks parameters: {', '.join(missing)}")
    for name, p in params.items():
        if arrays[name].shape != p.shape:
            raise DimensionError(f"{name}: checkpoint shape {arrays[name].shape} != {p.shape}")
        p.data[...] = arrays[name]


def numerical_gradient(f: Callable[[], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of ``f`` with respect to ``x``, perturbed in place."""
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-5) -> float:
    """Norm-wise relative error ``||a - n|| / max(||a|| + ||n||, floor)``.

    The floor keeps blocks whose true gradient is zero (e.g. attention key
    biases, which softmax ignores) from dividing rounding noise by noise.
    """
    denom = max(float(np.linalg.norm(analytic) + np.linalg.norm(numeric)), floor)
    return float(np.linalg.norm(analytic - numeric) / denom)
