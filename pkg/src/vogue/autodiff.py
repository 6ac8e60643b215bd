"""Dense float64 tensors with define-by-run reverse-mode differentiation.

A :class:`Tape` is opened for each forward pass::

    with Tape() as tape:
        loss = model(batch)
    grads = tape.backward(loss)

Operations performed while no tape is active are plain numpy calls and
record nothing, which is how evaluation runs.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "DimensionError",
    "DropoutRNG",
    "NumericError",
    "Tape",
    "Tensor",
    "add",
    "apply_primitive",
    "backward",
    "concat",
    "current_tape",
    "dropout",
    "embedding_lookup",
    "exp",
    "finite_diff_check",
    "layer_norm",
    "leaky_relu",
    "log",
    "log_softmax",
    "mask_fill",
    "matmul",
    "mul",
    "relu",
    "reshape",
    "softmax_rows",
    "take",
    "transpose",
    "tmean",
    "tsum",
]


class DimensionError(ValueError):
    """Operand shapes do not conform to a primitive's rule."""


class NumericError(ArithmeticError):
    """A function under test produced a non-finite value."""


_state = threading.local()


def current_tape() -> "Tape | None":
    stack = getattr(_state, "stack", None)
    return stack[-1] if stack else None


class Tensor:
    """A float64 array that can participate in the active tape."""

    __slots__ = ("data", "grad", "requires_grad", "tape_id", "_tape")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        # ascontiguousarray would promote 0-d scalars to shape (1,)
        self.data = arr if arr.flags.c_contiguous else np.ascontiguousarray(arr)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.tape_id: int | None = None
        self._tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return self.data.item()

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(_as_tensor(other), -1.0))

    def __rsub__(self, other):
        return add(_as_tensor(other), mul(self, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a tensor is not supported")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class _Node:
    kind: str
    parents: tuple[int | None, ...]
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None
    tensor: Tensor


@dataclass
class Tape:
    """Ordered record of operations; node ids follow creation order."""

    nodes: list[_Node] = field(default_factory=list)

    def __enter__(self) -> "Tape":
        if not hasattr(_state, "stack"):
            _state.stack = []
        _state.stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _state.stack.pop()

    def tracks(self, t: Tensor) -> bool:
        return t.requires_grad or (t._tape is self and t.tape_id is not None)

    def _register(self, t: Tensor, kind: str, parents, vjp) -> int:
        t.tape_id = len(self.nodes)
        t._tape = self
        self.nodes.append(_Node(kind, tuple(parents), vjp, t))
        return t.tape_id

    def node_id(self, t: Tensor) -> int | None:
        if t._tape is self and t.tape_id is not None:
            return t.tape_id
        if t.requires_grad:
            return self._register(t, "leaf", (), None)
        return None

    def backward(self, loss: Tensor) -> dict[int, np.ndarray]:
        if loss.data.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss._tape is not self or loss.tape_id is None:
            raise ValueError("loss is not recorded on this tape")
        grads: dict[int, np.ndarray] = {loss.tape_id: np.ones_like(loss.data)}
        leaf_grads: dict[int, np.ndarray] = {}
        for nid in range(loss.tape_id, -1, -1):
            g = grads.pop(nid, None)
            if g is None:
                continue
            node = self.nodes[nid]
            if node.vjp is None:
                leaf_grads[nid] = g
                node.tensor.grad = g
                continue
            for pid, pg in zip(node.parents, node.vjp(g)):
                if pid is None or pg is None:
                    continue
                if pid in grads:
                    grads[pid] = grads[pid] + pg
                else:
                    grads[pid] = pg
        return leaf_grads


def backward(loss: Tensor) -> dict[int, np.ndarray]:
    """Populate ``.grad`` on every leaf that ``loss`` depends on."""
    if loss._tape is None:
        raise ValueError("loss is not recorded on any tape")
    return loss._tape.backward(loss)


def _result(kind: str, data: np.ndarray, parents: Sequence[Tensor], vjp) -> Tensor:
    out = Tensor(data)
    tape = current_tape()
    if tape is not None and any(tape.tracks(p) for p in parents):
        ids = [tape.node_id(p) for p in parents]
        tape._register(out, kind, ids, vjp)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shapes(kind: str, *shapes):
    try:
        return np.broadcast_shapes(*shapes)
    except ValueError:
        raise DimensionError(f"{kind}: cannot broadcast shapes {list(shapes)}") from None


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    _broadcast_shapes("matmul", a.shape[:-2], b.shape[:-2])
    ad, bd = a.data, b.data

    def vjp(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return _result("matmul", ad @ bd, (a, b), vjp)


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shapes("add", a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return _result(
        "add", a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb))
    )


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shapes("mul", a.shape, b.shape)
    ad, bd = a.data, b.data

    def vjp(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _result("mul", ad * bd, (a, b), vjp)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise DimensionError("concat: no operands")
    ndim = tensors[0].ndim
    ax = axis % ndim
    for t in tensors[1:]:
        if t.ndim != ndim or any(
            t.shape[i] != tensors[0].shape[i] for i in range(ndim) if i != ax
        ):
            raise DimensionError(
                f"concat: shapes {[t.shape for t in tensors]} differ off axis {axis}"
            )
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def vjp(g):
        return np.split(g, bounds, axis=ax)

    return _result("concat", np.concatenate([t.data for t in tensors], axis=ax), tensors, vjp)


def softmax_rows(x: Tensor) -> Tensor:
    """Softmax over the last axis."""
    x = _as_tensor(x)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _result("softmax-rows", y, (x,), vjp)


def log_softmax(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    y = z - lse
    p = np.exp(y)

    def vjp(g):
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return _result("log-softmax", y, (x,), vjp)


def layer_norm(x: Tensor, gain: Tensor | None = None, bias: Tensor | None = None,
               eps: float = 1e-16) -> Tensor:
    """Normalize the last axis to zero mean and unit variance, then apply ``gain``/``bias``."""
    x = _as_tensor(x)
    d = x.shape[-1]
    for name, p in (("gain", gain), ("bias", bias)):
        if p is not None and p.shape != (d,):
            raise DimensionError(f"layer-norm: {name} shape {p.shape} vs feature dim {d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    gd = gain.data if gain is not None else None
    y = xhat if gd is None else xhat * gd
    if bias is not None:
        y = y + bias.data

    def vjp(g):
        gxhat = g if gd is None else g * gd
        gx = inv * (
            gxhat
            - gxhat.mean(axis=-1, keepdims=True)
            - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True)
        )
        lead = tuple(range(g.ndim - 1))
        out = [gx]
        if gain is not None:
            out.append((g * xhat).sum(axis=lead))
        if bias is not None:
            out.append(g.sum(axis=lead))
        return out

    parents = [x] + [p for p in (gain, bias) if p is not None]
    return _result("layer-norm", y, parents, vjp)


def relu(x: Tensor) -> Tensor:
    return leaky_relu(x, 0.0)


def leaky_relu(x: Tensor, negative_slope: float = 0.01) -> Tensor:
    x = _as_tensor(x)
    slope = np.where(x.data > 0, 1.0, negative_slope)
    kind = "relu" if negative_slope == 0.0 else "leaky-relu"
    return _result(kind, x.data * slope, (x,), lambda g: (g * slope,))


def embedding_lookup(ids, table: Tensor) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise DimensionError(f"embedding-lookup: table must be 2-d, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(
            f"embedding-lookup: id out of range [0, {table.shape[0]}): {ids.min()}..{ids.max()}"
        )
    shape = table.shape

    def vjp(g):
        gt = np.zeros(shape)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, shape[1]))
        return (gt,)

    return _result("embedding-lookup", table.data[ids], (table,), vjp)


def transpose(x: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    """Permute axes; the default swaps the last two."""
    x = _as_tensor(x)
    if axes is None:
        if x.ndim < 2:
            raise DimensionError(f"transpose: needs ndim >= 2, got {x.shape}")
        axes = list(range(x.ndim - 2)) + [x.ndim - 1, x.ndim - 2]
    axes = tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise DimensionError(f"transpose: axes {axes} invalid for shape {x.shape}")
    inv = tuple(np.argsort(axes))
    return _result("transpose", x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    x = _as_tensor(x)
    old = x.shape
    try:
        y = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot reshape {old} to {tuple(shape)}") from None
    return _result("reshape", y, (x,), lambda g: (g.reshape(old),))


def mask_fill(x: Tensor, mask, value: float) -> Tensor:
    """Replace entries where ``mask`` is true by ``value``."""
    x = _as_tensor(x)
    mask = np.asarray(mask, dtype=bool)
    _broadcast_shapes("mask-fill", x.shape, mask.shape)
    if np.broadcast_shapes(x.shape, mask.shape) != x.shape:
        raise DimensionError(f"mask-fill: mask {mask.shape} does not fit {x.shape}")
    keep = ~mask
    return _result("mask-fill", np.where(mask, value, x.data), (x,), lambda g: (g * keep,))


def take(x: Tensor, index) -> Tensor:
    """numpy-style indexing (basic or advanced) with scatter-add backward."""
    x = _as_tensor(x)
    if isinstance(index, Tensor):
        raise TypeError("index with integer arrays, not tensors")
    shape = x.shape

    def vjp(g):
        gx = np.zeros(shape)
        np.add.at(gx, index, g)
        return (gx,)

    return _result("take", x.data[index], (x,), vjp)


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    shape = x.shape
    y = x.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _result("sum", y, (x,), vjp)


def tmean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(tsum(x, axis=axis, keepdims=keepdims), 1.0 / float(n))


def exp(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    y = np.exp(x.data)
    return _result("exp", y, (x,), lambda g: (g * y,))


def log(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    xd = x.data
    return _result("log", np.log(xd), (x,), lambda g: (g / xd,))


class DropoutRNG:
    """Counter-based mask source: call ``k`` under seed ``s`` always yields the same mask."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self.counter = 0

    def keep_mask(self, shape: tuple[int, ...], p: float) -> np.ndarray:
        gen = np.random.Generator(np.random.Philox(key=self.seed, counter=self.counter))
        self.counter += 1
        return gen.random(shape) >= p


def dropout(x: Tensor, p: float, train: bool, rng: DropoutRNG | None = None) -> Tensor:
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout: p must satisfy 0 <= p < 1, got {p}")
    x = _as_tensor(x)
    if not train or p == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in train mode needs a DropoutRNG")
    scale = rng.keep_mask(x.shape, p) / (1.0 - p)
    return _result("dropout", x.data * scale, (x,), lambda g: (g * scale,))


_PRIMITIVES: dict[str, Callable[..., Tensor]] = {
    "matmul": matmul,
    "add": add,
    "mul": mul,
    "concat": lambda *ts, axis=0: concat(ts, axis=axis),
    "softmax-rows": softmax_rows,
    "layer-norm": layer_norm,
    "relu": relu,
    "leaky-relu": leaky_relu,
    "embedding-lookup": lambda table, ids: embedding_lookup(ids, table),
    "transpose": transpose,
    "mask-fill": mask_fill,
    "dropout": dropout,
}


def apply_primitive(kind: str, *operands, **kwargs) -> Tensor:
    """Dispatch a primitive by name, e.g. ``apply_primitive("matmul", a, b)``."""
    try:
        fn = _PRIMITIVES[kind]
    except KeyError:
        raise ValueError(f"unknown primitive {kind!r}") from None
    return fn(*operands, **kwargs)


def finite_diff_check(f: Callable[[Tensor], Tensor], x, eps: float = 1e-5) -> float:
    """Max relative error between the taped gradient of ``f`` and central differences.

    ``f`` must map a tensor to a scalar tensor deterministically.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    base = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    xt = Tensor(base.copy(), requires_grad=True)
    with Tape() as tape:
        out = f(xt)
        if not np.all(np.isfinite(out.data)):
            raise NumericError(f"f(x) is not finite: {out.data}")
        if out._tape is tape:
            tape.backward(out)
    analytic = xt.grad if xt.grad is not None else np.zeros_like(base)

    numeric = np.zeros_like(base)
    flat = base.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(Tensor(base)).data.item()
        flat[i] = orig - eps
        fm = f(Tensor(base)).data.item()
        flat[i] = orig
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise NumericError(f"f is not finite near coordinate {i}")
        numeric.reshape(-1)[i] = (fp - fm) / (2.0 * eps)
    err = np.abs(analytic - numeric) / (np.abs(analytic) + np.abs(numeric) + 1e-12)
    return float(err.max()) if err.size else 0.0
