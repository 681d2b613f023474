"""Reverse-mode automatic differentiation over dense numpy arrays.

A :class:`Node` wraps a value array, an optional gradient, and a closure that
maps the output gradient to one gradient per parent.  ``backward`` walks the
graph in reverse topological order and accumulates gradients into leaves.

Every op validates shapes before computing.  In checked mode each op result is
tested for NaN/Inf and the producing op is named in the error.
"""
from __future__ import annotations

import contextlib
import itertools
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float64


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    def __init__(self, op: str, message: str | None = None):
        self.op = op
        super().__init__(message or f"non-finite value produced by op '{op}'")


class _State(threading.local):
    def __init__(self):
        self.checked = False
        self.tape: Tape | None = None
        self.faults: set[str] = set()


_state = _State()
_ids = itertools.count()


@contextlib.contextmanager
def checked(enabled: bool = True):
    """Detect non-finite values at every op boundary inside the block."""
    prev = _state.checked
    _state.checked = enabled
    try:
        yield
    finally:
        _state.checked = prev


def set_checked(enabled: bool) -> None:
    _state.checked = enabled


@contextlib.contextmanager
def inject_fault(op: str):
    """Test hook: corrupt the backward rule of ``op`` (currently 'sigmoid')."""
    _state.faults.add(op)
    try:
        yield
    finally:
        _state.faults.discard(op)


class Node:
    __slots__ = ("value", "grad", "parents", "backward_fn", "requires_grad",
                 "op", "name", "id", "__weakref__")

    def __init__(self, value, parents: Sequence["Node"] = (), backward_fn=None,
                 op: str = "leaf", requires_grad: bool = False, name: str | None = None):
        self.value = value
        self.grad = None
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad
        self.op = op
        self.name = name
        self.id = next(_ids)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        label = self.name or self.op
        return f"Node({label}, shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Ordered record of the nodes created during one forward pass."""

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self):
        self._prev = _state.tape
        _state.tape = self
        return self

    def __exit__(self, *exc):
        _state.tape = self._prev

    def record(self, node: Node) -> None:
        self.nodes.append(node)

    def clear(self) -> None:
        self.nodes.clear()

    def dump(self) -> str:
        return "\n".join(_dump_line(n) for n in self.nodes)


def _dump_line(node: Node) -> str:
    shape = "x".join(str(d) for d in node.shape) or "scalar"
    parents = ",".join(str(p.id) for p in node.parents) or "-"
    return f"{node.id} {node.op} {shape} {parents}"


def graph_dump(root: Node) -> str:
    """Line-per-node text dump (``node_id op_name shape parent_ids``) in topological order."""
    return "\n".join(_dump_line(n) for n in _toposort(root, only_grad=False))


def parameter(value, name: str | None = None, dtype=None) -> Node:
    arr = np.array(value, dtype=dtype or DEFAULT_DTYPE)
    return Node(arr, requires_grad=True, name=name)


def constant(value, dtype=None) -> Node:
    arr = np.asarray(value, dtype=dtype or DEFAULT_DTYPE)
    return Node(arr)


def as_node(x) -> Node:
    return x if isinstance(x, Node) else constant(x)


def _make(value: np.ndarray, parents: Sequence[Node], backward_fn, op: str) -> Node:
    if _state.checked and not np.all(np.isfinite(value)):
        raise NonFiniteError(op)
    requires_grad = any(p.requires_grad for p in parents)
    if requires_grad:
        node = Node(value, parents, backward_fn, op, True)
    else:
        node = Node(value, (), None, op, False)
    tape = _state.tape
    if tape is not None:
        tape.record(node)
    return node


def _shape_error(op: str, *shapes) -> ShapeError:
    return ShapeError(f"{op}: incompatible shapes " + " and ".join(str(tuple(s)) for s in shapes))


def _same_shape(op: str, a: Node, b: Node) -> None:
    if a.shape != b.shape:
        raise _shape_error(op, a.shape, b.shape)


def _sum_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead > 0:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise

def add(a: Node, b: Node) -> Node:
    a, b = as_node(a), as_node(b)
    _same_shape("add", a, b)
    return _make(a.value + b.value, (a, b), lambda g: (g, g), "add")


def sub(a: Node, b: Node) -> Node:
    a, b = as_node(a), as_node(b)
    _same_shape("sub", a, b)
    return _make(a.value - b.value, (a, b), lambda g: (g, -g), "sub")


def mul(a: Node, b: Node) -> Node:
    a, b = as_node(a), as_node(b)
    _same_shape("mul", a, b)
    av, bv = a.value, b.value
    return _make(av * bv, (a, b), lambda g: (g * bv, g * av), "mul")


def scale(a: Node, c: float) -> Node:
    return _make(a.value * c, (a,), lambda g: (g * c,), "scale")


def add_bias(x: Node, b: Node) -> Node:
    """``x + b`` with ``b`` a vector broadcast over the last axis of ``x``."""
    if b.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise _shape_error("add_bias", x.shape, b.shape)
    lead = tuple(range(x.ndim - 1))
    return _make(x.value + b.value, (x, b), lambda g: (g, g.sum(axis=lead)), "add_bias")


def mul_const(x: Node, c: np.ndarray) -> Node:
    """Multiply by a constant array broadcastable to ``x`` (masks, dropout)."""
    c = np.asarray(c)
    try:
        out_shape = np.broadcast_shapes(x.shape, c.shape)
    except ValueError:
        raise _shape_error("mul_const", x.shape, c.shape) from None
    if out_shape != x.shape:
        raise _shape_error("mul_const", x.shape, c.shape)
    return _make(x.value * c, (x,), lambda g: (g * c,), "mul_const")


def add_const(x: Node, c: np.ndarray) -> Node:
    c = np.asarray(c)
    try:
        out_shape = np.broadcast_shapes(x.shape, c.shape)
    except ValueError:
        raise _shape_error("add_const", x.shape, c.shape) from None
    if out_shape != x.shape:
        raise _shape_error("add_const", x.shape, c.shape)
    return _make(x.value + c, (x,), lambda g: (g,), "add_const")


def blend(mask: np.ndarray, new: Node, old: Node) -> Node:
    """``mask * new + (1 - mask) * old`` for a constant 0/1 mask broadcast over ``new``."""
    _same_shape("blend", new, old)
    m = np.asarray(mask, dtype=new.value.dtype)
    if np.broadcast_shapes(new.shape, m.shape) != new.shape:
        raise _shape_error("blend", new.shape, m.shape)
    keep = 1.0 - m
    value = new.value * m + old.value * keep
    return _make(value, (new, old), lambda g: (g * m, g * keep), "blend")


def broadcast_to(x: Node, shape: Sequence[int]) -> Node:
    shape = tuple(shape)
    try:
        value = np.broadcast_to(x.value, shape)
    except ValueError:
        raise _shape_error("broadcast_to", x.shape, shape) from None
    src = x.shape
    return _make(np.array(value), (x,), lambda g: (_sum_to(g, src),), "broadcast_to")


def _stable_sigmoid(v: np.ndarray) -> np.ndarray:
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def sigmoid(a: Node) -> Node:
    s = _stable_sigmoid(a.value)
    faulty = "sigmoid" in _state.faults

    def back(g):
        d = s * (1.0 - s)
        if faulty:
            d = d * 1.5
        return (g * d,)

    return _make(s, (a,), back, "sigmoid")


def tanh(a: Node) -> Node:
    t = np.tanh(a.value)
    return _make(t, (a,), lambda g: (g * (1.0 - t * t),), "tanh")


def relu(a: Node) -> Node:
    pos = a.value > 0
    return _make(np.where(pos, a.value, 0.0), (a,), lambda g: (g * pos,), "relu")


def exp(a: Node) -> Node:
    e = np.exp(a.value)
    return _make(e, (a,), lambda g: (g * e,), "exp")


def log(a: Node) -> Node:
    v = a.value
    return _make(np.log(v), (a,), lambda g: (g / v,), "log")


def square(a: Node) -> Node:
    v = a.value
    return _make(v * v, (a,), lambda g: (2.0 * g * v,), "square")


# ---------------------------------------------------------------------------
# linear algebra

def matmul(a: Node, b: Node) -> Node:
    """Matrix product; ``a`` may carry leading batch axes when ``b`` is 2-D."""
    a, b = as_node(a), as_node(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise _shape_error("matmul", a.shape, b.shape)
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise _shape_error("matmul", a.shape, b.shape)
    av, bv = a.value, b.value

    def back(g):
        ga = g @ np.swapaxes(bv, -1, -2)
        gb = np.swapaxes(av, -1, -2) @ g
        return ga, _sum_to(gb, bv.shape)

    return _make(av @ bv, (a, b), back, "matmul")


def einsum(spec: str, *operands: Node) -> Node:
    """Differentiable ``np.einsum`` for specs without repeated or dropped-only indices."""
    operands = tuple(as_node(o) for o in operands)
    inputs, output = spec.replace(" ", "").split("->")
    subs = inputs.split(",")
    if len(subs) != len(operands):
        raise ValueError(f"einsum: {len(subs)} subscripts for {len(operands)} operands")
    sizes: dict[str, int] = {}
    for s, o in zip(subs, operands):
        if len(s) != o.ndim or len(set(s)) != len(s):
            raise _shape_error(f"einsum[{spec}]", *(op.shape for op in operands))
        for ch, d in zip(s, o.shape):
            if sizes.setdefault(ch, d) != d:
                raise _shape_error(f"einsum[{spec}]", *(op.shape for op in operands))
    for k, s in enumerate(subs):
        others = set(output).union(*(subs[j] for j in range(len(subs)) if j != k))
        if not set(s) <= others:
            raise ValueError(f"einsum: unsupported spec {spec!r} for differentiation")
    values = [o.value for o in operands]

    def back(g):
        grads = []
        for k, s in enumerate(subs):
            rest = [subs[j] for j in range(len(subs)) if j != k]
            rest_v = [values[j] for j in range(len(values)) if j != k]
            grads.append(np.einsum(",".join([output] + rest) + "->" + s, g, *rest_v))
        return tuple(grads)

    return _make(np.einsum(spec, *values), operands, back, "einsum")


# ---------------------------------------------------------------------------
# structural

def concat(nodes: Sequence[Node], axis: int = -1) -> Node:
    nodes = [as_node(n) for n in nodes]
    if not nodes:
        raise ValueError("concat: no inputs")
    ndim = nodes[0].ndim
    ax = axis % ndim
    for n in nodes[1:]:
        if n.ndim != ndim or any(n.shape[i] != nodes[0].shape[i] for i in range(ndim) if i != ax):
            raise _shape_error("concat", *(m.shape for m in nodes))
    sizes = [n.shape[ax] for n in nodes]
    cuts = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, cuts, axis=ax))

    return _make(np.concatenate([n.value for n in nodes], axis=ax), nodes, back, "concat")


def slice_axis(x: Node, start: int, stop: int, axis: int = -1) -> Node:
    ax = axis % x.ndim
    if not 0 <= start < stop <= x.shape[ax]:
        raise ShapeError(f"slice: range [{start}, {stop}) outside axis of size {x.shape[ax]}")
    idx = [slice(None)] * x.ndim
    idx[ax] = slice(start, stop)
    idx = tuple(idx)
    src_shape, dtype = x.shape, x.value.dtype

    def back(g):
        out = np.zeros(src_shape, dtype=dtype)
        out[idx] = g
        return (out,)

    return _make(x.value[idx], (x,), back, "slice")


def take(x: Node, indices, axis: int = 0) -> Node:
    """Gather along ``axis``; repeated indices accumulate in the backward pass."""
    indices = np.asarray(indices, dtype=np.int64)
    ax = axis % x.ndim
    n = x.shape[ax]
    if indices.size and (indices.min() < -n or indices.max() >= n):
        raise IndexError(f"take: index out of range for axis of size {n}")
    src_shape, dtype = x.shape, x.value.dtype

    def back(g):
        out = np.zeros(src_shape, dtype=dtype)
        moved = np.moveaxis(out, ax, 0)
        gm = np.moveaxis(g, list(range(ax, ax + indices.ndim)), list(range(indices.ndim)))
        np.add.at(moved, indices, gm)
        return (out,)

    return _make(np.take(x.value, indices, axis=ax), (x,), back, "take")


def embed(table: Node, ids, pad_index: int | None = 0) -> Node:
    """Row lookup ``table[ids]``; ``pad_index`` positions read as zeros and send no gradient."""
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise _shape_error("embed", table.shape, ids.shape)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"embed: id out of range for vocabulary of size {table.shape[0]}")
    shape, dtype = table.shape, table.value.dtype

    def back(g):
        out = np.zeros(shape, dtype=dtype)
        np.add.at(out, ids.reshape(-1), g.reshape(-1, shape[1]))
        if pad_index is not None:
            out[pad_index] = 0.0
        return (out,)

    value = table.value[ids]
    if pad_index is not None:
        value = np.where((ids == pad_index)[..., None], 0.0, value).astype(dtype)
    return _make(value, (table,), back, "embed")


def reshape(x: Node, shape: Sequence[int]) -> Node:
    src = x.shape
    try:
        value = x.value.reshape(shape)
    except ValueError:
        raise _shape_error("reshape", src, tuple(shape)) from None
    return _make(value, (x,), lambda g: (g.reshape(src),), "reshape")


def transpose(x: Node, axes: Sequence[int] | None = None) -> Node:
    axes = tuple(range(x.ndim))[::-1] if axes is None else tuple(axes)
    if sorted(a % x.ndim for a in axes) != list(range(x.ndim)):
        raise ShapeError(f"transpose: bad axes {axes} for shape {x.shape}")
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(x.value, axes), (x,), lambda g: (np.transpose(g, inv),), "transpose")


def stack(nodes: Sequence[Node], axis: int = 0) -> Node:
    nodes = [as_node(n) for n in nodes]
    for n in nodes[1:]:
        if n.shape != nodes[0].shape:
            raise _shape_error("stack", *(m.shape for m in nodes))
    ax = axis % (nodes[0].ndim + 1)

    def back(g):
        return tuple(np.take(g, i, axis=ax) for i in range(len(nodes)))

    return _make(np.stack([n.value for n in nodes], axis=ax), nodes, back, "stack")


# ---------------------------------------------------------------------------
# reductions

def sum(x: Node, axis: int | None = None) -> Node:  # noqa: A001 - mirrors numpy
    shape = x.shape
    if axis is None:
        return _make(np.asarray(x.value.sum()), (x,),
                     lambda g: (np.broadcast_to(g, shape).copy(),), "sum")
    ax = axis % x.ndim
    return _make(x.value.sum(axis=ax), (x,),
                 lambda g: (np.broadcast_to(np.expand_dims(g, ax), shape).copy(),), "sum")


def mean(x: Node, axis: int | None = None) -> Node:
    count = x.value.size if axis is None else x.shape[axis % x.ndim]
    return scale(sum(x, axis), 1.0 / count)


def max(x: Node, axis: int = -1) -> Node:  # noqa: A001 - mirrors numpy
    """Max over ``axis``; gradient goes to the first maximal index."""
    ax = axis % x.ndim
    arg = np.argmax(x.value, axis=ax)
    value = np.take_along_axis(x.value, np.expand_dims(arg, ax), axis=ax).squeeze(ax)
    shape, dtype = x.shape, x.value.dtype

    def back(g):
        out = np.zeros(shape, dtype=dtype)
        np.put_along_axis(out, np.expand_dims(arg, ax), np.expand_dims(g, ax), axis=ax)
        return (out,)

    return _make(value, (x,), back, "max")


def softmax(x: Node, axis: int = -1, mask: np.ndarray | None = None) -> Node:
    """Softmax along ``axis``; masked-out entries get probability exactly 0."""
    ax = axis % x.ndim
    v = x.value
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), v.shape)
        v = np.where(mask, v, -np.inf)
    shifted = v - np.max(v, axis=ax, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=ax, keepdims=True)

    def back(g):
        return (p * (g - (g * p).sum(axis=ax, keepdims=True)),)

    return _make(p, (x,), back, "softmax")


def log_softmax(x: Node, axis: int = -1) -> Node:
    ax = axis % x.ndim
    shifted = x.value - np.max(x.value, axis=ax, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=ax, keepdims=True))
    out = shifted - lse
    p = np.exp(out)
    return _make(out, (x,), lambda g: (g - p * g.sum(axis=ax, keepdims=True),), "log_softmax")


def softmax_cross_entropy(logits: Node, gold, mask=None) -> Node:
    """Mean negative log-likelihood of ``gold`` over unmasked rows of ``logits`` [n, K]."""
    if logits.ndim != 2:
        raise ShapeError(f"softmax_cross_entropy: expected [n, K] logits, got {logits.shape}")
    n, k = logits.shape
    gold = np.asarray(gold, dtype=np.int64).reshape(-1)
    if gold.shape[0] != n:
        raise _shape_error("softmax_cross_entropy", logits.shape, gold.shape)
    mask = np.ones(n, dtype=bool) if mask is None else np.asarray(mask, dtype=bool).reshape(-1)
    if mask.shape[0] != n:
        raise _shape_error("softmax_cross_entropy", logits.shape, mask.shape)
    count = int(mask.sum())
    if count == 0:
        raise ValueError("softmax_cross_entropy: every position is masked")
    g_used = gold[mask]
    if g_used.min() < 0 or g_used.max() >= k:
        raise IndexError(f"softmax_cross_entropy: gold index outside [0, {k})")
    safe_gold = np.where(mask, gold, 0)
    v = logits.value
    shifted = v - v.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    z = e.sum(axis=1, keepdims=True)
    logp = shifted - np.log(z)
    rows = np.arange(n)
    nll = -logp[rows, safe_gold]
    loss = nll[mask].sum() / count
    p = e / z
    w = mask.astype(v.dtype)[:, None] / count

    def back(g):
        d = p.copy()
        d[rows, safe_gold] -= 1.0
        return (g * d * w,)

    return _make(np.asarray(loss, dtype=v.dtype), (logits,), back, "softmax_cross_entropy")


# ---------------------------------------------------------------------------
# backward

def _toposort(root: Node, only_grad: bool = True) -> list[Node]:
    order: list[Node] = []
    seen: set[int] = set()
    stack_: list[tuple[Node, bool]] = [(root, False)]
    while stack_:
        node, done = stack_.pop()
        if done:
            order.append(node)
            continue
        if node.id in seen:
            continue
        seen.add(node.id)
        stack_.append((node, True))
        for p in node.parents:
            if p.id not in seen and (p.requires_grad or not only_grad):
                stack_.append((p, False))
    return order


def backward(loss: Node) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf with requires_grad."""
    if loss.value.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {loss.id: np.ones_like(loss.value)}
    for node in reversed(_toposort(loss)):
        g = grads.pop(node.id, None)
        if g is None:
            continue
        if not node.parents:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            if pg.shape != parent.shape:
                pg = _sum_to(pg, parent.shape)
            if _state.checked and not np.all(np.isfinite(pg)):
                raise NonFiniteError(node.op, f"non-finite gradient from the backward rule of op '{node.op}'")
            prev = grads.get(parent.id)
            grads[parent.id] = pg if prev is None else prev + pg


def zero_grad(params: Iterable[Node]) -> None:
    for p in params:
        p.grad = None


# ---------------------------------------------------------------------------
# verification oracles

def finite_difference_grad(f: Callable[[np.ndarray], float], at, epsilon: float = 1e-5) -> np.ndarray:
    """Central-difference estimate of the gradient of scalar ``f`` at ``at``."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    x = np.array(at, dtype=np.float64)
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + epsilon
        fp = float(f(x))
        flat[i] = orig - epsilon
        fm = float(f(x))
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * epsilon)
    return grad


def relative_error(a, b, floor: float = 1e-8) -> np.ndarray:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def gradcheck(loss_fn: Callable[[], Node], params: dict[str, Node], epsilon: float = 1e-5,
              max_coords: int | None = None, rng: np.random.Generator | None = None,
              oracle_dtype=None) -> dict[str, float]:
    """Max relative error per parameter between autodiff and central differences.

    ``loss_fn`` rebuilds the graph from the current parameter values.  With
    ``max_coords`` set, each tensor is checked on that many coordinates: the
    largest-gradient ones plus a random sample.

    The analytic gradient is always computed at the parameters' own dtype.
    ``oracle_dtype`` (e.g. ``np.longdouble``) evaluates the finite-difference
    side in higher precision, which removes round-off noise of order
    ``ulp(loss) / epsilon`` from the reference for coordinates with tiny
    gradients.
    """
    for p in params.values():
        p.grad = None
    backward(loss_fn())
    analytic = {k: (np.zeros_like(p.value) if p.grad is None else p.grad.copy()) for k, p in params.items()}
    for p in params.values():
        p.grad = None
    saved = {k: p.value for k, p in params.items()}
    if oracle_dtype is not None:
        for p in params.values():
            p.value = p.value.astype(oracle_dtype)
    errors: dict[str, float] = {}
    try:
        for name, p in params.items():
            flat, aflat = p.value.reshape(-1), analytic[name].reshape(-1)
            coords = np.arange(flat.size)
            if max_coords is not None and flat.size > max_coords:
                top = np.argsort(-np.abs(aflat), kind="stable")[: max_coords // 2]
                r = rng if rng is not None else np.random.default_rng(0)
                rest = r.choice(np.setdiff1d(coords, top), size=max_coords - top.size, replace=False)
                coords = np.concatenate([top, rest])
            worst = 0.0
            for i in coords:
                orig = flat[i]
                flat[i] = orig + epsilon
                fp = loss_fn().value
                flat[i] = orig - epsilon
                fm = loss_fn().value
                flat[i] = orig
                numeric = float((fp - fm) / (2 * flat.dtype.type(epsilon)))
                worst = np.maximum(worst, float(relative_error(aflat[i], numeric)))
            errors[name] = float(worst)
    finally:
        for k, p in params.items():
            p.value = saved[k]
    return errors
