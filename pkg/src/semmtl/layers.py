"""Neural layers shared by every task model: embeddings, LSTMs, dense layers,
dropout, initialisation, the Adam optimiser, and checkpoint I/O."""
from __future__ import annotations

import json
import math
import struct
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Node, ShapeError


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# parameter containers

class Module:
    """Walks attributes to collect named parameters in definition order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Node]]:
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            yield from _walk(value, f"{prefix}{key}")

    def parameters(self) -> dict[str, Node]:
        return dict(self.named_parameters())

    def num_parameters(self) -> int:
        return int(np.sum([p.value.size for p in self.parameters().values()]))


def _walk(value, name: str):
    if isinstance(value, Node):
        if value.requires_grad:
            yield name, value
    elif isinstance(value, Module):
        yield from value.named_parameters(name + ".")
    elif isinstance(value, dict):
        for k, v in value.items():
            yield from _walk(v, f"{name}.{k}")
    elif isinstance(value, (list, tuple)):
        for i, v in enumerate(value):
            yield from _walk(v, f"{name}.{i}")


# ---------------------------------------------------------------------------
# initialisation

def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, dtype=None) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype or ad.DEFAULT_DTYPE)


def orthogonal(rng: np.random.Generator, rows: int, cols: int, dtype=None) -> np.ndarray:
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return q[:rows, :cols].astype(dtype or ad.DEFAULT_DTYPE)


# ---------------------------------------------------------------------------
# layers

class Embedding(Module):
    PAD = 0
    UNK = 1

    def __init__(self, vocab_size: int, dim: int, rng: np.random.Generator, std: float = 0.1):
        table = rng.normal(0.0, std, size=(vocab_size, dim))
        table[self.PAD] = 0.0
        self.table = ad.parameter(table, name="embedding")
        self.vocab_size = vocab_size
        self.dim = dim

    def __call__(self, ids) -> Node:
        ids = np.asarray(ids)
        if ids.size and ids.max() >= self.vocab_size:
            raise IndexError(f"lookup index {ids.max()} >= vocab_size {self.vocab_size}")
        return ad.embed(self.table, ids, pad_index=self.PAD)

    def load_pretrained(self, path: str | Path, vocab) -> int:
        """Copy vectors from a plain-text ``word v1 v2 ...`` file; returns rows filled."""
        filled = 0
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                parts = line.rstrip().split(" ")
                if len(parts) != self.dim + 1:
                    continue
                idx = vocab.lookup(parts[0], default=None)
                if idx is None or idx == self.PAD:
                    continue
                self.table.value[idx] = np.asarray(parts[1:], dtype=self.table.value.dtype)
                filled += 1
        return filled


class Dense(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, activation: str | None = None):
        self.W = ad.parameter(glorot_uniform(rng, in_dim, out_dim))
        self.b = ad.parameter(np.zeros(out_dim))
        self.activation = activation
        self.in_dim, self.out_dim = in_dim, out_dim

    def __call__(self, x: Node) -> Node:
        if x.shape[-1] != self.in_dim:
            raise ShapeError(f"Dense expects last dim {self.in_dim}, got {x.shape}")
        y = ad.add_bias(ad.matmul(x, self.W), self.b)
        return _activate(y, self.activation)


def _activate(y: Node, activation: str | None) -> Node:
    if activation is None:
        return y
    if activation == "relu":
        return ad.relu(y)
    if activation == "sigmoid":
        return ad.sigmoid(y)
    if activation == "tanh":
        return ad.tanh(y)
    raise ConfigError(f"unknown activation {activation!r}")


class LstmCell(Module):
    """Gate order in the fused matrices: input, forget, output, candidate."""

    def __init__(self, input_dim: int, hidden_dim: int, rng: np.random.Generator, orthogonal_init: bool = False):
        h = hidden_dim
        self.W = ad.parameter(np.concatenate([glorot_uniform(rng, input_dim, h) for _ in range(4)], axis=1))
        if orthogonal_init:
            U = np.concatenate([orthogonal(rng, h, h) for _ in range(4)], axis=1)
        else:
            U = np.concatenate([glorot_uniform(rng, h, h) for _ in range(4)], axis=1)
        self.U = ad.parameter(U)
        b = np.zeros(4 * h)
        b[h:2 * h] = 1.0
        self.b = ad.parameter(b)
        self.input_dim, self.hidden_dim = input_dim, hidden_dim


def _cell_update(cell: LstmCell, xw: Node, h_prev: Node, c_prev: Node) -> tuple[Node, Node]:
    h = cell.hidden_dim
    z = ad.add(xw, ad.matmul(h_prev, cell.U))
    gates = ad.sigmoid(ad.slice_axis(z, 0, 3 * h))
    i = ad.slice_axis(gates, 0, h)
    f = ad.slice_axis(gates, h, 2 * h)
    o = ad.slice_axis(gates, 2 * h, 3 * h)
    g = ad.tanh(ad.slice_axis(z, 3 * h, 4 * h))
    c = ad.add(ad.mul(f, c_prev), ad.mul(i, g))
    return ad.mul(o, ad.tanh(c)), c


def lstm_step(cell: LstmCell, x: Node, h_prev: Node, c_prev: Node) -> tuple[Node, Node]:
    if x.shape[-1] != cell.input_dim:
        raise ShapeError(f"lstm_step: input dim {x.shape[-1]} != cell input_dim {cell.input_dim}")
    if h_prev.shape[-1] != cell.hidden_dim or c_prev.shape != h_prev.shape:
        raise ShapeError(f"lstm_step: state shapes {h_prev.shape}, {c_prev.shape} "
                         f"do not match hidden_dim {cell.hidden_dim}")
    xw = ad.add_bias(ad.matmul(x, cell.W), cell.b)
    return _cell_update(cell, xw, h_prev, c_prev)


def run_lstm(cell: LstmCell, x: Node, mask: np.ndarray | None = None, reverse: bool = False,
             recurrent_mask: np.ndarray | None = None) -> list[Node]:
    """Run ``cell`` over ``x`` [B, T, d]; returns T states of shape [B, hidden].

    Padded steps (mask 0) carry the previous state forward, so with trailing
    padding the reverse pass starts from a zero state at each sequence's end.
    """
    if x.ndim != 3 or x.shape[-1] != cell.input_dim:
        raise ShapeError(f"run_lstm: expected [B, T, {cell.input_dim}] input, got {x.shape}")
    B, T, _ = x.shape
    xw = ad.add_bias(ad.matmul(x, cell.W), cell.b)
    h = ad.constant(np.zeros((B, cell.hidden_dim), dtype=x.value.dtype))
    c = h
    full = mask is None or bool(np.all(mask))
    outs: list[Node | None] = [None] * T
    steps = range(T - 1, -1, -1) if reverse else range(T)
    for t in steps:
        h_in = h if recurrent_mask is None else ad.mul_const(h, recurrent_mask)
        h_new, c_new = _cell_update(cell, ad.take(xw, t, axis=1), h_in, c)
        if full:
            h, c = h_new, c_new
        else:
            m = mask[:, t:t + 1]
            h, c = ad.blend(m, h_new, h), ad.blend(m, c_new, c)
        outs[t] = h
    return outs


def bilstm(cell_fwd: LstmCell, cell_bwd: LstmCell, sequence: Sequence[Node]) -> list[Node]:
    """Per-position ``[h_fwd(t); h_bwd(t)]`` over a list of input vectors."""
    if not sequence:
        raise ValueError("bilstm: empty sequence")
    x = ad.stack([s if s.ndim == 2 else ad.reshape(s, (1, -1)) for s in sequence], axis=1)
    fwd = run_lstm(cell_fwd, x)
    bwd = run_lstm(cell_bwd, x, reverse=True)
    outs = [ad.concat([f, b], axis=-1) for f, b in zip(fwd, bwd)]
    if sequence[0].ndim == 1:
        outs = [ad.reshape(o, (-1,)) for o in outs]
    return outs


class BiLSTM(Module):
    """One bidirectional layer over padded batches, with input and variational recurrent dropout."""

    def __init__(self, input_dim: int, hidden_dim: int, rng: np.random.Generator,
                 dropout: float = 0.0, recurrent_dropout: float = 0.0, orthogonal_init: bool = False):
        _check_rate(dropout)
        _check_rate(recurrent_dropout)
        self.fwd = LstmCell(input_dim, hidden_dim, rng, orthogonal_init)
        self.bwd = LstmCell(input_dim, hidden_dim, rng, orthogonal_init)
        self.input_dim, self.hidden_dim = input_dim, hidden_dim
        self.out_dim = 2 * hidden_dim
        self.dropout, self.recurrent_dropout = dropout, recurrent_dropout

    def __call__(self, x: Node, mask: np.ndarray | None = None, training: bool = False,
                 rng: np.random.Generator | None = None) -> Node:
        x = dropout(x, self.dropout, training, rng)
        B = x.shape[0]
        rec_f = rec_b = None
        if training and self.recurrent_dropout > 0:
            rec_f = _dropout_mask(rng, (B, self.hidden_dim), self.recurrent_dropout, x.value.dtype)
            rec_b = _dropout_mask(rng, (B, self.hidden_dim), self.recurrent_dropout, x.value.dtype)
        fwd = run_lstm(self.fwd, x, mask, reverse=False, recurrent_mask=rec_f)
        bwd = run_lstm(self.bwd, x, mask, reverse=True, recurrent_mask=rec_b)
        return ad.concat([ad.stack(fwd, axis=1), ad.stack(bwd, axis=1)], axis=-1)


class SigmoidLayer(Module):
    """Dense layer with a sigmoid activation, ``sigma(x W + b)``."""

    def __init__(self, input_dim: int, out_dim: int, rng: np.random.Generator,
                 dropout: float = 0.0, bias: bool = True, **_):
        self.dense = Dense(input_dim, out_dim, rng, activation="sigmoid")
        if not bias:
            self.dense.b.requires_grad = False
        self.input_dim, self.out_dim = input_dim, out_dim
        self.dropout = dropout

    def __call__(self, x: Node, mask=None, training: bool = False, rng=None) -> Node:
        return self.dense(dropout(x, self.dropout, training, rng))


# ---------------------------------------------------------------------------
# dropout

def _check_rate(rate: float) -> None:
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")


def _dropout_mask(rng: np.random.Generator, shape, rate: float, dtype) -> np.ndarray:
    keep = rng.random(shape) >= rate
    return keep.astype(dtype) / (1.0 - rate)


def dropout(x: Node, rate: float, training: bool, rng: np.random.Generator | None = None) -> Node:
    """Inverted dropout; identity when not training or ``rate == 0``."""
    _check_rate(rate)
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    return ad.mul_const(x, _dropout_mask(rng, x.shape, rate, x.value.dtype))


# ---------------------------------------------------------------------------
# optimisation

class Adam:
    """Adam with bias correction.

    A parameter whose gradient is entirely zero (or absent) this step keeps
    its value; its moments still decay.
    """

    def __init__(self, params: dict[str, Node], learning_rate: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.learning_rate, self.beta1, self.beta2, self.eps = learning_rate, beta1, beta2, eps
        self.m = {k: np.zeros_like(p.value) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.value) for k, p in params.items()}
        self.step_count = 0

    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        c1, c2 = 1.0 - b1 ** t, 1.0 - b2 ** t
        for k, p in self.params.items():
            g = p.grad
            m, v = self.m[k], self.v[k]
            if g is None or not np.any(g):
                m *= b1
                v *= b2
                continue
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.value -= self.learning_rate * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


def adam_step(state: Adam, params: dict[str, Node] | None = None, grads: dict[str, np.ndarray] | None = None) -> None:
    """Functional form: optionally install ``grads`` on ``params`` then step."""
    if grads is not None:
        target = params if params is not None else state.params
        for k, g in grads.items():
            target[k].grad = g
    state.step()


def clip_grad_norm(params: Iterable[Node], max_norm: float) -> float:
    grads = [p.grad for p in params if p.grad is not None]
    total = math.sqrt(float(np.sum([np.sum(g * g) for g in grads]))) if grads else 0.0
    if total > max_norm > 0:
        factor = max_norm / (total + 1e-12)
        for g in grads:
            g *= factor
    return total


# ---------------------------------------------------------------------------
# checkpoints

_MAGIC = b"SEMMTLCK"


def save_checkpoint(path: str | Path, params: dict[str, Node | np.ndarray]) -> None:
    """Flat binary container: magic, header length, JSON index, raw little-endian data."""
    index: dict[str, dict] = {}
    blobs: list[bytes] = []
    offset = 0
    for name, p in params.items():
        arr = p.value if isinstance(p, Node) else np.asarray(p)
        dt = arr.dtype.newbyteorder("<")
        raw = np.ascontiguousarray(arr, dtype=dt).tobytes()
        index[name] = {"shape": list(arr.shape), "dtype": dt.str, "offset": offset, "nbytes": len(raw)}
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps(index, indent=1).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for raw in blobs:
            fh.write(raw)


def read_checkpoint_index(path: str | Path) -> dict[str, dict]:
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (n,) = struct.unpack("<Q", fh.read(8))
        return json.loads(fh.read(n).decode("utf-8"))


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if data[: len(_MAGIC)] != _MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    (n,) = struct.unpack("<Q", data[len(_MAGIC): len(_MAGIC) + 8])
    start = len(_MAGIC) + 8
    index = json.loads(data[start: start + n].decode("utf-8"))
    base = start + n
    out = {}
    for name, meta in index.items():
        lo = base + meta["offset"]
        arr = np.frombuffer(data[lo: lo + meta["nbytes"]], dtype=np.dtype(meta["dtype"]))
        out[name] = arr.reshape(meta["shape"]).astype(np.dtype(meta["dtype"]).newbyteorder("="))
    return out


def restore(module: Module, state: dict[str, np.ndarray], strict: bool = True) -> list[str]:
    """Copy arrays from ``state`` into ``module``'s parameters; returns names restored."""
    params = module.parameters()
    missing = [k for k in params if k not in state]
    if strict and missing:
        raise KeyError(f"checkpoint lacks parameters: {missing[:5]}")
    done = []
    for k, p in params.items():
        if k in state:
            if state[k].shape != p.shape:
                raise ShapeError(f"checkpoint shape {state[k].shape} != parameter {k} shape {p.shape}")
            p.value = state[k].astype(p.value.dtype, copy=True)
            done.append(k)
    return done
