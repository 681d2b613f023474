"""Parameter-sharing topologies for a main task and an auxiliary task.

``FSN``  every hidden layer is one object used by both tasks.
``PSN``  lower layers are shared, upper layers are private per task.
``LWS``  each task owns its layers; at *split* layers the output is divided
         into a shared and a private subspace and the shared subspaces gate
         each other through learned sigmoidal units.
``ST``   single task: the main stack only, no auxiliary branch.

A topology is a stack of layers, each with a mode (``shared``, ``private`` or
``split``).  The auxiliary task stops at ``aux_depth``; deeper layers serve the
main task alone.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Node, ShapeError
from .layers import BiLSTM, ConfigError, Dense, Module, SigmoidLayer

KINDS = ("ST", "FSN", "PSN", "LWS")
MAIN, AUX = "main", "aux"


@dataclass(frozen=True)
class LayerSpec:
    mode: str
    out_dim: int


def lws_gate(h_main_shared: Node, h_aux_shared: Node, W_a2m: Node, W_m2a: Node) -> tuple[Node, Node]:
    """Gate each task's shared subspace by the other's, both from pre-gate values."""
    if (W_a2m.shape != (h_aux_shared.shape[-1], h_main_shared.shape[-1])
            or W_m2a.shape != (h_main_shared.shape[-1], h_aux_shared.shape[-1])
            or h_main_shared.shape[:-1] != h_aux_shared.shape[:-1]):
        raise ShapeError(f"lws_gate: shared states {h_main_shared.shape}, {h_aux_shared.shape} "
                         f"vs gates {W_a2m.shape}, {W_m2a.shape}")
    gate_main = ad.sigmoid(ad.matmul(_as_matrix(h_aux_shared), W_a2m))
    gate_aux = ad.sigmoid(ad.matmul(_as_matrix(h_main_shared), W_m2a))
    main = ad.mul(h_main_shared, _like(gate_main, h_main_shared))
    aux = ad.mul(h_aux_shared, _like(gate_aux, h_aux_shared))
    return main, aux


def _as_matrix(x: Node) -> Node:
    return ad.reshape(x, (1, -1)) if x.ndim == 1 else x


def _like(g: Node, ref: Node) -> Node:
    return ad.reshape(g, ref.shape) if g.shape != ref.shape else g


class SharingTopology(Module):
    def __init__(self, kind: str, input_dim: int, specs: Sequence[LayerSpec], tasks: Sequence[str],
                 aux_depth: int, subspace_split: tuple[int, int] | None, layer_kind: str,
                 extra_inputs: dict[int, int], rng: np.random.Generator, dropout: float = 0.0,
                 recurrent_dropout: float = 0.0, gate_init: str = "zeros"):
        self.kind = kind
        self._specs = tuple(specs)
        self._tasks = tuple(tasks)
        self._aux_depth = aux_depth if AUX in tasks else 0
        self._split = subspace_split
        self._layer_kind = layer_kind
        self.input_dim = input_dim
        self.shared: dict[str, Module] = {}
        self.private: dict[str, dict[str, Module]] = {t: {} for t in self._tasks}
        self.gate: dict[str, dict[str, Node]] = {}
        in_dims = {t: input_dim for t in self._tasks}
        for l, spec in enumerate(self._specs):
            active = self.active_tasks(l)
            for t in active:
                if l in extra_inputs and l > 0 and self._carries_main(l - 1, t):
                    in_dims[t] += extra_inputs[l]
            if spec.mode == "shared":
                self.shared[str(l)] = self._layer(in_dims[active[0]], spec.out_dim, rng, dropout, recurrent_dropout)
            else:
                for t in active:
                    self.private[t][str(l)] = self._layer(in_dims[t], spec.out_dim, rng, dropout, recurrent_dropout)
            if spec.mode == "split":
                s_main, _ = self.split_sizes(MAIN)
                s_aux, _ = self.split_sizes(AUX)
                if gate_init == "zeros":
                    a2m, m2a = np.zeros((s_aux, s_main)), np.zeros((s_main, s_aux))
                else:
                    a2m = rng.normal(0, 0.1, (s_aux, s_main))
                    m2a = rng.normal(0, 0.1, (s_main, s_aux))
                self.gate[str(l)] = {"a2m": ad.parameter(a2m), "m2a": ad.parameter(m2a)}
            for t in active:
                in_dims[t] = spec.out_dim

    # -- structure ---------------------------------------------------------

    @property
    def specs(self) -> tuple[LayerSpec, ...]:
        return self._specs

    @property
    def tasks(self) -> tuple[str, ...]:
        return self._tasks

    @property
    def depth(self) -> int:
        return len(self._specs)

    @property
    def aux_depth(self) -> int:
        return self._aux_depth

    @property
    def out_dim(self) -> int:
        return self._specs[-1].out_dim

    def task_depth(self, task: str) -> int:
        return self.depth if task == MAIN else self._aux_depth

    def active_tasks(self, layer: int) -> tuple[str, ...]:
        return tuple(t for t in self._tasks if self.task_depth(t) > layer)

    def _carries_main(self, layer: int, task: str) -> bool:
        # a shared stream carries the main task's representation for every task on it
        return task == MAIN or all(s.mode == "shared" for s in self._specs[: layer + 1])

    def split_sizes(self, task: str) -> tuple[int, int]:
        width = self._specs[0].out_dim
        if self._split is None:
            return width // 2, width - width // 2
        return self._split

    def _layer(self, in_dim, out_dim, rng, dropout, recurrent_dropout):
        if self._layer_kind == "bilstm":
            return BiLSTM(in_dim, out_dim // 2, rng, dropout, recurrent_dropout)
        return SigmoidLayer(in_dim, out_dim, rng, dropout)

    def layer_for(self, layer: int, task: str) -> Module:
        spec = self._specs[layer]
        return self.shared[str(layer)] if spec.mode == "shared" else self.private[task][str(layer)]

    def _shared_columns(self, width: int, shared_dim: int) -> tuple[np.ndarray, np.ndarray]:
        """Shared subspace indices; for a bi-LSTM output both directions contribute equally."""
        if self._layer_kind == "bilstm":
            half, s = width // 2, shared_dim // 2
            shared = np.r_[0:s, half:half + s]
        else:
            shared = np.arange(shared_dim)
        private = np.setdiff1d(np.arange(width), shared)
        return shared, private

    # -- forward -------------------------------------------------------------

    def forward(self, x: Node, mask: np.ndarray | None = None, *, training: bool = False,
                rng: np.random.Generator | None = None,
                transition: Callable[[int, Node], Node] | None = None) -> dict[str, list[Node]]:
        """Run the stack; returns each task's per-layer outputs (post-gating for split layers).

        ``transition(layer, h)`` rewrites the main stream between layers (used by
        the parser to append UPOS predictions); it is applied once to a stream
        shared by both tasks.
        """
        cur = {t: x for t in self._tasks}
        outs: dict[str, list[Node]] = {t: [] for t in self._tasks}
        for l, spec in enumerate(self._specs):
            active = self.active_tasks(l)
            if spec.mode == "shared":
                h = self.shared[str(l)](cur[active[0]], mask, training, rng)
                new = {t: h for t in active}
            else:
                new = {t: self.private[t][str(l)](cur[t], mask, training, rng) for t in active}
            if spec.mode == "split":
                new[MAIN], new[AUX] = self._gate_layer(l, new[MAIN], new[AUX])
            for t in active:
                outs[t].append(new[t])
            if transition is not None and l + 1 < self.depth:
                done: dict[int, Node] = {}
                for t in active:
                    if self._carries_main(l, t) and self.task_depth(t) > l + 1:
                        key = new[t].id
                        if key not in done:
                            done[key] = transition(l, new[t])
                        new[t] = done[key]
            cur.update(new)
        return outs

    def _gate_layer(self, l: int, h_main: Node, h_aux: Node) -> tuple[Node, Node]:
        width = h_main.shape[-1]
        s_main, _ = self.split_sizes(MAIN)
        s_aux, _ = self.split_sizes(AUX)
        sm, pm = self._shared_columns(width, s_main)
        sa, pa = self._shared_columns(width, s_aux)
        g = self.gate[str(l)]
        gm, ga = lws_gate(ad.take(h_main, sm, axis=-1), ad.take(h_aux, sa, axis=-1), g["a2m"], g["m2a"])
        order_m = np.argsort(np.concatenate([sm, pm]))
        order_a = np.argsort(np.concatenate([sa, pa]))
        main = ad.take(ad.concat([gm, ad.take(h_main, pm, axis=-1)], axis=-1), order_m, axis=-1)
        aux = ad.take(ad.concat([ga, ad.take(h_aux, pa, axis=-1)], axis=-1), order_a, axis=-1)
        return main, aux

    # -- reporting -------------------------------------------------------------

    def bucket_of(self, name: str) -> str:
        if name.startswith("shared."):
            return "shared"
        if name.startswith("private.main."):
            return "private-main"
        if name.startswith("private.aux."):
            return "private-aux"
        if name.startswith("gate."):
            return "gates"
        return "heads"

    def report(self, heads: dict[str, Node] | None = None) -> dict[str, int]:
        counts = {"shared": 0, "private-main": 0, "private-aux": 0, "gates": 0, "heads": 0}
        for name, p in self.named_parameters():
            counts[self.bucket_of(name)] += p.value.size
        for p in (heads or {}).values():
            counts["heads"] += p.value.size
        return counts


def format_report(counts: dict[str, int], kind: str | None = None) -> str:
    """Human-readable table followed by ``key=value`` lines."""
    total = int(np.sum(list(counts.values())))
    lines = [f"topology {kind}" if kind else "topology"]
    for k, v in counts.items():
        lines.append(f"  {k:<13}{v:>10}")
    lines.append(f"  {'total':<13}{total:>10}")
    lines += [f"params.{k}={v}" for k, v in counts.items()]
    lines.append(f"params.total={total}")
    return "\n".join(lines)


def build_topology(kind: str, layer_dims: Sequence[int], subspace_split: tuple[int, int] | None = None,
                   task_ids: Sequence[str] = (MAIN, AUX), *, input_dim: int, layer_kind: str = "bilstm",
                   n_joint: int | None = None, aux_depth: int | None = None,
                   extra_inputs: dict[int, int] | None = None, rng: np.random.Generator | None = None,
                   dropout: float = 0.0, recurrent_dropout: float = 0.0,
                   gate_init: str = "zeros") -> SharingTopology:
    """Allocate a topology.

    ``layer_dims`` are layer output widths.  ``n_joint`` is the number of
    lower layers that are shared (PSN) or split (LWS); the remaining layers are
    private.  ``aux_depth`` is how many layers the auxiliary task passes
    through before its head.
    """
    kind = kind.upper()
    if kind not in KINDS:
        raise ConfigError(f"unknown topology kind {kind!r}; expected one of {KINDS}")
    if not layer_dims or any(d <= 0 for d in layer_dims):
        raise ConfigError(f"layer_dims must be positive, got {list(layer_dims)}")
    if layer_kind not in ("bilstm", "dense"):
        raise ConfigError(f"unknown layer kind {layer_kind!r}")
    if layer_kind == "bilstm" and any(d % 2 for d in layer_dims):
        raise ConfigError("bi-LSTM layer widths must be even")
    tasks = tuple(task_ids)
    if kind == "ST":
        tasks = (MAIN,)
    elif set(tasks) != {MAIN, AUX}:
        raise ConfigError(f"multi-task topologies need tasks ('main', 'aux'), got {tasks}")
    L = len(layer_dims)
    rng = rng if rng is not None else np.random.default_rng(0)

    if kind == "ST":
        modes = ["private"] * L
        aux_depth = 0
    elif kind == "FSN":
        if n_joint not in (None, L):
            raise ConfigError("FSN shares every hidden layer")
        modes = ["shared"] * L
        aux_depth = L if aux_depth is None else aux_depth
    elif kind == "PSN":
        n_joint = max(L - 1, 1) if n_joint is None else n_joint
        if not 1 <= n_joint < L:
            raise ConfigError("PSN needs at least one shared and one private layer")
        modes = ["shared"] * n_joint + ["private"] * (L - n_joint)
        aux_depth = L if aux_depth is None else aux_depth
    else:
        n_joint = L if n_joint is None else n_joint
        if not 1 <= n_joint <= L:
            raise ConfigError("LWS needs at least one split layer")
        modes = ["split"] * n_joint + ["private"] * (L - n_joint)
        aux_depth = n_joint if aux_depth is None else aux_depth
        if aux_depth < n_joint:
            raise ConfigError("the auxiliary task must pass through every split layer")
        widths = {layer_dims[i] for i in range(n_joint)}
        if len(widths) != 1:
            raise ConfigError("split layers must share one width")
        width = widths.pop()
        if subspace_split is not None:
            s, p = subspace_split
            if s <= 0 or p < 0 or s + p != width:
                raise ConfigError(f"subspace split {subspace_split} must be positive and sum to {width}")
            if layer_kind == "bilstm" and s % 2:
                raise ConfigError("bi-LSTM shared subspace must be even (split across directions)")
    if kind != "ST" and not 1 <= aux_depth <= L:
        raise ConfigError(f"aux_depth must be in [1, {L}]")
    specs = [LayerSpec(m, d) for m, d in zip(modes, layer_dims)]
    return SharingTopology(kind, input_dim, specs, tasks, aux_depth, subspace_split, layer_kind,
                           dict(extra_inputs or {}), rng, dropout, recurrent_dropout, gate_init)


def fsn_forward(topology: SharingTopology, x: Node, mask=None, **kw) -> Node:
    if topology.kind != "FSN":
        raise ConfigError(f"fsn_forward needs an FSN topology, got {topology.kind}")
    return topology.forward(x, mask, **kw)[MAIN][-1]


def psn_forward(topology: SharingTopology, x: Node, task: str, mask=None, **kw) -> Node:
    if topology.kind != "PSN":
        raise ConfigError(f"psn_forward needs a PSN topology, got {topology.kind}")
    if task not in topology.tasks:
        raise KeyError(f"unknown task {task!r}")
    return topology.forward(x, mask, **kw)[task][-1]


def attach_heads(topology: SharingTopology, head_dims: dict[str, int], rng: np.random.Generator) -> dict[str, Dense]:
    """One linear output layer per task on top of that task's last layer."""
    heads = {}
    for task, k in head_dims.items():
        depth = topology.task_depth(task)
        if depth == 0:
            continue
        heads[task] = Dense(topology.specs[depth - 1].out_dim, k, rng)
    return heads
