from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from ..autodiff import Node
from ..data import Batch, Sentence, Vocabs, make_batch
from ..layers import Dense, Embedding, Module, dropout
from ..sharing import AUX, MAIN, SharingTopology, format_report


@dataclass
class ModelConfig:
    topology: str = "LWS"
    embed_dim: int = 32
    hidden_dim: int = 32
    layers: int = 1
    n_joint: int | None = None
    aux_depth: int | None = None
    shared_dim: int | None = None
    dropout: float = 0.0
    recurrent_dropout: float = 0.0
    embed_dropout: float = 0.0
    mlp_dim: int = 32
    label_dim: int = 32
    gate_init: str = "zeros"

    def split(self) -> tuple[int, int] | None:
        if self.shared_dim is None:
            return None
        width = 2 * self.hidden_dim
        return self.shared_dim, width - self.shared_dim


def flat_logits(logits: Node) -> Node:
    B, T, K = logits.shape
    return ad.reshape(logits, (B * T, K))


def tag_loss(logits: Node, gold: np.ndarray | None, mask: np.ndarray) -> Node | None:
    if gold is None or not mask.any():
        return None
    return ad.softmax_cross_entropy(flat_logits(logits), gold.reshape(-1), mask.reshape(-1))


def argmax_tags(logits: Node, mask: np.ndarray) -> list[list[int]]:
    pred = np.argmax(logits.value, axis=-1)
    return [list(pred[b, : int(mask[b].sum())]) for b in range(pred.shape[0])]


def token_accuracy(pred: list[list[int]], gold: np.ndarray, mask: np.ndarray) -> tuple[int, int]:
    correct = total = 0
    for b, p in enumerate(pred):
        n = int(mask[b].sum())
        correct += int(np.sum(np.asarray(p) == gold[b, :n]))
        total += n
    return correct, total


class SequenceModel(Module):
    """Embedding -> sharing topology -> auxiliary semantic-tag head, plus task-specific parts."""

    task_name = "base"

    def __init__(self, vocabs: Vocabs, config: ModelConfig, topology: SharingTopology, rng: np.random.Generator):
        self._vocabs = vocabs
        self._config = config
        self.embedding = Embedding(len(vocabs.words), config.embed_dim, rng)
        self.topology = topology
        self.heads: dict[str, Dense] = {}
        if topology.aux_depth:
            aux_in = topology.specs[topology.aux_depth - 1].out_dim
            self.heads[AUX] = Dense(aux_in, max(len(vocabs.semtags), 1), rng)
        self._trained = False

    @property
    def vocabs(self) -> Vocabs:
        return self._vocabs

    @property
    def config(self) -> ModelConfig:
        return self._config

    @property
    def kind(self) -> str:
        return self.topology.kind

    @property
    def has_aux(self) -> bool:
        return AUX in self.heads

    @property
    def trained(self) -> bool:
        return self._trained

    def mark_trained(self, value: bool = True) -> None:
        self._trained = value

    def embed(self, ids, training=False, rng=None) -> Node:
        return dropout(self.embedding(ids), self._config.embed_dropout, training, rng)

    def batch(self, items) -> Batch:
        return make_batch(items, self._vocabs)

    def aux_logits(self, outs: dict[str, list[Node]]) -> Node | None:
        if not self.has_aux:
            return None
        return self.heads[AUX](outs[AUX][self.topology.aux_depth - 1])

    def aux_only_loss(self, batch: Batch, training=False, rng=None) -> Node | None:
        """Semantic-tag loss through the auxiliary path alone (pretraining)."""
        if not self.has_aux:
            raise ValueError("model has no auxiliary semantic-tag head")
        x = self.embed(batch.ids, training, rng)
        outs = self.topology.forward(x, batch.mask, training=training, rng=rng,
                                     transition=self._transition_for(batch, x, training, rng))
        return tag_loss(self.aux_logits(outs), batch.semtags, batch.mask)

    def _transition_for(self, batch, x, training, rng):
        return None

    def predict_semtags(self, sentences: list[Sentence], batch_size: int = 64) -> list[list[str]]:
        out = []
        for i in range(0, len(sentences), batch_size):
            b = make_batch(sentences[i: i + batch_size], self._vocabs)
            logits = self.semtag_logits(b)
            out += [self._vocabs.semtags.decode(p) for p in argmax_tags(logits, b.mask)]
        return out

    def semtag_logits(self, batch: Batch) -> Node:
        x = self.embed(batch.ids)
        outs = self.topology.forward(x, batch.mask, transition=self._transition_for(batch, x, False, None))
        return self.aux_logits(outs)

    def structure_report(self) -> dict[str, int]:
        counts = {"shared": 0, "private-main": 0, "private-aux": 0, "gates": 0, "heads": 0}
        for name, p in self.named_parameters():
            if name.startswith("topology."):
                bucket = self.topology.bucket_of(name[len("topology."):])
            elif name.startswith("embedding."):
                bucket = "shared"
            else:
                bucket = "heads"
            counts[bucket] += p.value.size
        return counts

    def report_text(self) -> str:
        return format_report(self.structure_report(), self.kind)

    def head_parameters(self, task: str) -> dict[str, Node]:
        return {k: v for k, v in self.named_parameters() if k.startswith(f"heads.{task}.")}


__all__ = ["ModelConfig", "SequenceModel", "tag_loss", "argmax_tags", "token_accuracy",
           "flat_logits", "MAIN", "AUX"]
