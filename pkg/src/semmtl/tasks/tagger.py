"""Joint UPOS + semantic tag sequence tagger over a bi-LSTM sharing topology."""
from __future__ import annotations

from dataclasses import replace

import numpy as np

from .. import autodiff as ad
from ..autodiff import Node
from ..data import Batch, Sentence, Vocabs, make_batch
from ..layers import Dense
from ..sharing import MAIN, build_topology
from .base import AUX, ModelConfig, SequenceModel, argmax_tags, tag_loss, token_accuracy


class TaggerModel(SequenceModel):
    """``main_layer`` picks the main task's label layer: ``upos`` normally,
    ``semtags`` for a single-task semantic tagger used for projection."""

    task_name = "upos"

    def __init__(self, vocabs: Vocabs, config: ModelConfig, rng: np.random.Generator, main_layer: str = "upos"):
        width = 2 * config.hidden_dim
        layers = config.layers
        if config.topology.upper() == "PSN" and layers < 2:
            layers = 2  # one shared layer plus one private layer per task
        topology = build_topology(config.topology, [width] * layers, config.split(),
                                  input_dim=config.embed_dim, n_joint=config.n_joint,
                                  aux_depth=config.aux_depth, rng=rng, dropout=config.dropout,
                                  recurrent_dropout=config.recurrent_dropout, gate_init=config.gate_init)
        super().__init__(vocabs, config, topology, rng)
        self._main_layer = main_layer
        k = len(vocabs.upos) if main_layer == "upos" else len(vocabs.semtags)
        self.heads[MAIN] = Dense(topology.out_dim, max(k, 1), rng)

    @property
    def main_layer(self) -> str:
        return self._main_layer

    def logits(self, batch: Batch, training=False, rng=None) -> tuple[Node, Node | None]:
        x = self.embed(batch.ids, training, rng)
        outs = self.topology.forward(x, batch.mask, training=training, rng=rng)
        return self.heads[MAIN](outs[MAIN][-1]), self.aux_logits(outs)

    def losses(self, batch: Batch, training=False, rng=None) -> tuple[Node | None, Node | None]:
        main_logits, aux_logits = self.logits(batch, training, rng)
        main = tag_loss(main_logits, getattr(batch, self._main_layer), batch.mask)
        aux = tag_loss(aux_logits, batch.semtags, batch.mask) if aux_logits is not None else None
        return main, aux

    def semtag_logits(self, batch: Batch) -> Node:
        main_logits, aux_logits = self.logits(batch)
        return main_logits if self._main_layer == "semtags" else aux_logits

    def evaluate(self, sentences: list[Sentence], batch_size: int = 64) -> dict[str, float]:
        counts = {"main": [0, 0], "aux": [0, 0]}
        for i in range(0, len(sentences), batch_size):
            b = make_batch(sentences[i: i + batch_size], self.vocabs)
            main_logits, aux_logits = self.logits(b)
            gold = getattr(b, self._main_layer)
            if gold is not None:
                c, t = token_accuracy(argmax_tags(main_logits, b.mask), gold, b.mask)
                counts["main"][0] += c
                counts["main"][1] += t
            if aux_logits is not None and b.semtags is not None:
                c, t = token_accuracy(argmax_tags(aux_logits, b.mask), b.semtags, b.mask)
                counts["aux"][0] += c
                counts["aux"][1] += t
        out = {}
        main_name = "upos_acc" if self._main_layer == "upos" else "semtag_acc"
        if counts["main"][1]:
            out[main_name] = counts["main"][0] / counts["main"][1]
        if counts["aux"][1] and self._main_layer == "upos":
            out["semtag_acc"] = counts["aux"][0] / counts["aux"][1]
        return out

    def predict(self, sentences: list[Sentence], batch_size: int = 64) -> list[Sentence]:
        """Copies of ``sentences`` with predicted main (and auxiliary) tag layers."""
        out = []
        for i in range(0, len(sentences), batch_size):
            chunk = sentences[i: i + batch_size]
            b = make_batch(chunk, self.vocabs)
            main_logits, aux_logits = self.logits(b)
            main_vocab = self.vocabs.upos if self._main_layer == "upos" else self.vocabs.semtags
            mains = [main_vocab.decode(p) for p in argmax_tags(main_logits, b.mask)]
            auxs = ([self.vocabs.semtags.decode(p) for p in argmax_tags(aux_logits, b.mask)]
                    if aux_logits is not None else [None] * len(chunk))
            for s, m, a in zip(chunk, mains, auxs):
                if self._main_layer == "upos":
                    out.append(replace(s, upos=m, semtags=a if a is not None else s.semtags))
                else:
                    out.append(replace(s, semtags=m))
        return out


def tag_forward(model: TaggerModel, sentence: Sentence) -> tuple[Node, Node | None]:
    """Per-token logits [n, K] for the main and auxiliary heads of one sentence."""
    if len(sentence) == 0:
        raise ValueError("tag_forward: empty sentence")
    b = make_batch([sentence], model.vocabs)
    main_logits, aux_logits = model.logits(b)
    n = len(sentence)
    main = ad.reshape(main_logits, (n, main_logits.shape[-1]))
    aux = ad.reshape(aux_logits, (n, aux_logits.shape[-1])) if aux_logits is not None else None
    return main, aux


__all__ = ["TaggerModel", "tag_forward", "AUX", "MAIN"]
