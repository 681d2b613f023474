"""Biaffine graph-based dependency parser with joint UPOS tagging and MST decoding.

Four stacked bi-LSTM layers.  A UPOS softmax sits on layer 1; its output
probabilities are concatenated with the word embeddings and the layer-1
states to form layer 2's input.  Four ReLU projections of the top layer feed
a biaffine arc scorer and an affine+biaffine label scorer.
"""
from __future__ import annotations

from dataclasses import replace

import numpy as np

from .. import autodiff as ad
from ..analysis import corpus_las_uas
from ..autodiff import Node, ShapeError
from ..data import Batch, Sentence, Vocabs, make_batch
from ..layers import Dense, dropout, glorot_uniform
from ..sharing import MAIN, build_topology
from .base import ModelConfig, SequenceModel, argmax_tags, flat_logits, tag_loss, token_accuracy
from .mst import mst_decode

_MASKED = -1e9

# where the semantic-tag head sits and how many lower layers are shared/split, per topology
PLACEMENT = {"ST": (None, None), "FSN": (None, 4), "PSN": (2, 2), "LWS": (2, 2)}


def biaffine_arc_scores(H_dep: Node, H_head: Node, U: Node, u: Node) -> Node:
    """``score[i, j] = H_dep[i] . U . H_head[j] + u . H_head[j]``.

    Accepts [n, d] / [n+1, d] or batched [B, n, d] / [B, n+1, d] inputs; ROOT is
    row 0 of ``H_head``.
    """
    batched = H_dep.ndim == 3
    d = H_dep.shape[-1]
    if (H_head.ndim != H_dep.ndim or H_head.shape[-1] != d or U.shape != (d, d) or u.shape != (d,)
            or H_head.shape[-2] != H_dep.shape[-2] + 1 or (batched and H_head.shape[0] != H_dep.shape[0])):
        raise ShapeError(f"biaffine_arc_scores: H_dep {H_dep.shape}, H_head {H_head.shape}, "
                         f"U {U.shape}, u {u.shape}")
    if batched:
        bil = ad.einsum("bid,de,bje->bij", H_dep, U, H_head)
        lin = ad.einsum("bje,e->bj", H_head, u)
        B, n, m = bil.shape
        lin = ad.broadcast_to(ad.reshape(lin, (B, 1, m)), (B, n, m))
    else:
        bil = ad.einsum("id,de,je->ij", H_dep, U, H_head)
        lin = ad.einsum("je,e->j", H_head, u)
        n, m = bil.shape
        lin = ad.broadcast_to(ad.reshape(lin, (1, m)), (n, m))
    return ad.add(bil, lin)


class ParserModel(SequenceModel):
    task_name = "dep"

    def __init__(self, vocabs: Vocabs, config: ModelConfig, rng: np.random.Generator):
        width = 2 * config.hidden_dim
        kind = config.topology.upper()
        aux_depth, n_joint = PLACEMENT[kind]
        if config.aux_depth is not None:
            aux_depth = config.aux_depth
        if config.n_joint is not None:
            n_joint = config.n_joint
        n_upos = max(len(vocabs.upos), 1)
        layers = config.layers
        topology = build_topology(kind, [width] * layers, config.split(), input_dim=config.embed_dim,
                                  n_joint=n_joint if kind != "FSN" else None, aux_depth=aux_depth,
                                  extra_inputs={1: config.embed_dim + n_upos}, rng=rng,
                                  dropout=config.dropout, recurrent_dropout=config.recurrent_dropout,
                                  gate_init=config.gate_init)
        super().__init__(vocabs, config, topology, rng)
        d_arc, d_lab = config.mlp_dim, config.label_dim
        n_rel = max(len(vocabs.deprels), 1)
        self.upos_head = Dense(width, n_upos, rng)
        self.arc_dep = Dense(width, d_arc, rng, "relu")
        self.arc_head = Dense(width, d_arc, rng, "relu")
        self.lab_dep = Dense(width, d_lab, rng, "relu")
        self.lab_head = Dense(width, d_lab, rng, "relu")
        self.root_arc = ad.parameter(rng.normal(0, 0.1, d_arc))
        self.root_lab = ad.parameter(rng.normal(0, 0.1, d_lab))
        self.U_arc = ad.parameter(np.zeros((d_arc, d_arc)))
        self.u_arc = ad.parameter(np.zeros(d_arc))
        self.U_lab = ad.parameter(np.zeros((n_rel, d_lab, d_lab)))
        self.W_lab = ad.parameter(glorot_uniform(rng, 2 * d_lab, n_rel))
        self.b_lab = ad.parameter(np.zeros(n_rel))

    # -- forward pieces ----------------------------------------------------

    def _transition_for(self, batch, x, training, rng):
        store = self._upos_store = {}

        def transition(layer: int, h: Node) -> Node:
            if layer != 0:
                return h
            logits = self.upos_head(h)
            store["logits"] = logits
            probs = ad.softmax(logits, axis=-1)
            return ad.concat([x, h, probs], axis=-1)

        return transition

    def encode(self, batch: Batch, training=False, rng=None):
        x = self.embed(batch.ids, training, rng)
        transition = self._transition_for(batch, x, training, rng)
        outs = self.topology.forward(x, batch.mask, training=training, rng=rng, transition=transition)
        return outs, self._upos_store["logits"]

    def _with_root(self, H: Node, root: Node) -> Node:
        B = H.shape[0]
        r = ad.broadcast_to(ad.reshape(root, (1, 1, -1)), (B, 1, root.shape[0]))
        return ad.concat([r, H], axis=1)

    def _mlp(self, layer: Dense, top: Node, training, rng) -> Node:
        return dropout(layer(top), self.config.dropout, training, rng)

    def arc_scores(self, top: Node, batch: Batch, training=False, rng=None) -> Node:
        dep = self._mlp(self.arc_dep, top, training, rng)
        head = self._with_root(self._mlp(self.arc_head, top, training, rng), self.root_arc)
        scores = biaffine_arc_scores(dep, head, self.U_arc, self.u_arc)
        B, T = batch.mask.shape
        valid = np.concatenate([np.ones((B, 1), bool), batch.mask], axis=1)
        return ad.add_const(scores, np.where(valid[:, None, :], 0.0, _MASKED))

    def label_scores(self, top: Node, heads: np.ndarray, training=False, rng=None) -> Node:
        """[B, T, R] relation scores of each token given its head index (0 = ROOT)."""
        dep = self._mlp(self.lab_dep, top, training, rng)
        head_all = self._with_root(self._mlp(self.lab_head, top, training, rng), self.root_lab)
        B, T1, d = head_all.shape
        T = T1 - 1
        flat = ad.reshape(head_all, (B * T1, d))
        idx = (np.arange(B)[:, None] * T1 + np.asarray(heads)[:, :T]).reshape(-1)
        head_sel = ad.reshape(ad.take(flat, idx, axis=0), (B, T, d))
        bil = ad.einsum("btd,rde,bte->btr", dep, self.U_lab, head_sel)
        lin = ad.add_bias(ad.matmul(ad.concat([dep, head_sel], axis=-1), self.W_lab), self.b_lab)
        return ad.add(bil, lin)

    def forward(self, batch: Batch, training=False, rng=None, heads: np.ndarray | None = None):
        outs, upos_logits = self.encode(batch, training, rng)
        top = outs[MAIN][-1]
        arcs = self.arc_scores(top, batch, training, rng)
        if heads is None:
            heads = self.decode_heads(arcs, batch.mask)
        labels = self.label_scores(top, heads, training, rng)
        return upos_logits, self.aux_logits(outs), arcs, labels, heads

    @staticmethod
    def decode_heads(arcs: Node, mask: np.ndarray) -> np.ndarray:
        B, T = mask.shape
        heads = np.zeros((B, T), dtype=np.int64)
        for b in range(B):
            n = int(mask[b].sum())
            heads[b, :n] = mst_decode(arcs.value[b, :n, : n + 1])
        return heads

    # -- training / evaluation ------------------------------------------------

    def losses(self, batch: Batch, training=False, rng=None) -> tuple[Node | None, Node | None]:
        if batch.heads is None:
            upos_logits, aux_logits, *_ = self.forward(batch, training, rng, heads=np.zeros_like(batch.ids))
            main = None
        else:
            upos_logits, aux_logits, arcs, labels, _ = self.forward(batch, training, rng, heads=batch.heads)
            B, T = batch.mask.shape
            m = batch.mask.reshape(-1)
            arc_loss = ad.softmax_cross_entropy(ad.reshape(arcs, (B * T, T + 1)), batch.heads.reshape(-1), m)
            parts = [arc_loss]
            if batch.deprels is not None:
                parts.append(ad.softmax_cross_entropy(flat_logits(labels), batch.deprels.reshape(-1), m))
            if batch.upos is not None:
                parts.append(tag_loss(upos_logits, batch.upos, batch.mask))
            main = parts[0]
            for p in parts[1:]:
                main = ad.add(main, p)
        aux = tag_loss(aux_logits, batch.semtags, batch.mask) if aux_logits is not None else None
        return main, aux

    def predict(self, sentences: list[Sentence], batch_size: int = 32) -> list[Sentence]:
        out = []
        for i in range(0, len(sentences), batch_size):
            chunk = sentences[i: i + batch_size]
            b = make_batch(chunk, self.vocabs)
            upos_logits, aux_logits, _, labels, heads = self.forward(b)
            upos = argmax_tags(upos_logits, b.mask)
            rels = argmax_tags(labels, b.mask)
            sem = argmax_tags(aux_logits, b.mask) if aux_logits is not None else None
            for k, s in enumerate(chunk):
                n = len(s)
                out.append(replace(
                    s, upos=self.vocabs.upos.decode(upos[k]), heads=[int(h) for h in heads[k, :n]],
                    deprels=self.vocabs.deprels.decode(rels[k]),
                    semtags=self.vocabs.semtags.decode(sem[k]) if sem is not None else s.semtags))
        return out

    def evaluate(self, sentences: list[Sentence], batch_size: int = 32) -> dict[str, float]:
        preds = self.predict(sentences, batch_size)
        las, uas = corpus_las_uas(preds, sentences)
        out = {"las": las, "uas": uas}
        ucorrect = utotal = scorrect = stotal = 0
        for p, g in zip(preds, sentences):
            if g.upos is not None:
                ucorrect += sum(a == b for a, b in zip(p.upos, g.upos))
                utotal += len(g)
            if g.semtags is not None and self.has_aux:
                scorrect += sum(a == b for a, b in zip(p.semtags, g.semtags))
                stotal += len(g)
        if utotal:
            out["upos_acc"] = ucorrect / utotal
        if stotal:
            out["semtag_acc"] = scorrect / stotal
        return out


def parse_forward(model: ParserModel, sentence: Sentence, use_gold_heads: bool = False):
    """(upos_logits, semtag_logits, arc_scores [n, n+1], label_scores [n, R]) for one sentence.

    Labels are scored on gold heads when ``use_gold_heads`` (training), on MST heads otherwise.
    """
    if len(sentence) == 0:
        raise ValueError("parse_forward: empty sentence")
    b = make_batch([sentence], model.vocabs)
    heads = b.heads if use_gold_heads else None
    upos, sem, arcs, labels, _ = model.forward(b, heads=heads)
    n = len(sentence)
    squeeze = lambda node, shape: ad.reshape(node, shape) if node is not None else None  # noqa: E731
    return (squeeze(upos, (n, upos.shape[-1])), squeeze(sem, (n, sem.shape[-1]) if sem is not None else None),
            squeeze(arcs, (n, n + 1)), squeeze(labels, (n, labels.shape[-1])))


__all__ = ["ParserModel", "parse_forward", "biaffine_arc_scores", "token_accuracy"]
