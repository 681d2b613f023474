"""ESIM-lite natural language inference with an auxiliary semantic-tag head.

Encode premise and hypothesis with the same encoder, soft-align them through
dot-product attention, enhance each side with ``[a; ã; a - ã; a * ã]``,
project, compose with a second bi-LSTM, pool (mean and max) and classify.

Encoder layout per topology::

    ST   one private encoding layer, no semantic tags
    FSN  one shared encoding layer; semantic tags read off it directly
    PSN  a shared lower layer predicts semantic tags and feeds a private
         encoding layer
    LWS  one split encoding layer with gated shared subspaces
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .. import autodiff as ad
from ..autodiff import Node
from ..data import NLI_LABELS, Batch, NliInstance, Sentence, Vocabs, make_batch
from ..layers import Adam, BiLSTM, Dense, clip_grad_norm, dropout, save_checkpoint
from ..sharing import AUX, MAIN, build_topology
from .base import ModelConfig, SequenceModel, argmax_tags, tag_loss

_NEG = -1e9

# (layers, n_joint, aux_depth) of the encoder per topology
ENCODER_LAYOUT = {"ST": (1, None, None), "FSN": (1, None, 1), "PSN": (2, 1, 1), "LWS": (1, 1, 1)}


@dataclass
class PairBatch:
    """Premises and hypotheses stacked into one padded sentence batch of 2B rows."""
    pairs: list[NliInstance]
    sentences: Batch
    labels: np.ndarray | None

    @property
    def size(self) -> int:
        return len(self.pairs)


def make_pair_batch(pairs: Sequence[NliInstance], vocabs: Vocabs) -> PairBatch:
    if not pairs:
        raise ValueError("empty pair batch")
    sents = [p.premise for p in pairs] + [p.hypothesis for p in pairs]
    labels = np.array([NLI_LABELS.index(p.label) for p in pairs], dtype=np.int64)
    return PairBatch(list(pairs), make_batch(sents, vocabs), labels)


def _masked_mean(h: Node, mask: np.ndarray) -> Node:
    m = mask.astype(h.value.dtype)[..., None]
    total = ad.sum(ad.mul_const(h, m), axis=1)
    return ad.mul_const(total, 1.0 / np.maximum(m.sum(axis=1), 1.0))


def _masked_max(h: Node, mask: np.ndarray) -> Node:
    return ad.max(ad.add_const(h, np.where(mask[..., None], 0.0, _NEG)), axis=1)


class NliModel(SequenceModel):
    task_name = "nli"

    def __init__(self, vocabs: Vocabs, config: ModelConfig, rng: np.random.Generator):
        kind = config.topology.upper()
        width = 2 * config.hidden_dim
        if kind not in ENCODER_LAYOUT:
            build_topology(kind, [width], input_dim=config.embed_dim)  # raises the usual error
        n_layers, n_joint, aux_depth = ENCODER_LAYOUT[kind]
        topology = build_topology(kind, [width] * n_layers, config.split(), input_dim=config.embed_dim,
                                  n_joint=n_joint, aux_depth=aux_depth, rng=rng, dropout=config.dropout,
                                  recurrent_dropout=config.recurrent_dropout, gate_init=config.gate_init)
        super().__init__(vocabs, config, topology, rng)
        h = config.hidden_dim
        self.project = Dense(4 * width, h, rng, "relu")
        self.compose = BiLSTM(h, h, rng, config.dropout, config.recurrent_dropout)
        self.hidden = Dense(4 * width, config.mlp_dim, rng, "tanh")
        self.out = Dense(config.mlp_dim, len(NLI_LABELS), rng)
        self._attention: tuple[np.ndarray, np.ndarray] | None = None

    # -- batching ------------------------------------------------------------

    def batch(self, items):
        items = list(items)
        if items and isinstance(items[0], NliInstance):
            return make_pair_batch(items, self.vocabs)
        return make_batch(items, self.vocabs)

    # -- forward ---------------------------------------------------------------

    def forward(self, pb: PairBatch, training=False, rng=None) -> tuple[Node, Node | None]:
        """(class logits [B, 3], semtag logits [2B, T, K] or None)."""
        sb, B = pb.sentences, pb.size
        x = self.embed(sb.ids, training, rng)
        outs = self.topology.forward(x, sb.mask, training=training, rng=rng)
        enc = outs[MAIN][-1]
        mask_a, mask_b = sb.mask[:B], sb.mask[B:]
        a = ad.take(enc, np.arange(B), axis=0)
        b = ad.take(enc, np.arange(B, 2 * B), axis=0)

        e = ad.einsum("bid,bjd->bij", a, b)
        attn_a = ad.softmax(e, axis=2, mask=mask_b[:, None, :])  # each premise token over hypothesis
        attn_b = ad.softmax(e, axis=1, mask=mask_a[:, :, None])  # each hypothesis token over premise
        self._attention = (attn_a.value, attn_b.value)
        a_tilde = ad.einsum("bij,bjd->bid", attn_a, b)
        b_tilde = ad.einsum("bij,bid->bjd", attn_b, a)

        v_a = self._compose(a, a_tilde, mask_a, training, rng)
        v_b = self._compose(b, b_tilde, mask_b, training, rng)
        pooled = ad.concat([_masked_mean(v_a, mask_a), _masked_max(v_a, mask_a),
                            _masked_mean(v_b, mask_b), _masked_max(v_b, mask_b)], axis=-1)
        pooled = dropout(pooled, self.config.dropout, training, rng)
        return self.out(self.hidden(pooled)), self.aux_logits(outs)

    def _compose(self, h: Node, aligned: Node, mask, training, rng) -> Node:
        m = ad.concat([h, aligned, ad.sub(h, aligned), ad.mul(h, aligned)], axis=-1)
        return self.compose(self.project(m), mask, training, rng)

    @property
    def last_attention(self) -> tuple[np.ndarray, np.ndarray] | None:
        """Row-normalised (premise->hypothesis) and column-normalised attention of the last forward."""
        return self._attention

    # -- training / evaluation ---------------------------------------------------

    def losses(self, batch, training=False, rng=None) -> tuple[Node | None, Node | None]:
        if isinstance(batch, Batch):  # semantic-tag-only sentences
            return None, self.aux_only_loss(batch, training, rng) if batch.semtags is not None else None
        logits, aux_logits = self.forward(batch, training, rng)
        main = ad.softmax_cross_entropy(logits, batch.labels)
        sb = batch.sentences
        aux = tag_loss(aux_logits, sb.semtags, sb.mask) if aux_logits is not None else None
        return main, aux

    def predict(self, pairs: Sequence[NliInstance], batch_size: int = 64) -> list[dict]:
        out = []
        for i in range(0, len(pairs), batch_size):
            chunk = list(pairs[i: i + batch_size])
            pb = make_pair_batch(chunk, self.vocabs)
            logits, aux_logits = self.forward(pb)
            pred = np.argmax(logits.value, axis=-1)
            B = len(chunk)
            tags = (argmax_tags(aux_logits, pb.sentences.mask) if aux_logits is not None else None)
            for k, p in enumerate(chunk):
                rec = {"id": p.id, "gold": p.label, "pred": NLI_LABELS[int(pred[k])],
                       "premise": " ".join(p.premise.tokens), "hypothesis": " ".join(p.hypothesis.tokens),
                       "semtags_pred": None}
                if tags is not None:
                    rec["semtags_pred"] = {"premise": self.vocabs.semtags.decode(tags[k]),
                                           "hypothesis": self.vocabs.semtags.decode(tags[B + k])}
                out.append(rec)
        return out

    def evaluate(self, pairs: Sequence[NliInstance], batch_size: int = 64) -> dict[str, float]:
        preds = self.predict(pairs, batch_size)
        out = {"accuracy": float(np.mean([r["pred"] == r["gold"] for r in preds]))} if preds else {}
        gold_tags = [s for p in pairs for s in (p.premise, p.hypothesis) if s.semtags is not None]
        if self.has_aux and gold_tags and len(gold_tags) == 2 * len(pairs):
            correct = total = 0
            for p, r in zip(pairs, preds):
                for side in ("premise", "hypothesis"):
                    g = getattr(p, side).semtags
                    correct += sum(a == b for a, b in zip(r["semtags_pred"][side], g))
                    total += len(g)
            out["semtag_acc"] = correct / total
        return out


def nli_forward(model: NliModel, premise: Sentence | Sequence[str], hypothesis: Sentence | Sequence[str]):
    """(class logits [3], premise semtag logits [n, K], hypothesis semtag logits [m, K]) for one pair."""
    p = premise if isinstance(premise, Sentence) else Sentence("p", list(premise))
    h = hypothesis if isinstance(hypothesis, Sentence) else Sentence("h", list(hypothesis))
    if len(p) == 0 or len(h) == 0:
        raise ValueError("nli_forward: empty premise or hypothesis")
    pb = make_pair_batch([NliInstance("0", p, h, NLI_LABELS[0])], model.vocabs)
    logits, aux = model.forward(pb)
    logits = ad.reshape(logits, (len(NLI_LABELS),))
    if aux is None:
        return logits, None, None
    K = aux.shape[-1]
    sem_p = ad.reshape(ad.slice_axis(ad.take(aux, np.array([0]), axis=0), 0, len(p), axis=1), (len(p), K))
    sem_h = ad.reshape(ad.slice_axis(ad.take(aux, np.array([1]), axis=0), 0, len(h), axis=1), (len(h), K))
    return logits, sem_p, sem_h


def aux_path_parameters(model: SequenceModel) -> dict[str, Node]:
    """Parameters on the auxiliary path: embeddings, every layer the aux task runs through, its head."""
    topo = model.topology
    names = {"embedding."}
    for l in range(topo.aux_depth):
        if topo.specs[l].mode == "shared":
            names.add(f"topology.shared.{l}.")
        else:
            names.add(f"topology.private.{AUX}.{l}.")
    names.add(f"heads.{AUX}.")
    return {k: v for k, v in model.named_parameters() if any(k.startswith(n) for n in names)}


def pretrain_aux_encoder(model: SequenceModel, corpus: Sequence[Sentence] | None, *, epochs: int = 5,
                         batch_size: int = 32, learning_rate: float = 1e-3, seed: int = 0,
                         checkpoint: str | Path | None = None, clip: float | None = 5.0) -> list[float]:
    """Train the auxiliary path on semantic tags alone; returns per-epoch mean loss.

    The updated parameters are written to ``checkpoint`` when given, so the
    main run can warm-start from that file.
    """
    if not corpus:
        raise ValueError("pretrain_aux_encoder: no semantic-tag corpus given")
    if any(s.semtags is None for s in corpus):
        raise ValueError("pretrain_aux_encoder: every sentence needs semantic tags")
    if not model.has_aux:
        raise ValueError("pretrain_aux_encoder: model has no auxiliary path")
    params = aux_path_parameters(model)
    opt = Adam(params, learning_rate)
    rng = np.random.default_rng(seed)
    history = []
    for _ in range(epochs):
        order = rng.permutation(len(corpus))
        losses = []
        for i in range(0, len(order), batch_size):
            b = make_batch([corpus[j] for j in order[i: i + batch_size]], model.vocabs)
            opt.zero_grad()
            loss = model.aux_only_loss(b, training=True, rng=rng)
            ad.backward(loss)
            if clip:
                clip_grad_norm(params.values(), clip)
            opt.step()
            losses.append(float(loss.value))
        history.append(float(np.mean(losses)))
    if checkpoint is not None:
        save_checkpoint(checkpoint, model.parameters())
    return history


__all__ = ["NliModel", "PairBatch", "make_pair_batch", "nli_forward", "pretrain_aux_encoder",
           "aux_path_parameters", "ENCODER_LAYOUT"]
