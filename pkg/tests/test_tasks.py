import numpy as np
import pytest

from semmtl import autodiff as ad
from semmtl.data import NLI_LABELS, build_vocabs
from semmtl.sharing import AUX
from semmtl.synthetic import correlated_corpus, hand_pairs
from semmtl.tasks import NliModel, ParserModel, TaggerModel
from semmtl.tasks.base import ModelConfig
from semmtl.tasks.mst import is_tree
from semmtl.tasks.nli import aux_path_parameters, nli_forward, pretrain_aux_encoder
from semmtl.tasks.parser import biaffine_arc_scores, parse_forward
from semmtl.tasks.tagger import tag_forward
from semmtl.verify import check_model_gradients

from conftest import TOY

KINDS = ["ST", "FSN", "PSN", "LWS"]


@pytest.mark.parametrize("kind", KINDS)
def test_end_to_end_model_gradients(kind):
    errs = check_model_gradients(kind, max_coords=4)
    for model, (err, tensor) in errs.items():
        assert err <= 1e-4, f"{model}: {tensor} {err:.1e}"


@pytest.mark.parametrize("kind", KINDS)
def test_tagger_shapes_and_aux_head(kind, corpus, vocabs, rng):
    m = TaggerModel(vocabs, ModelConfig(topology=kind, **TOY), rng)
    main, aux = tag_forward(m, corpus[0])
    n = len(corpus[0])
    assert main.shape == (n, len(vocabs.upos))
    assert (aux is None) == (kind == "ST")
    if aux is not None:
        assert aux.shape == (n, len(vocabs.semtags))


def test_tagger_predict_and_evaluate(corpus, vocabs, rng):
    m = TaggerModel(vocabs, ModelConfig(topology="LWS", **TOY), rng)
    preds = m.predict(corpus[:3])
    assert [len(p.upos) for p in preds] == [len(s) for s in corpus[:3]]
    assert [p.tokens for p in preds] == [s.tokens for s in corpus[:3]]
    metrics = m.evaluate(corpus)
    assert set(metrics) == {"upos_acc", "semtag_acc"}
    assert all(0.0 <= v <= 1.0 for v in metrics.values())


@pytest.mark.parametrize("kind", KINDS)
def test_parser_outputs_valid_trees(kind, corpus, vocabs, rng):
    m = ParserModel(vocabs, ModelConfig(topology=kind, layers=4, **TOY), rng)
    upos, sem, arcs, labels = parse_forward(m, corpus[0])
    n = len(corpus[0])
    assert arcs.shape == (n, n + 1)
    assert labels.shape == (n, len(vocabs.deprels))
    assert (sem is None) == (kind == "ST")
    for p in m.predict(corpus[:4]):
        assert is_tree(p.heads)
    assert m.evaluate(corpus[:4])["las"] <= m.evaluate(corpus[:4])["uas"]


def test_parser_placement(vocabs, rng):
    depths = {k: ParserModel(vocabs, ModelConfig(topology=k, layers=4, **TOY), rng).topology.aux_depth
              for k in KINDS}
    assert depths == {"ST": 0, "FSN": 4, "PSN": 2, "LWS": 2}


def test_biaffine_matches_explicit_formula(rng):
    Hd, Hh = rng.normal(size=(1, 3, 4)), rng.normal(size=(1, 4, 4))
    U, u = rng.normal(size=(4, 4)), rng.normal(size=4)
    s = biaffine_arc_scores(*(ad.constant(v) for v in (Hd, Hh, U, u))).value
    for i in range(3):
        for j in range(4):
            assert s[0, i, j] == pytest.approx(Hd[0, i] @ U @ Hh[0, j] + u @ Hh[0, j])


@pytest.mark.parametrize("kind", KINDS)
def test_nli_forward_shapes(kind, rng):
    pairs = hand_pairs()
    m = NliModel(build_vocabs(pairs), ModelConfig(topology=kind, **TOY), rng)
    logits, sem_p, sem_h = nli_forward(m, pairs[0].premise, pairs[0].hypothesis)
    assert logits.shape == (len(NLI_LABELS),)
    if kind == "ST":
        assert sem_p is None
    else:
        assert sem_p.shape[0] == len(pairs[0].premise) and sem_h.shape[0] == len(pairs[0].hypothesis)


def test_nli_attention_respects_masks(rng):
    pairs = hand_pairs()[:3]
    m = NliModel(build_vocabs(pairs), ModelConfig(topology="LWS", **TOY), rng)
    pb = m.batch(pairs)
    m.forward(pb)
    row, col = m.last_attention
    B = len(pairs)
    mask_a, mask_b = pb.sentences.mask[:B], pb.sentences.mask[B:]
    for k in range(B):
        la, lb = mask_a[k].sum(), mask_b[k].sum()
        np.testing.assert_allclose(row[k, :la, :lb].sum(axis=1), 1.0)
        np.testing.assert_allclose(col[k, :la, :lb].sum(axis=0), 1.0)
        assert not np.any(row[k, :, lb:])
        assert not np.any(col[k, la:, :])


def test_nli_predict_records(rng):
    pairs = hand_pairs()
    m = NliModel(build_vocabs(pairs), ModelConfig(topology="FSN", **TOY), rng)
    rec = m.predict(pairs[:1])[0]
    assert set(rec) == {"id", "gold", "pred", "premise", "hypothesis", "semtags_pred"}
    assert rec["pred"] in NLI_LABELS
    assert len(rec["semtags_pred"]["premise"]) == len(pairs[0].premise)


def test_pretraining_touches_only_the_aux_path(tmp_path, rng):
    sents = correlated_corpus(10, seed=1)
    pairs = hand_pairs()
    m = NliModel(build_vocabs(pairs, sents), ModelConfig(topology="PSN", **TOY), rng)
    aux_names = set(aux_path_parameters(m))
    before = {k: p.value.copy() for k, p in m.parameters().items()}
    hist = pretrain_aux_encoder(m, sents, epochs=3, batch_size=5, learning_rate=1e-2,
                                checkpoint=tmp_path / "pre.ckpt")
    assert len(hist) == 3 and hist[-1] < hist[0]
    assert (tmp_path / "pre.ckpt").exists()
    for k, p in m.parameters().items():
        if k not in aux_names:
            assert np.array_equal(p.value, before[k]), k
    assert any(k.startswith(f"heads.{AUX}.") for k in aux_names)
    with pytest.raises(ValueError):
        pretrain_aux_encoder(m, [], epochs=1)
