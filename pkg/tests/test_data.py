import json

import numpy as np
import pytest

from semmtl.data import (NLI_LABELS, NliInstance, ParseError, Sentence, Vocabs, Vocabulary, build_vocabs,
                         make_batch, project_tags, read_conllu, read_corpus, read_nli_jsonl, read_semtag_tsv,
                         read_tagset, tokenize, write_conllu, write_nli_jsonl, write_semtag_tsv)


@pytest.mark.parametrize("name", ["ud-train.conllu", "ud-dev.conllu", "ud-test.conllu"])
def test_conllu_round_trip(name, fixtures, tmp_path):
    a = read_conllu(fixtures / name)
    write_conllu(tmp_path / "x.conllu", a)
    assert read_conllu(tmp_path / "x.conllu") == a
    assert (tmp_path / "x.conllu").read_text() == (fixtures / name).read_text()


@pytest.mark.parametrize("name", ["sempmb-train.tsv", "sempmb-test.tsv"])
def test_tsv_round_trip(name, fixtures, tmp_path):
    a = read_semtag_tsv(fixtures / name)
    write_semtag_tsv(tmp_path / "x.tsv", a)
    assert read_semtag_tsv(tmp_path / "x.tsv") == a


def test_nli_reader_drops_unlabelled_rows(fixtures, tmp_path):
    stats = {}
    pairs = read_nli_jsonl(fixtures / "snli-train.jsonl", stats)
    assert stats["dropped"] == 1
    assert all(p.label in NLI_LABELS for p in pairs)
    write_nli_jsonl(tmp_path / "x.jsonl", pairs)
    assert read_nli_jsonl(tmp_path / "x.jsonl") == pairs


def test_conllu_skips_multiword_and_empty_nodes(tmp_path):
    text = ("# sent_id = a\n1-2\tdon't\t_\t_\t_\t_\t_\t_\t_\t_\n1\tdo\t_\tAUX\t_\t_\t0\troot\t_\tSemTag=NOW\n"
            "2\tn't\t_\tPART\t_\t_\t1\tadvmod\t_\tSemTag=NOT\n2.1\tx\t_\t_\t_\t_\t_\t_\t_\t_\n\n")
    (tmp_path / "a.conllu").write_text(text)
    (s,) = read_conllu(tmp_path / "a.conllu")
    assert s.tokens == ["do", "n't"] and s.heads == [0, 1] and s.semtags == ["NOW", "NOT"]


@pytest.mark.parametrize("line,msg", [("1\tx\t_\n", "10 columns"),
                                      ("1\tx\t_\tX\t_\t_\tq\tdep\t_\t_\n", "HEAD")])
def test_conllu_parse_errors_carry_line_numbers(tmp_path, line, msg):
    (tmp_path / "b.conllu").write_text("# c\n" + line)
    with pytest.raises(ParseError) as info:
        read_conllu(tmp_path / "b.conllu")
    assert info.value.line_no == 2 and msg in str(info.value)


def test_tsv_errors_and_unknown_tag_warning(tmp_path, caplog):
    (tmp_path / "a.tsv").write_text("x y\n")
    with pytest.raises(ParseError):
        read_semtag_tsv(tmp_path / "a.tsv")
    (tmp_path / "b.tsv").write_text("x\tZZZ\n")
    read_semtag_tsv(tmp_path / "b.tsv", {"CON": "entity"})
    assert "ZZZ" in caplog.text


def test_read_corpus_dispatch_and_missing(fixtures, tmp_path):
    assert isinstance(read_corpus(fixtures / "nli-8pairs.jsonl")[0], NliInstance)
    assert isinstance(read_corpus(fixtures / "ud-dev.conllu")[0], Sentence)
    with pytest.raises(FileNotFoundError):
        read_corpus(tmp_path / "none.conllu")
    (tmp_path / "x.txt").write_text("")
    with pytest.raises(ValueError):
        read_corpus(tmp_path / "x.txt")


def test_tagset_fixture(fixtures):
    tags = read_tagset(fixtures / "tagset.tsv")
    assert "CON" in tags and len(tags) >= 10


def test_vocabulary_bijection_and_reserved_ids():
    v = Vocabulary(["a", "b"])
    assert v.lookup(Vocabulary.PAD) == 0 and v.lookup("zzz") == 1
    assert v.decode(v.encode(["a", "b"])) == ["a", "b"]
    v.freeze()
    with pytest.raises(KeyError):
        v.add("c")
    labels = Vocabulary(["X"], reserved=False)
    with pytest.raises(KeyError):
        labels.lookup("Y")
    assert Vocabulary.from_json(v.to_json()).itos == v.itos


def test_vocabs_from_training_data_only(corpus):
    v = build_vocabs(corpus[:5])
    unseen = {t for s in corpus[5:] for t in s.tokens} - {t for s in corpus[:5] for t in s.tokens}
    assert not any(t in v.words for t in unseen)
    assert Vocabs.from_json(json.loads(json.dumps(v.to_json()))).words.itos == v.words.itos


def test_batch_padding_and_masks(corpus, vocabs):
    b = make_batch(corpus[:4], vocabs)
    assert b.ids.shape == b.mask.shape == b.upos.shape
    np.testing.assert_array_equal(b.lengths, [len(s) for s in corpus[:4]])
    assert not np.any(b.ids[~b.mask])
    with pytest.raises(ValueError):
        make_batch([Sentence("e", [])], vocabs)


def test_sentence_layer_length_checked():
    with pytest.raises(ValueError):
        Sentence("x", ["a", "b"], upos=["X"])
    with pytest.raises(ValueError):
        Sentence("x", ["a"], heads=[2])
    with pytest.raises(ValueError):
        NliInstance("1", Sentence("p", ["a"]), Sentence("h", ["b"]), "maybe")


def test_tokenize():
    assert tokenize("Don't stop, it's well-known.") == ["Don't", "stop", ",", "it's", "well-known", "."]


def test_project_tags_requires_trained_tagger(corpus):
    class Untrained:
        trained = False
    with pytest.raises(ValueError):
        project_tags(Untrained(), corpus)

    class Fake:
        trained = True

        def predict_semtags(self, sents):
            return [["T"] * len(s) for s in sents]
    out = project_tags(Fake(), [Sentence("a", ["x", "y"], upos=["N", "V"])])
    assert out[0].semtags == ["T", "T"] and out[0].upos == ["N", "V"]


def test_unseen_gold_label_gets_unmatchable_id(vocabs):
    s = Sentence("u", ["x"], upos=["NEVER-SEEN"])
    b = make_batch([s], vocabs)
    assert b.upos[0, 0] == len(vocabs.upos)
