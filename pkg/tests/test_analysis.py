import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semmtl.analysis import (EvalReport, comparison_sets, corpus_las_uas, emit_frequency_plot, format_prf_table,
                             las_uas, normalized_tag_frequencies, per_label_prf, read_ratios_csv,
                             support_weighted_recall)
from semmtl.data import Sentence
from semmtl.verify import check_analysis


@pytest.mark.parametrize("name", ["six_comparison_sets", "tag_frequency_toy", "prf_hand_confusion"])
def test_hand_verified_analysis(name):
    passed, detail = check_analysis()[name]
    assert passed, detail


def test_comparison_sets_count_and_misalignment():
    outs = {s: {"1": True} for s in "ABCD"}
    assert len(comparison_sets(outs, list("ABCD"))) == 6
    outs["D"] = {"2": True}
    with pytest.raises(ValueError):
        comparison_sets(outs, list("ABCD"))
    with pytest.raises(KeyError):
        comparison_sets(outs, ["A", "Z"])


def test_identical_systems_give_empty_sets():
    outs = {"A": {"1": True, "2": False}, "B": {"1": True, "2": False}}
    assert comparison_sets(outs, ["A", "B"])[0].members == ()


def test_frequencies_of_whole_set_are_one_and_empty_set_is_empty():
    tags = {"1": ["A", "B", "B"], "2": ["C"]}
    assert set(normalized_tag_frequencies(list(tags), tags).values()) == {1.0}
    assert normalized_tag_frequencies([], tags) == {}


def test_per_label_prf_undefined_is_nan():
    prf = per_label_prf(["a", "a"], ["a", "b"], labels=["a", "b", "c"])
    assert prf["a"] == (0.5, 1.0)
    assert prf["b"][1] == 0.0 and math.isnan(prf["b"][0])
    assert all(math.isnan(v) for v in prf["c"])
    assert "—" in format_prf_table(prf)


@settings(max_examples=1000, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2 ** 31))
def test_las_never_exceeds_uas(n, seed):
    r = np.random.default_rng(seed)
    ph, gh = r.integers(0, n + 1, n), r.integers(0, n + 1, n)
    pl, gl = r.choice(list("abc"), n), r.choice(list("abc"), n)
    las, uas = las_uas(ph, pl, gh, gl)
    assert las <= uas


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.sampled_from("xyz"), st.sampled_from("xyz")), min_size=1, max_size=40))
def test_support_weighted_recall_is_accuracy(pairs):
    preds, golds = zip(*pairs)
    acc = np.mean([p == g for p, g in pairs])
    assert abs(support_weighted_recall(preds, golds) - acc) <= 1e-12


def test_corpus_scores_and_length_mismatch():
    g = Sentence("1", ["a", "b"], heads=[0, 1], deprels=["root", "obj"])
    p = Sentence("1", ["a", "b"], heads=[0, 1], deprels=["root", "nsubj"])
    assert corpus_las_uas([p], [g]) == (0.5, 1.0)
    with pytest.raises(ValueError):
        las_uas([0], ["root"], [0, 1], ["root", "obj"])


def test_frequency_plot_outputs(tmp_path):
    svg, csv_path = emit_frequency_plot({"B": 1.0, "A": 2.0, "C": 0.0}, tmp_path / "f", title="t")
    assert svg.read_text().lstrip().startswith(("<?xml", "<svg"))
    assert list(read_ratios_csv(csv_path)) == ["A", "B", "C"]
    with pytest.raises(ValueError):
        emit_frequency_plot({}, tmp_path / "g")


def test_eval_report_json_handles_nan():
    r = EvalReport("nli", {"accuracy": 0.5}, per_label={"a": (float("nan"), 1.0)})
    assert '"a": [\n      null' in r.to_json()
    assert "accuracy" in r.table()
