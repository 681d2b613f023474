import math
from dataclasses import replace

import numpy as np
import pytest

from semmtl import autodiff as ad
from semmtl.data import build_vocabs
from semmtl.layers import ConfigError, save_checkpoint
from semmtl.synthetic import correlated_corpus, split_tasks
from semmtl.tasks import TaggerModel
from semmtl.tasks.base import ModelConfig
from semmtl.training import (PRESETS, Experiment, RunConfig, RunResult, TaskData, TrainingError, aggregate,
                             build_model, combine, joint_loss, multi_run, preset, run_experiment, schedule,
                             steps_per_epoch, train)
from semmtl.verify import check_lambda_ablation

from conftest import TOY


def _config(**kw):
    base = dict(task="upos", topology="LWS", lam=1.0, learning_rate=1e-2, batch_size=8, epochs=2, dropout=0.0,
                data_regime="overlapped", runs=1, model=ModelConfig(**TOY))
    return RunConfig(**{**base, **kw})


def test_joint_loss_value_and_negative_lambda():
    m, a = ad.constant(np.array(2.0)), ad.constant(np.array(3.0))
    assert float(joint_loss(m, a, 0.5).value) == 3.5
    with pytest.raises(ConfigError):
        joint_loss(m, a, -0.1)
    assert combine(None, a, 0.5).value == 1.5
    assert combine(m, None, 0.5) is m
    assert combine(None, None, 0.5) is None


@pytest.mark.parametrize("name", ["aux_exclusive_bitwise_unchanged", "shared_grads_equal_single_task"])
def test_lambda_ablation_contract(name):
    passed, detail = check_lambda_ablation()[name]
    assert passed, detail


def test_disjoint_schedule_is_homogeneous_and_counts_steps():
    a, b = [("a", i) for i in range(10)], [("b", i) for i in range(7)]
    batches = schedule([a, b], 4, np.random.default_rng(0))
    assert len(batches) == steps_per_epoch([10, 7], 4) == 3 + 2
    assert all(len({x[0] for x in batch}) == 1 for batch in batches)
    assert sorted(x for batch in batches for x in batch) == sorted(a + b)


def test_disjoint_training_step_count():
    sents = correlated_corpus(30, seed=2)
    main, aux = split_tasks(sents)
    cfg = _config(data_regime="disjoint", epochs=1)
    model = build_model(cfg, build_vocabs(main, aux))
    res = train(cfg, model, TaskData(main, aux))
    assert res.steps == math.ceil(len(main) / 8) + math.ceil(len(aux) / 8)
    assert set(res.epochs[0]) >= {"epoch", "loss", "main_loss", "aux_loss", "dev", "train"}


def test_same_seed_gives_bitwise_identical_checkpoints(tmp_path):
    sents = correlated_corpus(20, seed=4)
    exp = Experiment(TaskData(sents[:16], dev=sents[16:]))
    blobs = []
    for i in range(2):
        _, model = run_experiment(_config(dropout=0.2, recurrent_dropout=0.2), exp)
        save_checkpoint(tmp_path / f"{i}.ckpt", model.parameters())
        blobs.append((tmp_path / f"{i}.ckpt").read_bytes())
    assert blobs[0] == blobs[1]
    _, other = run_experiment(_config(seed=2), exp)
    save_checkpoint(tmp_path / "o.ckpt", other.parameters())
    assert (tmp_path / "o.ckpt").read_bytes() != blobs[0]


def test_nonfinite_loss_raises_with_location():
    sents = correlated_corpus(8, seed=1)
    cfg = _config(epochs=1)
    model = build_model(cfg, build_vocabs(sents))
    model.embedding.table.value[2:] = np.nan
    with pytest.raises(TrainingError) as info:
        train(cfg, model, TaskData(sents))
    assert "epoch 1" in str(info.value)


def test_early_stopping_callback():
    sents = correlated_corpus(8, seed=1)
    cfg = _config(epochs=5)
    seen = []
    res = train(cfg, build_model(cfg, build_vocabs(sents)), TaskData(sents),
                on_epoch=lambda e, rec, m: seen.append(e) or e == 2)
    assert seen == [1, 2] and len(res.epochs) == 2


def test_metric_rows_schema():
    r = RunResult(1, epochs=[{"epoch": 1, "loss": 1.0, "main_loss": 0.5, "aux_loss": None,
                              "dev": {"upos_acc": 0.5}, "train": {}}], test={"upos_acc": 0.4})
    rows = r.metric_rows()
    assert (1, "train", "loss", 1.0) in rows and (1, "dev", "upos_acc", 0.5) in rows
    assert all(len(row) == 4 for row in rows)


def test_aggregate_uses_sample_stdev():
    runs = [RunResult(i, test={"acc": v}) for i, v in enumerate([0.5, 0.7, 0.9])]
    agg = aggregate(runs)
    assert agg.mean["acc"] == pytest.approx(0.7)
    assert agg.stdev["acc"] == pytest.approx(0.2)
    assert aggregate(runs[:1]).stdev["acc"] == 0.0


def test_multi_run_seeds():
    seeds = []

    def runner(cfg, exp):
        seeds.append(cfg.seed)
        return RunResult(cfg.seed, test={"acc": 1.0}), None
    cfg = _config(seed=10)
    multi_run(cfg, None, 3, runner=runner)
    multi_run(cfg, None, 2, runner=runner, same_seed=True)
    assert seeds == [10, 11, 12, 10, 10]
    with pytest.raises(ConfigError):
        multi_run(cfg, None, 0, runner=runner)


def test_presets():
    assert set(PRESETS) == {"upos", "dep", "snli", "sicke"}
    dep = preset("dep", "lws")
    assert (dep.lam, dep.learning_rate, dep.batch_size, dep.dropout) == (0.5, 2e-3, 50, 0.33)
    assert dep.model_config().layers == 4
    assert preset("sicke").batch_size == 8
    assert dep.model.embed_dropout == 0.33 and dep.recurrent_dropout == 0.0
    assert all(preset(n).recurrent_dropout == 0.3 for n in ("upos", "snli", "sicke"))
    with pytest.raises(ConfigError):
        preset("pos")


@pytest.mark.parametrize("bad", [dict(task="srl"), dict(lam=-1.0), dict(epochs=0), dict(batch_size=0),
                                 dict(learning_rate=0.0), dict(data_regime="mixed"), dict(runs=0)])
def test_invalid_run_config(bad):
    with pytest.raises(ConfigError):
        _config(**bad)


def test_overlapped_projection_fills_missing_tags():
    sents = correlated_corpus(40, seed=5)
    main = [replace(s, semtags=None) for s in sents[:20]]
    exp = Experiment(TaskData(main, aux_train=sents[20:]))
    result, model = run_experiment(_config(epochs=1), exp)
    assert result.epochs[0]["aux_loss"] is not None
    assert isinstance(model, TaggerModel) and model.has_aux
