"""Acceptance criteria 1-10, one PASS/FAIL line each.

Run with ``pytest tests/test_acceptance.py -v`` (the lines are printed even
under output capture) or directly with ``python tests/test_acceptance.py``.
Criterion 10 is a qualitative direction check and is reported, never asserted.
"""
from __future__ import annotations

import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from semmtl.analysis import las_uas, support_weighted_recall
from semmtl.config import fixtures_dir
from semmtl.data import build_vocabs, read_conllu, read_semtag_tsv, write_conllu, write_semtag_tsv
from semmtl.layers import load_checkpoint, save_checkpoint
from semmtl.synthetic import ToyLanguage, add_label_noise, correlated_corpus, hand_pairs, split_tasks
from semmtl.tasks.base import ModelConfig
from semmtl.training import Experiment, RunConfig, TaskData, build_model, run_experiment, train
from semmtl.verify import (TOLERANCE, check_analysis, check_lambda_ablation, check_model_gradients, check_mst,
                           check_op_gradients, check_recurrent_gradients, check_sharing)

OVERFIT_BUDGET = 180.0  # seconds per smoke test
GRADIENT_BUDGET = 120.0
SMOKE = ModelConfig(embed_dim=32, hidden_dim=16, shared_dim=16, mlp_dim=32, label_dim=32)


def report(number: int, passed: bool, detail: str, title: str) -> str:
    status = "PASS" if passed else "FAIL"
    return f"criterion {number:>2} [{status}] {title}: {detail}"


# ---------------------------------------------------------------------------
# criteria

def criterion_1():
    t = time.perf_counter()
    errs = {f"op:{k}": v for k, v in check_op_gradients().items()}
    errs.update({f"rec:{k}": v for k, v in check_recurrent_gradients().items()})
    for kind in ("ST", "FSN", "PSN", "LWS"):
        for model, (err, tensor) in check_model_gradients(kind).items():
            errs[f"{model}/{kind}:{tensor}"] = err
    secs = time.perf_counter() - t
    worst = max(errs, key=errs.get)
    bad = [k for k, v in errs.items() if v > TOLERANCE]
    passed = not bad and secs < GRADIENT_BUDGET
    detail = (f"{len(errs)} checks, worst {worst} {errs[worst]:.1e} (tol {TOLERANCE:.0e}), {secs:.0f}s "
              f"(budget {GRADIENT_BUDGET:.0f}s)" + (f"; failing {bad}" if bad else ""))
    return passed, detail, "gradient fidelity"


def criterion_2():
    bad, n = check_mst(500)
    return bad == 0, f"{bad} mismatches over {n} instances (500 random + adversarial)", "MST oracle equivalence"


def criterion_3():
    res = check_sharing()
    keys = ["fsn_no_private_params", "psn_main_grad_on_aux_private_zero", "lws_a2m_leaves_aux_unchanged"]
    passed = all(res[k][0] for k in keys)
    return passed, "; ".join(f"{k}={'ok' if res[k][0] else 'FAIL'}" for k in keys), "sharing structure"


def criterion_4():
    res = check_sharing()
    keys = ["lws_zero_gates_halve", "lws_gate_hand_example"]
    passed = all(res[k][0] for k in keys)
    return passed, "; ".join(f"{k}: {res[k][1]}" for k in keys), "LWS gate analytics"


def criterion_5():
    res = check_lambda_ablation()
    passed = all(ok for ok, _ in res.values())
    return passed, "; ".join(f"{k}: {d}" for k, (_, d) in res.items()), "lambda-ablation contract"


def _overfit(task, topology, items, target, keys, epochs, lr, batch_size, model):
    cfg = RunConfig(task=task, topology=topology, lam=1.0, learning_rate=lr, batch_size=batch_size, epochs=epochs,
                    dropout=0.0, data_regime="overlapped", runs=1, eval_train=True, model=model)
    net = build_model(cfg, build_vocabs(items))
    t = time.perf_counter()
    res = train(cfg, net, TaskData(items),
                on_epoch=lambda e, rec, m: all(rec["train"].get(k, 0.0) >= target for k in keys))
    secs = time.perf_counter() - t
    got = {k: res.epochs[-1]["train"].get(k, 0.0) for k in keys}
    ok = all(v >= target for v in got.values()) and secs < OVERFIT_BUDGET
    vals = " ".join(f"{k}={100 * v:.1f}%" for k, v in got.items())
    return ok, f"{task}/{topology} {vals} in {len(res.epochs)} ep, {secs:.1f}s"


def criterion_6():
    runs = [_overfit("upos", "ST", correlated_corpus(50, seed=0), 0.99, ["upos_acc"], 200, 1e-2, 10, SMOKE)]
    big = correlated_corpus(200, seed=1)
    for kind in ("FSN", "PSN", "LWS"):
        runs.append(_overfit("upos", kind, big, 0.95, ["upos_acc", "semtag_acc"], 200, 1e-2, 20,
                             replace(SMOKE, layers=2 if kind == "PSN" else 1)))
    runs.append(_overfit("dep", "LWS", correlated_corpus(10, seed=2), 1.0, ["uas"], 300, 2e-3, 10,
                         replace(SMOKE, layers=4)))
    runs.append(_overfit("nli", "LWS", hand_pairs(), 1.0, ["accuracy"], 200, 1e-2, 8, SMOKE))
    return all(ok for ok, _ in runs), "; ".join(d for _, d in runs), "overfit smoke tests"


def criterion_7():
    res = check_analysis()
    return all(ok for ok, _ in res.values()), "; ".join(f"{k}: {d}" for k, (_, d) in res.items()), \
        "analysis pipeline"


def criterion_8():
    rng = np.random.default_rng(8)
    violations, worst = 0, 0.0
    for _ in range(1000):
        n = int(rng.integers(1, 12))
        ph, gh = rng.integers(0, n + 1, n), rng.integers(0, n + 1, n)
        pl, gl = rng.choice(list("abcd"), n), rng.choice(list("abcd"), n)
        las, uas = las_uas(ph, pl, gh, gl)
        violations += las > uas
        preds, golds = list(rng.choice(list("xyz"), 30)), list(rng.choice(list("xyz"), 30))
        acc = float(np.mean([p == g for p, g in zip(preds, golds)]))
        worst = max(worst, abs(support_weighted_recall(preds, golds) - acc))
    passed = violations == 0 and worst <= 1e-12
    return passed, f"{violations} LAS>UAS violations in 1000 trials; max |recall-acc| {worst:.1e}", \
        "metric identities"


def criterion_9(tmp: Path):
    notes = []
    sents = correlated_corpus(20, seed=9)
    exp = Experiment(TaskData(sents[:16], dev=sents[16:]))
    cfg = RunConfig(task="upos", topology="LWS", lam=1.0, learning_rate=1e-2, batch_size=8, epochs=2, dropout=0.3,
                    recurrent_dropout=0.2, data_regime="overlapped", runs=1, seed=3, model=SMOKE)
    blobs = []
    for i in range(2):
        _, model = run_experiment(cfg, exp)
        save_checkpoint(tmp / f"seed-{i}.ckpt", model.parameters())
        blobs.append((tmp / f"seed-{i}.ckpt").read_bytes())
    same_seed = blobs[0] == blobs[1]
    notes.append(f"same-seed checkpoints identical={same_seed}")

    state = load_checkpoint(tmp / "seed-0.ckpt")
    save_checkpoint(tmp / "again.ckpt", state)
    ckpt_rt = (tmp / "again.ckpt").read_bytes() == blobs[0] and all(
        np.array_equal(state[k], p.value) for k, p in model.parameters().items())
    notes.append(f"checkpoint round-trip={ckpt_rt}")

    fx = fixtures_dir()
    conllu_ok = True
    for name in ("ud-train.conllu", "ud-dev.conllu", "ud-test.conllu"):
        a = read_conllu(fx / name)
        write_conllu(tmp / name, a)
        conllu_ok &= read_conllu(tmp / name) == a
    tsv_ok = True
    for name in ("sempmb-train.tsv", "sempmb-test.tsv"):
        a = read_semtag_tsv(fx / name)
        write_semtag_tsv(tmp / name, a)
        tsv_ok &= read_semtag_tsv(tmp / name) == a
    notes.append(f"CoNLL-U round-trip={conllu_ok}, TSV round-trip={tsv_ok}")
    return same_seed and ckpt_rt and conllu_ok and tsv_ok, "; ".join(notes), "determinism and round-trips"


def _direction_run(seed: int) -> dict[str, float]:
    """Noisy main-task labels (30%), 60 main vs 300 auxiliary sentences, disjoint regime, clean dev set."""
    lang = ToyLanguage.create(np.random.default_rng(100 + seed))
    sents = correlated_corpus(460, seed=seed, language=lang)
    main, _ = split_tasks(sents[:60])
    _, aux = split_tasks(sents[60:360])
    exp = Experiment(TaskData(add_label_noise(main, 0.3, seed=seed), aux, sents[360:]))
    out = {}
    for kind in ("ST", "LWS"):
        cfg = RunConfig(task="upos", topology=kind, lam=1.0, learning_rate=1e-2, batch_size=16, epochs=15,
                        dropout=0.0, data_regime="disjoint", runs=1, seed=seed, model=SMOKE)
        res, _ = run_experiment(cfg, exp)
        out[kind] = res.epochs[-1]["dev"]["upos_acc"]
    return out


def criterion_10():
    runs = [_direction_run(s) for s in range(5)]
    wins = sum(r["LWS"] >= r["ST"] for r in runs)
    detail = (f"LWS >= ST in {wins}/5 seeded runs (need 4); dev acc "
              + ", ".join(f"{100 * r['LWS']:.1f} vs {100 * r['ST']:.1f}" for r in runs)
              + " [report-only, non-gating]")
    return wins >= 4, detail, "qualitative direction check"


CRITERIA = {1: criterion_1, 2: criterion_2, 3: criterion_3, 4: criterion_4, 5: criterion_5, 6: criterion_6,
            7: criterion_7, 8: criterion_8, 9: criterion_9, 10: criterion_10}
GATING = set(range(1, 10))


def evaluate(number: int, tmp: Path | None = None):
    fn = CRITERIA[number]
    passed, detail, title = fn(tmp) if number == 9 else fn()
    return passed, report(number, passed, detail, title)


# ---------------------------------------------------------------------------
# pytest entry points

@pytest.mark.parametrize("number", sorted(CRITERIA))
def test_criterion(number, tmp_path, capsys):
    passed, line = evaluate(number, tmp_path)
    with capsys.disabled():
        print("\n" + line, flush=True)
    if number in GATING:
        assert passed, line


if __name__ == "__main__":
    import tempfile

    failed = 0
    with tempfile.TemporaryDirectory() as d:
        for n in sorted(CRITERIA):
            ok, line = evaluate(n, Path(d))
            print(line, flush=True)
            failed += (not ok) and n in GATING
    sys.exit(1 if failed else 0)
