"""The check battery behind ``semmtl verify``.

Each check returns ``(passed, detail)``.  Gradient checks compare fp64
autodiff gradients against central differences (eps 1e-5) with the
elementwise relative error ``|a - b| / max(|a|, |b|, 1e-8)``; the end-to-end
model checks evaluate the difference quotient in extended precision (see
:func:`check_model_gradients`).
"""
from __future__ import annotations

import itertools
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .analysis import comparison_sets, normalized_tag_frequencies, per_label_prf
from .data import build_vocabs
from .layers import BiLSTM, LstmCell, lstm_step
from .sharing import AUX, MAIN, lws_gate
from .synthetic import correlated_corpus, hand_pairs
from .tasks.base import ModelConfig
from .tasks.mst import is_tree, mst_decode, tree_score
from .tasks.nli import NliModel
from .tasks.parser import ParserModel, biaffine_arc_scores
from .tasks.tagger import TaggerModel
from .training import aux_exclusive_parameters, combine

TOLERANCE = 1e-4
EPSILON = 1e-5
TOY = dict(embed_dim=32, hidden_dim=16, shared_dim=16, mlp_dim=16, label_dim=16)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name:<38} {self.detail}  ({self.seconds:.1f}s)"


# ---------------------------------------------------------------------------
# op gradient checks

def _op_cases(rng: np.random.Generator) -> dict[str, tuple[Callable[..., ad.Node], list[np.ndarray]]]:
    n = rng.normal
    pos = lambda *s: rng.uniform(0.5, 2.0, s)  # noqa: E731
    away = lambda *s: np.sign(n(size=s)) * rng.uniform(0.2, 1.0, s)  # noqa: E731
    mask = rng.random((3, 4)) > 0.3
    mask[:, 0] = True
    ids = np.array([[2, 0, 3], [1, 2, 2]])
    shift = n(size=(3, 4))
    return {
        "add": (ad.add, [n(size=(3, 4)), n(size=(3, 4))]),
        "sub": (ad.sub, [n(size=(3, 4)), n(size=(3, 4))]),
        "mul": (ad.mul, [n(size=(3, 4)), n(size=(3, 4))]),
        "scale": (lambda a: ad.scale(a, -1.7), [n(size=(3, 4))]),
        "add_bias": (ad.add_bias, [n(size=(2, 3, 4)), n(size=4)]),
        "mul_const": (lambda a: ad.mul_const(a, mask), [n(size=(3, 4))]),
        "add_const": (lambda a: ad.add_const(a, shift), [n(size=(3, 4))]),
        "blend": (lambda a, b: ad.blend(mask[:, :1].astype(float), a, b), [n(size=(3, 4)), n(size=(3, 4))]),
        "broadcast_to": (lambda a: ad.broadcast_to(a, (3, 4)), [n(size=(1, 4))]),
        "sigmoid": (ad.sigmoid, [n(size=(3, 4))]),
        "tanh": (ad.tanh, [n(size=(3, 4))]),
        "relu": (ad.relu, [away(3, 4)]),
        "exp": (ad.exp, [n(size=(3, 4))]),
        "log": (ad.log, [pos(3, 4)]),
        "square": (ad.square, [n(size=(3, 4))]),
        "matmul": (ad.matmul, [n(size=(3, 4)), n(size=(4, 2))]),
        "matmul_batched": (ad.matmul, [n(size=(2, 3, 4)), n(size=(4, 2))]),
        "einsum": (lambda a, b, c: ad.einsum("bid,de,bje->bij", a, b, c),
                   [n(size=(2, 3, 4)), n(size=(4, 4)), n(size=(2, 4, 4))]),
        "concat": (lambda a, b: ad.concat([a, b], axis=-1), [n(size=(3, 2)), n(size=(3, 4))]),
        "slice_axis": (lambda a: ad.slice_axis(a, 1, 3, axis=1), [n(size=(3, 4))]),
        "take": (lambda a: ad.take(a, np.array([2, 0, 2]), axis=1), [n(size=(3, 4))]),
        "embed": (lambda t: ad.embed(t, ids), [n(size=(5, 3))]),
        "reshape": (lambda a: ad.reshape(a, (4, 3)), [n(size=(3, 4))]),
        "transpose": (lambda a: ad.transpose(a, (1, 0)), [n(size=(3, 4))]),
        "stack": (lambda a, b: ad.stack([a, b], axis=1), [n(size=(3, 4)), n(size=(3, 4))]),
        "sum": (lambda a: ad.sum(a, axis=0), [n(size=(3, 4))]),
        "mean": (lambda a: ad.mean(a, axis=1), [n(size=(3, 4))]),
        "max": (lambda a: ad.max(a, axis=1), [rng.permutation(12).reshape(3, 4) * 0.3 + n(size=(3, 4)) * 0.01]),
        "softmax": (lambda a: ad.softmax(a, axis=-1), [n(size=(3, 4))]),
        "softmax_masked": (lambda a: ad.softmax(a, axis=-1, mask=mask), [n(size=(3, 4))]),
        "log_softmax": (lambda a: ad.log_softmax(a, axis=-1), [n(size=(3, 4))]),
        "softmax_cross_entropy": (lambda a: ad.softmax_cross_entropy(a, np.array([1, 0, 3]),
                                                                     np.array([True, False, True])),
                                  [n(size=(3, 4))]),
    }


def check_op_gradients(seed: int = 0) -> dict[str, float]:
    """Max relative error per op (over all of its inputs)."""
    rng = np.random.default_rng(seed)
    errors = {}
    for name, (fn, inputs) in _op_cases(rng).items():
        params = {f"x{i}": ad.parameter(v.astype(np.float64)) for i, v in enumerate(inputs)}
        R = np.random.default_rng(seed + 1)
        probe = fn(*params.values())
        weights = R.normal(size=probe.shape)

        def loss(fn=fn, params=params, weights=weights):
            out = fn(*params.values())
            return ad.sum(ad.mul_const(out, weights)) if out.value.size > 1 else out

        errs = ad.gradcheck(loss, params, EPSILON)
        errors[name] = float(np.max(list(errs.values())))
    return errors


def check_recurrent_gradients(seed: int = 0) -> dict[str, float]:
    rng = np.random.default_rng(seed)
    cell = LstmCell(3, 4, rng)
    xs = [ad.constant(rng.normal(size=(2, 3))) for _ in range(3)]
    h0, c0 = ad.constant(np.zeros((2, 4))), ad.constant(np.zeros((2, 4)))
    w = rng.normal(size=(2, 4))

    def lstm_loss():
        h, c = h0, c0
        for x in xs:
            h, c = lstm_step(cell, x, h, c)
        return ad.sum(ad.mul_const(h, w))

    out = {"lstm_3_steps": float(np.max(list(ad.gradcheck(lstm_loss, cell.parameters(), EPSILON).values())))}
    bi = BiLSTM(3, 4, rng)
    x = ad.parameter(rng.normal(size=(2, 4, 3)))
    mask = np.array([[1, 1, 1, 1], [1, 1, 0, 0]], bool)
    wb = rng.normal(size=(2, 4, 8))
    params = {"x": x, **bi.parameters()}
    errs = ad.gradcheck(lambda: ad.sum(ad.mul_const(bi(x, mask), wb)), params, EPSILON)
    out["bilstm_masked"] = float(np.max(list(errs.values())))
    hm, ha = ad.parameter(np.array([1.0, 2.0])), ad.parameter(np.array([3.0]))
    Wa, Wm = ad.parameter(np.array([[0.1, -0.2]])), ad.parameter(np.array([[0.3], [0.4]]))
    errs = ad.gradcheck(lambda: ad.sum(ad.mul_const(ad.concat(list(lws_gate(hm, ha, Wa, Wm))), np.array([1.0, -2.0, 0.5]))),
                        {"hm": hm, "ha": ha, "Wa": Wa, "Wm": Wm}, EPSILON)
    out["lws_gate"] = float(np.max(list(errs.values())))
    H_dep, H_head = ad.parameter(rng.normal(size=(3, 8))), ad.parameter(rng.normal(size=(4, 8)))
    U, u = ad.parameter(rng.normal(size=(8, 8))), ad.parameter(rng.normal(size=8))
    wa = rng.normal(size=(3, 4))
    errs = ad.gradcheck(lambda: ad.sum(ad.mul_const(biaffine_arc_scores(H_dep, H_head, U, u), wa)),
                        {"H_dep": H_dep, "H_head": H_head, "U": U, "u": u}, EPSILON)
    out["biaffine_arc_scores"] = float(np.max(list(errs.values())))
    return out


# ---------------------------------------------------------------------------
# end-to-end model gradient checks

def _jitter(model, rng, scale=0.05):
    """Zero-initialised tensors (gates, biaffine U) get small values so every path is exercised."""
    for p in model.parameters().values():
        if not np.any(p.value):
            p.value = rng.normal(0, scale, p.shape)


def toy_models(topology: str = "LWS", seed: int = 0):
    """Tagger, parser and NLI model at toy size on <= 4-token inputs, each with a loss closure."""
    rng = np.random.default_rng(seed)
    sents = [s for s in correlated_corpus(40, seed) if 2 <= len(s) <= 4][:2]
    pairs = [p for p in hand_pairs() if len(p.premise) <= 4 and len(p.hypothesis) <= 4][:2]
    vocabs = build_vocabs(sents, pairs)
    cfg = ModelConfig(topology=topology, **TOY)
    tagger = TaggerModel(vocabs, cfg, rng)
    parser = ParserModel(vocabs, ModelConfig(topology=topology, layers=4, **TOY), rng)
    nli = NliModel(vocabs, cfg, rng)
    out = {}
    for name, model, items in (("tagger", tagger, sents), ("parser", parser, sents), ("nli", nli, pairs)):
        _jitter(model, rng)
        batch = model.batch(items)

        def loss(model=model, batch=batch):
            main, aux = model.losses(batch)
            return combine(main, aux, 1.0)

        out[name] = (model, loss)
    return out


def check_model_gradients(topology: str = "LWS", max_coords: int = 8, seed: int = 0,
                          oracle_dtype=np.longdouble) -> dict[str, tuple[float, str]]:
    """(max relative error, worst tensor) per model; each tensor is probed on ``max_coords`` coordinates.

    The fp64 analytic gradients are compared with central differences
    evaluated in extended precision: at fp64 the difference quotient carries
    round-off of about ``ulp(loss) / eps`` (~1e-10 here), which swamps
    coordinates whose true gradient is below ~1e-6.
    """
    out = {}
    rng = np.random.default_rng(seed)
    for name, (model, loss) in toy_models(topology, seed).items():
        errs = ad.gradcheck(loss, model.parameters(), EPSILON, max_coords=max_coords, rng=rng,
                            oracle_dtype=oracle_dtype)
        worst = max(errs, key=errs.get)
        out[name] = (errs[worst], worst)
    return out


# ---------------------------------------------------------------------------
# MST

def brute_force_tree(scores: np.ndarray, single_root: bool = True) -> float:
    n = scores.shape[0]
    best = -np.inf
    for heads in itertools.product(range(n + 1), repeat=n):
        if is_tree(heads, single_root):
            best = np.maximum(best, tree_score(scores, heads))
    return float(best)


def check_mst(n_instances: int = 500, n: int = 5, seed: int = 0) -> tuple[int, int]:
    """(mismatches, instances) against exhaustive enumeration, plus the adversarial cycle cases."""
    rng = np.random.default_rng(seed)
    cases = [rng.normal(size=(n, n + 1)) for _ in range(n_instances)]
    cases += adversarial_cases()
    bad = 0
    for s in cases:
        heads = mst_decode(s)
        if not is_tree(heads, True) or abs(tree_score(s, heads) - brute_force_tree(s)) > 1e-9:
            bad += 1
    return bad, len(cases)


def adversarial_cases() -> list[np.ndarray]:
    """Score matrices whose greedy per-token argmax forms cycles or multiple roots."""
    two = np.array([[1.0, -5.0, 10.0], [2.0, 10.0, -5.0]])  # tokens 1 and 2 prefer each other
    three = np.full((3, 4), -3.0)
    three[0, 2] = three[1, 3] = three[2, 1] = 8.0  # 1 -> 2 -> 3 -> 1
    three[:, 0] = [0.5, 1.0, 0.2]
    roots = np.full((4, 5), -1.0)
    roots[:, 0] = 9.0  # every token wants ROOT
    nested = np.full((5, 6), -2.0)
    nested[0, 2] = nested[1, 1 + 0] = 7.0  # cycle 1 <-> 2
    nested[2, 4] = nested[3, 3] = 6.0  # cycle 3 <-> 4
    nested[4, 0] = 1.0
    return [two, three, roots, nested]


# ---------------------------------------------------------------------------
# sharing invariants

def check_sharing(seed: int = 0) -> dict[str, tuple[bool, str]]:
    rng = np.random.default_rng(seed)
    sents = correlated_corpus(6, seed)
    vocabs = build_vocabs(sents)
    batch_items = sents[:3]
    out = {}

    fsn = TaggerModel(vocabs, ModelConfig(topology="FSN", layers=2, **TOY), rng)
    counts = fsn.topology.report()
    out["fsn_no_private_params"] = (counts["private-main"] == 0 and counts["private-aux"] == 0,
                                    f"private-main={counts['private-main']} private-aux={counts['private-aux']}")

    psn = TaggerModel(vocabs, ModelConfig(topology="PSN", layers=2, **TOY), rng)
    b = psn.batch(batch_items)
    for p in psn.parameters().values():
        p.grad = None
    main, _ = psn.losses(b)
    ad.backward(main)
    aux_priv = {k: p for k, p in psn.parameters().items()
                if k.startswith("topology.private.aux.") or k.startswith("heads.aux.")}
    zero = all(p.grad is None or not np.any(p.grad) for p in aux_priv.values())
    out["psn_main_grad_on_aux_private_zero"] = (zero and bool(aux_priv), f"{len(aux_priv)} aux-private tensors")

    lws = TaggerModel(vocabs, ModelConfig(topology="LWS", **TOY), rng)
    _jitter(lws, rng, 0.5)
    b = lws.batch(batch_items)
    before = lws.logits(b)[1].value.copy()
    main_before = lws.logits(b)[0].value.copy()
    a2m = lws.topology.gate["0"]["a2m"]
    a2m.value = a2m.value + rng.normal(0, 1.0, a2m.shape)
    after = lws.logits(b)[1].value
    main_after = lws.logits(b)[0].value
    out["lws_a2m_leaves_aux_unchanged"] = (np.array_equal(before, after) and not np.array_equal(main_before, main_after),
                                           "aux output bitwise equal; main output changed")

    hm, ha = ad.constant(rng.normal(size=(2, 3, 4))), ad.constant(rng.normal(size=(2, 3, 4)))
    gm, ga = lws_gate(hm, ha, ad.parameter(np.zeros((4, 4))), ad.parameter(np.zeros((4, 4))))
    half = np.array_equal(gm.value, hm.value * 0.5) and np.array_equal(ga.value, ha.value * 0.5)
    out["lws_zero_gates_halve"] = (half, "zero gate weights scale shared subspaces by exactly 0.5")

    gm, _ = lws_gate(ad.constant(np.array([1.0, 2.0])), ad.constant(np.array([3.0])),
                     ad.constant(np.array([[0.1, -0.2]])), ad.constant(np.zeros((2, 1))))
    sig = 1.0 / (1.0 + np.exp(-np.array([0.3, -0.6])))
    expect = np.array([1.0, 2.0]) * sig
    err = float(np.max(np.abs(gm.value - expect)))
    out["lws_gate_hand_example"] = (err <= 1e-6, f"max abs error {err:.1e}")
    return out


def check_lambda_ablation(seed: int = 0, steps: int = 10) -> dict[str, tuple[bool, str]]:
    """With lam = 0: aux-exclusive parameters never move; shared gradients equal single-task ones."""
    from .layers import Adam

    rng = np.random.default_rng(seed)
    sents = correlated_corpus(12, seed)
    vocabs = build_vocabs(sents)
    model = TaggerModel(vocabs, ModelConfig(topology="PSN", layers=2, **TOY), rng)
    batch = model.batch(sents[:4])
    main, aux = model.losses(batch)
    excl = aux_exclusive_parameters(model, main, aux)
    snapshot = {k: p.value.copy() for k, p in excl.items()}
    opt = Adam(model.parameters(), 1e-2)
    for _ in range(steps):
        opt.zero_grad()
        m, a = model.losses(batch)
        ad.backward(combine(m, a, 0.0))
        opt.step()
    unchanged = all(np.array_equal(snapshot[k], p.value) for k, p in excl.items())
    out = {"aux_exclusive_bitwise_unchanged": (unchanged and bool(excl), f"{len(excl)} tensors, {steps} steps")}

    params = model.parameters()
    for p in params.values():
        p.grad = None
    m, a = model.losses(batch)
    ad.backward(combine(m, a, 0.0))
    joint = {k: None if p.grad is None else p.grad.copy() for k, p in params.items()}
    for p in params.values():
        p.grad = None
    m, _ = model.losses(batch)
    ad.backward(m)
    worst = 0.0
    for k, p in params.items():
        if k in excl:
            continue
        g1 = np.zeros(p.shape) if joint[k] is None else joint[k]
        g2 = np.zeros(p.shape) if p.grad is None else p.grad
        worst = np.maximum(worst, float(np.max(np.abs(g1 - g2))))
    out["shared_grads_equal_single_task"] = (worst <= 1e-10, f"max abs diff {worst:.1e}")
    return out


# ---------------------------------------------------------------------------
# analysis

def check_analysis() -> dict[str, tuple[bool, str]]:
    out = {}
    ids = [str(i) for i in range(1, 6)]
    outputs = {
        "FSN": dict(zip(ids, [True, False, True, False, False])),
        "ST": dict(zip(ids, [True, True, True, False, False])),
        "PSN": dict(zip(ids, [True, True, True, True, False])),
        "LWS": dict(zip(ids, [True, True, True, True, True])),
    }
    sets = {s.name: s.members for s in comparison_sets(outputs, ["FSN", "ST", "PSN", "LWS"])}
    expect = {"ST-FSN": ("2",), "PSN-FSN": ("2", "4"), "LWS-FSN": ("2", "4", "5"), "PSN-ST": ("4",),
              "LWS-ST": ("4", "5"), "LWS-PSN": ("5",)}
    out["six_comparison_sets"] = (sets == expect, f"{len(sets)} sets")
    # set {1, 2} holds A:2, B:2; the full set has relative frequencies A .25, B .5, C .25
    tags = {"1": ["A", "B"], "2": ["A", "B"], "3": ["B", "C"], "4": ["B", "C"]}
    ratios = normalized_tag_frequencies(["1", "2"], tags, tags)
    ok = ratios == {"A": 2.0, "B": 1.0, "C": 0.0}
    same = normalized_tag_frequencies(list(tags), tags, tags)
    out["tag_frequency_toy"] = (ok and all(v == 1.0 for v in same.values()), f"{ratios}")
    golds = [0] * 6 + [1] * 6
    preds = [0] * 5 + [1] + [0] * 2 + [1] * 4
    prf = per_label_prf(preds, golds, [0, 1])
    expect_prf = {0: (5 / 7, 5 / 6), 1: (4 / 5, 4 / 6)}
    err = max(abs(prf[k][i] - expect_prf[k][i]) for k in expect_prf for i in (0, 1))
    out["prf_hand_confusion"] = (err <= 1e-12, f"max abs error {err:.1e}")
    return out


# ---------------------------------------------------------------------------
# driver

def run_all(inject_fault: str | None = None, mst_instances: int = 500,
            echo: Callable[[str], None] | None = None) -> list[CheckResult]:
    results: list[CheckResult] = []

    def record(name, fn):
        t = time.perf_counter()
        try:
            passed, detail = fn()
        except Exception as err:  # a crashing check is a failing check
            passed, detail = False, f"error: {type(err).__name__}: {err}"
        r = CheckResult(name, bool(passed), detail, time.perf_counter() - t)
        results.append(r)
        if echo:
            echo(r.line())

    def grads_of(fn):
        def run():
            errs = fn()
            bad = {k: v for k, v in errs.items() if v > TOLERANCE}
            worst = max(errs, key=errs.get)
            if bad:
                return False, "failing op(s): " + ", ".join(f"{k} ({v:.1e})" for k, v in bad.items())
            return True, f"{len(errs)} checked, worst {worst} {errs[worst]:.1e}"
        return run

    def models(kind):
        def run():
            errs = check_model_gradients(kind)
            bad = [f"{k} ({v:.1e} at {p})" for k, (v, p) in errs.items() if v > TOLERANCE]
            if bad:
                return False, "failing: " + ", ".join(bad)
            return True, ", ".join(f"{k} {v:.1e}" for k, (v, _) in errs.items())
        return run

    def mst():
        bad, n = check_mst(mst_instances)
        return bad == 0, f"{bad} mismatches over {n} instances"

    def group(fn):
        def run():
            res = fn()
            bad = [k for k, (ok, _) in res.items() if not ok]
            return not bad, ("failing: " + ", ".join(f"{k} [{res[k][1]}]" for k in bad)) if bad else \
                f"{len(res)} properties hold"
        return run

    ctx = ad.inject_fault(inject_fault) if inject_fault else _null()
    with ctx:
        record("op gradients", grads_of(check_op_gradients))
        record("recurrent/gate/biaffine gradients", grads_of(check_recurrent_gradients))
        for kind in ("ST", "FSN", "PSN", "LWS"):
            record(f"model gradients {kind}", models(kind))
    record("mst vs brute force", mst)
    record("sharing invariants", group(check_sharing))
    record("lambda ablation", group(check_lambda_ablation))
    record("analysis oracles", group(check_analysis))
    return results


class _null:
    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False


__all__ = ["run_all", "CheckResult", "check_op_gradients", "check_recurrent_gradients", "check_model_gradients",
           "check_mst", "check_sharing", "check_lambda_ablation", "check_analysis", "brute_force_tree",
           "adversarial_cases", "toy_models", "TOLERANCE", "MAIN", "AUX"]
