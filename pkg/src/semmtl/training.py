"""Joint training: loss combination, batch scheduling, runs and ablation."""
from __future__ import annotations

import logging
import math
import statistics
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Node, NonFiniteError
from .data import NliInstance, Sentence, Vocabs, build_vocabs, project_tags
from .layers import Adam, ConfigError, Module, clip_grad_norm, load_checkpoint, restore
from .sharing import AUX
from .tasks.base import ModelConfig, SequenceModel
from .tasks.nli import NliModel, pretrain_aux_encoder
from .tasks.parser import ParserModel
from .tasks.tagger import TaggerModel

log = logging.getLogger(__name__)

TASKS = ("upos", "dep", "nli")
REGIMES = ("disjoint", "overlapped")


class TrainingError(RuntimeError):
    pass


@dataclass
class RunConfig:
    task: str = "upos"
    topology: str = "LWS"
    lam: float = 0.1
    learning_rate: float = 1e-4
    batch_size: int = 128
    epochs: int = 20
    dropout: float = 0.3
    recurrent_dropout: float = 0.0
    seed: int = 1
    data_regime: str = "disjoint"
    runs: int = 5
    clip_norm: float | None = 5.0
    pretrain_epochs: int = 0
    eval_train: bool = False
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.lam < 0:
            raise ConfigError(f"auxiliary loss weight must be >= 0, got {self.lam}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.data_regime not in REGIMES:
            raise ConfigError(f"data_regime must be one of {REGIMES}, got {self.data_regime!r}")
        if self.runs < 1:
            raise ConfigError("runs must be >= 1")

    def model_config(self) -> ModelConfig:
        """The model config with this run's topology and dropout rates applied."""
        layers = 4 if self.task == "dep" else self.model.layers
        return replace(self.model, topology=self.topology, dropout=self.dropout,
                       recurrent_dropout=self.recurrent_dropout, layers=layers)

    def to_dict(self) -> dict:
        return asdict(self)


# learning rate, batch size, epochs, auxiliary weight and dropout rates per task family
PRESETS = {
    "upos": dict(task="upos", learning_rate=1e-4, batch_size=128, epochs=20, lam=0.1, dropout=0.3,
                 recurrent_dropout=0.3),
    "dep": dict(task="dep", learning_rate=2e-3, batch_size=50, epochs=15, lam=0.5, dropout=0.33,
                model=ModelConfig(embed_dropout=0.33)),
    "snli": dict(task="nli", learning_rate=5e-5, batch_size=128, epochs=37, lam=0.1, dropout=0.3,
                 recurrent_dropout=0.3),
    "sicke": dict(task="nli", learning_rate=5e-5, batch_size=8, epochs=20, lam=0.1, dropout=0.3,
                  recurrent_dropout=0.3),
}


def preset(name: str, topology: str = "LWS", **overrides) -> RunConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; known: {sorted(PRESETS)}")
    return RunConfig(**{**PRESETS[name], "topology": topology.upper(), **overrides})


# ---------------------------------------------------------------------------
# losses

def joint_loss(main_loss: Node, aux_loss: Node, lam: float) -> Node:
    """``main + lam * aux``."""
    if lam < 0:
        raise ConfigError(f"auxiliary loss weight must be >= 0, got {lam}")
    if main_loss.value.size != 1 or aux_loss.value.size != 1:
        raise ad.ShapeError("joint_loss: both losses must be scalars")
    return ad.add(main_loss, ad.scale(aux_loss, lam))


def combine(main: Node | None, aux: Node | None, lam: float) -> Node | None:
    """Masked joint loss: a task absent from the batch contributes nothing."""
    if main is not None and aux is not None:
        return joint_loss(main, aux, lam)
    if main is not None:
        return main
    if aux is not None:
        return ad.scale(aux, lam)
    return None


# ---------------------------------------------------------------------------
# data and scheduling

@dataclass
class TaskData:
    """``train`` holds main-task instances; ``aux_train`` the semantic-tag corpus (disjoint regime)."""
    train: list
    aux_train: list = field(default_factory=list)
    dev: list = field(default_factory=list)
    test: list = field(default_factory=list)


def schedule(corpora: Sequence[Sequence], batch_size: int, rng: np.random.Generator) -> list[list]:
    """Homogeneous batches: each corpus is shuffled and cut separately, then the batches are shuffled.

    Produces ``sum(ceil(len(c) / batch_size))`` batches.
    """
    batches = []
    for corpus in corpora:
        if not corpus:
            continue
        order = rng.permutation(len(corpus))
        for i in range(0, len(order), batch_size):
            batches.append([corpus[j] for j in order[i: i + batch_size]])
    return [batches[i] for i in rng.permutation(len(batches))]


def steps_per_epoch(sizes: Sequence[int], batch_size: int) -> int:
    return int(np.sum([math.ceil(n / batch_size) for n in sizes if n]))


# ---------------------------------------------------------------------------
# models

def build_model(config: RunConfig, vocabs: Vocabs, rng: np.random.Generator | None = None) -> SequenceModel:
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    mc = config.model_config()
    if config.task == "upos":
        return TaggerModel(vocabs, mc, rng)
    if config.task == "dep":
        return ParserModel(vocabs, mc, rng)
    return NliModel(vocabs, mc, rng)


def reachable_parameters(loss: Node, params: dict[str, Node]) -> set[str]:
    """Names of the parameters that ``loss`` depends on."""
    ids = {n.id for n in ad._toposort(loss)}
    return {k for k, p in params.items() if p.id in ids}


def aux_exclusive_parameters(model: Module, main_loss: Node, aux_loss: Node) -> dict[str, Node]:
    """Parameters reached by the auxiliary loss but not by the main loss."""
    params = model.parameters()
    main = reachable_parameters(main_loss, params)
    aux = reachable_parameters(aux_loss, params)
    return {k: params[k] for k in params if k in aux and k not in main}


# ---------------------------------------------------------------------------
# training loop

@dataclass
class RunResult:
    seed: int
    epochs: list[dict] = field(default_factory=list)
    test: dict[str, float] = field(default_factory=dict)
    steps: int = 0
    wall_clock: float = 0.0
    config: dict = field(default_factory=dict)

    def stream(self, key: str, split: str | None = None) -> list[float]:
        if split is None:
            return [e[key] for e in self.epochs]
        return [e[split].get(key, float("nan")) for e in self.epochs]

    def to_dict(self) -> dict:
        return asdict(self)

    def metric_rows(self) -> list[tuple[int, str, str, float]]:
        """``(epoch, split, metric_name, value)`` rows for the metrics log."""
        rows = []
        for e in self.epochs:
            for k in ("loss", "main_loss", "aux_loss"):
                if e.get(k) is not None:
                    rows.append((e["epoch"], "train", k, e[k]))
            for split in ("train", "dev"):
                for k, v in sorted(e.get(split, {}).items()):
                    rows.append((e["epoch"], split, k, v))
        for k, v in sorted(self.test.items()):
            rows.append((len(self.epochs), "test", k, v))
        return rows


def _finite_grads(params) -> bool:
    return all(p.grad is None or np.all(np.isfinite(p.grad)) for p in params)


def _diagnose(model, batch, config, rng_state, epoch: int, step: int) -> TrainingError:
    """Re-run a step in checked mode to find the op that first produced a non-finite value."""
    rng = np.random.default_rng()
    rng.bit_generator.state = rng_state
    for p in model.parameters().values():
        p.grad = None
    op = "unknown"
    try:
        with ad.checked():
            main, aux = model.losses(model.batch(batch), training=True, rng=rng)
            loss = combine(main, aux, config.lam)
            if loss is not None:
                ad.backward(loss)
    except NonFiniteError as err:
        op = err.op
    return TrainingError(f"non-finite loss at epoch {epoch}, step {step}: first produced by op '{op}'")


def train(config: RunConfig, model: SequenceModel, data: TaskData,
          on_epoch: Callable[[int, dict, SequenceModel], bool | None] | None = None) -> RunResult:
    """Train ``model`` for ``config.epochs`` epochs; the final parameters are the last epoch's.

    ``on_epoch(epoch, record, model)`` may return True to stop early (used by
    the smoke tests to bound runtime; regular runs never stop early).
    """
    config.validate()
    if not data.train:
        raise TrainingError("no training instances")
    if config.data_regime == "overlapped":
        missing = [x.id for x in data.train if not _has_semtags(x)]
        if missing and model.has_aux:
            raise TrainingError(f"overlapped regime needs semantic tags on every training instance; "
                                f"missing on {missing[:5]} (project them first)")
        corpora = [data.train]
    else:
        corpora = [data.train, data.aux_train if model.has_aux else []]
    params = model.parameters()
    opt = Adam(params, config.learning_rate)
    rng = np.random.default_rng([config.seed, 1])
    result = RunResult(seed=config.seed, config=config.to_dict())
    start = time.perf_counter()
    for epoch in range(1, config.epochs + 1):
        sums = {"loss": [], "main_loss": [], "aux_loss": []}
        for step, items in enumerate(schedule(corpora, config.batch_size, rng), 1):
            state = rng.bit_generator.state
            opt.zero_grad()
            main, aux = model.losses(model.batch(items), training=True, rng=rng)
            loss = combine(main, aux, config.lam)
            if loss is not None:
                if not np.isfinite(loss.value):
                    raise _diagnose(model, items, config, state, epoch, step)
                ad.backward(loss)
                if not _finite_grads(params.values()):
                    raise _diagnose(model, items, config, state, epoch, step)
                if config.clip_norm:
                    clip_grad_norm(params.values(), config.clip_norm)
                sums["loss"].append(float(loss.value))
            opt.step()
            result.steps += 1
            if main is not None:
                sums["main_loss"].append(float(main.value))
            if aux is not None:
                sums["aux_loss"].append(float(aux.value))
        record = {"epoch": epoch, **{k: (float(np.mean(v)) if v else None) for k, v in sums.items()}}
        record["dev"] = model.evaluate(data.dev) if data.dev else {}
        record["train"] = model.evaluate(data.train) if config.eval_train else {}
        result.epochs.append(record)
        log.info("epoch %d loss %s dev %s", epoch, record["loss"], record["dev"])
        if on_epoch is not None and on_epoch(epoch, record, model):
            break
    model.mark_trained()
    if data.test:
        result.test = model.evaluate(data.test)
    result.wall_clock = time.perf_counter() - start
    return result


def _has_semtags(x) -> bool:
    if isinstance(x, NliInstance):
        return x.premise.semtags is not None and x.hypothesis.semtags is not None
    return x.semtags is not None


# ---------------------------------------------------------------------------
# experiments

@dataclass
class Experiment:
    """Everything needed to run one configuration: the data and a way to build the model."""
    data: TaskData
    tagset: Sequence[str] = ()
    pretrain_checkpoint: str | None = None  # warm-start from this file instead of pretraining
    pretrain_save: str | None = None  # where to write the pretrained parameters
    vocabs: Vocabs | None = None

    def build_vocabs(self) -> Vocabs:
        if self.vocabs is None:
            self.vocabs = build_vocabs(self.data.train, self.data.aux_train, tagset=self.tagset)
        return self.vocabs


def project_missing_tags(config: RunConfig, exp: Experiment) -> TaskData:
    """Overlapped regime without gold semantic tags: tag the main corpora with a tagger trained on the aux corpus."""
    d = exp.data
    if all(_has_semtags(x) for x in d.train) or not d.aux_train:
        return d
    vocabs = exp.build_vocabs()
    tagger = TaggerModel(vocabs, replace(config.model, topology="ST", dropout=0.0, recurrent_dropout=0.0),
                         np.random.default_rng(config.seed), main_layer="semtags")
    tcfg = replace(config, task="upos", topology="ST", data_regime="overlapped", lam=0.0,
                   learning_rate=max(config.learning_rate, 1e-3), eval_train=False)
    train(tcfg, tagger, TaskData(list(d.aux_train)))
    log.info("projected semantic tags onto %d training instances", len(d.train))
    return TaskData(project_tags(tagger, d.train), [], project_tags(tagger, d.dev) if d.dev else [],
                    project_tags(tagger, d.test) if d.test else [])


def run_experiment(config: RunConfig, exp: Experiment,
                   on_epoch: Callable | None = None) -> tuple[RunResult, SequenceModel]:
    vocabs = exp.build_vocabs()
    data = exp.data
    if config.data_regime == "overlapped" and config.topology != "ST":
        data = project_missing_tags(config, exp)
    model = build_model(config, vocabs, np.random.default_rng(config.seed))
    if config.pretrain_epochs and model.has_aux:
        if exp.pretrain_checkpoint:
            restore(model, load_checkpoint(exp.pretrain_checkpoint), strict=False)
        else:
            pretrain_aux_encoder(model, exp.data.aux_train, epochs=config.pretrain_epochs,
                                 batch_size=min(config.batch_size, 32), seed=config.seed,
                                 learning_rate=max(config.learning_rate, 1e-3), checkpoint=exp.pretrain_save)
    result = train(config, model, data, on_epoch)
    return result, model


def ablate_aux(config: RunConfig, exp: Experiment, on_epoch: Callable | None = None) -> tuple[RunResult, SequenceModel]:
    """Same architecture, auxiliary weight forced to zero."""
    return run_experiment(replace(config, lam=0.0), exp, on_epoch)


@dataclass
class Aggregate:
    results: list[RunResult]
    mean: dict[str, float]
    stdev: dict[str, float]


def aggregate(results: Sequence[RunResult]) -> Aggregate:
    keys = sorted(set().union(*(r.test for r in results)))
    mean, stdev = {}, {}
    for k in keys:
        vals = [r.test[k] for r in results if k in r.test]
        mean[k] = statistics.fmean(vals)
        stdev[k] = statistics.stdev(vals) if len(vals) > 1 else 0.0
    return Aggregate(list(results), mean, stdev)


def multi_run(config: RunConfig, exp: Experiment, n_runs: int | None = None,
              runner: Callable[[RunConfig, Experiment], tuple[RunResult, SequenceModel]] = run_experiment,
              same_seed: bool = False) -> Aggregate:
    """Run with seeds ``seed + i`` (or the same seed when ``same_seed``) and average the test metrics."""
    n = config.runs if n_runs is None else n_runs
    if n < 1:
        raise ConfigError("n_runs must be >= 1")
    results = []
    for i in range(n):
        cfg = replace(config, seed=config.seed + (0 if same_seed else i))
        results.append(runner(cfg, exp)[0])
    return aggregate(results)


__all__ = ["RunConfig", "RunResult", "TaskData", "Experiment", "PRESETS", "preset", "joint_loss", "combine",
           "schedule", "steps_per_epoch", "train", "build_model", "run_experiment", "ablate_aux", "multi_run",
           "aggregate", "aux_exclusive_parameters", "reachable_parameters", "TrainingError", "AUX",
           "Sentence"]
