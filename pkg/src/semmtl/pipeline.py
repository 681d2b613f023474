"""Run-directory I/O shared by the command-line tools.

A training run directory looks like::

    out/
      config.ini        resolved configuration (defaults + preset + overrides)
      vocabs.json       frozen vocabularies
      model.ckpt        trained parameters
      metrics.csv       epoch, split, metric_name, value
      result.json       the RunResult (per-epoch records, test metrics, wall clock)
      predictions.*     test-set predictions (.conllu for upos/dep, .jsonl for nli)
      pretrain.ckpt     auxiliary-path pretraining checkpoint (nli with pretrain_epochs > 0)

With ``runs > 1`` each run gets a ``run-N/`` subdirectory with the files above
(minus ``config.ini``) and the top level holds ``aggregate.json`` and
``aggregate.csv``.
"""
from __future__ import annotations

import csv
import json
from dataclasses import replace
from pathlib import Path

from .config import ResolvedConfig, load_config
from .data import NliInstance, Vocabs, read_corpus, read_tagset, write_conllu
from .layers import ConfigError, load_checkpoint, restore, save_checkpoint
from .tasks.base import SequenceModel
from .training import Aggregate, Experiment, RunResult, TaskData, build_model

CONFIG_NAME = "config.ini"
METRICS_HEADER = ("epoch", "split", "metric_name", "value")


class DataPathError(FileNotFoundError):
    """A configured data path does not exist."""

    def __init__(self, key: str, path: Path):
        self.key, self.path = key, path
        super().__init__(f"data.{key}: no such file: {path}")


def checked_paths(cfg: ResolvedConfig) -> dict[str, Path | None]:
    paths = cfg.data.resolved()
    for key, p in paths.items():
        if p is not None and not p.exists():
            raise DataPathError(key, p)
    if paths["train"] is None:
        raise ConfigError("data.train is required")
    return paths


def load_experiment(cfg: ResolvedConfig) -> Experiment:
    """Read every configured corpus; raises DataPathError naming the first missing path."""
    paths = checked_paths(cfg)
    tagset = read_tagset(paths["tagset"]) if paths["tagset"] else None

    def read(key):
        return read_corpus(paths[key], tagset) if paths[key] is not None else []

    data = TaskData(read("train"), read("aux_train"), read("dev"), read("test"))
    if cfg.run.data_regime == "disjoint" and cfg.run.topology != "ST" and not data.aux_train:
        if not any(_tagged(x) for x in data.train):
            raise ConfigError("disjoint regime needs data.aux_train (a semantic-tag corpus)")
    ckpt = str(paths["pretrain_checkpoint"]) if paths["pretrain_checkpoint"] else None
    return Experiment(data, tagset=list(tagset) if tagset else (), pretrain_checkpoint=ckpt)


def _tagged(x) -> bool:
    if isinstance(x, NliInstance):
        return x.premise.semtags is not None
    return x.semtags is not None


def write_metrics_csv(path: Path, result: RunResult) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(METRICS_HEADER)
        for epoch, split, name, value in result.metric_rows():
            w.writerow([epoch, split, name, repr(float(value))])


def read_metrics_csv(path: Path) -> list[tuple[int, str, str, float]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != METRICS_HEADER:
            raise ValueError(f"{path}: expected columns {METRICS_HEADER}, got {reader.fieldnames}")
        return [(int(r["epoch"]), r["split"], r["metric_name"], float(r["value"])) for r in reader]


def write_predictions(out_dir: Path, model: SequenceModel, items: list) -> Path | None:
    """Predictions for ``items`` in the task's natural format; returns the path written."""
    if not items:
        return None
    if isinstance(items[0], NliInstance):
        path = out_dir / "predictions.jsonl"
        write_nli_dump(path, model.predict(items))
    else:
        path = out_dir / "predictions.conllu"
        write_conllu(path, model.predict(items))
    return path


def write_nli_dump(path: Path, rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in rows:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def save_run(out_dir: Path, result: RunResult, model: SequenceModel, test_items: list) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out_dir / "model.ckpt", model.parameters())
    (out_dir / "vocabs.json").write_text(json.dumps(model.vocabs.to_json(), indent=1), encoding="utf-8")
    write_metrics_csv(out_dir / "metrics.csv", result)
    (out_dir / "result.json").write_text(json.dumps(result.to_dict(), indent=2, sort_keys=True), encoding="utf-8")
    write_predictions(out_dir, model, test_items)


def save_aggregate(out_dir: Path, agg: Aggregate) -> None:
    obj = {"runs": len(agg.results), "seeds": [r.seed for r in agg.results], "mean": agg.mean,
           "stdev": agg.stdev, "per_run": [r.test for r in agg.results]}
    (out_dir / "aggregate.json").write_text(json.dumps(obj, indent=2, sort_keys=True), encoding="utf-8")
    with open(out_dir / "aggregate.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["metric_name", "mean", "stdev", "runs"])
        for k in sorted(agg.mean):
            w.writerow([k, repr(agg.mean[k]), repr(agg.stdev[k]), len(agg.results)])


def run_dirs(root: Path) -> list[Path]:
    """``root`` itself if it holds a model, else its ``run-N`` subdirectories in order."""
    if (root / "model.ckpt").exists():
        return [root]
    subs = sorted((p for p in root.glob("run-*") if (p / "model.ckpt").exists()),
                  key=lambda p: int(p.name.split("-")[1]))
    return subs


def load_run(run_dir: Path) -> tuple[ResolvedConfig, SequenceModel]:
    """Rebuild the trained model stored in ``run_dir`` (config may sit one level up)."""
    run_dir = Path(run_dir)
    cfg_path = run_dir / CONFIG_NAME
    if not cfg_path.exists():
        cfg_path = run_dir.parent / CONFIG_NAME
    for p in (cfg_path, run_dir / "vocabs.json", run_dir / "model.ckpt"):
        if not p.exists():
            raise DataPathError("run", p)
    cfg = load_config(cfg_path)
    result_path = run_dir / "result.json"
    if result_path.exists():  # each run of a multi-run directory has its own seed
        seed = json.loads(result_path.read_text(encoding="utf-8"))["seed"]
        cfg = replace(cfg, run=replace(cfg.run, seed=seed))
    vocabs = Vocabs.from_json(json.loads((run_dir / "vocabs.json").read_text(encoding="utf-8")))
    model = build_model(cfg.run, vocabs)
    restore(model, load_checkpoint(run_dir / "model.ckpt"))
    model.mark_trained()
    return cfg, model


__all__ = ["DataPathError", "load_experiment", "checked_paths", "save_run", "save_aggregate", "load_run",
           "run_dirs", "write_metrics_csv", "read_metrics_csv", "write_predictions", "write_nli_dump",
           "CONFIG_NAME", "METRICS_HEADER"]
