"""``semmtl`` command-line entry point.

Subcommands: train, eval, tag, analyze, verify, report.
Exit codes: 0 success, 1 check or evaluation failure, 2 usage / config / missing-path error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .analysis import (EvalReport, comparison_sets, emit_frequency_plot, format_prf_table,
                       normalized_tag_frequencies, per_label_prf, write_ratios_csv)
from .config import list_presets, load_config
from .data import NliInstance, ParseError, read_corpus, read_tagset, write_conllu, write_semtag_tsv
from .layers import ConfigError
from .pipeline import (CONFIG_NAME, DataPathError, load_experiment, load_run, read_metrics_csv, run_dirs,
                       save_aggregate, save_run, write_nli_dump, write_predictions)
from .training import TrainingError, aggregate, run_experiment

log = logging.getLogger("semmtl")

OK, FAILED, USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _echo(msg: str = "") -> None:
    print(msg, flush=True)


# ---------------------------------------------------------------------------
# train

def cmd_train(args) -> int:
    cfg = load_config(args.config, args.override or [])
    exp = load_experiment(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / CONFIG_NAME).write_text(cfg.to_ini(), encoding="utf-8")
    run = cfg.run
    results = []
    for i in range(run.runs):
        rc = replace(run, seed=run.seed + i)
        target = out if run.runs == 1 else out / f"run-{i + 1}"
        target.mkdir(parents=True, exist_ok=True)
        if run.pretrain_epochs and not exp.pretrain_checkpoint:
            exp.pretrain_save = str(target / "pretrain.ckpt")
        result, model = run_experiment(rc, exp, on_epoch=_progress(i + 1, run.runs, args.quiet))
        result.config = cfg.run.to_dict() | {"seed": rc.seed}
        save_run(target, result, model, exp.data.test)
        results.append(result)
        _echo(f"run {i + 1}/{run.runs} seed {rc.seed}: test {_fmt(result.test)} ({result.wall_clock:.1f}s)")
    if run.runs > 1:
        agg = aggregate(results)
        save_aggregate(out, agg)
        _echo("mean " + " ".join(f"{k}={100 * v:.2f}±{100 * agg.stdev[k]:.2f}" for k, v in agg.mean.items()))
    _echo(f"wrote {out}")
    return OK


def _progress(run_no: int, runs: int, quiet: bool):
    def on_epoch(epoch, record, model):
        if not quiet:
            _echo(f"[run {run_no}/{runs}] epoch {epoch} loss {record['loss']:.4f} dev {_fmt(record['dev'])}")
        return False
    return on_epoch


def _fmt(metrics: dict) -> str:
    return " ".join(f"{k}={100 * v:.2f}" for k, v in sorted(metrics.items())) or "-"


# ---------------------------------------------------------------------------
# eval / tag

def _read_items(path: str, cfg):
    p = Path(path)
    if not p.exists():
        raise DataPathError("input", p)
    tag_path = cfg.data.resolved()["tagset"]
    tagset = read_tagset(tag_path) if tag_path is not None and tag_path.exists() else None
    return read_corpus(p, tagset)


def _split_path(cfg, split: str) -> str:
    if split in ("dev", "test", "train"):
        p = cfg.data.resolved()[split]
        if p is None:
            raise ConfigError(f"config has no data.{split} path")
        return str(p)
    return split


def cmd_eval(args) -> int:
    dirs = run_dirs(Path(args.run))
    if not dirs:
        raise DataPathError("run", Path(args.run) / "model.ckpt")
    out = Path(args.out) if args.out else None
    status = OK
    reports = {}
    for d in dirs:
        cfg, model = load_run(d)
        items = _read_items(_split_path(cfg, args.split), cfg)
        metrics = model.evaluate(items)
        if not metrics:
            log.error("%s: no gold labels to evaluate against", d)
            status = FAILED
        report = EvalReport(cfg.run.task, metrics, counts={"instances": len(items)})
        if isinstance(items[0], NliInstance):
            preds = model.predict(items)
            report.per_label = per_label_prf([r["pred"] for r in preds], [r["gold"] for r in preds])
        reports[d.name] = report
        _echo(f"== {d}")
        _echo(report.table())
        if out is not None:
            target = out / d.name if len(dirs) > 1 else out
            target.mkdir(parents=True, exist_ok=True)
            (target / "eval.json").write_text(report.to_json() + "\n", encoding="utf-8")
            (target / "eval.txt").write_text(report.table() + "\n", encoding="utf-8")
            write_predictions(target, model, items)
    return status


def cmd_tag(args) -> int:
    """Predict with a trained model; for tagger models trained on semantic tags this projects tags."""
    dirs = run_dirs(Path(args.run))
    if not dirs:
        raise DataPathError("run", Path(args.run) / "model.ckpt")
    cfg, model = load_run(dirs[0])
    items = _read_items(args.input, cfg)
    output = Path(args.output)
    output.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(items[0], NliInstance):
        write_nli_dump(output, model.predict(items))
    elif args.semtags_only:
        if not model.has_aux:
            raise UsageError("--semtags-only needs a model with a semantic-tag head")
        tags = model.predict_semtags(items)
        tagged = [replace(s, semtags=t) for s, t in zip(items, tags)]
        (write_semtag_tsv if output.suffix == ".tsv" else write_conllu)(output, tagged)
    else:
        preds = model.predict(items)
        (write_semtag_tsv if output.suffix == ".tsv" else write_conllu)(output, preds)
    _echo(f"tagged {len(items)} instances -> {output}")
    return OK


# ---------------------------------------------------------------------------
# analyze

def read_dump(path: Path) -> dict[str, dict]:
    """An NLI prediction dump: JSON lines with at least ``id``, ``gold`` and ``pred``."""
    if not path.exists():
        raise DataPathError("dump", path)
    rows = {}
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as err:
                raise ParseError(path, n, f"bad JSON: {err.msg}") from None
            for key in ("id", "gold", "pred"):
                if key not in obj:
                    raise ParseError(path, n, f"missing field {key!r}")
            if str(obj["id"]) in rows:
                raise ParseError(path, n, f"duplicate id {obj['id']!r}")
            rows[str(obj["id"])] = obj
    return rows


def _instance_tags(row: dict) -> list[str] | None:
    tags = row.get("semtags_pred")
    if tags is None:
        return None
    if isinstance(tags, dict):
        return list(tags.get("premise") or []) + list(tags.get("hypothesis") or [])
    return list(tags)


def cmd_analyze(args) -> int:
    dumps = {}
    for spec in args.dumps:
        if "=" not in spec:
            raise UsageError(f"dump {spec!r} must look like SYSTEM=path")
        name, path = spec.split("=", 1)
        dumps[name] = read_dump(Path(path))
    ranking = args.ranking.split(",") if args.ranking else list(dumps)
    unknown = [s for s in ranking if s not in dumps]
    if unknown or len(set(ranking)) != len(dumps):
        raise UsageError(f"--ranking must list each system exactly once; got {ranking} for {sorted(dumps)}")
    ids = set(dumps[ranking[0]])
    for name in ranking[1:]:
        if set(dumps[name]) != ids:
            raise MisalignedError(f"dumps {ranking[0]} and {name} cover different instances "
                                  f"({len(set(dumps[name]) ^ ids)} ids differ)")
        bad = [i for i in ids if dumps[name][i]["gold"] != dumps[ranking[0]][i]["gold"]]
        if bad:
            raise MisalignedError(f"dumps {ranking[0]} and {name} disagree on gold labels for ids {sorted(bad)[:5]}")

    tags_from = args.tags_from or next((s for s in reversed(ranking)
                                        if all(_instance_tags(r) is not None for r in dumps[s].values())), None)
    if tags_from is None or tags_from not in dumps:
        raise UsageError("no dump carries predicted semantic tags; pass --tags-from SYSTEM")
    instance_tags = {i: _instance_tags(r) or [] for i, r in dumps[tags_from].items()}

    out = Path(args.out)
    for sub in ("sets", "frequencies", "prf"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    correct = {s: {i: r["pred"] == r["gold"] for i, r in dumps[s].items()} for s in ranking}
    sets = comparison_sets(correct, ranking)
    summary = {"ranking": ranking, "tags_from": tags_from, "instances": len(ids), "sets": {}}
    for cs in sets:
        (out / "sets" / f"{cs.name}.txt").write_text("".join(f"{m}\n" for m in cs.members), encoding="utf-8")
        summary["sets"][cs.name] = len(cs.members)
        base = out / "frequencies" / cs.name
        if cs.members:
            emit_frequency_plot(normalized_tag_frequencies(cs, instance_tags), base,
                                title=f"{cs.superior} correct, {cs.inferior} wrong (n={len(cs.members)})")
        else:
            write_ratios_csv({}, base.with_suffix(".csv"))
            log.warning("comparison set %s is empty", cs.name)
    if all(n == 0 for n in summary["sets"].values()):
        log.warning("all comparison sets are empty (identical system outputs?)")
    for s in ranking:
        rows = dumps[s].values()
        prf = per_label_prf([r["pred"] for r in rows], [r["gold"] for r in rows])
        (out / "prf" / f"{s}.txt").write_text(format_prf_table(prf) + "\n", encoding="utf-8")
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    for name, n in summary["sets"].items():
        _echo(f"{name:<12} {n}")
    _echo(f"wrote {out}")
    return OK


class MisalignedError(Exception):
    pass


# ---------------------------------------------------------------------------
# verify / report

def cmd_verify(args) -> int:
    from .verify import run_all
    results = run_all(inject_fault=args.inject_fault, mst_instances=args.mst_instances, echo=_echo)
    failed = [r for r in results if not r.passed]
    _echo(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return OK if not failed else FAILED


def cmd_report(args) -> int:
    from .plotting import learning_curves
    root = Path(args.run)
    dirs = [d for d in ([root] + sorted(root.glob("run-*"))) if (d / "metrics.csv").exists()]
    if not dirs:
        raise DataPathError("run", root / "metrics.csv")
    for d in dirs:
        rows = read_metrics_csv(d / "metrics.csv")
        losses = {name: [(e, v) for e, split, n, v in rows if n == name] for name in ("loss", "main_loss", "aux_loss")}
        learning_curves({k: v for k, v in losses.items() if v}, d / "loss.svg", title=f"{d.name}: training loss",
                        ylabel="loss")
        dev = {}
        for e, split, n, v in rows:
            if split in ("dev", "test") or n.endswith(("acc", "las", "uas", "accuracy")) and split != "train":
                dev.setdefault(f"{split} {n}", []).append((e, v))
        if dev:
            learning_curves(dev, d / "dev.svg", title=f"{d.name}: evaluation", ylabel="score")
        last = max(e for e, *_ in rows)
        _echo(f"== {d} (epoch {last})")
        for e, split, n, v in rows:
            if e == last:
                _echo(f"  {split:<5} {n:<12} {v:.4f}")
    return OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="semmtl", description="Multi-task learning with semantic tagging as auxiliary task.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train from a config file or preset")
    t.add_argument("--config", required=True,
                   help=f"INI file or preset name (presets: {', '.join(list_presets())})")
    t.add_argument("--override", action="append", metavar="SECTION.KEY=VALUE", help="override one config value")
    t.add_argument("--out", default="runs/latest", help="output directory (default: runs/latest)")
    t.add_argument("-q", "--quiet", action="store_true", help="no per-epoch progress lines")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a trained run")
    e.add_argument("--run", required=True, help="run directory written by train")
    e.add_argument("--split", default="test", help="dev, test, train, or a corpus path (default: test)")
    e.add_argument("--out", help="directory for eval.json, eval.txt and predictions")
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("tag", help="predict (or project semantic tags) onto a corpus")
    g.add_argument("--run", required=True, help="run directory written by train")
    g.add_argument("--input", required=True, help="corpus (.conllu, .tsv or .jsonl)")
    g.add_argument("--output", required=True, help="output file; .tsv writes the semantic-tag format")
    g.add_argument("--semtags-only", action="store_true", help="only fill the semantic-tag layer")
    g.set_defaults(func=cmd_tag)

    a = sub.add_parser("analyze", help="comparison sets and normalized tag frequencies over NLI dumps")
    a.add_argument("dumps", nargs="+", metavar="SYSTEM=DUMP", help="prediction dump per system")
    a.add_argument("--ranking", help="comma-separated systems, worst to best (default: argument order)")
    a.add_argument("--tags-from", help="system whose predicted semantic tags are counted (default: best tagged)")
    a.add_argument("--out", required=True, help="output directory")
    a.set_defaults(func=cmd_analyze)

    v = sub.add_parser("verify", help="gradient, MST, sharing and analysis checks")
    v.add_argument("--inject-fault", choices=["sigmoid"], help="corrupt an op's derivative (tests the checker)")
    v.add_argument("--mst-instances", type=int, default=500, help="random MST instances (default: 500)")
    v.set_defaults(func=cmd_verify)

    r = sub.add_parser("report", help="learning-curve SVGs next to metrics.csv")
    r.add_argument("--run", required=True, help="run directory written by train")
    r.set_defaults(func=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageError, MisalignedError, DataPathError, ParseError) as err:
        print(f"semmtl {args.command}: error: {err}", file=sys.stderr)
        return USAGE
    except FileNotFoundError as err:
        print(f"semmtl {args.command}: error: no such file: {err.filename or err}", file=sys.stderr)
        return USAGE
    except TrainingError as err:
        print(f"semmtl {args.command}: training failed: {err}", file=sys.stderr)
        return FAILED


if __name__ == "__main__":
    sys.exit(main())
