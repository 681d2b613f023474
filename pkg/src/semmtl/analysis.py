"""Evaluation metrics and the comparison-set / tag-frequency analysis."""
from __future__ import annotations

import csv
import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

UNDEFINED = float("nan")


@dataclass
class EvalReport:
    task: str
    metrics: dict[str, float]
    per_label: dict[str, tuple[float, float]] = field(default_factory=dict)
    counts: dict[str, int] = field(default_factory=dict)

    def to_json(self) -> str:
        def fix(v):
            return None if isinstance(v, float) and math.isnan(v) else v
        obj = asdict(self)
        obj["per_label"] = {k: [fix(p), fix(r)] for k, (p, r) in self.per_label.items()}
        return json.dumps(obj, indent=2, sort_keys=True)

    def table(self) -> str:
        lines = [f"task: {self.task}"]
        for k, v in sorted(self.metrics.items()):
            lines.append(f"  {k:<12} {100 * v:6.2f}")
        if self.per_label:
            lines.append(format_prf_table(self.per_label))
        return "\n".join(lines)


@dataclass(frozen=True)
class ComparisonSet:
    superior: str
    inferior: str
    members: tuple[str, ...]

    @property
    def name(self) -> str:
        return f"{self.superior}-{self.inferior}"


# ---------------------------------------------------------------------------
# attachment scores

def las_uas(pred_heads, pred_labels, gold_heads, gold_labels) -> tuple[float, float]:
    """Labeled and unlabeled attachment score for one sentence."""
    ph, gh = np.asarray(pred_heads), np.asarray(gold_heads)
    pl, gl = list(pred_labels), list(gold_labels)
    if not (len(ph) == len(gh) == len(pl) == len(gl)):
        raise ValueError(f"length mismatch: predicted {len(ph)} tokens, gold {len(gh)}")
    if len(gh) == 0:
        raise ValueError("las_uas: empty sentence")
    head_ok = ph == gh
    label_ok = np.array([a == b for a, b in zip(pl, gl)], dtype=bool)
    return float(np.mean(head_ok & label_ok)), float(np.mean(head_ok))


def corpus_las_uas(preds, golds) -> tuple[float, float]:
    """Micro-averaged over tokens; items need ``heads`` and ``deprels``."""
    preds, golds = list(preds), list(golds)
    if len(preds) != len(golds):
        raise ValueError(f"{len(preds)} predicted sentences for {len(golds)} gold")
    labeled = unlabeled = total = 0
    for p, g in zip(preds, golds):
        if len(p.heads) != len(g.heads):
            raise ValueError(f"sentence {g.id}: length mismatch")
        for ph, pl, gh, gl in zip(p.heads, p.deprels, g.heads, g.deprels):
            if ph == gh:
                unlabeled += 1
                labeled += pl == gl
            total += 1
    if total == 0:
        return UNDEFINED, UNDEFINED
    return labeled / total, unlabeled / total


# ---------------------------------------------------------------------------
# per-label precision / recall

def confusion_counts(preds: Sequence, golds: Sequence) -> Counter:
    if len(preds) != len(golds):
        raise ValueError(f"{len(preds)} predictions for {len(golds)} gold labels")
    return Counter(zip(golds, preds))


def per_label_prf(preds: Sequence, golds: Sequence, labels: Iterable | None = None) -> dict:
    """``{label: (precision, recall)}``; a zero denominator gives NaN (undefined), not 0."""
    conf = confusion_counts(preds, golds)
    found = set(preds) | set(golds)
    ordered = list(labels) if labels is not None else []
    ordered += sorted(found - set(ordered), key=str)
    out = {}
    for lab in ordered:
        tp = conf.get((lab, lab), 0)
        n_pred = sum(c for (g, p), c in conf.items() if p == lab)
        n_gold = sum(c for (g, p), c in conf.items() if g == lab)
        out[lab] = (tp / n_pred if n_pred else UNDEFINED, tp / n_gold if n_gold else UNDEFINED)
    return out


def support_weighted_recall(preds: Sequence, golds: Sequence) -> float:
    prf = per_label_prf(preds, golds)
    support = Counter(golds)
    total = sum(support.values())
    return sum(prf[lab][1] * n for lab, n in support.items()) / total


def format_prf_table(prf: Mapping, digits: int = 2) -> str:
    def cell(v):
        return "—" if math.isnan(v) else f"{100 * v:.{digits}f}"
    width = max([len(str(k)) for k in prf] + [5])
    lines = [f"{'label':<{width}}  {'P':>7}  {'R':>7}"]
    for lab, (p, r) in prf.items():
        lines.append(f"{str(lab):<{width}}  {cell(p):>7}  {cell(r):>7}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# comparison sets

def comparison_sets(outputs: Mapping[str, Mapping[str, bool]], ranking: Sequence[str]) -> list[ComparisonSet]:
    """One set per (superior, inferior) pair, ranking listed worst to best.

    Members are instances correct under the superior system and wrong under
    the inferior one.
    """
    missing_sys = [s for s in ranking if s not in outputs]
    if missing_sys:
        raise KeyError(f"no outputs for systems {missing_sys}")
    ids = set(outputs[ranking[0]])
    for s in ranking[1:]:
        other = set(outputs[s])
        if other != ids:
            diff = sorted(ids ^ other)
            raise ValueError(f"systems cover different instances; mismatched ids: {diff[:20]}")
    order = sorted(ids, key=_natural_key)
    sets = []
    for i, j in combinations(range(len(ranking)), 2):
        inf, sup = ranking[i], ranking[j]
        members = tuple(k for k in order if outputs[sup][k] and not outputs[inf][k])
        sets.append(ComparisonSet(sup, inf, members))
    return sets


def _natural_key(s):
    s = str(s)
    return (0, int(s), "") if s.isdigit() else (1, 0, s)


def normalized_tag_frequencies(members: Iterable[str] | ComparisonSet, instance_tags: Mapping[str, Sequence[str]],
                               full_tags: Mapping[str, Sequence[str]] | None = None) -> dict[str, float]:
    """Token-level relative tag frequency in the set divided by that in the full test set.

    Tags of the full set that never occur in the comparison set get ratio 0.
    The result is sorted by ratio, descending.
    """
    members = list(members.members if isinstance(members, ComparisonSet) else members)
    if not members:
        return {}
    full = full_tags if full_tags is not None else instance_tags
    full_counts = Counter(t for tags in full.values() for t in tags)
    set_counts = Counter(t for m in members for t in instance_tags[m])
    full_total, set_total = sum(full_counts.values()), sum(set_counts.values())
    unknown = set(set_counts) - set(full_counts)
    if unknown:
        raise ValueError(f"tags {sorted(unknown)} occur in the set but not in the full test set")
    ratios = {}
    for tag, n in full_counts.items():
        in_set = set_counts.get(tag, 0) / set_total if set_total else 0.0
        ratios[tag] = in_set / (n / full_total)
    return dict(sorted(ratios.items(), key=lambda kv: (-kv[1], kv[0])))


# ---------------------------------------------------------------------------
# outputs

def write_ratios_csv(ratios: Mapping[str, float], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["tag", "ratio"])
        for tag, r in ratios.items():
            w.writerow([tag, repr(float(r))])


def read_ratios_csv(path: str | Path) -> dict[str, float]:
    with open(path, newline="", encoding="utf-8") as fh:
        return {row["tag"]: float(row["ratio"]) for row in csv.DictReader(fh)}


def emit_frequency_plot(ratios: Mapping[str, float], path: str | Path, title: str | None = None) -> tuple[Path, Path]:
    """Write an SVG bar chart (bars sorted by ratio) and a CSV of the same numbers."""
    if not ratios:
        raise ValueError("emit_frequency_plot: empty ratio map")
    from .plotting import bar_chart
    path = Path(path)
    svg = path.with_suffix(".svg")
    csv_path = path.with_suffix(".csv")
    ordered = dict(sorted(ratios.items(), key=lambda kv: (-kv[1], kv[0])))
    write_ratios_csv(ordered, csv_path)
    bar_chart(list(ordered), list(ordered.values()), svg, title=title, ylabel="normalized frequency",
              reference=1.0)
    return svg, csv_path
