"""Corpus readers/writers, vocabularies, batching, and tag projection."""
from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

NLI_LABELS = ("entailment", "contradiction", "neutral")


class ParseError(ValueError):
    def __init__(self, path, line_no: int, message: str):
        self.path, self.line_no = path, line_no
        super().__init__(f"{path}:{line_no}: {message}")


@dataclass
class Sentence:
    id: str
    tokens: list[str]
    upos: list[str] | None = None
    semtags: list[str] | None = None
    heads: list[int] | None = None
    deprels: list[str] | None = None

    def __post_init__(self):
        n = len(self.tokens)
        for name in ("upos", "semtags", "heads", "deprels"):
            layer = getattr(self, name)
            if layer is not None and len(layer) != n:
                raise ValueError(f"sentence {self.id}: {name} has {len(layer)} items for {n} tokens")
        if self.heads is not None and any(h < 0 or h > n for h in self.heads):
            raise ValueError(f"sentence {self.id}: head index outside [0, {n}]")

    def __len__(self):
        return len(self.tokens)


@dataclass
class NliInstance:
    id: str
    premise: Sentence
    hypothesis: Sentence
    label: str

    def __post_init__(self):
        if self.label not in NLI_LABELS:
            raise ValueError(f"instance {self.id}: label {self.label!r} not in {NLI_LABELS}")


class Vocabulary:
    """Bijective string <-> id map with optional reserved PAD (0) and UNK (1) entries."""

    PAD, UNK = "<pad>", "<unk>"

    def __init__(self, items: Iterable[str] = (), reserved: bool = True):
        self.reserved = reserved
        self.itos: list[str] = [self.PAD, self.UNK] if reserved else []
        self.stoi: dict[str, int] = {s: i for i, s in enumerate(self.itos)}
        self.frozen = False
        for item in items:
            self.add(item)

    def add(self, item: str) -> int:
        idx = self.stoi.get(item)
        if idx is not None:
            return idx
        if self.frozen:
            raise KeyError(f"vocabulary is frozen; cannot add {item!r}")
        self.stoi[item] = len(self.itos)
        self.itos.append(item)
        return self.stoi[item]

    def freeze(self) -> "Vocabulary":
        self.frozen = True
        return self

    def lookup(self, item: str, default: int | None = -1) -> int | None:
        idx = self.stoi.get(item)
        if idx is not None:
            return idx
        if default == -1:
            if not self.reserved:
                raise KeyError(f"unknown label {item!r}")
            return 1
        return default

    def encode(self, items: Sequence[str]) -> list[int]:
        return [self.lookup(s) for s in items]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.itos[int(i)] for i in ids]

    def __len__(self):
        return len(self.itos)

    def __contains__(self, item):
        return item in self.stoi

    def to_json(self) -> dict:
        return {"reserved": self.reserved, "items": self.itos[2:] if self.reserved else self.itos}

    @classmethod
    def from_json(cls, obj: dict) -> "Vocabulary":
        return cls(obj["items"], reserved=obj["reserved"]).freeze()


# ---------------------------------------------------------------------------
# CoNLL-U

ID, FORM, LEMMA, UPOS, XPOS, FEATS, HEAD, DEPREL, DEPS, MISC = range(10)


def _parse_misc(misc: str) -> dict[str, str]:
    if misc == "_":
        return {}
    out = {}
    for part in misc.split("|"):
        key, _, val = part.partition("=")
        out[key] = val
    return out


def read_conllu(path: str | Path) -> list[Sentence]:
    """Read ID, FORM, UPOS, HEAD, DEPREL (and a ``SemTag=`` MISC entry if present)."""
    sentences: list[Sentence] = []
    rows: list[tuple[int, list[str]]] = []
    sent_id = None

    def flush():
        nonlocal rows, sent_id
        if not rows:
            sent_id = None
            return
        cols = [r[1] for r in rows]
        upos = [c[UPOS] for c in cols]
        heads = [c[HEAD] for c in cols]
        rels = [c[DEPREL] for c in cols]
        misc = [_parse_misc(c[MISC]) for c in cols]
        sem = [m.get("SemTag") for m in misc]
        sentences.append(Sentence(
            id=sent_id or str(len(sentences) + 1),
            tokens=[c[FORM] for c in cols],
            upos=None if all(u == "_" for u in upos) else upos,
            semtags=sem if all(s is not None for s in sem) else None,
            heads=None if all(h == "_" for h in heads) else [int(h) for h in heads],
            deprels=None if all(r == "_" for r in rels) else rels,
        ))
        rows, sent_id = [], None

    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                flush()
                continue
            if line.startswith("#"):
                if line.startswith("# sent_id"):
                    sent_id = line.split("=", 1)[1].strip()
                continue
            cols = line.split("\t")
            if len(cols) != 10:
                raise ParseError(path, line_no, f"expected 10 columns, found {len(cols)}")
            if "-" in cols[ID] or "." in cols[ID]:
                continue
            if cols[HEAD] != "_":
                try:
                    int(cols[HEAD])
                except ValueError:
                    raise ParseError(path, line_no, f"non-integer HEAD {cols[HEAD]!r}") from None
            rows.append((line_no, cols))
    flush()
    return sentences


def write_conllu(path: str | Path, sentences: Iterable[Sentence]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in sentences:
            fh.write(f"# sent_id = {s.id}\n")
            for i, tok in enumerate(s.tokens):
                misc = f"SemTag={s.semtags[i]}" if s.semtags is not None else "_"
                cols = [str(i + 1), tok, "_",
                        s.upos[i] if s.upos is not None else "_", "_", "_",
                        str(s.heads[i]) if s.heads is not None else "_",
                        s.deprels[i] if s.deprels is not None else "_", "_", misc]
                fh.write("\t".join(cols) + "\n")
            fh.write("\n")


# ---------------------------------------------------------------------------
# semantic tag TSV

def read_tagset(path: str | Path) -> dict[str, str]:
    """Tagset file: ``TAG<TAB>coarse class<TAB>description`` per line, ``#`` comments."""
    tags = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.rstrip("\n").split("\t")
            tags[parts[0]] = parts[1] if len(parts) > 1 else ""
    return tags


def read_semtag_tsv(path: str | Path, tagset: dict[str, str] | None = None) -> list[Sentence]:
    sentences: list[Sentence] = []
    toks: list[str] = []
    tags: list[str] = []
    unknown: set[str] = set()

    def flush():
        nonlocal toks, tags
        if toks:
            sentences.append(Sentence(id=str(len(sentences) + 1), tokens=toks, semtags=tags))
        toks, tags = [], []

    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                flush()
                continue
            if "\t" not in line:
                raise ParseError(path, line_no, "expected token<TAB>semtag")
            tok, tag = line.split("\t", 1)
            if tagset is not None and tag not in tagset and tag not in unknown:
                unknown.add(tag)
                log.warning("%s:%d: tag %s is not in the declared tagset", path, line_no, tag)
            toks.append(tok)
            tags.append(tag)
    flush()
    return sentences


def write_semtag_tsv(path: str | Path, sentences: Iterable[Sentence]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in sentences:
            for tok, tag in zip(s.tokens, s.semtags):
                fh.write(f"{tok}\t{tag}\n")
            fh.write("\n")


# ---------------------------------------------------------------------------
# NLI JSON-lines

_TOKEN_RE = re.compile(r"\w+(?:[-']\w+)*|[^\w\s]")


def tokenize(text: str) -> list[str]:
    """Whitespace plus punctuation splitting."""
    return _TOKEN_RE.findall(text)


def _sentence_from(obj: dict, key: str, sid: str) -> Sentence:
    tokens = obj.get(f"{key}_tokens") or tokenize(obj[key])
    tags = obj.get(f"{key}_semtags")
    if isinstance(tags, str):
        tags = tags.split()
    return Sentence(id=sid, tokens=list(tokens), semtags=list(tags) if tags else None)


def read_nli_jsonl(path: str | Path, stats: dict | None = None) -> list[NliInstance]:
    """Read SNLI-style pairs; ``gold_label == "-"`` rows are dropped and counted in ``stats['dropped']``."""
    out: list[NliInstance] = []
    dropped = 0
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                pid = str(obj["pairID"])
                label = obj["gold_label"]
                if label == "-":
                    dropped += 1
                    continue
                out.append(NliInstance(pid, _sentence_from(obj, "sentence1", pid + "/p"),
                                       _sentence_from(obj, "sentence2", pid + "/h"), label))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise ParseError(path, line_no, f"malformed NLI record ({e})") from None
    if dropped:
        log.info("%s: dropped %d instances without gold consensus", path, dropped)
    if stats is not None:
        stats["dropped"] = stats.get("dropped", 0) + dropped
    return out


def write_nli_jsonl(path: str | Path, instances: Iterable[NliInstance]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            obj = {"pairID": inst.id, "gold_label": inst.label,
                   "sentence1": " ".join(inst.premise.tokens), "sentence2": " ".join(inst.hypothesis.tokens),
                   "sentence1_tokens": inst.premise.tokens, "sentence2_tokens": inst.hypothesis.tokens}
            if inst.premise.semtags is not None:
                obj["sentence1_semtags"] = inst.premise.semtags
            if inst.hypothesis.semtags is not None:
                obj["sentence2_semtags"] = inst.hypothesis.semtags
            fh.write(json.dumps(obj) + "\n")


def read_corpus(path: str | Path, tagset=None):
    """Dispatch on file extension: .conllu, .tsv, .jsonl."""
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(str(p))
    if p.suffix == ".conllu":
        return read_conllu(p)
    if p.suffix == ".tsv":
        return read_semtag_tsv(p, tagset)
    if p.suffix in (".jsonl", ".json"):
        return read_nli_jsonl(p)
    raise ValueError(f"{path}: unknown corpus format (expected .conllu, .tsv or .jsonl)")


# ---------------------------------------------------------------------------
# vocabularies and batches

@dataclass
class Vocabs:
    words: Vocabulary
    upos: Vocabulary = field(default_factory=lambda: Vocabulary(reserved=False))
    semtags: Vocabulary = field(default_factory=lambda: Vocabulary(reserved=False))
    deprels: Vocabulary = field(default_factory=lambda: Vocabulary(reserved=False))

    def to_json(self) -> dict:
        return {k: getattr(self, k).to_json() for k in ("words", "upos", "semtags", "deprels")}

    @classmethod
    def from_json(cls, obj: dict) -> "Vocabs":
        return cls(**{k: Vocabulary.from_json(v) for k, v in obj.items()})


def _sentences_of(items) -> Iterable[Sentence]:
    for it in items:
        if isinstance(it, NliInstance):
            yield it.premise
            yield it.hypothesis
        else:
            yield it


def build_vocabs(*train_sets, tagset: Iterable[str] = (), min_count: int = 1) -> Vocabs:
    """Build vocabularies from training splits only, then freeze them."""
    counts: dict[str, int] = {}
    v = Vocabs(Vocabulary())
    for tag in tagset:
        v.semtags.add(tag)
    for items in train_sets:
        for s in _sentences_of(items):
            for t in s.tokens:
                counts[t] = counts.get(t, 0) + 1
            for name in ("upos", "semtags", "deprels"):
                layer = getattr(s, name)
                if layer:
                    for tag in layer:
                        getattr(v, name).add(tag)
    for w, c in counts.items():
        if c >= min_count:
            v.words.add(w)
    for voc in (v.words, v.upos, v.semtags, v.deprels):
        voc.freeze()
    return v


@dataclass
class Batch:
    """Padded arrays for a list of sentences; label arrays are 0 where absent."""
    sentences: list[Sentence]
    ids: np.ndarray
    mask: np.ndarray
    upos: np.ndarray | None = None
    semtags: np.ndarray | None = None
    heads: np.ndarray | None = None
    deprels: np.ndarray | None = None

    @property
    def lengths(self) -> np.ndarray:
        return self.mask.sum(axis=1)


def _pad(rows: list[list[int]], T: int) -> np.ndarray:
    out = np.zeros((len(rows), T), dtype=np.int64)
    for i, r in enumerate(rows):
        out[i, : len(r)] = r
    return out


def make_batch(sentences: Sequence[Sentence], vocabs: Vocabs) -> Batch:
    if any(len(s) == 0 for s in sentences):
        raise ValueError("empty sentence")
    T = int(np.max([len(s) for s in sentences]))
    ids = _pad([vocabs.words.encode(s.tokens) for s in sentences], T)
    mask = _pad([[1] * len(s) for s in sentences], T).astype(bool)
    b = Batch(list(sentences), ids, mask)

    def layer(name, vocab):
        # a gold label never seen in training gets the id len(vocab), which no prediction can match
        if all(getattr(s, name) is not None for s in sentences):
            return _pad([[vocab.lookup(t, default=len(vocab)) for t in getattr(s, name)] for s in sentences], T)
        return None

    b.upos = layer("upos", vocabs.upos)
    b.semtags = layer("semtags", vocabs.semtags)
    b.deprels = layer("deprels", vocabs.deprels)
    if all(s.heads is not None for s in sentences):
        b.heads = _pad([s.heads for s in sentences], T)
    return b


# ---------------------------------------------------------------------------
# tag projection

def project_tags(tagger, corpus: Sequence[Sentence | NliInstance]) -> list:
    """Fill the semtags layer from a trained tagger's predictions, leaving other layers untouched."""
    if not getattr(tagger, "trained", False):
        raise ValueError("project_tags needs a trained tagger")
    flat = list(_sentences_of(corpus))
    preds = tagger.predict_semtags(flat)
    tagged = {id(s): replace(s, semtags=p) for s, p in zip(flat, preds)}
    out = []
    for item in corpus:
        if isinstance(item, NliInstance):
            out.append(replace(item, premise=tagged[id(item.premise)], hypothesis=tagged[id(item.hypothesis)]))
        else:
            out.append(tagged[id(item)])
    return out
