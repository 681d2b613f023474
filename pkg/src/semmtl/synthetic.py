"""Synthetic corpora with correlated main and auxiliary labels.

A toy "language" assigns every word a semantic tag; the UPOS tag is a
function of the word's semantic tag and, for nouns, of the previous tag.
Dependency trees follow a rank rule so they are learnable.  Useful for smoke
tests and for the noisy-main-task comparison.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .data import NLI_LABELS, NliInstance, Sentence

SEMTAGS = ("DEF", "HAS", "COL", "QUC", "IST", "REL", "CON", "ALT", "DIS", "SUB", "ENS", "EPS", "EXG", "EXS",
           "NOW")

# semantic tag -> UPOS
_UPOS = {"DEF": "DET", "HAS": "PRON", "COL": "ADJ", "QUC": "NUM", "IST": "ADJ", "REL": "ADP", "CON": "NOUN",
         "ALT": "DET", "DIS": "DET", "SUB": "SCONJ", "ENS": "VERB", "EPS": "VERB", "EXG": "VERB",
         "EXS": "VERB", "NOW": "AUX"}
_RANK = {"VERB": 3, "AUX": 2, "NOUN": 2, "PROPN": 2, "PRON": 2, "NUM": 1}
_DEPREL = {"DET": "det", "PRON": "nmod:poss", "ADJ": "amod", "NUM": "nummod", "ADP": "case", "NOUN": "obj",
           "PROPN": "nsubj", "SCONJ": "mark", "VERB": "conj", "AUX": "aux"}

# a crude phrase grammar over semantic tags: noun phrases and clauses
_NP = [("DEF", "CON"), ("DIS", "CON"), ("DIS", "COL", "CON"), ("QUC", "CON"), ("HAS", "CON"),
       ("DEF", "IST", "CON"), ("ALT", "CON"), ("CON",)]
_VP = [("ENS",), ("EPS",), ("NOW", "EXG"), ("NOW", "EXS")]


@dataclass
class ToyLanguage:
    words: dict[str, list[str]] = field(default_factory=dict)  # semtag -> word forms
    zipf: float = 1.1

    @classmethod
    def create(cls, rng: np.random.Generator, words_per_tag: int = 6, zipf: float = 1.1) -> "ToyLanguage":
        words = {}
        for t in SEMTAGS:
            n = 2 if t in ("DEF", "NOW", "SUB") else words_per_tag
            words[t] = [f"{t.lower()}{i}" for i in range(n)]
        return cls(words, zipf)

    def word(self, tag: str, rng: np.random.Generator) -> str:
        forms = self.words[tag]
        w = 1.0 / np.arange(1, len(forms) + 1) ** self.zipf
        return forms[int(rng.choice(len(forms), p=w / w.sum()))]

    def tag_sequence(self, rng: np.random.Generator, max_len: int = 10) -> list[str]:
        seq = list(_NP[rng.integers(len(_NP))]) + list(_VP[rng.integers(len(_VP))])
        if rng.random() < 0.6:
            seq += ["REL"] + list(_NP[rng.integers(len(_NP))])
        if rng.random() < 0.3 and len(seq) < max_len - 3:
            seq += ["SUB"] + list(_NP[rng.integers(len(_NP))]) + list(_VP[rng.integers(len(_VP))])
        return seq[:max_len]

    def sentence(self, sid: str, rng: np.random.Generator, max_len: int = 10) -> Sentence:
        tags = self.tag_sequence(rng, max_len)
        tokens = [self.word(t, rng) for t in tags]
        upos = upos_for(tags)
        heads = rank_tree(upos)
        deprels = ["root" if h == 0 else _DEPREL[u] for u, h in zip(upos, heads)]
        return Sentence(sid, tokens, upos, tags, heads, deprels)


def upos_for(semtags: list[str]) -> list[str]:
    """UPOS from semantic tags; a concept right after a clause start becomes a proper noun."""
    out = []
    for i, t in enumerate(semtags):
        u = _UPOS[t]
        if t == "CON" and (i == 0 or semtags[i - 1] == "SUB"):
            u = "PROPN"
        out.append(u)
    return out


def rank_tree(upos: list[str]) -> list[int]:
    """Attach every token to the nearest strictly higher-ranked token (right wins ties); the first top-ranked token is the root."""
    ranks = [_RANK.get(u, 0) for u in upos]
    n = len(upos)
    top = int(np.max(ranks))
    root = ranks.index(top)
    heads = []
    for i, r in enumerate(ranks):
        if i == root:
            heads.append(0)
            continue
        best = None
        for d in range(1, n):
            for j in (i + d, i - d):
                if 0 <= j < n and ranks[j] > r:
                    best = j
                    break
            if best is not None:
                break
        heads.append((best if best is not None else root) + 1)
    return heads


def correlated_corpus(n: int, seed: int = 0, language: ToyLanguage | None = None, max_len: int = 10,
                      prefix: str = "s") -> list[Sentence]:
    rng = np.random.default_rng(seed)
    lang = language or ToyLanguage.create(np.random.default_rng(12345))
    return [lang.sentence(f"{prefix}{i + 1}", rng, max_len) for i in range(n)]


def add_label_noise(sentences: list[Sentence], rate: float, seed: int = 0, layer: str = "upos") -> list[Sentence]:
    """Replace a fraction ``rate`` of the labels in ``layer`` by a different label from the same layer."""
    rng = np.random.default_rng(seed)
    labels = sorted({t for s in sentences for t in getattr(s, layer)})
    out = []
    for s in sentences:
        tags = list(getattr(s, layer))
        for i in range(len(tags)):
            if rng.random() < rate:
                choices = [t for t in labels if t != tags[i]]
                tags[i] = choices[rng.integers(len(choices))]
        out.append(replace(s, **{layer: tags}))
    return out


def split_tasks(sentences: list[Sentence]) -> tuple[list[Sentence], list[Sentence]]:
    """Halve a corpus into a main-task-only part (no semantic tags) and a semantic-tag-only part."""
    half = len(sentences) // 2
    main = [replace(s, semtags=None) for s in sentences[:half]]
    aux = [Sentence(s.id, s.tokens, semtags=s.semtags) for s in sentences[half:]]
    return main, aux


def nli_pairs(n: int, seed: int = 0, language: ToyLanguage | None = None) -> list[NliInstance]:
    """Entailment = hypothesis repeats the premise; contradiction = one event word swapped;
    neutral = an unrelated sentence."""
    rng = np.random.default_rng(seed)
    lang = language or ToyLanguage.create(np.random.default_rng(12345))
    out = []
    for i in range(n):
        prem = lang.sentence(f"p{i}", rng, 8)
        label = NLI_LABELS[i % 3]
        if label == "entailment":
            hyp = Sentence(f"h{i}", list(prem.tokens), semtags=list(prem.semtags))
        elif label == "contradiction":
            toks, tags = list(prem.tokens), list(prem.semtags)
            k = next(j for j, t in enumerate(tags) if t in ("ENS", "EPS", "EXG", "EXS"))
            alts = [w for w in lang.words[tags[k]] if w != toks[k]]
            toks[k] = alts[rng.integers(len(alts))]
            hyp = Sentence(f"h{i}", toks, semtags=tags)
        else:
            other = lang.sentence(f"h{i}", rng, 8)
            hyp = Sentence(other.id, other.tokens, semtags=other.semtags)
        out.append(NliInstance(str(i + 1), Sentence(prem.id, prem.tokens, semtags=prem.semtags), hyp, label))
    return out


# eight hand-written pairs with hand-assigned semantic tags
_HAND = [
    ("entailment", "The dog runs in the park", "DEF CON ENS REL DEF CON", "The dog runs", "DEF CON ENS"),
    ("contradiction", "The dog runs in the park", "DEF CON ENS REL DEF CON", "The dog sleeps in the park",
     "DEF CON ENS REL DEF CON"),
    ("neutral", "A man reads a book", "DIS CON ENS DIS CON", "The man is happy", "DEF CON NOW IST"),
    ("entailment", "Two women are singing", "QUC CON NOW EXG", "Women are singing", "CON NOW EXG"),
    ("contradiction", "Two women are singing", "QUC CON NOW EXG", "Nobody is singing", "DIS NOW EXG"),
    ("neutral", "A child holds a red ball", "DIS CON ENS DIS COL CON", "The child is at school",
     "DEF CON NOW REL CON"),
    ("entailment", "Her cat ate the fish", "HAS CON EPS DEF CON", "A cat ate", "DIS CON EPS"),
    ("contradiction", "Her cat ate the fish", "HAS CON EPS DEF CON", "Her cat ignored the fish",
     "HAS CON EPS DEF CON"),
]


def hand_pairs() -> list[NliInstance]:
    out = []
    for i, (label, p, pt, h, ht) in enumerate(_HAND, 1):
        out.append(NliInstance(f"hand{i}", Sentence(f"hand{i}p", p.split(), semtags=pt.split()),
                               Sentence(f"hand{i}h", h.split(), semtags=ht.split()), label))
    return out


__all__ = ["SEMTAGS", "ToyLanguage", "correlated_corpus", "add_label_noise", "split_tasks", "nli_pairs",
           "hand_pairs", "rank_tree", "upos_for"]


# ---------------------------------------------------------------------------
# shipped fixtures

TAGSET_ROWS = [
    ("DEF", "anaphoric", "definite"), ("HAS", "anaphoric", "possessive pronoun"),
    ("COL", "attribute", "colour"), ("QUC", "attribute", "concrete quantity"),
    ("IST", "attribute", "intersective modifier"), ("REL", "attribute", "relation"),
    ("CON", "unnamed entity", "concept"), ("ALT", "logical", "alternative or repetition"),
    ("DIS", "logical", "disjunction or existential quantifier"), ("SUB", "discourse", "subordinate relation"),
    ("ENS", "events", "present simple"), ("EPS", "events", "past simple"),
    ("EXG", "events", "untensed progressive"), ("EXS", "events", "untensed simple"),
    ("NOW", "tense and aspect", "present tense"),
]


def write_fixtures(root, seed: int = 2024) -> None:
    """Regenerate the toy corpora under ``root`` (deterministic for a given seed)."""
    from pathlib import Path

    from .data import write_conllu, write_nli_jsonl, write_semtag_tsv

    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    lang = ToyLanguage.create(np.random.default_rng(12345))
    with open(root / "tagset.tsv", "w", encoding="utf-8") as fh:
        fh.write("# tag\tcoarse class\tdescription\n")
        for row in TAGSET_ROWS:
            fh.write("\t".join(row) + "\n")

    def ud(n, s, prefix):
        return [replace(x, semtags=None) for x in correlated_corpus(n, seed + s, lang, prefix=prefix)]

    write_conllu(root / "ud-train.conllu", ud(60, 1, "ud-train-"))
    write_conllu(root / "ud-dev.conllu", ud(20, 2, "ud-dev-"))
    write_conllu(root / "ud-test.conllu", ud(20, 3, "ud-test-"))
    silver = add_label_noise(correlated_corpus(80, seed + 4, lang), 0.03, seed + 4, layer="semtags")
    write_semtag_tsv(root / "sempmb-train.tsv", silver)
    write_semtag_tsv(root / "sempmb-test.tsv", correlated_corpus(20, seed + 5, lang))

    def nli(n, s, tags=False):
        out = []
        for x in nli_pairs(n, seed + s, lang):
            if not tags:
                x = NliInstance(x.id, Sentence(x.premise.id, x.premise.tokens),
                                Sentence(x.hypothesis.id, x.hypothesis.tokens), x.label)
            out.append(x)
        return out

    for name, sizes in (("snli", (60, 15, 30)), ("sicke", (24, 9, 12))):
        for split, n, s in zip(("train", "dev", "test"), sizes, (6, 7, 8)):
            path = root / f"{name}-{split}.jsonl"
            write_nli_jsonl(path, nli(n, s + (0 if name == "snli" else 10)))
            if split == "train":  # one instance without annotator consensus
                with open(path, "a", encoding="utf-8") as fh:
                    fh.write('{"pairID": "nocons1", "gold_label": "-", "sentence1": "con0 ens0", '
                             '"sentence2": "con1 eps0"}\n')
    write_nli_jsonl(root / "nli-8pairs.jsonl", hand_pairs())
