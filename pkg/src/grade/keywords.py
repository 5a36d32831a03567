"""Topic keyword extraction: TF-IDF salience filtered by coarse part of speech."""

from __future__ import annotations

import math
from collections import Counter
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .text import tokenize

NOUN, VERB, ADJ, OTHER = "NOUN", "VERB", "ADJ", "OTHER"
CONTENT_TAGS = frozenset({NOUN, VERB, ADJ})

Tagger = Callable[[Sequence[str]], Sequence[str]]


def load_stopwords(path=None) -> frozenset[str]:
    """One token per line; the bundled English list when ``path`` is None."""
    if path is None:
        text = resources.files("grade").joinpath("data/stopwords.txt").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return frozenset(w.strip().lower() for w in text.splitlines() if w.strip())


STOPWORDS = load_stopwords()


@dataclass(frozen=True)
class IdfTable:
    idf: dict[str, float]
    document_count: int

    def __getitem__(self, term: str) -> float:
        got = self.idf.get(term)
        if got is None:
            return math.log(self.document_count) + 1.0
        return got

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(f"#document_count\t{self.document_count}\n")
            for term in sorted(self.idf):
                f.write(f"{term}\t{self.idf[term]!r}\n")

    @classmethod
    def load(cls, path) -> IdfTable:
        idf = {}
        count = None
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                parts = line.rstrip("\n").split("\t")
                if len(parts) != 2:
                    raise ValueError(f"{path}:{lineno}: expected 'term<TAB>idf'")
                if parts[0] == "#document_count":
                    count = int(parts[1])
                else:
                    idf[parts[0]] = float(parts[1])
        if count is None:
            raise ValueError(f"{path}: missing #document_count line")
        return cls(idf, count)


def build_idf_table(corpus: Iterable[str]) -> IdfTable:
    """One utterance is one document; idf = ln(N / (1 + df)) + 1."""
    df = Counter()
    n = 0
    for utterance in corpus:
        n += 1
        df.update(set(tokenize(utterance)))
    if n == 0:
        raise ValueError("cannot build an idf table from an empty corpus")
    return IdfTable({t: math.log(n / (1 + c)) + 1.0 for t, c in df.items()}, n)


_VERBS = frozenset(
    """
    be have do say go get make know think take see come want look use find give tell
    work call try ask need feel become leave put mean keep let begin seem help talk turn
    start show hear play run move like live believe hold bring happen write provide sit
    stand lose pay meet include continue set learn change lead understand watch follow
    stop create speak read allow add spend grow open walk win offer remember love consider
    appear buy wait serve die send expect build stay fall cut reach kill remain suggest
    raise pass sell require report decide pull eat drink cook swim sleep travel visit
    enjoy hate prefer study teach drive fly sing dance wear wash clean finish miss hope
    """.split()
)
_ADJ_SUFFIXES = ("ous", "ful", "ive", "able", "ible", "al", "ic", "less", "ish")
_VERB_SUFFIXES = ("ing", "ed", "ize", "ise")


@dataclass(frozen=True)
class LexiconTagger:
    """Deterministic fallback tagger: stopwords -> OTHER, small verb lexicon,
    suffix rules for adjectives/verbs/adverbs, everything else NOUN.
    ``lexicon`` entries override all rules."""

    lexicon: dict[str, str] = field(default_factory=dict)
    stopwords: frozenset[str] = STOPWORDS

    def tag(self, token: str) -> str:
        if token in self.lexicon:
            return self.lexicon[token]
        if token in self.stopwords or token.isdigit():
            return OTHER
        if token in _VERBS:
            return VERB
        if len(token) > 4 and token.endswith("ly"):
            return OTHER
        if len(token) > 4 and token.endswith(_ADJ_SUFFIXES):
            return ADJ
        if len(token) > 4 and token.endswith(_VERB_SUFFIXES):
            return VERB
        return NOUN

    def __call__(self, tokens: Sequence[str]) -> list[str]:
        return [self.tag(t) for t in tokens]


def extract_keywords(
    utterance: str,
    idf: IdfTable,
    tagger: Tagger | None = None,
    threshold: float = 0.0,
    stopwords: frozenset[str] = STOPWORDS,
) -> list[str]:
    """Content-word tokens of ``utterance`` whose tf-idf reaches ``threshold``.

    Order follows first occurrence; duplicates are dropped.
    """
    tokens = tokenize(utterance)
    if not tokens:
        return []
    tags = (tagger or LexiconTagger(stopwords=stopwords))(tokens)
    tf = Counter(tokens)
    out = []
    seen = set()
    for tok, tag in zip(tokens, tags):
        if tok in seen or tag not in CONTENT_TAGS or tok in stopwords:
            continue
        if tf[tok] / len(tokens) * idf[tok] >= threshold:
            out.append(tok)
            seen.add(tok)
    return out
