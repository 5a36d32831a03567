"""Correlation with human judgments, score normalization and n-gram baselines."""

from __future__ import annotations

import csv
import json
import math
from collections import Counter
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

SIGNIFICANCE_LEVEL = 0.05

Key = tuple[tuple[str, str], str]


class CorrelationError(ValueError):
    pass


class AlignmentError(ValueError):
    def __init__(self, unmatched_judgments, unmatched_scores):
        self.unmatched_judgments = list(unmatched_judgments)
        self.unmatched_scores = list(unmatched_scores)
        parts = []
        if self.unmatched_judgments:
            parts.append(f"{len(self.unmatched_judgments)} judged pairs without a metric score: {self.unmatched_judgments[:5]}")
        if self.unmatched_scores:
            parts.append(f"{len(self.unmatched_scores)} scored pairs without a judgment: {self.unmatched_scores[:5]}")
        super().__init__("; ".join(parts))


def _check(x, y) -> tuple[np.ndarray, np.ndarray]:
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise CorrelationError(f"inputs must be 1-d and equally long, got {x.shape} and {y.shape}")
    if len(x) < 3:
        raise CorrelationError(f"need at least 3 points, got {len(x)}")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise CorrelationError("correlation undefined for a constant input")
    return x, y


def _t_test_p(r: float, n: int) -> float:
    # two-sided, t with n - 2 degrees of freedom
    if abs(r) >= 1.0:
        return 0.0
    t = r * math.sqrt((n - 2) / (1.0 - r * r))
    return float(min(1.0, 2.0 * stats.t.sf(abs(t), n - 2)))


def _pearson_r(x: np.ndarray, y: np.ndarray) -> float:
    dx, dy = x - x.mean(), y - y.mean()
    r = float(np.dot(dx, dy) / math.sqrt(np.dot(dx, dx) * np.dot(dy, dy)))
    return max(-1.0, min(1.0, r))


def pearson(x, y) -> tuple[float, float]:
    x, y = _check(x, y)
    r = _pearson_r(x, y)
    return r, _t_test_p(r, len(x))


def spearman(x, y) -> tuple[float, float]:
    """Pearson on average ranks; p from the same t approximation."""
    x, y = _check(x, y)
    rho = _pearson_r(stats.rankdata(x), stats.rankdata(y))
    return rho, _t_test_p(rho, len(x))


def normalize_scores(scores, lo: float = 1.0, hi: float = 5.0) -> list[float]:
    """Min-max map onto [lo, hi]; a constant batch maps to the midpoint."""
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0:
        raise ValueError("no scores to normalize")
    span = s.max() - s.min()
    if span == 0:
        return [(lo + hi) / 2.0] * len(s)
    return (lo + (s - s.min()) * (hi - lo) / span).tolist()


def significance_marker(p: float, level: float = SIGNIFICANCE_LEVEL) -> str:
    """'*' flags a correlation that is NOT significant (p > level)."""
    return "*" if p > level else ""


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def corpus_bleu(hypotheses: Sequence[Sequence[str]], references: Sequence[Sequence[Sequence[str]]], max_order: int = 4) -> float:
    """Corpus BLEU: clipped n-gram precisions, geometric mean, brevity penalty.

    Closest reference length is used for the brevity penalty. No smoothing.
    """
    matches = [0] * max_order
    totals = [0] * max_order
    hyp_len = ref_len = 0
    for hyp, refs in zip(hypotheses, references):
        hyp_len += len(hyp)
        ref_len += min((len(r) for r in refs), key=lambda L: (abs(L - len(hyp)), L))
        for n in range(1, max_order + 1):
            counts = _ngrams(hyp, n)
            max_ref = Counter()
            for r in refs:
                max_ref |= _ngrams(r, n)
            matches[n - 1] += sum(min(c, max_ref[g]) for g, c in counts.items())
            totals[n - 1] += max(len(hyp) - n + 1, 0)
    if hyp_len == 0 or min(matches) == 0:
        return 0.0
    log_p = sum(math.log(m / t) for m, t in zip(matches, totals)) / max_order
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return bp * math.exp(log_p)


def bleu4(hypothesis: Sequence[str], references: Sequence[Sequence[str]]) -> float:
    return corpus_bleu([hypothesis], [references], 4)


def _lcs(a, b) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, 1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(hypothesis: Sequence[str], reference: Sequence[str]) -> float:
    """ROUGE-L F1 from the longest common subsequence."""
    if not hypothesis or not reference:
        return 0.0
    lcs = _lcs(hypothesis, reference)
    if lcs == 0:
        return 0.0
    p, r = lcs / len(hypothesis), lcs / len(reference)
    return 2 * p * r / (p + r)


@dataclass
class JudgmentRecord:
    context: tuple[str, str]
    response: str
    human_score: float
    annotator_scores: list[float] = field(default_factory=list)

    def __post_init__(self):
        self.context = tuple(self.context)
        if not 1.0 <= self.human_score <= 5.0:
            raise ValueError(f"human score {self.human_score} outside [1, 5]")
        if len(self.context) != 2 or not all(u.strip() for u in (*self.context, self.response)):
            raise ValueError("judgment needs two nonempty context utterances and a nonempty response")

    @property
    def key(self) -> Key:
        return self.context, self.response


def read_judgments(path) -> list[JudgmentRecord]:
    """CSV with header context_1,context_2,response,human_score."""
    records = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        missing = {"context_1", "context_2", "response", "human_score"} - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            records.append(
                JudgmentRecord((row["context_1"], row["context_2"]), row["response"], float(row["human_score"]))
            )
    return records


def write_judgments(records: Sequence[JudgmentRecord], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["context_1", "context_2", "response", "human_score"])
        for r in records:
            w.writerow([r.context[0], r.context[1], r.response, repr(r.human_score)])


@dataclass
class CorrelationReport:
    pearson_r: float
    pearson_p: float
    spearman_rho: float
    spearman_p: float
    n: int
    normalized_scores: list[tuple[float, float]]

    def summary(self) -> dict:
        return {
            "pearson_r": self.pearson_r,
            "pearson_p": self.pearson_p,
            "pearson": f"{self.pearson_r:.4f}{significance_marker(self.pearson_p)}",
            "spearman_rho": self.spearman_rho,
            "spearman_p": self.spearman_p,
            "spearman": f"{self.spearman_rho:.4f}{significance_marker(self.spearman_p)}",
            "n": self.n,
        }

    def write(self, report_path, scatter_path) -> None:
        Path(report_path).write_text(json.dumps(self.summary(), indent=2) + "\n")
        with open(scatter_path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["metric_score_normalized", "human_score"])
            for m, h in self.normalized_scores:
                w.writerow([repr(m), repr(h)])


def correlation_report(metric_scores: Mapping[Key, float], judgments: Sequence[JudgmentRecord]) -> CorrelationReport:
    """Align metric scores with judgments by exact (context, response) and correlate.

    Every judgment must have a score and every score a judgment.
    """
    keys = [j.key for j in judgments]
    unmatched_j = [k for k in keys if k not in metric_scores]
    judged = set(keys)
    unmatched_s = [k for k in metric_scores if k not in judged]
    if unmatched_j or unmatched_s:
        raise AlignmentError(unmatched_j, unmatched_s)
    if len(judgments) < 3:
        raise CorrelationError(f"need at least 3 aligned pairs, got {len(judgments)}")
    metric = [metric_scores[k] for k in keys]
    human = [j.human_score for j in judgments]
    r, rp = pearson(metric, human)
    rho, sp = spearman(metric, human)
    return CorrelationReport(r, rp, rho, sp, len(keys), list(zip(normalize_scores(metric), human)))
