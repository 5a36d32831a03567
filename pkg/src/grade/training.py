"""Training tuples, negative sampling and margin-ranking optimization."""

from __future__ import annotations

import csv
import json
import logging
import random
from collections import defaultdict
from collections.abc import Iterable, Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .keywords import IdfTable, LexiconTagger, Tagger, extract_keywords
from .model import CoherenceModel, GraphBuilder, save_checkpoint

logger = logging.getLogger(__name__)

Context = tuple[str, str]
Pair = tuple[Context, str]

LEXICAL, EMBEDDING = "lexical", "embedding"


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainingTuple:
    context: Context
    gold_response: str
    negative_response: str
    sampling_method: str

    def __post_init__(self):
        if self.negative_response == self.gold_response:
            raise ValueError("negative response equals the gold response")
        if len(self.context) != 2 or not all(u.strip() for u in (*self.context, self.gold_response, self.negative_response)):
            raise ValueError("tuple fields must be nonempty and the context must hold 2 utterances")
        if self.sampling_method not in (LEXICAL, EMBEDDING):
            raise ValueError(f"unknown sampling method {self.sampling_method!r}")

    def to_json(self) -> str:
        return json.dumps(
            {
                "context": list(self.context),
                "gold_response": self.gold_response,
                "negative_response": self.negative_response,
                "sampling_method": self.sampling_method,
            },
            ensure_ascii=False,
        )

    @classmethod
    def from_dict(cls, d: dict) -> TrainingTuple:
        return cls(tuple(d["context"]), d["gold_response"], d["negative_response"], d["sampling_method"])


def write_tuples(tuples: Iterable[TrainingTuple], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for t in tuples:
            f.write(t.to_json() + "\n")


def read_tuples(path) -> list[TrainingTuple]:
    with open(path, encoding="utf-8") as f:
        return [TrainingTuple.from_dict(json.loads(line)) for line in f if line.strip()]


def read_dialogues(path) -> list[list[str]]:
    dialogues = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                utts = json.loads(line)["utterances"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: expected {{\"utterances\": [...]}}") from exc
            dialogues.append([str(u) for u in utts])
    return dialogues


def build_pairs(dialogues: Iterable[Sequence[str]]) -> tuple[list[Pair], int]:
    """Slide a window of two context turns over each dialogue.

    Returns the pairs and the number of dialogues skipped for having fewer
    than three utterances.
    """
    pairs, skipped = [], 0
    for utts in dialogues:
        if len(utts) < 3:
            skipped += 1
            continue
        for t in range(2, len(utts)):
            pairs.append(((utts[t - 2], utts[t - 1]), utts[t]))
    return pairs, skipped


def _unique(items: Iterable[str]) -> list[str]:
    return list(dict.fromkeys(items))


class KeywordIndex:
    """Inverted index from keywords to pool utterances.

    Stands in for a full-text search engine: relevance is the idf-weighted
    count of shared keywords.
    """

    def __init__(self, responses: Iterable[str], idf: IdfTable, tagger: Tagger | None = None, threshold: float = 0.0):
        self.idf = idf
        self.tagger = tagger or LexiconTagger()
        self.threshold = threshold
        self.responses = _unique(responses)
        self.doc_keywords = [set(self.keywords(r)) for r in self.responses]
        self.postings: dict[str, list[int]] = defaultdict(list)
        for i, kws in enumerate(self.doc_keywords):
            for k in kws:
                self.postings[k].append(i)

    def keywords(self, text: str) -> list[str]:
        return extract_keywords(text, self.idf, self.tagger, self.threshold)

    def search(self, query: str, exclude: str | None = None) -> list[str]:
        """Pool utterances sharing a keyword with ``query``, most relevant first."""
        scores: dict[int, float] = defaultdict(float)
        for k in set(self.keywords(query)):
            for i in self.postings.get(k, ()):
                scores[i] += self.idf[k]
        ranked = sorted(scores, key=lambda i: (-scores[i], i))
        return [self.responses[i] for i in ranked if self.responses[i] != exclude]


def sample_lexical_negative(gold_response: str, index: KeywordIndex, rng_seed: int) -> str:
    """Middle element of the retrieved list; uniform fallback when nothing is retrieved."""
    ranked = index.search(gold_response, exclude=gold_response)
    if ranked:
        return ranked[len(ranked) // 2]
    others = [r for r in index.responses if r != gold_response]
    if not others:
        raise ValueError("training pool has no response other than the gold one")
    return random.Random(rng_seed).choice(others)


class EmbeddingPool:
    """Pool utterances with lazily cached encoder embeddings (unit-normalized)."""

    def __init__(self, responses: Iterable[str], encoder, batch_size: int = 256):
        self.responses = _unique(responses)
        self.encoder = encoder
        self.batch_size = batch_size
        self._matrix = None

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        rows = []
        with torch.no_grad():
            for s in range(0, len(texts), self.batch_size):
                rows.append(self.encoder.embed_utterances(texts[s : s + self.batch_size]).double().numpy())
        m = np.concatenate(rows) if rows else np.zeros((0, 0))
        norms = np.linalg.norm(m, axis=1, keepdims=True)
        return m / np.where(norms == 0, 1.0, norms)

    @property
    def matrix(self) -> np.ndarray:
        if self._matrix is None:
            self._matrix = self.embed(self.responses)
        return self._matrix

    def candidates(self, gold_response: str, rng: random.Random, num_candidates: int) -> list[int]:
        others = [i for i, r in enumerate(self.responses) if r != gold_response]
        return rng.sample(others, min(num_candidates, len(others)))

    def sample(self, gold_response: str, rng_seed: int, num_candidates: int = 1000, top_k: int = 5) -> str:
        rng = random.Random(rng_seed)
        cand = self.candidates(gold_response, rng, num_candidates)
        if len(cand) < top_k:
            raise ValueError(f"embedding sampling needs at least {top_k + 1} distinct pool utterances")
        gold = self.embed([gold_response])[0]
        sims = self.matrix[cand] @ gold
        order = sorted(range(len(cand)), key=lambda i: (-sims[i], cand[i]))
        return self.responses[cand[rng.choice(order[:top_k])]]


def sample_embedding_negative(
    gold_response: str,
    pool: Sequence[str] | EmbeddingPool,
    encoder=None,
    rng_seed: int = 0,
    num_candidates: int = 1000,
    top_k: int = 5,
) -> str:
    """Random pick among the ``top_k`` cosine neighbours of the gold response
    within ``num_candidates`` seeded draws from the pool."""
    if not isinstance(pool, EmbeddingPool):
        pool = EmbeddingPool(pool, encoder)
    return pool.sample(gold_response, rng_seed, num_candidates, top_k)


def _derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([p & 0xFFFFFFFF for p in parts]).generate_state(1)[0])


def build_tuples(
    pairs: Sequence[Pair],
    lexical_index: KeywordIndex,
    embedding_pool: EmbeddingPool,
    seed: int = 0,
    num_candidates: int = 1000,
    top_k: int = 5,
) -> list[TrainingTuple]:
    """Two tuples per pair: one lexical negative, one embedding negative."""
    tuples = []
    for i, (context, gold) in enumerate(pairs):
        lex = sample_lexical_negative(gold, lexical_index, _derive_seed(seed, i, 0))
        emb = embedding_pool.sample(gold, _derive_seed(seed, i, 1), num_candidates, top_k)
        tuples.append(TrainingTuple(tuple(context), gold, lex, LEXICAL))
        tuples.append(TrainingTuple(tuple(context), gold, emb, EMBEDDING))
    return tuples


def ranking_loss(s, s_bar, margin: float = 0.1) -> torch.Tensor:
    """mean(max(0, s_bar - s + margin))."""
    s, s_bar = torch.as_tensor(s), torch.as_tensor(s_bar)
    return torch.clamp(s_bar - s + margin, min=0.0).mean()


@dataclass
class TrainConfig:
    margin: float = 0.1
    learning_rate: float = 2e-5
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 16
    epochs: int = 10
    seed: int = 0
    drop_rate: float = 0.2
    max_hops: int = 2
    neighbor_limits: tuple[int, ...] = (10, 10)
    eval_batch_size: int = 64

    def __post_init__(self):
        self.neighbor_limits = tuple(self.neighbor_limits)
        if self.margin < 0 or self.learning_rate < 0 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError("margin/learning_rate must be >= 0, batch_size >= 1, epochs >= 0")
        if not 0.0 <= self.drop_rate < 1.0:
            raise ValueError("drop_rate must lie in [0, 1)")
        if len(self.neighbor_limits) != self.max_hops or min(self.neighbor_limits, default=1) < 1:
            raise ValueError("neighbor_limits needs one positive limit per hop")


@dataclass
class TrainResult:
    model: CoherenceModel
    history: list[dict] = field(default_factory=list)


def evaluate_tuples(model, builder, tuples, margin: float = 0.1, batch_size: int = 64) -> tuple[float, float]:
    """Evaluation-mode (mean ranking loss, fraction with s > s_bar)."""
    model.eval()
    losses, wins = [], 0
    with torch.no_grad():
        for start in range(0, len(tuples), batch_size):
            chunk = tuples[start : start + batch_size]
            s, s_bar = _score_chunk(model, builder, chunk)
            losses.append(torch.clamp(s_bar - s + margin, min=0.0))
            wins += int((s > s_bar).sum())
    return float(torch.cat(losses).mean()), wins / len(tuples)


def _score_chunk(model, builder, chunk, drop_rate=0.0, rng=None):
    contexts = [t.context for t in chunk] * 2
    responses = [t.gold_response for t in chunk] + [t.negative_response for t in chunk]
    graphs = [builder(c, r) for c, r in zip(contexts, responses)]
    scores = model(contexts, responses, graphs, drop_rate, rng)
    return scores[: len(chunk)], scores[len(chunk) :]


def train(
    tuples: Sequence[TrainingTuple],
    model: CoherenceModel,
    builder: GraphBuilder,
    config: TrainConfig,
    output_dir=None,
    start_epoch: int = 0,
    optimizer_state: dict | None = None,
) -> TrainResult:
    """Minibatch Adam on the mean margin-ranking loss.

    After every epoch the model is scored in evaluation mode on ``tuples``
    and ``epoch,loss,ranking_accuracy`` is appended to ``metrics.csv`` in
    ``output_dir`` together with a checkpoint.
    """
    if not tuples:
        raise ValueError("no training tuples")
    if model.node_init is not None and model.node_init.max_hops != config.max_hops:
        raise ValueError(f"model uses {model.node_init.max_hops} hops, config says {config.max_hops}")
    tuples = list(tuples)
    torch.manual_seed(config.seed)
    optimizer = torch.optim.Adam(
        model.parameters(), lr=config.learning_rate, betas=(config.beta1, config.beta2), eps=config.adam_eps
    )
    if optimizer_state is not None:
        optimizer.load_state_dict(optimizer_state)
    out = Path(output_dir) if output_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        metrics_path = out / "metrics.csv"
        if start_epoch == 0 or not metrics_path.exists():
            metrics_path.write_text("epoch,loss,ranking_accuracy\n")
    result = TrainResult(model)
    for epoch in range(start_epoch + 1, start_epoch + config.epochs + 1):
        model.train()
        order = np.random.default_rng([config.seed, epoch]).permutation(len(tuples))
        batch_losses = []
        for b, start in enumerate(range(0, len(tuples), config.batch_size)):
            idx = order[start : start + config.batch_size]
            chunk = [tuples[i] for i in idx]
            rng = np.random.default_rng([config.seed, epoch, b])
            where = f"epoch {epoch}, batch {b} (tuple indices {idx.tolist()})"
            try:
                s, s_bar = _score_chunk(model, builder, chunk, config.drop_rate, rng)
            except FloatingPointError as exc:
                raise TrainingError(f"{exc} in {where}") from exc
            loss = ranking_loss(s, s_bar, config.margin)
            if not torch.isfinite(loss):
                raise TrainingError(f"non-finite loss in {where}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            batch_losses.append(loss.item() * len(chunk))
        loss, acc = evaluate_tuples(model, builder, tuples, config.margin, config.eval_batch_size)
        record = {
            "epoch": epoch,
            "loss": loss,
            "ranking_accuracy": acc,
            "train_loss": sum(batch_losses) / len(tuples),
        }
        result.history.append(record)
        logger.info("epoch %d loss %.6f ranking_accuracy %.4f", epoch, loss, acc)
        if out is not None:
            with open(out / "metrics.csv", "a", newline="") as f:
                csv.writer(f).writerow([epoch, repr(loss), repr(acc)])
            save_checkpoint(
                model,
                out / f"checkpoint_epoch{epoch}.pt",
                epoch=epoch,
                optimizer=optimizer.state_dict(),
                train_config={k: list(v) if isinstance(v, tuple) else v for k, v in asdict(config).items()},
            )
    return result
