"""Utterance-level encoders producing the pooled (context, response) vector.

Two profiles share one call signature ``encoder(contexts, responses)``:

* ``ToyEncoder``: token + segment embeddings, mean pooling, affine projection.
  Small, fast and fully differentiable in float64; used by tests and CI.
* ``PretrainedEncoder``: a BERT-style model from ``transformers`` whose pooled
  output is the representation. Fine-tuned jointly with the rest.
"""

from __future__ import annotations

from collections import Counter
from collections.abc import Iterable, Sequence
from pathlib import Path

import torch
from torch import nn

from .text import tokenize

PAD, UNK, BOS, SEP, EOS = "[PAD]", "[UNK]", "[BOS]", "[SEP]", "[EOS]"
SPECIALS = (PAD, UNK, BOS, SEP, EOS)

DEFAULT_MAX_LEN = 128


class Vocabulary:
    def __init__(self, tokens: Iterable[str]):
        seen = list(SPECIALS)
        for t in tokens:
            if t not in seen:
                seen.append(t)
        self.tokens = seen
        self.index = {t: i for i, t in enumerate(seen)}

    def __len__(self):
        return len(self.tokens)

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def id(self, token: str) -> int:
        return self.index.get(token, self.index[UNK])

    @classmethod
    def from_corpus(cls, texts: Iterable[str], min_count: int = 1) -> Vocabulary:
        counts = Counter(t for text in texts for t in tokenize(text))
        return cls(sorted(t for t, c in counts.items() if c >= min_count))

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> Vocabulary:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(line for line in lines if line)


def truncate_segments(u1: list, u2: list, response: list, budget: int) -> tuple[list, list, list]:
    """Fit three token lists into ``budget`` tokens.

    The response is shortened first (from its end), then the older context
    utterance (from its front), then the newer one. Each piece keeps at least
    one token, so the context is never dropped wholesale.
    """
    u1, u2, response = list(u1), list(u2), list(response)
    excess = len(u1) + len(u2) + len(response) - budget
    for piece, from_front in ((response, False), (u1, True), (u2, True)):
        if excess <= 0:
            break
        cut = min(excess, max(len(piece) - 1, 0))
        if cut:
            if from_front:
                del piece[:cut]
            else:
                del piece[len(piece) - cut :]
            excess -= cut
    if excess > 0:
        raise ValueError(f"max_len too small to hold one token per utterance (over by {excess})")
    return u1, u2, response


class ToyEncoder(nn.Module):
    profile = "toy"

    def __init__(self, vocab: Vocabulary, dim: int = 64, embed_dim: int | None = None, max_len: int = DEFAULT_MAX_LEN):
        super().__init__()
        self.vocab = vocab
        self.dim = dim
        self.embed_dim = embed_dim or dim
        self.max_len = max_len
        self.token_embedding = nn.Embedding(len(vocab), self.embed_dim)
        self.segment_embedding = nn.Embedding(2, self.embed_dim)
        self.proj = nn.Linear(self.embed_dim, dim)
        nn.init.normal_(self.token_embedding.weight, std=0.1)
        nn.init.normal_(self.segment_embedding.weight, std=0.1)

    def serialize(self, context: Sequence[str], response: str) -> tuple[list[int], list[int]]:
        """Token ids and segment ids for ``[BOS] u1 [SEP] u2 [SEP] r [EOS]``."""
        if len(context) != 2:
            raise ValueError(f"context must hold exactly 2 utterances, got {len(context)}")
        u1, u2, r = truncate_segments(
            tokenize(context[0]), tokenize(context[1]), tokenize(response), self.max_len - 4
        )
        toks = [BOS, *u1, SEP, *u2, SEP]
        segs = [0] * len(toks)
        toks += [*r, EOS]
        segs += [1] * (len(r) + 1)
        return [self.vocab.id(t) for t in toks], segs

    def _pool(self, batch: list[tuple[list[int], list[int]]]) -> torch.Tensor:
        width = max(len(ids) for ids, _ in batch)
        ids = torch.zeros(len(batch), width, dtype=torch.long)
        segs = torch.zeros(len(batch), width, dtype=torch.long)
        mask = torch.zeros(len(batch), width, dtype=self.proj.weight.dtype)
        for b, (i, s) in enumerate(batch):
            ids[b, : len(i)] = torch.tensor(i)
            segs[b, : len(s)] = torch.tensor(s)
            mask[b, : len(i)] = 1.0
        states = self.token_embedding(ids) + self.segment_embedding(segs)
        return (states * mask[..., None]).sum(1) / mask.sum(1, keepdim=True)

    def forward(self, contexts: Sequence[Sequence[str]], responses: Sequence[str]) -> torch.Tensor:
        pooled = self._pool([self.serialize(c, r) for c, r in zip(contexts, responses)])
        return self.proj(pooled)

    def embed_utterances(self, texts: Sequence[str]) -> torch.Tensor:
        """Mean of token states for standalone utterances (no projection)."""
        batch = []
        for text in texts:
            toks = tokenize(text)[: self.max_len - 2]
            ids = [self.vocab.id(t) for t in (BOS, *toks, EOS)]
            batch.append((ids, [0] * len(ids)))
        return self._pool(batch)

    def extra_state(self) -> dict:
        return {"vocab": list(self.vocab.tokens), "dim": self.dim, "embed_dim": self.embed_dim, "max_len": self.max_len}


class PretrainedEncoder(nn.Module):
    profile = "pretrained"

    def __init__(self, model, tokenizer, max_len: int = DEFAULT_MAX_LEN):
        super().__init__()
        self.model = model
        self.tokenizer = tokenizer
        self.max_len = max_len
        self.dim = model.config.hidden_size

    @classmethod
    def from_pretrained(cls, name_or_path: str, max_len: int = DEFAULT_MAX_LEN) -> PretrainedEncoder:
        from transformers import AutoModel, AutoTokenizer

        return cls(AutoModel.from_pretrained(name_or_path), AutoTokenizer.from_pretrained(name_or_path), max_len)

    def _ids(self, text: str) -> list[int]:
        return self.tokenizer.encode(text, add_special_tokens=False)

    def serialize(self, context: Sequence[str], response: str) -> tuple[list[int], list[int]]:
        if len(context) != 2:
            raise ValueError(f"context must hold exactly 2 utterances, got {len(context)}")
        tok = self.tokenizer
        # [CLS] u1 [SEP] u2 [SEP] r [SEP]
        u1, u2, r = truncate_segments(self._ids(context[0]), self._ids(context[1]), self._ids(response), self.max_len - 4)
        first = [tok.cls_token_id, *u1, tok.sep_token_id, *u2, tok.sep_token_id]
        second = [*r, tok.sep_token_id]
        return first + second, [0] * len(first) + [1] * len(second)

    def _batch(self, rows):
        width = max(len(ids) for ids, _ in rows)
        pad = self.tokenizer.pad_token_id or 0
        ids = torch.full((len(rows), width), pad, dtype=torch.long)
        types = torch.zeros(len(rows), width, dtype=torch.long)
        mask = torch.zeros(len(rows), width, dtype=torch.long)
        for b, (i, t) in enumerate(rows):
            ids[b, : len(i)] = torch.tensor(i)
            types[b, : len(t)] = torch.tensor(t)
            mask[b, : len(i)] = 1
        return ids, types, mask

    def forward(self, contexts, responses):
        ids, types, mask = self._batch([self.serialize(c, r) for c, r in zip(contexts, responses)])
        return self.model(input_ids=ids, token_type_ids=types, attention_mask=mask).pooler_output

    def embed_utterances(self, texts):
        rows = []
        for text in texts:
            tok = self.tokenizer
            ids = [tok.cls_token_id, *self._ids(text)[: self.max_len - 2], tok.sep_token_id]
            rows.append((ids, [0] * len(ids)))
        ids, types, mask = self._batch(rows)
        states = self.model(input_ids=ids, token_type_ids=types, attention_mask=mask).last_hidden_state
        m = mask[..., None].to(states.dtype)
        return (states * m).sum(1) / m.sum(1)
