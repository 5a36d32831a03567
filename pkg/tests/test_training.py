import random

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from grade.encoder import ToyEncoder, Vocabulary
from grade.keywords import build_idf_table
from grade.text import tokenize
from grade.training import (
    EMBEDDING,
    LEXICAL,
    EmbeddingPool,
    KeywordIndex,
    TrainConfig,
    TrainingError,
    TrainingTuple,
    build_pairs,
    build_tuples,
    ranking_loss,
    read_dialogues,
    read_tuples,
    sample_embedding_negative,
    sample_lexical_negative,
    train,
    write_tuples,
)


class TestPairs:
    def test_window(self):
        pairs, skipped = build_pairs([["a", "b", "c"], ["1", "2", "3", "4", "5"], ["x", "y"]])
        assert skipped == 1
        assert pairs[0] == (("a", "b"), "c")
        assert [p for p in pairs[1:]] == [(("1", "2"), "3"), (("2", "3"), "4"), (("3", "4"), "5")]

    def test_read_dialogues_error_names_line(self, tmp_path):
        (tmp_path / "d.jsonl").write_text('{"utterances": ["a", "b", "c"]}\n{"oops": 1}\n')
        with pytest.raises(ValueError, match=":2:"):
            read_dialogues(tmp_path / "d.jsonl")


class TestTuple:
    def test_negative_must_differ(self):
        with pytest.raises(ValueError):
            TrainingTuple(("a", "b"), "same", "same", LEXICAL)

    @pytest.mark.parametrize("ctx,gold,method", [(("a",), "g", LEXICAL), (("a", " "), "g", LEXICAL), (("a", "b"), "g", "bogus")])
    def test_invalid(self, ctx, gold, method):
        with pytest.raises(ValueError):
            TrainingTuple(ctx, gold, "neg", method)

    def test_jsonl_roundtrip(self, tmp_path):
        tuples = [TrainingTuple(("hi", "there"), "gold", "neg", EMBEDDING)]
        write_tuples(tuples, tmp_path / "t.jsonl")
        assert read_tuples(tmp_path / "t.jsonl") == tuples


POOL = [
    "i love my dog",
    "my dog eats bones",
    "dog parks are fun",
    "cats chase mice",
    "the weather is sunny",
    "my cat and my dog play",
]


class TestLexical:
    idf = build_idf_table(POOL)

    def test_middle_of_ranked_list(self):
        index = KeywordIndex(POOL, self.idf)
        ranked = index.search("dog", exclude="dog")
        assert len(ranked) == 4
        assert sample_lexical_negative("dog", index, 0) == ranked[2]

    def test_single_candidate(self):
        index = KeywordIndex(["weather report", "the sunny weather", "mice"], build_idf_table(POOL))
        assert index.search("weather report", exclude="weather report") == ["the sunny weather"]
        assert sample_lexical_negative("weather report", index, 0) == "the sunny weather"

    def test_ranking_by_idf_overlap(self):
        index = KeywordIndex(POOL, self.idf)
        assert index.search("dog bones")[0] == "my dog eats bones"

    @pytest.mark.parametrize("seed", range(20))
    def test_fallback_never_gold(self, seed):
        index = KeywordIndex(POOL, self.idf)
        got = sample_lexical_negative("zebra xylophone", index, seed)
        assert got in POOL and got != "zebra xylophone"

    def test_empty_pool(self):
        index = KeywordIndex(["only"], self.idf)
        with pytest.raises(ValueError):
            sample_lexical_negative("only", index, 0)


def hand_set_encoder(pool, seed=0):
    vocab = Vocabulary.from_corpus(pool)
    enc = ToyEncoder(vocab, dim=3, embed_dim=3).double()
    rng = np.random.default_rng(seed)
    with torch.no_grad():
        enc.token_embedding.weight.copy_(torch.as_tensor(rng.normal(size=(len(vocab), 3))))
    return enc


def oracle_top5(enc, pool, gold):
    table = enc.token_embedding.weight.detach().numpy()
    seg0 = enc.segment_embedding.weight.detach().numpy()[0]

    def vec(text):
        ids = [enc.vocab.id(t) for t in ["[BOS]", *tokenize(text), "[EOS]"]]
        v = np.mean([table[i] + seg0 for i in ids], axis=0)
        return v / np.linalg.norm(v)

    g = vec(gold)
    sims = {r: float(vec(r) @ g) for r in pool if r != gold}
    return set(sorted(sims, key=sims.get, reverse=True)[:5])


class TestEmbedding:
    def test_pool_of_six(self):
        enc = hand_set_encoder(POOL)
        got = sample_embedding_negative(POOL[0], POOL, enc, rng_seed=1)
        assert got in oracle_top5(enc, POOL, POOL[0])

    @pytest.mark.parametrize("seed", range(10))
    def test_larger_pool_top5_oracle(self, seed):
        pool = POOL + ["sunny days at the park", "mice hide from cats", "bones for the dog", "rain all week", "fun in the park"]
        enc = hand_set_encoder(pool, seed)
        pool_obj = EmbeddingPool(pool, enc)
        gold = pool[seed % len(pool)]
        assert pool_obj.sample(gold, seed) in oracle_top5(enc, pool, gold)

    def test_duplicate_of_gold_excluded(self):
        pool = POOL + [POOL[0]]
        enc = hand_set_encoder(POOL)
        for seed in range(10):
            assert sample_embedding_negative(POOL[0], pool, enc, rng_seed=seed) != POOL[0]

    def test_seeded(self):
        enc = hand_set_encoder(POOL)
        assert sample_embedding_negative(POOL[3], POOL, enc, rng_seed=5) == sample_embedding_negative(POOL[3], POOL, enc, rng_seed=5)

    def test_pool_too_small(self):
        enc = hand_set_encoder(POOL)
        with pytest.raises(ValueError, match="at least"):
            sample_embedding_negative(POOL[0], POOL[:5], enc, rng_seed=0)

    def test_candidate_cap(self):
        enc = hand_set_encoder(POOL)
        pool = EmbeddingPool(POOL, enc)
        assert len(pool.candidates(POOL[0], random.Random(0), 3)) == 3


def test_build_tuples_two_per_pair():
    dialogues = [POOL[:3], POOL[3:]]
    pairs, _ = build_pairs(dialogues)
    enc = hand_set_encoder(POOL)
    tuples = build_tuples(pairs, KeywordIndex(POOL, build_idf_table(POOL)), EmbeddingPool(POOL, enc), seed=0)
    assert len(tuples) == 2 * len(pairs)
    assert [t.sampling_method for t in tuples] == [LEXICAL, EMBEDDING] * len(pairs)
    assert all(t.negative_response != t.gold_response for t in tuples)
    again = build_tuples(pairs, KeywordIndex(POOL, build_idf_table(POOL)), EmbeddingPool(POOL, enc), seed=0)
    assert again == tuples


class TestLoss:
    @pytest.mark.parametrize("s,s_bar,expected", [(0.9, 0.2, 0.0), (0.5, 0.5, 0.1), (0.3, 0.6, 0.4)])
    def test_examples(self, s, s_bar, expected):
        assert ranking_loss(torch.tensor([s]), torch.tensor([s_bar]), 0.1).item() == pytest.approx(expected)

    def test_batch_mean(self):
        assert ranking_loss(torch.tensor([0.9, 0.3]), torch.tensor([0.2, 0.6])).item() == pytest.approx(0.2)

    @settings(max_examples=100, deadline=None)
    @given(st.floats(0.001, 0.999), st.floats(0.001, 0.999), st.floats(0, 1))
    def test_nonneg_and_zero_iff_margin_met(self, s, s_bar, m):
        loss = ranking_loss(torch.tensor([s], dtype=torch.float64), torch.tensor([s_bar], dtype=torch.float64), m).item()
        assert loss >= 0
        assert (loss == 0) == (s - s_bar >= m)

    @pytest.mark.parametrize("s,s_bar,grad", [(0.3, 0.6, -1.0), (0.9, 0.2, 0.0)])
    def test_subgradient(self, s, s_bar, grad):
        eps = 1e-6
        f = lambda x: ranking_loss(torch.tensor([x], dtype=torch.float64), torch.tensor([s_bar], dtype=torch.float64)).item()
        assert (f(s + eps) - f(s - eps)) / (2 * eps) == pytest.approx(grad, abs=1e-6)
        x = torch.tensor([s], dtype=torch.float64, requires_grad=True)
        ranking_loss(x, torch.tensor([s_bar], dtype=torch.float64)).backward()
        assert x.grad.item() == grad


class TestTrainConfig:
    def test_defaults(self):
        c = TrainConfig()
        assert (c.margin, c.learning_rate, c.beta1, c.beta2, c.adam_eps, c.batch_size) == (0.1, 2e-5, 0.9, 0.999, 1e-8, 16)
        assert c.max_hops == 2 and c.neighbor_limits == (10, 10)

    @pytest.mark.parametrize("kw", [{"drop_rate": 1.0}, {"batch_size": 0}, {"learning_rate": -1}, {"neighbor_limits": (10,)}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            TrainConfig(**kw)


class TestTrain:
    def test_single_tuple_reaches_zero(self, small_setup):
        model, builder, tuples = small_setup
        result = train(tuples[:1], model, builder, TrainConfig(learning_rate=1e-2, epochs=30, drop_rate=0.0))
        assert result.history[-1]["loss"] == 0.0
        assert result.history[-1]["ranking_accuracy"] == 1.0

    def test_frozen_model_constant_loss(self, small_setup):
        model, builder, tuples = small_setup
        hist = train(tuples, model, builder, TrainConfig(learning_rate=0.0, epochs=3)).history
        assert hist[0]["loss"] == hist[1]["loss"] == hist[2]["loss"]

    def test_seeded_runs_identical(self, small_setup, tmp_path, model_factory):
        _, builder, tuples = small_setup
        texts = [u for t in tuples for u in (*t.context, t.gold_response, t.negative_response)]
        cfg = TrainConfig(learning_rate=1e-3, epochs=2, batch_size=4, seed=9)
        train(tuples, model_factory(texts), builder, cfg, output_dir=tmp_path / "a")
        train(tuples, model_factory(texts), builder, cfg, output_dir=tmp_path / "b")
        a, b = (tmp_path / "a" / "metrics.csv").read_bytes(), (tmp_path / "b" / "metrics.csv").read_bytes()
        assert a == b
        assert a.decode().splitlines()[0] == "epoch,loss,ranking_accuracy"
        assert (tmp_path / "a" / "checkpoint_epoch2.pt").exists()

    def test_nan_aborts_naming_batch(self, small_setup):
        model, builder, tuples = small_setup
        with torch.no_grad():
            model.fc3.bias.fill_(float("nan"))
        with pytest.raises(TrainingError, match="batch 0"):
            train(tuples, model, builder, TrainConfig(epochs=1))

    def test_empty_tuples(self, small_setup):
        model, builder, _ = small_setup
        with pytest.raises(ValueError):
            train([], model, builder, TrainConfig())
