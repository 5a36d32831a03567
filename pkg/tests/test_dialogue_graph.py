import json

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import linalg, stats

from grade.concept_graph import build_snapshot
from grade.dialogue_graph import (
    NodeInit,
    build_graph,
    drop_edges,
    edge_weights,
    hop_weight,
    init_node_features,
    normalize_adjacency,
)


def normalize_oracle(A):
    D = np.diag(A.sum(axis=1))
    M = linalg.fractional_matrix_power(D + np.eye(len(A)), -0.5)
    return M @ (A + np.eye(len(A))) @ M


def random_symmetric(n, rng, density=0.6):
    A = rng.random((n, n)) * (rng.random((n, n)) < density)
    A = np.triu(A, 1)
    return A + A.T


class TestNormalize:
    def test_two_nodes(self):
        assert np.allclose(normalize_adjacency(np.array([[0.0, 1], [1, 0]])), 0.5)

    def test_zero_matrix(self):
        assert np.array_equal(normalize_adjacency(np.zeros((4, 4))), np.eye(4))

    def test_random_5x5(self):
        A = random_symmetric(5, np.random.default_rng(0))
        assert np.allclose(normalize_adjacency(A), normalize_oracle(A), atol=1e-12, rtol=0)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 12), st.integers(0, 2**31))
    def test_properties(self, n, seed):
        A = random_symmetric(n, np.random.default_rng(seed))
        N = normalize_adjacency(A)
        assert np.allclose(N, N.T) and (N >= 0).all()
        assert np.allclose(np.diag(N), 1 / (A.sum(axis=1) + 1))
        assert np.allclose(N, normalize_oracle(A), atol=1e-12)


class TestEdgeWeights:
    def test_hop_weight(self):
        assert hop_weight(2) == 0.5
        assert hop_weight(1) == 1.0
        assert hop_weight(0) == 1.0
        assert hop_weight(None) == 0.0
        assert hop_weight(3, hop_attention=False) == 1.0

    def test_chain(self, chain):
        A = edge_weights(["a"], ["b", "c", "d", "a", "zzz"], chain)
        assert A[0, 1:].tolist() == [1.0, 0.5, pytest.approx(1 / 3), 1.0, 0.0]
        assert np.array_equal(A, A.T)
        # no intra-partition edges
        assert (A[1:, 1:] == 0).all()

    def test_binary_ablation(self, chain):
        A = edge_weights(["a"], ["c", "d", "zzz"], chain, hop_attention=False)
        assert A[0, 1:].tolist() == [1.0, 1.0, 0.0]

    def test_monotone_in_distance(self):
        ws = [hop_weight(d) for d in range(1, 7)]
        assert all(x >= y for x, y in zip(ws, ws[1:]))


class TestDropEdges:
    def test_zero_rate_identity(self):
        A = random_symmetric(6, np.random.default_rng(1))
        assert np.array_equal(drop_edges(A, 0.0, 3), A)

    @pytest.mark.parametrize("rate", [-0.1, 1.0, 1.5])
    def test_bad_rate(self, rate):
        with pytest.raises(ValueError):
            drop_edges(np.zeros((2, 2)), rate, 0)

    def test_seeded_and_symmetric(self):
        A = random_symmetric(20, np.random.default_rng(2))
        a1, a2 = drop_edges(A, 0.3, 11), drop_edges(A, 0.3, 11)
        assert np.array_equal(a1, a2)
        assert np.array_equal(a1, a1.T)
        assert ((a1 == A) | (a1 == 0)).all()

    def test_binomial_interval(self):
        # complete bipartite 25 x 40 = 1000 edges
        A = np.zeros((65, 65))
        A[:25, 25:] = 1.0
        A[25:, :25] = 1.0
        survivors = int(np.triu(drop_edges(A, 0.5, 123), 1).astype(bool).sum())
        lo, hi = stats.binom.interval(0.99, 1000, 0.5)
        assert lo <= survivors <= hi


def two_node_snapshot():
    return build_snapshot([("t", "n")], {"t": np.array([1.0, 2.0]), "n": np.array([3.0, -1.0])})


class TestNodeInit:
    def test_zero_transform(self):
        snap = two_node_snapshot()
        g = build_graph(["t"], ["n"], snap, limits=(10, 10))
        init = NodeInit(dim=2, max_hops=2).double()
        with torch.no_grad():
            init.weight.zero_()
        assert np.allclose(init_node_features(g, init).detach().numpy(), g.base_features)
        assert np.allclose(g.base_features, [[1, 2], [3, -1]])

    def test_identity_one_hop(self):
        snap = two_node_snapshot()
        g = build_graph(["t"], [], snap, limits=(10,))
        init = NodeInit(dim=2, max_hops=1).double()
        with torch.no_grad():
            init.weight.copy_(torch.eye(2)[None])
        assert np.allclose(init_node_features(g, init).detach().numpy(), [[4.0, 1.0]])

    def test_oov_gets_bias_only(self):
        snap = two_node_snapshot()
        g = build_graph(["ghost"], ["t"], snap, limits=(10, 10))
        init = NodeInit(dim=2, max_hops=2).double()
        with torch.no_grad():
            init.bias.fill_(0.25)
        assert np.allclose(init_node_features(g, init).detach().numpy()[0], [0.5, 0.5])

    def test_empty_shell_still_adds_bias(self):
        snap = two_node_snapshot()
        g = build_graph(["t"], [], snap, limits=(10, 10))
        assert np.array_equal(g.hop_means[1, 0], [0.0, 0.0])
        init = NodeInit(dim=2, max_hops=2).double()
        with torch.no_grad():
            init.weight.copy_(torch.eye(2).repeat(2, 1, 1))
            init.bias.fill_(1.0)
        assert np.allclose(init_node_features(g, init).detach().numpy(), [[1 + 3 + 2, 2 - 1 + 2]])

    def test_hop_count_mismatch(self):
        g = build_graph(["t"], [], two_node_snapshot(), limits=(10,))
        with pytest.raises(ValueError):
            init_node_features(g, NodeInit(dim=2, max_hops=2).double())

    def test_ablation_returns_base(self, small_world):
        snap = small_world.snapshot()
        terms = list(snap.terms[:5])
        g = build_graph(terms[:2], terms[2:], snap)
        assert np.array_equal(init_node_features(g, None).numpy(), g.base_features)

    def test_permutation_equivariance(self, small_world):
        snap = small_world.snapshot()
        terms = list(snap.terms[:6])
        torch.manual_seed(0)
        init = NodeInit(dim=snap.dim).double()
        g = build_graph(terms[:3], terms[3:], snap)
        perm_ctx, perm_resp = [2, 0, 1], [1, 2, 0]
        gp = build_graph([terms[i] for i in perm_ctx], [terms[3 + i] for i in perm_resp], snap)
        order = perm_ctx + [3 + i for i in perm_resp]
        h, hp = init_node_features(g, init), init_node_features(gp, init)
        assert torch.allclose(hp, h[order])
        assert np.allclose(gp.adjacency, g.adjacency[np.ix_(order, order)])


class TestBuildGraph:
    def test_structure_and_json(self, chain):
        g = build_graph(["a", "b"], ["d"], chain, limits=(10, 10))
        assert g.num_nodes == 3 and g.nodes == ("a", "b", "d")
        assert g.hop_means.shape == (2, 3, 4)
        assert not g.is_degenerate
        doc = json.loads(g.dumps())
        assert doc["edges"] == [
            {"context": "a", "response": "d", "weight": pytest.approx(1 / 3)},
            {"context": "b", "response": "d", "weight": 0.5},
        ]

    def test_degenerate(self, chain):
        assert build_graph([], ["a"], chain).is_degenerate
        assert build_graph(["a"], [], chain).is_degenerate
