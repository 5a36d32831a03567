"""Topic-level dialogue graph between context keywords and response keywords.

Everything here that does not depend on learnable parameters is plain numpy
and can be cached per (context, response) pair. The learnable node
initialization lives in :class:`NodeInit`.
"""

from __future__ import annotations

import json
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .concept_graph import DEFAULT_MAX_DEPTH, ConceptNetSnapshot


@dataclass(frozen=True)
class DialogueGraph:
    """Parameter-free part of a dialogue graph.

    Rows are ordered context keywords first, then response keywords.
    ``hop_means[k]`` holds the mean embedding of each node's exact-(k+1)-hop
    shell (zeros for an empty shell).
    """

    context_nodes: tuple[str, ...]
    response_nodes: tuple[str, ...]
    base_features: np.ndarray
    hop_means: np.ndarray
    adjacency: np.ndarray

    @property
    def num_nodes(self) -> int:
        return len(self.context_nodes) + len(self.response_nodes)

    @property
    def nodes(self) -> tuple[str, ...]:
        return self.context_nodes + self.response_nodes

    @property
    def is_degenerate(self) -> bool:
        # either side without topics -> learned constant graph vector
        return not self.context_nodes or not self.response_nodes

    @property
    def normalized_adjacency(self) -> np.ndarray:
        return normalize_adjacency(self.adjacency)

    def to_json(self) -> dict:
        p = len(self.context_nodes)
        edges = []
        for i in range(p):
            for j in range(p, self.num_nodes):
                if self.adjacency[i, j] > 0:
                    edges.append(
                        {"context": self.nodes[i], "response": self.nodes[j], "weight": float(self.adjacency[i, j])}
                    )
        return {"context_nodes": list(self.context_nodes), "response_nodes": list(self.response_nodes), "edges": edges}

    def dumps(self) -> str:
        return json.dumps(self.to_json())


def hop_weight(distance: int | None, hop_attention: bool = True) -> float:
    """Edge weight for a ConceptNet hop distance; same term (0 hops) counts as 1."""
    if distance is None:
        return 0.0
    if not hop_attention or distance == 0:
        return 1.0
    return 1.0 / distance


def edge_weights(
    context_nodes: Sequence[str],
    response_nodes: Sequence[str],
    snapshot: ConceptNetSnapshot,
    max_depth: int = DEFAULT_MAX_DEPTH,
    hop_attention: bool = True,
) -> np.ndarray:
    """Bipartite weighted adjacency, 1/#hops across the context/response cut."""
    p, q = len(context_nodes), len(response_nodes)
    A = np.zeros((p + q, p + q))
    for i, a in enumerate(context_nodes):
        for j, b in enumerate(response_nodes):
            w = hop_weight(snapshot.hop_distance(a, b, max_depth), hop_attention)
            A[i, p + j] = A[p + j, i] = w
    return A


def drop_edges(A: np.ndarray, drop_rate: float, rng: np.random.Generator | int | None) -> np.ndarray:
    """Zero each undirected edge independently with probability ``drop_rate``."""
    if not 0.0 <= drop_rate < 1.0:
        raise ValueError(f"drop_rate must lie in [0, 1), got {drop_rate}")
    if drop_rate == 0.0:
        return A.copy()
    rng = np.random.default_rng(rng)
    iu, ju = np.nonzero(np.triu(A, k=1))
    drop = rng.random(len(iu)) < drop_rate
    out = A.copy()
    out[iu[drop], ju[drop]] = 0.0
    out[ju[drop], iu[drop]] = 0.0
    return out


def normalize_adjacency(A: np.ndarray) -> np.ndarray:
    """(D + I)^-1/2 (A + I) (D + I)^-1/2 with D the weighted degree matrix."""
    A = np.asarray(A, dtype=np.float64)
    scale = 1.0 / np.sqrt(A.sum(axis=1) + 1.0)
    return scale[:, None] * (A + np.eye(len(A))) * scale[None, :]


def _shell_mean(snapshot: ConceptNetSnapshot, terms: Sequence[str]) -> np.ndarray:
    # mean over neighbors that carry an embedding; empty -> zero vector
    vecs = [v for v in (snapshot.embedding(t) for t in terms) if v is not None]
    if not vecs:
        return np.zeros(snapshot.dim)
    return np.mean(np.stack(vecs).astype(np.float64), axis=0)


def hop_representations(
    snapshot: ConceptNetSnapshot,
    nodes: Sequence[str],
    limits: Sequence[int],
    ordering_seed: int = 0,
) -> np.ndarray:
    """Array (K, n, d) of mean k-hop neighbor embeddings per node."""
    out = np.zeros((len(limits), len(nodes), snapshot.dim))
    for i, term in enumerate(nodes):
        for k, limit in enumerate(limits, start=1):
            out[k - 1, i] = _shell_mean(snapshot, snapshot.k_hop_neighbors(term, k, limit, ordering_seed))
    return out


def build_graph(
    context_nodes: Sequence[str],
    response_nodes: Sequence[str],
    snapshot: ConceptNetSnapshot,
    limits: Sequence[int] = (10, 10),
    max_depth: int = DEFAULT_MAX_DEPTH,
    hop_attention: bool = True,
    ordering_seed: int = 0,
) -> DialogueGraph:
    nodes = list(context_nodes) + list(response_nodes)
    base = np.zeros((len(nodes), snapshot.dim))
    for i, term in enumerate(nodes):
        vec = snapshot.embedding(term)
        if vec is not None:
            base[i] = vec
    return DialogueGraph(
        context_nodes=tuple(context_nodes),
        response_nodes=tuple(response_nodes),
        base_features=base,
        hop_means=hop_representations(snapshot, nodes, limits, ordering_seed),
        adjacency=edge_weights(context_nodes, response_nodes, snapshot, max_depth, hop_attention),
    )


class NodeInit(nn.Module):
    """h_bar = h + sum_k (W_k @ mean_k + b), one shared bias added per hop."""

    def __init__(self, dim: int = 300, max_hops: int = 2):
        super().__init__()
        if max_hops < 1:
            raise ValueError("max_hops must be >= 1")
        self.max_hops = max_hops
        self.weight = nn.Parameter(torch.empty(max_hops, dim, dim))
        self.bias = nn.Parameter(torch.zeros(dim))
        for k in range(max_hops):
            nn.init.xavier_uniform_(self.weight.data[k])

    def forward(self, base: torch.Tensor, hop_means: torch.Tensor) -> torch.Tensor:
        if hop_means.shape[0] != self.max_hops:
            raise ValueError(f"expected {self.max_hops} hop shells, got {hop_means.shape[0]}")
        mixed = torch.einsum("kij,knj->ni", self.weight, hop_means)
        return base + mixed + self.max_hops * self.bias


def init_node_features(graph: DialogueGraph, params: NodeInit | None, dtype=torch.float64) -> torch.Tensor:
    """Node feature matrix; ``params=None`` disables the k-hop term entirely."""
    base = torch.as_tensor(graph.base_features, dtype=dtype)
    if params is None:
        return base
    return params(base, torch.as_tensor(graph.hop_means, dtype=dtype))
