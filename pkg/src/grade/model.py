"""End-to-end coherence scorer: utterance vector + topic-graph vector -> MLP -> sigmoid."""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .concept_graph import DEFAULT_MAX_DEPTH, ConceptNetSnapshot
from .dialogue_graph import DialogueGraph, NodeInit, build_graph, drop_edges, init_node_features, normalize_adjacency
from .encoder import DEFAULT_MAX_LEN, PretrainedEncoder, ToyEncoder, Vocabulary
from .graph_reasoning import GraphHead
from .keywords import IdfTable, LexiconTagger, Tagger, extract_keywords

CHECKPOINT_FORMAT = "grade-checkpoint"
CHECKPOINT_VERSION = 1

_OPEN_EPS = 1e-15


class CheckpointError(RuntimeError):
    pass


@dataclass
class ModelConfig:
    encoder_profile: str = "toy"
    encoder_dim: int = 64
    pretrained_name: str = "bert-base-uncased"
    max_len: int = DEFAULT_MAX_LEN
    node_dim: int = 300
    max_hops: int = 2
    gat_layers: int = 3
    heads: int = 4
    leaky_slope: float = 0.2
    hidden1: int = 512
    hidden2: int = 128
    no_graph_branch: bool = False
    no_khop: bool = False
    no_hop_attention: bool = False

    def __post_init__(self):
        if self.encoder_profile not in ("toy", "pretrained"):
            raise ValueError(f"unknown encoder profile {self.encoder_profile!r}")

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class ScoredPair:
    context: tuple[str, str]
    response: str
    score: float
    diagnostics: dict | None = None


@dataclass
class GraphBuilder:
    """Keyword extraction + dialogue-graph construction, memoized per pair."""

    snapshot: ConceptNetSnapshot
    idf: IdfTable
    tagger: Tagger = field(default_factory=LexiconTagger)
    threshold: float = 0.0
    limits: tuple[int, ...] = (10, 10)
    max_depth: int = DEFAULT_MAX_DEPTH
    hop_attention: bool = True
    khop: bool = True
    enabled: bool = True
    ordering_seed: int = 0
    _cache: dict = field(default_factory=dict, repr=False)

    @classmethod
    def for_model(cls, config: ModelConfig, snapshot, idf, **kw) -> GraphBuilder:
        kw.setdefault("limits", (10,) * config.max_hops)
        if len(kw["limits"]) != config.max_hops:
            raise ValueError(f"{len(kw['limits'])} neighbor limits given for max_hops={config.max_hops}")
        return cls(
            snapshot,
            idf,
            hop_attention=not config.no_hop_attention,
            khop=not config.no_khop,
            enabled=not config.no_graph_branch,
            **kw,
        )

    def keywords(self, text: str) -> list[str]:
        return extract_keywords(text, self.idf, self.tagger, self.threshold)

    def __call__(self, context: Sequence[str], response: str) -> DialogueGraph:
        if not self.enabled:
            return _EMPTY_GRAPH
        key = (tuple(context), response)
        graph = self._cache.get(key)
        if graph is None:
            graph = build_graph(
                self.keywords(" ".join(context)),
                self.keywords(response),
                self.snapshot,
                limits=self.limits if self.khop else (),
                max_depth=self.max_depth,
                hop_attention=self.hop_attention,
                ordering_seed=self.ordering_seed,
            )
            self._cache[key] = graph
        return graph


_EMPTY_GRAPH = DialogueGraph((), (), np.zeros((0, 0)), np.zeros((0, 0, 0)), np.zeros((0, 0)))


def build_encoder(config: ModelConfig, vocab: Vocabulary | None = None) -> nn.Module:
    if config.encoder_profile == "toy":
        if vocab is None:
            raise ValueError("the toy encoder needs a vocabulary")
        return ToyEncoder(vocab, config.encoder_dim, max_len=config.max_len)
    return PretrainedEncoder.from_pretrained(config.pretrained_name, config.max_len)


class CoherenceModel(nn.Module):
    def __init__(self, config: ModelConfig, encoder: nn.Module):
        super().__init__()
        self.config = config
        self.encoder = encoder
        use_graph = not config.no_graph_branch
        self.node_init = NodeInit(config.node_dim, config.max_hops) if use_graph and not config.no_khop else None
        self.graph_head = (
            GraphHead(config.node_dim, config.gat_layers, config.heads, config.leaky_slope) if use_graph else None
        )
        self.fc1 = nn.Linear(encoder.dim + config.node_dim, config.hidden1)
        self.fc2 = nn.Linear(config.hidden1, config.hidden2)
        self.fc3 = nn.Linear(config.hidden2, 1)

    @property
    def dtype(self) -> torch.dtype:
        return self.fc1.weight.dtype

    def graph_inputs(self, graph: DialogueGraph, adjacency: np.ndarray | None = None):
        """(h0, A_norm, active) tensors; ``adjacency`` overrides the graph's own (post-drop)."""
        A = graph.adjacency if adjacency is None else adjacency
        h0 = init_node_features(graph, self.node_init, self.dtype)
        adj_norm = torch.as_tensor(normalize_adjacency(A), dtype=self.dtype)
        active = torch.as_tensor(A > 0)
        return h0, adj_norm, active

    def graph_vector(self, graph: DialogueGraph, adjacency: np.ndarray | None = None) -> torch.Tensor:
        if self.graph_head is None:
            return torch.zeros(self.config.node_dim, dtype=self.dtype)
        if graph.is_degenerate:
            return self.graph_head.empty_graph
        return self.graph_head(*self.graph_inputs(graph, adjacency))

    def forward(
        self,
        contexts: Sequence[Sequence[str]],
        responses: Sequence[str],
        graphs: Sequence[DialogueGraph],
        drop_rate: float = 0.0,
        rng: np.random.Generator | None = None,
    ) -> torch.Tensor:
        """Scores in (0, 1), one per (context, response, graph) triple.

        DropEdge is applied only when ``drop_rate > 0``; pass an ``rng`` to
        make it reproducible.
        """
        v_c = self.encoder(contexts, responses).to(self.dtype)
        v_g = []
        for g in graphs:
            A = None
            if drop_rate > 0 and self.graph_head is not None and not g.is_degenerate:
                A = drop_edges(g.adjacency, drop_rate, rng)
            v_g.append(self.graph_vector(g, A))
        x = torch.cat([v_c, torch.stack(v_g)], dim=1)
        logit = self.fc3(F.elu(self.fc2(F.elu(self.fc1(x))))).squeeze(-1)
        # float64 keeps the sigmoid off exactly 0/1 for |logit| < ~36
        s = torch.sigmoid(logit.double()).clamp(_OPEN_EPS, 1.0 - _OPEN_EPS)
        if not torch.isfinite(s).all():
            raise FloatingPointError("non-finite coherence score")
        return s

    def num_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())


def graph_diagnostics(model: CoherenceModel, graph: DialogueGraph) -> dict:
    diag = graph.to_json()
    if model.graph_head is None or graph.is_degenerate:
        return diag
    with torch.no_grad():
        h, adj_norm, active = model.graph_inputs(graph)
        per_layer = []
        for layer in model.graph_head.layers:
            alpha = layer.attention(h, adj_norm, active)[0].mean(0)
            per_layer.append(alpha)
            h = layer(h, adj_norm, active)
    nodes = graph.nodes
    index = {(e["context"], e["response"]): e for e in diag["edges"]}
    p = len(graph.context_nodes)
    for i in range(p):
        for j in range(p, graph.num_nodes):
            edge = index.get((nodes[i], nodes[j]))
            if edge is not None:
                edge["attention"] = [
                    {"context_to_response": float(a[i, j]), "response_to_context": float(a[j, i])} for a in per_layer
                ]
    return diag


def score_pairs(
    model: CoherenceModel,
    builder: GraphBuilder,
    pairs: Sequence[tuple[Sequence[str], str]],
    batch_size: int = 64,
    diagnostics: bool = False,
) -> list[ScoredPair]:
    """Evaluation-mode scoring; deterministic."""
    model.eval()
    out = []
    with torch.no_grad():
        for start in range(0, len(pairs), batch_size):
            chunk = pairs[start : start + batch_size]
            contexts = [tuple(c) for c, _ in chunk]
            responses = [r for _, r in chunk]
            graphs = [builder(c, r) for c, r in chunk]
            scores = model(contexts, responses, graphs)
            for c, r, g, s in zip(contexts, responses, graphs, scores.tolist()):
                diag = graph_diagnostics(model, g) if diagnostics else None
                out.append(ScoredPair(c, r, s, diag))
    return out


def score(
    model: CoherenceModel,
    builder: GraphBuilder,
    context: Sequence[str],
    response: str,
    mode: str = "eval",
    rng_seed: int | None = None,
    drop_rate: float = 0.2,
    diagnostics: bool = False,
) -> ScoredPair:
    """Score one pair. ``mode='train'`` applies DropEdge with ``rng_seed``."""
    if mode == "eval":
        return score_pairs(model, builder, [(context, response)], diagnostics=diagnostics)[0]
    if mode != "train":
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    graph = builder(context, response)
    with torch.no_grad():
        s = model([tuple(context)], [response], [graph], drop_rate, np.random.default_rng(rng_seed))
    return ScoredPair(tuple(context), response, float(s[0]), graph_diagnostics(model, graph) if diagnostics else None)


def _encoder_state(encoder) -> dict:
    if isinstance(encoder, ToyEncoder):
        return {"profile": "toy", **encoder.extra_state()}
    return {"profile": "pretrained"}


def save_checkpoint(model: CoherenceModel, path, **extra) -> None:
    """Write a versioned archive of named tensors plus the model config.

    ``extra`` entries (epoch, optimizer state, ...) are stored alongside.
    """
    state = model.state_dict()
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": asdict(model.config),
        "encoder": _encoder_state(model.encoder),
        "dtype": str(model.dtype).removeprefix("torch."),
        "shapes": {k: list(v.shape) for k, v in state.items()},
        "state_dict": state,
        "extra": extra,
    }
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)


def read_checkpoint(path) -> dict:
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint not found: {path}") from None
    except Exception as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a coherence-model checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {payload.get('version')}, expected {CHECKPOINT_VERSION}")
    return payload


def load_checkpoint(path, model: CoherenceModel | None = None) -> CoherenceModel:
    """Restore a model. With ``model`` given, load into it after checking shapes."""
    payload = read_checkpoint(path)
    if model is None:
        config = ModelConfig.from_dict(payload["config"])
        enc = payload["encoder"]
        if enc["profile"] == "toy":
            encoder = ToyEncoder(Vocabulary(enc["vocab"]), enc["dim"], enc["embed_dim"], enc["max_len"])
        else:
            encoder = build_encoder(config)
        model = CoherenceModel(config, encoder).to(getattr(torch, payload["dtype"]))
    own = model.state_dict()
    mismatched = [
        f"{k}: checkpoint {list(v.shape)} vs model {list(own[k].shape)}"
        for k, v in payload["state_dict"].items()
        if k in own and own[k].shape != v.shape
    ]
    missing = sorted(set(own) - set(payload["state_dict"]))
    unexpected = sorted(set(payload["state_dict"]) - set(own))
    if mismatched or missing or unexpected:
        detail = "; ".join(mismatched + [f"missing {k}" for k in missing] + [f"unexpected {k}" for k in unexpected])
        raise CheckpointError(f"{path}: shape mismatch: {detail}")
    model.load_state_dict(payload["state_dict"])
    return model
