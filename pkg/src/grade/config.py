"""Flat key-value run configuration shared by all CLI commands."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .model import ModelConfig
from .training import TrainConfig

logger = logging.getLogger(__name__)

ALIASES = {"encoder.profile": "encoder_profile", "concept-graph-dir": "concept_graph_dir"}


class ConfigError(ValueError):
    pass


def _coerce(name, f, value):
    # YAML reads "1e-3" as a string; trust the field's declared type
    kind = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", "")
    try:
        if kind == "float":
            return float(value)
        if kind == "int" and not isinstance(value, bool):
            return int(value)
        if kind == "bool":
            if isinstance(value, str):
                if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
                    raise ValueError(value)
                return value.lower() in ("true", "1", "yes")
            return bool(value)
        if kind == "list[int]":
            return [int(v) for v in value]
    except (TypeError, ValueError):
        raise ConfigError(f"config key {name}: cannot interpret {value!r} as {kind}") from None
    return value


@dataclass
class RunConfig:
    output_dir: str = "runs/default"
    seed: int = 0
    concept_graph_dir: str | None = None
    snapshot_cache: bool = False
    corpus_path: str | None = None
    tuples_path: str | None = None
    idf_path: str | None = None
    vocab_path: str | None = None
    stopwords_path: str | None = None
    checkpoint: str | None = None
    resume_from: str | None = None
    dtype: str = "float32"

    # encoder / architecture
    encoder_profile: str = "toy"
    encoder_dim: int = 64
    pretrained_name: str = "bert-base-uncased"
    max_len: int = 128
    node_dim: int = 300
    gat_layers: int = 3
    heads: int = 4
    leaky_slope: float = 0.2
    hidden1: int = 512
    hidden2: int = 128
    keyword_threshold: float = 0.0
    max_depth: int = 6

    # ablations
    no_graph_branch: bool = False
    no_khop: bool = False
    no_hop_attention: bool = False

    # optimization
    margin: float = 0.1
    learning_rate: float = 2e-5
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 16
    epochs: int = 10
    drop_rate: float = 0.2
    max_hops: int = 2
    neighbor_limits: list[int] = field(default_factory=lambda: [10, 10])

    # negative sampling
    num_candidates: int = 1000
    top_k: int = 5

    @classmethod
    def from_mapping(cls, data: dict) -> RunConfig:
        known = {f.name: f for f in fields(cls)}
        values = {}
        unknown = []
        for key, value in data.items():
            name = ALIASES.get(key, key).replace("-", "_")
            if name not in known:
                unknown.append(key)
            else:
                values[name] = _coerce(name, known[name], value)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        cfg = cls(**values)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path=None, overrides: dict | None = None) -> RunConfig:
        data = {}
        if path is not None:
            try:
                loaded = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
            except OSError as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from exc
            except yaml.YAMLError as exc:
                raise ConfigError(f"cannot parse config {path}: {exc}") from exc
            if loaded is None:
                loaded = {}
            if not isinstance(loaded, dict) or any(isinstance(v, dict) for v in loaded.values()):
                raise ConfigError(f"{path}: config must be a flat key-value mapping")
            data.update(loaded)
        data.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls.from_mapping(data)

    def validate(self) -> None:
        try:
            self.model_config()
            self.train_config()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if self.no_graph_branch and (self.no_khop or self.no_hop_attention):
            logger.warning("no_graph_branch is set; no_khop and no_hop_attention are ignored")

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            encoder_profile=self.encoder_profile,
            encoder_dim=self.encoder_dim,
            pretrained_name=self.pretrained_name,
            max_len=self.max_len,
            node_dim=self.node_dim,
            max_hops=self.max_hops,
            gat_layers=self.gat_layers,
            heads=self.heads,
            leaky_slope=self.leaky_slope,
            hidden1=self.hidden1,
            hidden2=self.hidden2,
            no_graph_branch=self.no_graph_branch,
            no_khop=self.no_khop,
            no_hop_attention=self.no_hop_attention,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            margin=self.margin,
            learning_rate=self.learning_rate,
            beta1=self.beta1,
            beta2=self.beta2,
            adam_eps=self.adam_eps,
            batch_size=self.batch_size,
            epochs=self.epochs,
            seed=self.seed,
            drop_rate=self.drop_rate,
            max_hops=self.max_hops,
            neighbor_limits=tuple(self.neighbor_limits),
        )

    def dump(self, path) -> None:
        Path(path).write_text(yaml.safe_dump(asdict(self), sort_keys=True), encoding="utf-8")
