"""Command-line entry points: build-data, train, score, evaluate.

Every command reads one flat config file (``--config``), applies flag
overrides on top, validates inputs before doing real work and echoes the
effective config into the output directory. Failures exit nonzero with a
single ``error[<kind>]: <message>`` line on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
from pathlib import Path

import torch
import yaml

from .concept_graph import EDGES_FILENAME, EMBEDDINGS_FILENAME, load_snapshot_dir
from .config import ConfigError, RunConfig
from .encoder import Vocabulary
from .evaluation import AlignmentError, CorrelationError, correlation_report, read_judgments
from .keywords import IdfTable, LexiconTagger, build_idf_table, load_stopwords
from .model import CheckpointError, CoherenceModel, GraphBuilder, build_encoder, load_checkpoint, read_checkpoint, score_pairs
from .training import (
    EmbeddingPool,
    KeywordIndex,
    TrainingError,
    build_pairs,
    build_tuples,
    read_dialogues,
    read_tuples,
    train,
    write_tuples,
)

logger = logging.getLogger("grade")


class CommandError(RuntimeError):
    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


def _require_file(path, what: str) -> Path:
    if path is None:
        raise CommandError("missing_input", f"{what} not configured")
    p = Path(path)
    if not p.is_file():
        raise CommandError("missing_input", f"{what} not found: {p}")
    return p


def _require_concepts(cfg: RunConfig) -> Path:
    if cfg.concept_graph_dir is None:
        raise CommandError("missing_input", "concept_graph_dir not configured")
    d = Path(cfg.concept_graph_dir)
    for name in (EDGES_FILENAME, EMBEDDINGS_FILENAME):
        _require_file(d / name, "concept graph file")
    return d


def _output_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.dump(out / "run_config.yaml")
    return out


def _tagger(cfg: RunConfig) -> LexiconTagger:
    if cfg.stopwords_path:
        return LexiconTagger(stopwords=load_stopwords(_require_file(cfg.stopwords_path, "stopword list")))
    return LexiconTagger()


def _builder(cfg: RunConfig, model_cfg, idf: IdfTable) -> GraphBuilder:
    snapshot = load_snapshot_dir(cfg.concept_graph_dir, use_cache=cfg.snapshot_cache)
    if snapshot.dim != cfg.node_dim:
        raise CommandError("config", f"concept embeddings have dim {snapshot.dim}, node_dim is {cfg.node_dim}")
    return GraphBuilder.for_model(
        model_cfg,
        snapshot,
        idf,
        tagger=_tagger(cfg),
        threshold=cfg.keyword_threshold,
        limits=tuple(cfg.neighbor_limits),
        max_depth=cfg.max_depth,
        ordering_seed=cfg.seed,
    )


def _utterances_of(tuples):
    for t in tuples:
        yield from t.context
        yield t.gold_response
        yield t.negative_response


def cmd_build_data(cfg: RunConfig, args) -> dict:
    corpus = _require_file(args.corpus or cfg.corpus_path, "dialogue corpus")
    out = _output_dir(cfg)
    dialogues = read_dialogues(corpus)
    if not dialogues:
        raise CommandError("invalid_input", f"corpus {corpus} holds no dialogues")
    pairs, skipped = build_pairs(dialogues)
    if not pairs:
        raise CommandError("invalid_input", f"no dialogue in {corpus} has 3 or more utterances")
    pool = list(dict.fromkeys(u for d in dialogues for u in d))
    if len(pool) < 2:
        raise CommandError("invalid_input", "need at least two distinct utterances to sample negatives")
    top_k = min(cfg.top_k, len(pool) - 1)
    if top_k < cfg.top_k:
        logger.warning("pool of %d utterances: embedding sampling uses top-%d instead of top-%d", len(pool), top_k, cfg.top_k)

    idf = build_idf_table(pool)
    idf.save(out / "idf.tsv")
    torch.manual_seed(cfg.seed)
    model_cfg = cfg.model_config()
    vocab = None
    if model_cfg.encoder_profile == "toy":
        vocab = Vocabulary.from_corpus(pool)
        vocab.save(out / "vocab.txt")
    encoder = build_encoder(model_cfg, vocab).eval()

    index = KeywordIndex(pool, idf, _tagger(cfg), cfg.keyword_threshold)
    tuples = build_tuples(pairs, index, EmbeddingPool(pool, encoder), cfg.seed, cfg.num_candidates, top_k)
    write_tuples(tuples, out / "tuples.jsonl")
    stats = {
        "dialogues": len(dialogues),
        "skipped_dialogues": skipped,
        "pairs": len(pairs),
        "tuples": len(tuples),
        "tuples_per_pair": len(tuples) // len(pairs),
        "pool_size": len(pool),
    }
    (out / "stats.json").write_text(json.dumps(stats, indent=2) + "\n")
    return stats


def _load_or_build_idf(cfg, out: Path, texts) -> IdfTable:
    if cfg.idf_path:
        return IdfTable.load(_require_file(cfg.idf_path, "idf table"))
    if (out / "idf.tsv").is_file():
        return IdfTable.load(out / "idf.tsv")
    idf = build_idf_table(texts)
    idf.save(out / "idf.tsv")
    return idf


def cmd_train(cfg: RunConfig, args) -> dict:
    out = Path(cfg.output_dir)
    tuples_path = _require_file(args.tuples or cfg.tuples_path or out / "tuples.jsonl", "tuple cache")
    _require_concepts(cfg)
    resume = args.resume or cfg.resume_from
    if resume:
        _require_file(resume, "resume checkpoint")
    out = _output_dir(cfg)

    tuples = read_tuples(tuples_path)
    if not tuples:
        raise CommandError("invalid_input", f"{tuples_path} holds no tuples")
    texts = list(_utterances_of(tuples))
    idf = _load_or_build_idf(cfg, out, texts)
    model_cfg = cfg.model_config()
    torch.manual_seed(cfg.seed)
    start_epoch, optimizer_state = 0, None
    if resume:
        payload = read_checkpoint(resume)
        model = load_checkpoint(resume)
        model_cfg = model.config
        start_epoch = int(payload["extra"].get("epoch", 0))
        optimizer_state = payload["extra"].get("optimizer")
    else:
        vocab = None
        if model_cfg.encoder_profile == "toy":
            if cfg.vocab_path:
                vocab = Vocabulary.load(_require_file(cfg.vocab_path, "vocabulary"))
            elif (out / "vocab.txt").is_file():
                vocab = Vocabulary.load(out / "vocab.txt")
            else:
                vocab = Vocabulary.from_corpus(texts)
                vocab.save(out / "vocab.txt")
        model = CoherenceModel(model_cfg, build_encoder(model_cfg, vocab))
        if cfg.dtype == "float64":
            model = model.double()
    builder = _builder(cfg, model_cfg, idf)
    result = train(tuples, model, builder, cfg.train_config(), out, start_epoch, optimizer_state)
    last = start_epoch + cfg.epochs
    if cfg.epochs:
        shutil.copyfile(out / f"checkpoint_epoch{last}.pt", out / "latest.pt")
    return {"epochs": last, "history": result.history}


def _checkpoint_path(cfg, args) -> Path:
    path = args.checkpoint or cfg.checkpoint or Path(cfg.output_dir) / "latest.pt"
    if not Path(path).is_file():
        raise CommandError("missing_checkpoint", f"checkpoint not found: {path}")
    return Path(path)


def _read_pairs(path: Path) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            if not isinstance(rec.get("context"), list) or len(rec["context"]) != 2 or "response" not in rec:
                raise CommandError("invalid_input", f"{path}:{lineno}: expected {{\"context\": [str, str], \"response\": str}}")
            records.append(rec)
    return records


def cmd_score(cfg: RunConfig, args) -> dict:
    inp = _require_file(args.input, "scoring input")
    ckpt = _checkpoint_path(cfg, args)
    _require_concepts(cfg)
    idf_path = cfg.idf_path or ckpt.parent / "idf.tsv"
    idf = IdfTable.load(_require_file(idf_path, "idf table"))
    out = _output_dir(cfg)

    model = load_checkpoint(ckpt)
    builder = _builder(cfg, model.config, idf)
    records = _read_pairs(inp)
    pairs = [(tuple(r["context"]), r["response"]) for r in records]
    scored = score_pairs(model, builder, pairs, diagnostics=args.diagnostics)
    dest = Path(args.output) if args.output else out / "scores.jsonl"
    with open(dest, "w", encoding="utf-8") as f:
        for rec, sp in zip(records, scored):
            row = dict(rec, score=sp.score)
            if sp.diagnostics is not None:
                row["diagnostics"] = sp.diagnostics
            f.write(json.dumps(row, ensure_ascii=False) + "\n")
    if args.dump_graph:
        with open(args.dump_graph, "w", encoding="utf-8") as f:
            for c, r in pairs:
                g = builder(c, r).to_json()
                f.write(json.dumps({"context": list(c), "response": r, **g}, ensure_ascii=False) + "\n")
    return {"scored": len(scored), "output": str(dest)}


def cmd_evaluate(cfg: RunConfig, args) -> dict:
    scored_path = _require_file(args.scored, "scored file")
    judgments_path = _require_file(args.judgments, "judgment file")
    out = _output_dir(cfg)
    scores = {}
    for rec in _read_pairs(scored_path):
        key = (tuple(rec["context"]), rec["response"])
        if "score" not in rec:
            raise CommandError("invalid_input", f"{scored_path}: record without score: {key}")
        if key in scores and scores[key] != rec["score"]:
            raise CommandError("invalid_input", f"{scored_path}: conflicting scores for {key}")
        scores[key] = float(rec["score"])
    report = correlation_report(scores, read_judgments(judgments_path))
    report.write(out / "report.json", out / "scatter.csv")
    return report.summary()


COMMANDS = {"build-data": cmd_build_data, "train": cmd_train, "score": cmd_score, "evaluate": cmd_evaluate}


def _parse_set(items) -> dict:
    out = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        out[key.strip()] = yaml.safe_load(value)
    return out


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat YAML/JSON key-value config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--output-dir")
    common.add_argument("--concept-graph-dir")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="grade", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-data", parents=[common], help="window dialogues and sample negatives")
    p.add_argument("--corpus", help="dialogue JSONL (overrides corpus_path)")

    p = sub.add_parser("train", parents=[common], help="train on a tuple cache")
    p.add_argument("--tuples", help="tuple JSONL (overrides tuples_path)")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--epochs", type=int)

    p = sub.add_parser("score", parents=[common], help="score context/response JSONL")
    p.add_argument("input")
    p.add_argument("--output")
    p.add_argument("--checkpoint")
    p.add_argument("--diagnostics", action="store_true")
    p.add_argument("--dump-graph", metavar="PATH", help="write each pair's dialogue graph as JSONL")

    p = sub.add_parser("evaluate", parents=[common], help="correlate scores with human judgments")
    p.add_argument("scored")
    p.add_argument("judgments")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        overrides = _parse_set(args.set)
        overrides.update(
            {"seed": args.seed, "output_dir": args.output_dir, "concept_graph_dir": args.concept_graph_dir}
        )
        if getattr(args, "epochs", None) is not None:
            overrides["epochs"] = args.epochs
        cfg = RunConfig.load(args.config, overrides)
        result = COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"error[config]: {exc}", file=sys.stderr)
        return 2
    except CommandError as exc:
        print(f"error[{exc.kind}]: {exc}", file=sys.stderr)
        return 1
    except CheckpointError as exc:
        print(f"error[checkpoint]: {exc}", file=sys.stderr)
        return 1
    except AlignmentError as exc:
        print(f"error[alignment]: {exc}", file=sys.stderr)
        return 1
    except TrainingError as exc:
        print(f"error[training]: {exc}", file=sys.stderr)
        return 1
    except (CorrelationError, ValueError, OSError) as exc:
        print(f"error[invalid_input]: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(result if args.command != "train" else {"epochs": result["epochs"]}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
