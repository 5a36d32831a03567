"""Synthetic concept worlds and corpora for tests, demos and the acceptance run.

The world is a set of disjoint topic clusters (random trees) over
pronounceable pseudo-words, with cluster-structured embeddings. Tuples come
in swapped pairs::

    T1: context (X, Y)  gold (Z, P)  negative (Z, Q)
    T2: context (X, Z)  gold (Y, Q)  negative (Y, P)

where Y-P and Z-Q are close in the concept graph and every other
context/response pair is in different clusters. The gold input of T1 and the
negative input of T2 contain the same tokens in the same segments (and vice
versa), so any scorer that only sees a bag of tokens ranks at most one of the
two correctly. Only concept-graph hops tell them apart.
"""

from __future__ import annotations

import argparse
import itertools
import json
import random
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .concept_graph import build_snapshot, write_snapshot_files
from .training import TrainingTuple, write_tuples

_ONSETS = "b d f g k m n p r s t v z".split()
_VOWELS = "a e i o u".split()

CONTEXT_TEMPLATES = (
    ("what about the {}", "and the {}"),
    ("it was the {}", "so what about your {}"),
    ("do you have a {}", "there was a {}"),
    ("i am into the {}", "we have the {}"),
)
RESPONSE_TEMPLATES = ("the {} and the {}", "a {} with a {}", "my {} and your {}", "the {} or the {}")


def pseudo_words(n: int, rng: random.Random) -> list[str]:
    syllables = [o + v for o, v in itertools.product(_ONSETS, _VOWELS)]
    words = set()
    while len(words) < n:
        words.add("".join(rng.choice(syllables) for _ in range(3)))
    return sorted(words)


@dataclass
class SyntheticWorld:
    clusters: list[list[str]]
    edges: list[tuple[str, str]]
    embeddings: dict[str, np.ndarray]

    @classmethod
    def generate(cls, n_clusters: int = 50, cluster_size: int = 10, dim: int = 300, seed: int = 0) -> SyntheticWorld:
        rng = random.Random(seed)
        nrng = np.random.default_rng(seed)
        words = pseudo_words(n_clusters * cluster_size, rng)
        rng.shuffle(words)
        clusters = [words[i * cluster_size : (i + 1) * cluster_size] for i in range(n_clusters)]
        edges, embeddings = [], {}
        for members in clusters:
            for i in range(1, len(members)):
                edges.append((members[rng.randrange(i)], members[i]))
            centroid = nrng.normal(size=dim)
            for m in members:
                v = centroid + nrng.normal(size=dim)
                embeddings[m] = (v / np.linalg.norm(v)).astype(np.float32)
        return cls(clusters, edges, embeddings)

    def snapshot(self):
        return build_snapshot(self.edges, self.embeddings)

    def write(self, directory) -> None:
        write_snapshot_files(directory, self.edges, self.embeddings)

    def close_pair(self, cluster: int, rng: random.Random, max_hops: int = 2) -> tuple[str, str]:
        snap = self._snap()
        members = self.clusters[cluster]
        pairs = [
            (a, b)
            for a, b in itertools.combinations(members, 2)
            if (d := snap.hop_distance(a, b)) is not None and 1 <= d <= max_hops
        ]
        a, b = rng.choice(pairs)
        return (a, b) if rng.random() < 0.5 else (b, a)

    def _snap(self):
        if not hasattr(self, "_cached_snapshot"):
            self._cached_snapshot = self.snapshot()
        return self._cached_snapshot


def swapped_tuples(world: SyntheticWorld, n_tuples: int = 200, seed: int = 0) -> list[TrainingTuple]:
    """``n_tuples`` (even) tuples in the swapped-pair layout described above."""
    if n_tuples % 2:
        raise ValueError("n_tuples must be even")
    rng = random.Random(seed)
    out = []
    for _ in range(n_tuples // 2):
        ca, cb, cc = rng.sample(range(len(world.clusters)), 3)
        y, p = world.close_pair(ca, rng)
        z, q = world.close_pair(cb, rng)
        x = rng.choice(world.clusters[cc])
        t1, t2 = rng.choice(CONTEXT_TEMPLATES)
        resp = rng.choice(RESPONSE_TEMPLATES)
        out.append(
            TrainingTuple((t1.format(x), t2.format(y)), resp.format(z, p), resp.format(z, q), "lexical")
        )
        out.append(
            TrainingTuple((t1.format(x), t2.format(z)), resp.format(y, q), resp.format(y, p), "embedding")
        )
    return out


def topical_dialogues(world: SyntheticWorld, n_dialogues: int = 30, min_turns: int = 3, max_turns: int = 7, seed: int = 0):
    """Dialogues whose turns each mention one or two terms of a shared topic cluster."""
    rng = random.Random(seed)
    templates = [t for pair in CONTEXT_TEMPLATES for t in pair]
    dialogues = []
    for _ in range(n_dialogues):
        members = world.clusters[rng.randrange(len(world.clusters))]
        turns = []
        for _ in range(rng.randint(min_turns, max_turns)):
            if rng.random() < 0.5:
                turns.append(rng.choice(templates).format(rng.choice(members)))
            else:
                turns.append(rng.choice(RESPONSE_TEMPLATES).format(*rng.sample(members, 2)))
        dialogues.append(turns)
    return dialogues


def write_dialogues(dialogues, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for d in dialogues:
            f.write(json.dumps({"utterances": d}) + "\n")


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description="Write a synthetic concept graph, dialogue corpus and tuple file.")
    ap.add_argument("output_dir")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--tuples", type=int, default=200)
    ap.add_argument("--dialogues", type=int, default=30)
    args = ap.parse_args(argv)
    out = Path(args.output_dir)
    world = SyntheticWorld.generate(seed=args.seed)
    world.write(out / "concepts")
    write_tuples(swapped_tuples(world, args.tuples, args.seed), out / "tuples.jsonl")
    write_dialogues(topical_dialogues(world, args.dialogues, seed=args.seed), out / "dialogues.jsonl")


if __name__ == "__main__":
    main()
