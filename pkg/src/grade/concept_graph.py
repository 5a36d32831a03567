"""ConceptNet-style commonsense graph: loading, embedding lookup and hop queries.

The graph is stored as an undirected CSR adjacency over integer term ids.
Relations and edge weights from ConceptNet are not kept; only hop structure
and the Numberbatch-style vectors matter downstream.
"""

from __future__ import annotations

import hashlib
import logging
import random
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

EDGES_FILENAME = "edges.tsv"
EMBEDDINGS_FILENAME = "embeddings.txt"
CACHE_FILENAME = "snapshot.cache.npz"
CACHE_VERSION = 1

DEFAULT_MAX_DEPTH = 6


class SnapshotLoadError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ConceptNetSnapshot:
    """Immutable term graph plus term -> vector table.

    ``terms`` is sorted; ``indptr``/``indices`` form a symmetric CSR adjacency
    without self-loops. ``vectors[i]`` is meaningful only when
    ``has_vector[i]`` is set.
    """

    terms: tuple[str, ...]
    indptr: np.ndarray
    indices: np.ndarray
    vectors: np.ndarray
    has_vector: np.ndarray
    _index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(self.terms)})
        for arr in (self.indptr, self.indices, self.vectors, self.has_vector):
            arr.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def num_edges(self) -> int:
        return len(self.indices) // 2

    @property
    def missing_embedding(self) -> frozenset[str]:
        return frozenset(t for t, ok in zip(self.terms, self.has_vector) if not ok)

    def __contains__(self, term: str) -> bool:
        return term in self._index

    def __len__(self) -> int:
        return len(self.terms)

    def term_id(self, term: str) -> int | None:
        return self._index.get(term)

    def neighbors(self, term: str) -> list[str]:
        i = self._index.get(term)
        if i is None:
            return []
        return [self.terms[j] for j in self._neighbor_ids(i)]

    def _neighbor_ids(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i] : self.indptr[i + 1]]

    def has_edge(self, a: str, b: str) -> bool:
        i, j = self._index.get(a), self._index.get(b)
        if i is None or j is None:
            return False
        return bool(np.any(self._neighbor_ids(i) == j))

    def embedding(self, term: str) -> np.ndarray | None:
        """Stored vector for ``term`` or None when it is out of vocabulary."""
        i = self._index.get(term)
        if i is None or not self.has_vector[i]:
            return None
        return self.vectors[i]

    def _bfs_levels(self, source: int, depth: int) -> list[list[int]]:
        # levels[k] holds ids at exact distance k, up to ``depth``
        seen = {source}
        frontier = [source]
        levels = [frontier]
        for _ in range(depth):
            nxt = []
            for u in frontier:
                for v in self._neighbor_ids(u):
                    v = int(v)
                    if v not in seen:
                        seen.add(v)
                        nxt.append(v)
            if not nxt:
                break
            levels.append(nxt)
            frontier = nxt
        return levels

    def k_hop_neighbors(self, term: str, k: int, limit: int, ordering_seed: int = 0) -> list[str]:
        """Terms at BFS distance exactly ``k``, at most ``limit`` of them.

        Overflowing shells are sorted lexicographically and then subsampled
        with ``ordering_seed``, so the choice is reproducible.
        """
        if k < 1 or limit < 1:
            raise ValueError("k and limit must be positive")
        i = self._index.get(term)
        if i is None:
            return []
        levels = self._bfs_levels(i, k)
        if len(levels) <= k:
            return []
        shell = sorted(self.terms[j] for j in levels[k])
        if len(shell) <= limit:
            return shell
        picked = random.Random(ordering_seed).sample(range(len(shell)), limit)
        return [shell[p] for p in sorted(picked)]

    def hop_distance(self, a: str, b: str, max_depth: int = DEFAULT_MAX_DEPTH) -> int | None:
        """Shortest path length in edges, or None when absent or beyond ``max_depth``."""
        i, j = self._index.get(a), self._index.get(b)
        if i is None or j is None:
            return None
        if i == j:
            return 0
        # bidirectional BFS, always expanding the smaller frontier
        dist_a, dist_b = {i: 0}, {j: 0}
        front_a, front_b = [i], [j]
        depth_a = depth_b = 0
        while front_a and front_b and depth_a + depth_b < max_depth:
            if len(front_a) > len(front_b):
                front_a, front_b = front_b, front_a
                dist_a, dist_b = dist_b, dist_a
                depth_a, depth_b = depth_b, depth_a
            depth_a += 1
            nxt = []
            best = None
            for u in front_a:
                for v in self._neighbor_ids(u):
                    v = int(v)
                    if v in dist_a:
                        continue
                    dist_a[v] = depth_a
                    if v in dist_b:
                        total = depth_a + dist_b[v]
                        best = total if best is None else min(best, total)
                    nxt.append(v)
            if best is not None:
                return best if best <= max_depth else None
            front_a = nxt
        return None


def _canonical_edges(pairs, n_terms):
    if not pairs:
        return np.zeros(n_terms + 1, dtype=np.int64), np.zeros(0, dtype=np.int64)
    arr = np.array(sorted(pairs), dtype=np.int64)
    both = np.concatenate([arr, arr[:, ::-1]])
    order = np.lexsort((both[:, 1], both[:, 0]))
    both = both[order]
    counts = np.bincount(both[:, 0], minlength=n_terms)
    indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    return indptr, both[:, 1].copy()


def build_snapshot(
    edges: list[tuple[str, str]],
    embeddings: dict[str, np.ndarray],
    dim: int | None = None,
) -> ConceptNetSnapshot:
    """Assemble a snapshot from in-memory edges and vectors."""
    if dim is None:
        dim = len(next(iter(embeddings.values()))) if embeddings else 0
    terms = set(embeddings)
    for a, b in edges:
        terms.add(a)
        terms.add(b)
    ordered = tuple(sorted(terms))
    index = {t: i for i, t in enumerate(ordered)}
    pairs = set()
    for a, b in edges:
        if a == b:
            continue
        i, j = index[a], index[b]
        pairs.add((min(i, j), max(i, j)))
    indptr, indices = _canonical_edges(pairs, len(ordered))
    vectors = np.zeros((len(ordered), dim), dtype=np.float32)
    has_vector = np.zeros(len(ordered), dtype=bool)
    for term, vec in embeddings.items():
        vec = np.asarray(vec, dtype=np.float32)
        if vec.shape != (dim,):
            raise SnapshotLoadError(f"embedding for {term!r} has dimension {vec.shape}, expected {dim}")
        vectors[index[term]] = vec
        has_vector[index[term]] = True
    return ConceptNetSnapshot(ordered, indptr, indices, vectors, has_vector)


def _read_edges(path: Path) -> list[tuple[str, str]]:
    edges = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0] or not parts[1]:
                raise SnapshotLoadError(f"{path}:{lineno}: expected 'term_a<TAB>term_b'")
            edges.append((parts[0].strip().lower(), parts[1].strip().lower()))
    return edges


def _read_embeddings(path: Path, expected_dim: int | None) -> tuple[dict[str, np.ndarray], int]:
    table = {}
    dim = expected_dim
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            parts = line.split()
            if not parts:
                continue
            # word2vec-style header "<count> <dim>"
            if lineno == 1 and len(parts) == 2 and all(p.isdigit() for p in parts):
                header_dim = int(parts[1])
                if dim is not None and header_dim != dim:
                    raise SnapshotLoadError(f"{path}:1: header dimension {header_dim}, expected {dim}")
                dim = header_dim
                continue
            try:
                values = np.array(parts[1:], dtype=np.float32)
            except ValueError:
                raise SnapshotLoadError(f"{path}:{lineno}: non-numeric vector component") from None
            if len(values) == 0:
                raise SnapshotLoadError(f"{path}:{lineno}: term without vector")
            if dim is None:
                dim = len(values)
            elif len(values) != dim:
                raise SnapshotLoadError(f"{path}:{lineno}: dimension {len(values)}, expected {dim}")
            table[parts[0].lower()] = values
    return table, dim or (expected_dim or 0)


def _digest(*paths: Path) -> str:
    h = hashlib.sha256()
    for p in paths:
        with open(p, "rb") as f:
            for chunk in iter(lambda: f.read(1 << 20), b""):
                h.update(chunk)
    return h.hexdigest()


def _read_cache(cache: Path, digest: str) -> ConceptNetSnapshot | None:
    try:
        with np.load(cache, allow_pickle=False) as z:
            if int(z["version"]) != CACHE_VERSION or str(z["digest"]) != digest:
                return None
            return ConceptNetSnapshot(
                tuple(z["terms"].tolist()), z["indptr"], z["indices"], z["vectors"], z["has_vector"]
            )
    except (OSError, KeyError, ValueError):
        return None


def _write_cache(cache: Path, digest: str, snap: ConceptNetSnapshot) -> None:
    try:
        with open(cache, "wb") as f:
            np.savez(
                f,
                version=np.int64(CACHE_VERSION),
                digest=np.str_(digest),
                terms=np.array(snap.terms, dtype=np.str_),
                indptr=snap.indptr,
                indices=snap.indices,
                vectors=snap.vectors,
                has_vector=snap.has_vector,
            )
    except OSError as exc:
        logger.warning("could not write snapshot cache %s: %s", cache, exc)


def load_snapshot(
    edges_path,
    embeddings_path,
    dim: int | None = None,
    use_cache: bool = False,
) -> ConceptNetSnapshot:
    """Load an edge TSV and an embedding text file.

    With ``use_cache`` a binary cache keyed on the content hash of both files
    is read from / written next to the edge file.
    """
    edges_path, embeddings_path = Path(edges_path), Path(embeddings_path)
    cache = edges_path.parent / CACHE_FILENAME
    digest = None
    if use_cache:
        digest = _digest(edges_path, embeddings_path)
        if cache.exists():
            snap = _read_cache(cache, digest)
            if snap is not None and (dim is None or snap.dim == dim):
                return snap
    edges = _read_edges(edges_path)
    table, found_dim = _read_embeddings(embeddings_path, dim)
    snap = build_snapshot(edges, table, found_dim)
    if snap.missing_embedding:
        logger.info("%d graph terms have no embedding", len(snap.missing_embedding))
    if use_cache:
        _write_cache(cache, digest, snap)
    return snap


def load_snapshot_dir(directory, dim: int | None = None, use_cache: bool = False) -> ConceptNetSnapshot:
    directory = Path(directory)
    return load_snapshot(directory / EDGES_FILENAME, directory / EMBEDDINGS_FILENAME, dim, use_cache)


def write_snapshot_files(directory, edges, embeddings: dict[str, np.ndarray]) -> None:
    """Write the two text files read by :func:`load_snapshot_dir`."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / EDGES_FILENAME, "w", encoding="utf-8") as f:
        for a, b in edges:
            f.write(f"{a}\t{b}\n")
    with open(directory / EMBEDDINGS_FILENAME, "w", encoding="utf-8") as f:
        for term, vec in embeddings.items():
            f.write(term + " " + " ".join(repr(float(v)) for v in vec) + "\n")
