"""Cached title vectors and exact top-K dot-product candidate generation.

The index is a dense matrix with one row per KB entry, scanned once per
query batch. Top-K selection is exact: candidates are ordered by
descending score with ties broken by ascending title id.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .kb import KB
from .veccache import VectorCacheError, read_vectors, write_vectors

log = logging.getLogger(__name__)

K_GRID = (5, 10, 30, 50, 70, 100)


@dataclass(frozen=True)
class CandidateSet:
    """Ranked (title_id, score) pairs for one mention, best first."""

    mention_id: int
    candidates: tuple[tuple[int, float], ...]
    k: int

    def ids(self) -> list[int]:
        return [cid for cid, _ in self.candidates]


@dataclass
class DenseIndex:
    ids: list[int]
    matrix: np.ndarray  # (len(ids), dim) float64
    provenance: str = ""

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def __len__(self) -> int:
        return len(self.ids)


def build_index(kb: KB, provider, provenance: str | None = None) -> DenseIndex:
    """One row per KB entry, ids ascending. The provider must resolve every
    entry id at a consistent dimension."""
    ids = sorted(kb.entries)
    dim = provider.dim
    matrix = np.empty((len(ids), dim), dtype=np.float64)
    for row, entry_id in enumerate(ids):
        vec = np.asarray(provider.vector(entry_id), dtype=np.float64)
        if vec.shape != (dim,):
            raise ValueError(
                f"vector for id {entry_id} has dimension {vec.shape}, "
                f"expected ({dim},)")
        matrix[row] = vec
    return DenseIndex(ids, matrix,
                      provenance or getattr(provider, "source", ""))


def save_index(index: DenseIndex, path) -> None:
    """Persist in the vector-cache format plus a sidecar id-order manifest."""
    path = Path(path)
    write_vectors(path, index.ids, index.matrix)
    manifest = {
        "provenance": index.provenance,
        "dim": index.dim,
        "count": len(index.ids),
        "ids": index.ids,
    }
    path.with_suffix(path.suffix + ".manifest.json").write_text(
        json.dumps(manifest, sort_keys=True) + "\n", encoding="utf-8")


def load_index(path) -> DenseIndex:
    path = Path(path)
    ids, matrix = read_vectors(path)
    provenance = ""
    manifest_path = path.with_suffix(path.suffix + ".manifest.json")
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        if manifest.get("ids") != ids:
            raise VectorCacheError(f"{path}: manifest id order disagrees "
                                   "with cache records")
        provenance = manifest.get("provenance", "")
    return DenseIndex(ids, matrix.astype(np.float64), provenance)


def _top_k(ids: np.ndarray, scores: np.ndarray, k: int) -> list[tuple[int, float]]:
    """Exact top-k by (score desc, id asc) via partial selection."""
    n = scores.shape[0]
    k = min(k, n)
    if k == 0:
        return []
    if k < n:
        pool = np.argpartition(-scores, k - 1)[:k]
        # Pull in every row tied with the cutoff score so id tie-breaking
        # is exact at the boundary.
        cutoff = scores[pool].min()
        pool = np.flatnonzero(scores >= cutoff)
    else:
        pool = np.arange(n)
    order = np.lexsort((ids[pool], -scores[pool]))[:k]
    chosen = pool[order]
    return [(int(ids[i]), float(scores[i])) for i in chosen]


def retrieve(index: DenseIndex, query: np.ndarray, k: int,
             mention_id: int = -1) -> CandidateSet:
    """Exact top-K titles by dot product with the query vector."""
    query = np.asarray(query, dtype=np.float64)
    if query.shape != (index.dim,):
        raise ValueError(f"query dimension {query.shape} does not match "
                         f"index dimension {index.dim}")
    if k < 1:
        raise ValueError("k must be at least 1")
    scores = index.matrix @ query
    ids = np.asarray(index.ids, dtype=np.int64)
    return CandidateSet(mention_id, tuple(_top_k(ids, scores, k)), k)


def retrieve_batch(index: DenseIndex, queries: np.ndarray, k: int,
                   mention_ids) -> list[CandidateSet]:
    """Top-K for many queries with a single scan of the index matrix."""
    queries = np.asarray(queries, dtype=np.float64)
    if queries.ndim != 2 or queries.shape[1] != index.dim:
        raise ValueError("queries must be (n, dim)")
    scores = queries @ index.matrix.T
    ids = np.asarray(index.ids, dtype=np.int64)
    return [
        CandidateSet(mid, tuple(_top_k(ids, scores[i], k)), k)
        for i, mid in enumerate(mention_ids)
    ]


def select_k(candidate_sets, mentions, grid=K_GRID) -> int:
    """Smallest K in the grid maximizing dev recall@K; 100 without dev data.

    ``candidate_sets`` maps mention_id -> ranked candidate id list.
    Nil-gold mentions do not count toward recall.
    """
    linkable = [m for m in mentions if m.gold_id is not None]
    if not linkable:
        log.warning("select_k: no linkable dev mentions; defaulting to K=100")
        return 100
    grid = sorted(grid)
    best_k, best_recall = grid[-1], -1.0
    for k in grid:
        hits = sum(
            1 for m in linkable
            if m.gold_id in (candidate_sets.get(m.mention_id) or [])[:k]
        )
        recall = hits / len(linkable)
        if recall > best_recall:
            best_k, best_recall = k, recall
    log.info("select_k: chose K=%d (dev recall %.4f)", best_k, best_recall)
    return best_k


# ---------------------------------------------------------------------------
# candidate record files

def save_candidates(candidate_sets, path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for cs in candidate_sets:
            rec = {
                "mention_id": cs.mention_id,
                "candidates": [{"id": cid, "score": score}
                               for cid, score in cs.candidates],
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def load_candidates(path) -> dict[int, CandidateSet]:
    out = {}
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            cands = tuple((int(c["id"]), float(c["score"]))
                          for c in rec["candidates"])
            out[rec["mention_id"]] = CandidateSet(
                int(rec["mention_id"]), cands, len(cands))
    return out
