"""Non-neural reference systems: prior distribution, BM25, vector cosine.

The prior counts (surface, title) pairs in the training hyperlinks and only
answers for surfaces seen at least ``min_count`` times (default 10); other
mentions are excluded from its evaluation and reported as uncovered. BM25
indexes title + description text with lowercased alphanumeric tokens and
the non-negative idf variant ``ln(1 + (N - df + 0.5)/(df + 0.5))``. The
cosine baseline averages static word vectors over the mention surface and
the title words.
"""

from __future__ import annotations

import logging
import math
import re
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .kb import KB, EventMention
from .representation import ReprConfig, context_window
from .retrieval import CandidateSet

log = logging.getLogger(__name__)

_WORD_RE = re.compile(r"[a-z0-9]+")


def bow_tokens(text: str) -> list[str]:
    return _WORD_RE.findall(text.lower())


# ---------------------------------------------------------------------------
# prior distribution

@dataclass
class PriorTable:
    """surface -> title counts harvested from training mentions only."""

    counts: dict[str, Counter] = field(default_factory=dict)
    min_count: int = 10

    def coverage(self, surface: str) -> int:
        return sum(self.counts.get(surface.casefold(), {}).values())


def build_prior(train_mentions: list[EventMention],
                min_count: int = 10) -> PriorTable:
    table = PriorTable(min_count=min_count)
    for m in train_mentions:
        if m.gold_id is None:
            continue
        table.counts.setdefault(m.surface.casefold(), Counter())[m.gold_id] += 1
    return table


def prior_predict(table: PriorTable, mention: EventMention) -> int | None:
    """Most frequent title for the surface, or None when coverage is below
    ``min_count`` (the mention is then excluded from prior evaluation)."""
    counts = table.counts.get(mention.surface.casefold())
    if not counts or sum(counts.values()) < table.min_count:
        return None
    return min(counts, key=lambda tid: (-counts[tid], tid))


def prior_ranked(table: PriorTable, mention: EventMention):
    """All counted titles for the surface as (id, count) pairs, best first,
    or None when uncovered."""
    counts = table.counts.get(mention.surface.casefold())
    if not counts or sum(counts.values()) < table.min_count:
        return None
    return sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))


# ---------------------------------------------------------------------------
# BM25

@dataclass
class Bm25Params:
    k1: float = 1.2
    b: float = 0.75

    def __post_init__(self):
        if self.k1 <= 0 or not 0.0 <= self.b <= 1.0:
            raise ValueError("k1 must be positive and b within [0, 1]")


class Bm25Index:
    """Inverted index over KB entries (title + capped description)."""

    def __init__(self, kb: KB, params: Bm25Params = Bm25Params(),
                 repr_cfg: ReprConfig = ReprConfig()):
        self.params = params
        self.doc_ids = sorted(kb.entries)
        self.doc_len: dict[int, int] = {}
        self.postings: dict[str, list[tuple[int, int]]] = {}
        for doc_id in self.doc_ids:
            entry = kb[doc_id]
            end = min(len(entry.body), repr_cfg.description_chars)
            text = entry.title + " " + entry.body[:end]
            tokens = bow_tokens(text)
            self.doc_len[doc_id] = len(tokens)
            for term, tf in Counter(tokens).items():
                self.postings.setdefault(term, []).append((doc_id, tf))
        for plist in self.postings.values():
            plist.sort()
        self.n_docs = len(self.doc_ids)
        self.avg_len = (sum(self.doc_len.values()) / self.n_docs
                        if self.n_docs else 0.0)

    def idf(self, term: str) -> float:
        df = len(self.postings.get(term, ()))
        return math.log(1.0 + (self.n_docs - df + 0.5) / (df + 0.5))

    def scores(self, query_terms) -> dict[int, float]:
        """BM25 scores for documents matching at least one query term."""
        k1, b = self.params.k1, self.params.b
        out: dict[int, float] = {}
        for term in dict.fromkeys(query_terms):  # unique, original order
            plist = self.postings.get(term)
            if not plist:
                continue
            idf = self.idf(term)
            for doc_id, tf in plist:
                norm = k1 * (1.0 - b + b * self.doc_len[doc_id] / self.avg_len)
                out[doc_id] = out.get(doc_id, 0.0) + idf * tf * (k1 + 1.0) / (tf + norm)
        return out


def bm25_query(mention: EventMention, repr_cfg: ReprConfig = ReprConfig()) -> list[str]:
    """Mention surface plus its context window, lowercased alphanumeric."""
    left, right = context_window(mention.doc_text, mention.span, repr_cfg)
    return bow_tokens(" ".join((mention.surface, left, right)))


def bm25_retrieve(index: Bm25Index, mention: EventMention, k: int,
                  repr_cfg: ReprConfig = ReprConfig()) -> CandidateSet:
    """Top-K by BM25 with ascending-id tie-break; zero-score documents fill
    out the list. An empty query yields an empty candidate set."""
    terms = bm25_query(mention, repr_cfg)
    if not terms:
        return CandidateSet(mention.mention_id, (), k)
    scored = index.scores(terms)
    n = min(k, len(index.doc_ids))
    ranked = sorted(index.doc_ids, key=lambda d: (-scored.get(d, 0.0), d))[:n]
    return CandidateSet(
        mention.mention_id,
        tuple((d, scored.get(d, 0.0)) for d in ranked),
        k)


# ---------------------------------------------------------------------------
# static word vectors

class StaticVectors:
    """word -> vector table from a plain-text file; OOV words are skipped."""

    def __init__(self, table: dict[str, np.ndarray], dim: int):
        self.table = table
        self.dim = dim

    @classmethod
    def load(cls, path) -> "StaticVectors":
        table: dict[str, np.ndarray] = {}
        dim = None
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                parts = line.rstrip("\n").split(" ")
                if len(parts) < 2:
                    continue
                word, values = parts[0], parts[1:]
                vec = np.array([float(v) for v in values])
                if dim is None:
                    dim = vec.shape[0]
                elif vec.shape[0] != dim:
                    raise ValueError(
                        f"{path}:{lineno}: vector of dimension {vec.shape[0]}"
                        f" in a {dim}-dimensional table")
                table[word] = vec
        if dim is None:
            raise ValueError(f"{path}: empty vector file")
        return cls(table, dim)

    def embed(self, words) -> np.ndarray | None:
        """Mean of in-vocabulary word vectors; None if everything is OOV."""
        rows = [self.table[w] for w in words if w in self.table]
        if not rows:
            return None
        return np.mean(rows, axis=0)


def _cosine(a: np.ndarray | None, b: np.ndarray | None) -> float:
    if a is None or b is None:
        return 0.0
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(a @ b / (na * nb))


def vector_cosine_predict(vectors: StaticVectors, mention: EventMention,
                          kb: KB, k: int) -> CandidateSet:
    """Rank titles by cosine between surface-word and title-word means."""
    query = vectors.embed(bow_tokens(mention.surface))
    title_vecs = {tid: vectors.embed(bow_tokens(kb[tid].title))
                  for tid in kb.entries}
    scores = {tid: _cosine(query, vec) for tid, vec in title_vecs.items()}
    n = min(k, len(kb))
    ranked = sorted(kb.entries, key=lambda t: (-scores[t], t))[:n]
    return CandidateSet(mention.mention_id,
                        tuple((t, scores[t]) for t in ranked), k)


# ---------------------------------------------------------------------------
# shared prediction-record emission

def candidate_set_to_prediction(cset: CandidateSet, nil_threshold: float = 0.5):
    """Wrap a scored candidate set in the prediction-record shape.

    Probabilities are normalized score shares (negative scores clamp to
    zero; a zero total falls back to uniform).
    """
    from .reranker import PredictionList

    if not cset.candidates:
        return PredictionList(cset.mention_id, (), True, nil_threshold)
    shares = np.array([max(s, 0.0) for _, s in cset.candidates])
    total = shares.sum()
    probs = shares / total if total > 0 else np.full(len(shares),
                                                     1.0 / len(shares))
    ranked = tuple((cid, float(s), float(p))
                   for (cid, s), p in zip(cset.candidates, probs))
    nil = ranked[0][2] < nil_threshold
    return PredictionList(cset.mention_id, ranked, nil, nil_threshold)
