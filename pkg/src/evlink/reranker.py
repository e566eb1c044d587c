"""Cross-encoder-style candidate ranking and the Nil decision.

Each (mention, candidate title) pair is rendered as one joint sequence
(mention representation followed by the title representation minus its
leading [CLS]) and scored by a single tower: the pooled projection output
passes through tanh and is dotted with a scorer vector w. Training is
softmax cross-entropy over each mention's candidate scores with the gold
title as target.

The tanh keeps the scorer sensitive to mention/title token co-occurrence;
a purely linear pooled score is additive in token counts and would give
every mention the same candidate ordering.

A mention is tagged Nil when its top candidate's softmax probability falls
strictly below the threshold (default 0.5).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .encoder import (
    TowerParams,
    init_tower,
    pooled,
    token_indices,
)
from .kb import KB, EventMention
from .representation import ReprConfig, TokenSequence, build_joint_repr, build_mention_repr, build_title_repr
from .retrieval import CandidateSet
from .veccache import VectorCacheError, read_checkpoint, write_checkpoint

log = logging.getLogger(__name__)


@dataclass
class RankerParams:
    tower: TowerParams
    w: np.ndarray  # (dim,) float64

    @property
    def vocab_size(self) -> int:
        return self.tower.vocab_size

    @property
    def dim(self) -> int:
        return self.tower.dim


@dataclass(frozen=True)
class RerankTrainConfig:
    candidates_per_mention: int = 30
    epochs: int = 10
    learning_rate: float = 0.05
    seed: int = 0
    init_scale: float = 0.01

    def __post_init__(self):
        if self.candidates_per_mention < 2:
            raise ValueError("candidates_per_mention must be at least 2")


@dataclass(frozen=True)
class PredictionList:
    """Ranked (title_id, score, prob) triples plus the Nil flag."""

    mention_id: int
    ranked: tuple[tuple[int, float, float], ...]
    nil: bool
    nil_threshold: float

    def ids(self) -> list[int]:
        return [cid for cid, _, _ in self.ranked]

    def top_prob(self) -> float:
        return self.ranked[0][2] if self.ranked else 0.0


def init_reranker(vocab_size: int, dim: int, seed: int,
                  init_scale: float = 0.01) -> RankerParams:
    rng = np.random.default_rng(seed)
    tower = init_tower(vocab_size, dim, rng, init_scale)
    return RankerParams(tower, rng.normal(0.0, init_scale, size=dim))


def joint_repr(mention_seq: TokenSequence, title_seq: TokenSequence,
               cfg: ReprConfig = ReprConfig()) -> TokenSequence:
    """Concatenated mention+title sequence under the shared token budget."""
    return build_joint_repr(mention_seq, title_seq, cfg)


def hidden(params: RankerParams, indices: np.ndarray) -> np.ndarray:
    return np.tanh(params.tower.projection @ pooled(params.tower, indices))


def score(params: RankerParams, joint) -> float:
    """w . tanh(projection @ mean(embed(token))) over the joint sequence."""
    idx = joint if isinstance(joint, np.ndarray) else token_indices(
        joint, params.vocab_size)
    return float(params.w @ hidden(params, idx))


def _softmax(scores: np.ndarray) -> np.ndarray:
    exp = np.exp(scores - scores.max())
    return exp / exp.sum()


def reranker_loss(params: RankerParams, mention_batches):
    """Mean softmax cross-entropy over mentions, with exact gradients.

    ``mention_batches`` is a list of (candidate index arrays, gold
    position) pairs. Returns ``(loss, (dE, dP, dw))``.
    """
    if not mention_batches:
        raise ValueError("empty batch")
    dE = np.zeros_like(params.tower.embeddings)
    dP = np.zeros_like(params.tower.projection)
    dw = np.zeros_like(params.w)
    total = 0.0
    scale = 1.0 / len(mention_batches)
    for idx_lists, gold_pos in mention_batches:
        X = np.stack([pooled(params.tower, idx) for idx in idx_lists])
        H = np.tanh(X @ params.tower.projection.T)
        s = H @ params.w
        shifted = s - s.max()
        log_z = np.log(np.exp(shifted).sum())
        total += -(shifted[gold_pos] - log_z)

        ds = np.exp(shifted - log_z)
        ds[gold_pos] -= 1.0
        ds *= scale
        dw += H.T @ ds
        dZ = np.outer(ds, params.w) * (1.0 - H * H)
        dP += dZ.T @ X
        dX = dZ @ params.tower.projection
        for j, idx in enumerate(idx_lists):
            np.add.at(dE, idx, dX[j] / len(idx))
    return total * scale, (dE, dP, dw)


def train_reranker(mentions: list[EventMention], candidate_sets, kb: KB,
                   cfg: RerankTrainConfig,
                   repr_cfg: ReprConfig = ReprConfig(),
                   vocab_size: int = 65536, dim: int = 64,
                   on_epoch=None) -> RankerParams:
    """Train over retrieved candidates, gold title as the softmax target.

    Mentions whose gold title is missing from their retrieved candidates
    (or that have fewer than two candidates) are skipped and counted; the
    softmax has no valid target for them.
    """
    title_seqs: dict[int, TokenSequence] = {}

    def title_seq(title_id: int) -> TokenSequence:
        if title_id not in title_seqs:
            title_seqs[title_id] = build_title_repr(kb[title_id], cfg=repr_cfg)
        return title_seqs[title_id]

    examples = []
    skipped = 0
    for m in mentions:
        if m.gold_id is None:
            continue
        cset = candidate_sets.get(m.mention_id)
        cand_ids = cset.ids()[:cfg.candidates_per_mention] if cset else []
        if len(cand_ids) < 2 or m.gold_id not in cand_ids:
            skipped += 1
            continue
        mention_seq = build_mention_repr(m, cfg=repr_cfg)
        idx_lists = [
            token_indices(joint_repr(mention_seq, title_seq(cid), repr_cfg),
                          vocab_size)
            for cid in cand_ids
        ]
        examples.append((idx_lists, cand_ids.index(m.gold_id)))
    if skipped:
        log.warning("reranker: skipped %d mention(s) whose gold title was "
                    "not among the retrieved candidates", skipped)
    if not examples:
        raise ValueError("no trainable mentions (all golds missed retrieval)")

    rng = np.random.default_rng(cfg.seed)
    tower = init_tower(vocab_size, dim, rng, cfg.init_scale)
    params = RankerParams(tower, rng.normal(0.0, cfg.init_scale, size=dim))
    lr = cfg.learning_rate
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(examples))
        losses = []
        for i in order:
            loss, (dE, dP, dw) = reranker_loss(params, [examples[i]])
            if lr:
                params.tower.embeddings -= lr * dE
                params.tower.projection -= lr * dP
                params.w -= lr * dw
            losses.append(loss)
        mean_loss = float(np.mean(losses))
        log.info("reranker epoch %d/%d: loss %.6f", epoch + 1, cfg.epochs,
                 mean_loss)
        if on_epoch is not None:
            on_epoch(epoch, mean_loss)
    return params


def rank_and_decide(params: RankerParams, mention: EventMention,
                    candidates: CandidateSet, kb: KB,
                    nil_threshold: float = 0.5,
                    repr_cfg: ReprConfig = ReprConfig()) -> PredictionList:
    """Score every candidate, attach softmax probabilities, decide Nil.

    Order is by descending score with ascending-id tie-break. The Nil flag
    is set iff the top probability is strictly below ``nil_threshold``.
    """
    if not candidates.candidates:
        raise ValueError(f"mention {mention.mention_id}: empty candidate set")
    mention_seq = build_mention_repr(mention, cfg=repr_cfg)
    cand_ids = candidates.ids()
    scores = np.array([
        score(params, joint_repr(mention_seq,
                                 build_title_repr(kb[cid], cfg=repr_cfg),
                                 repr_cfg))
        for cid in cand_ids
    ])
    probs = _softmax(scores)
    order = sorted(range(len(cand_ids)), key=lambda i: (-scores[i], cand_ids[i]))
    ranked = tuple((cand_ids[i], float(scores[i]), float(probs[i]))
                   for i in order)
    nil = ranked[0][2] < nil_threshold
    return PredictionList(mention.mention_id, ranked, nil, nil_threshold)


def save_reranker(path, params: RankerParams) -> None:
    write_checkpoint(path, {
        "tower": (params.tower.embeddings, params.tower.projection),
        "scorer": params.w,
    })


def load_reranker(path) -> RankerParams:
    sections = read_checkpoint(path)
    try:
        return RankerParams(TowerParams(*sections["tower"]), sections["scorer"])
    except KeyError as exc:
        raise VectorCacheError(f"{path}: missing checkpoint section {exc}")


# ---------------------------------------------------------------------------
# prediction record files

def save_predictions(predictions, path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for pred in predictions:
            rec = {
                "mention_id": pred.mention_id,
                "candidates": [
                    {"id": cid, "score": s, "prob": p}
                    for cid, s, p in pred.ranked
                ],
                "nil": pred.nil,
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def load_predictions(path) -> dict[int, PredictionList]:
    out = {}
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            ranked = tuple(
                (int(c["id"]), float(c["score"]), float(c["prob"]))
                for c in rec["candidates"]
            )
            out[rec["mention_id"]] = PredictionList(
                int(rec["mention_id"]), ranked, bool(rec["nil"]),
                nil_threshold=float(rec.get("nil_threshold", 0.5)))
    return out
