"""Two-tower bag-of-embeddings encoder with exact gradients.

A tower embeds hashed tokens, mean-pools them and applies a linear
projection: ``v = P @ mean(E[token])``. Mentions and titles get
independent towers. Training maximizes the dot product between each
mention vector and its gold title vector against the other gold titles in
the batch (softmax cross-entropy over in-batch negatives).

This stands in for large pretrained encoders while keeping every pipeline
contract intact: dot-product scoring, cached title vectors, and a
precomputed-vector provider for plugging in external embeddings.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .kb import KB, EventMention
from .representation import ReprConfig, TokenSequence, build_mention_repr, build_title_repr
from .veccache import VectorCacheError, read_checkpoint, read_vectors, write_checkpoint

log = logging.getLogger(__name__)

DEFAULT_VOCAB_SIZE = 65536
DEFAULT_DIM = 64


@lru_cache(maxsize=1 << 18)
def token_bucket(token: str, vocab_size: int) -> int:
    """Stable 64-bit hash of the token, reduced modulo the vocabulary."""
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % vocab_size


def token_indices(seq, vocab_size: int) -> np.ndarray:
    tokens = seq.tokens if isinstance(seq, TokenSequence) else seq
    if len(tokens) == 0:
        raise ValueError("cannot encode an empty sequence")
    return np.fromiter((token_bucket(t, vocab_size) for t in tokens),
                       dtype=np.int64, count=len(tokens))


@dataclass
class TowerParams:
    """One tower: token embedding table plus output projection."""

    embeddings: np.ndarray  # (vocab_size, dim) float64
    projection: np.ndarray  # (dim, dim) float64

    @property
    def vocab_size(self) -> int:
        return self.embeddings.shape[0]

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    def copy(self) -> "TowerParams":
        return TowerParams(self.embeddings.copy(), self.projection.copy())


@dataclass
class BiEncoderParams:
    """Independent mention and title towers."""

    mention: TowerParams
    title: TowerParams

    @property
    def vocab_size(self) -> int:
        return self.mention.vocab_size

    @property
    def dim(self) -> int:
        return self.mention.dim


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    epochs: int = 10
    learning_rate: float = 0.05
    seed: int = 0
    init_scale: float = 0.01

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2")
        if self.epochs < 0 or self.learning_rate < 0 or self.init_scale <= 0:
            raise ValueError("epochs/learning_rate/init_scale out of range")


def init_tower(vocab_size: int, dim: int, rng: np.random.Generator,
               init_scale: float) -> TowerParams:
    embeddings = rng.normal(0.0, init_scale, size=(vocab_size, dim))
    projection = np.eye(dim) + rng.normal(0.0, init_scale, size=(dim, dim))
    return TowerParams(embeddings, projection)


def init_biencoder(vocab_size: int, dim: int, seed: int,
                   init_scale: float = 0.01) -> BiEncoderParams:
    rng = np.random.default_rng(seed)
    return BiEncoderParams(init_tower(vocab_size, dim, rng, init_scale),
                           init_tower(vocab_size, dim, rng, init_scale))


def pooled(params: TowerParams, indices: np.ndarray) -> np.ndarray:
    return params.embeddings[indices].mean(axis=0)


def encode(params: TowerParams, seq) -> np.ndarray:
    """``projection @ mean(embed(token))`` over the sequence tokens."""
    return params.projection @ pooled(params, token_indices(seq, params.vocab_size))


def _scatter_mean_grad(shape, index_lists, d_pooled) -> np.ndarray:
    grad = np.zeros(shape)
    for i, idx in enumerate(index_lists):
        np.add.at(grad, idx, d_pooled[i] / len(idx))
    return grad


def biencoder_loss(batch, params: BiEncoderParams):
    """In-batch-negative softmax cross-entropy and its exact gradients.

    ``batch`` is a list of (mention, gold title) pairs given either as
    TokenSequence objects or as precomputed index arrays. Returns
    ``(loss, ((dE_m, dP_m), (dE_t, dP_t)))`` with gradient arrays shaped
    like the corresponding parameters.
    """
    if len(batch) < 2:
        raise ValueError("in-batch negatives need a batch of at least 2")
    m_idx = [x if isinstance(x, np.ndarray) else token_indices(x, params.vocab_size)
             for x, _ in batch]
    t_idx = [x if isinstance(x, np.ndarray) else token_indices(x, params.vocab_size)
             for _, x in batch]

    A = np.stack([pooled(params.mention, idx) for idx in m_idx])
    B = np.stack([pooled(params.title, idx) for idx in t_idx])
    M = A @ params.mention.projection.T
    T = B @ params.title.projection.T
    scores = M @ T.T

    n = len(batch)
    shifted = scores - scores.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    log_probs = shifted - np.log(exp.sum(axis=1, keepdims=True))
    loss = -log_probs[np.arange(n), np.arange(n)].mean()

    g_scores = (probs - np.eye(n)) / n
    dM = g_scores @ T
    dT = g_scores.T @ M
    dP_m = dM.T @ A
    dP_t = dT.T @ B
    dA = dM @ params.mention.projection
    dB = dT @ params.title.projection
    dE_m = _scatter_mean_grad(params.mention.embeddings.shape, m_idx, dA)
    dE_t = _scatter_mean_grad(params.title.embeddings.shape, t_idx, dB)
    return loss, ((dE_m, dP_m), (dE_t, dP_t))


def train_biencoder(mentions: list[EventMention], kb: KB, cfg: TrainConfig,
                    repr_cfg: ReprConfig = ReprConfig(),
                    vocab_size: int = DEFAULT_VOCAB_SIZE,
                    dim: int = DEFAULT_DIM,
                    on_epoch=None) -> BiEncoderParams:
    """Mini-batch gradient descent over linked training mentions.

    Nil mentions are excluded up front (there are no Nil training
    examples). Shuffling is driven by ``cfg.seed``, so identical inputs
    give bit-identical parameters. ``on_epoch(epoch, mean_loss)`` is
    called after every epoch when provided.
    """
    linked = [m for m in mentions if m.gold_id is not None]
    if not linked:
        raise ValueError("no linked mentions to train on")
    title_idx: dict[int, np.ndarray] = {}
    pairs = []
    for m in linked:
        m_indices = token_indices(build_mention_repr(m, cfg=repr_cfg), vocab_size)
        if m.gold_id not in title_idx:
            title_idx[m.gold_id] = token_indices(
                build_title_repr(kb[m.gold_id], cfg=repr_cfg), vocab_size)
        pairs.append((m_indices, title_idx[m.gold_id]))

    rng = np.random.default_rng(cfg.seed)
    params = BiEncoderParams(
        init_tower(vocab_size, dim, rng, cfg.init_scale),
        init_tower(vocab_size, dim, rng, cfg.init_scale),
    )
    lr = cfg.learning_rate
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(pairs))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            chunk = order[start:start + cfg.batch_size]
            if len(chunk) < 2:
                continue  # a singleton tail has no negatives
            batch = [pairs[i] for i in chunk]
            loss, ((dE_m, dP_m), (dE_t, dP_t)) = biencoder_loss(batch, params)
            if lr:
                params.mention.embeddings -= lr * dE_m
                params.mention.projection -= lr * dP_m
                params.title.embeddings -= lr * dE_t
                params.title.projection -= lr * dP_t
            losses.append(loss)
        mean_loss = float(np.mean(losses)) if losses else float("nan")
        log.info("biencoder epoch %d/%d: loss %.6f", epoch + 1, cfg.epochs,
                 mean_loss)
        if on_epoch is not None:
            on_epoch(epoch, mean_loss)
    return params


# ---------------------------------------------------------------------------
# vector providers

class PrecomputedVectors:
    """id -> vector lookup backed by a vector-cache file."""

    def __init__(self, ids, matrix, source: str = "precomputed"):
        self._rows = {entry_id: i for i, entry_id in enumerate(ids)}
        self._matrix = np.asarray(matrix, dtype=np.float64)
        self.source = source

    @property
    def dim(self) -> int:
        return self._matrix.shape[1]

    def vector(self, entry_id: int) -> np.ndarray:
        try:
            return self._matrix[self._rows[entry_id]]
        except KeyError:
            raise KeyError(f"no vector for id {entry_id}") from None


class EncoderVectors:
    """Title vectors computed on demand from a trained title tower."""

    def __init__(self, tower: TowerParams, kb: KB,
                 repr_cfg: ReprConfig = ReprConfig(), source: str = "toy"):
        self.tower = tower
        self.kb = kb
        self.repr_cfg = repr_cfg
        self.source = source

    @property
    def dim(self) -> int:
        return self.tower.dim

    def vector(self, entry_id: int) -> np.ndarray:
        if entry_id not in self.kb:
            raise KeyError(f"no KB entry for id {entry_id}")
        seq = build_title_repr(self.kb[entry_id], cfg=self.repr_cfg)
        return encode(self.tower, seq)


def load_vectors(path) -> PrecomputedVectors:
    ids, matrix = read_vectors(path)
    return PrecomputedVectors(ids, matrix, source=str(path))


def save_biencoder(path, params: BiEncoderParams) -> None:
    write_checkpoint(path, {
        "mention": (params.mention.embeddings, params.mention.projection),
        "title": (params.title.embeddings, params.title.projection),
    })


def load_biencoder(path) -> BiEncoderParams:
    sections = read_checkpoint(path)
    try:
        mention = TowerParams(*sections["mention"])
        title = TowerParams(*sections["title"])
    except KeyError as exc:
        raise VectorCacheError(f"{path}: missing checkpoint section {exc}")
    return BiEncoderParams(mention, title)
