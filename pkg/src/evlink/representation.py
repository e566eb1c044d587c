"""Marked-up token sequences for mentions and titles.

A mention is rendered as

    [CLS] ctxt_l [M_s] mention [M_e] ctxt_r [SEP] <typed entities> [SEP]

where the entity segment lists each in-window entity as
``[TYPE_s] tokens [TYPE_e]`` in document order. A title is rendered as

    [CLS] title [TITLE] description [SEP] anchor1 [SEP] anchor2 ... [SEP]

with the description capped at ``description_chars`` characters and at most
``max_anchors`` anchor surfaces. Context windows cover ``window_chars``
characters per side of the mention, expanded outward to whitespace so no
word is cut.

Sequences are truncated to ``max_len`` tokens. For mention sequences the
right context shrinks first, then the left context, then trailing entity
blocks; the mention block is atomic. Title sequences shrink the
description, then drop trailing anchors.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .kb import ONTONOTES_TYPES, EntitySpan, EventMention, KBEntry

CLS = "[CLS]"
SEP = "[SEP]"
MENTION_START = "[M_s]"
MENTION_END = "[M_e]"
TITLE_SEP = "[TITLE]"
# Untyped entity markers used by the no-entity-types ablation.
ENT_START = "[ENT_s]"
ENT_END = "[ENT_e]"


def entity_markers(etype: str) -> tuple[str, str]:
    return f"[{etype}_s]", f"[{etype}_e]"


SPECIAL_TOKENS = frozenset(
    {CLS, SEP, MENTION_START, MENTION_END, TITLE_SEP, ENT_START, ENT_END}
    | {tok for t in ONTONOTES_TYPES for tok in entity_markers(t)}
)

_TOKEN_RE = re.compile(
    "|".join(re.escape(t) for t in sorted(SPECIAL_TOKENS, key=len, reverse=True))
    + r"|\w+|[^\w\s]"
)


def tokenize(text: str) -> list[str]:
    """Lowercase word/punctuation split; special tokens pass through whole."""
    out = []
    for match in _TOKEN_RE.finditer(text):
        tok = match.group()
        out.append(tok if tok in SPECIAL_TOKENS else tok.lower())
    return out


@dataclass(frozen=True)
class ReprConfig:
    window_chars: int = 500
    max_anchors: int = 10
    description_chars: int = 2000
    max_len: int = 256
    include_entities: bool = True
    include_entity_types: bool = True

    def __post_init__(self):
        for name in ("window_chars", "max_anchors", "description_chars"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.max_len < 8:
            raise ValueError("max_len must be at least 8")


@dataclass(frozen=True)
class MentionParts:
    ctxt_l: tuple[str, ...]
    mention: tuple[str, ...]
    ctxt_r: tuple[str, ...]
    # (open marker, surface tokens, close marker) per entity, document order.
    entity_blocks: tuple[tuple[str, tuple[str, ...], str], ...]


@dataclass(frozen=True)
class TitleParts:
    title: tuple[str, ...]
    description: tuple[str, ...]
    anchor_blocks: tuple[tuple[str, ...], ...]


@dataclass(frozen=True)
class TokenSequence:
    """A flattened sequence plus the segment boundary and its source parts.

    ``boundary`` is the index of the separator between the two segments
    (for joint sequences: the index where the title half begins). ``parts``
    keeps the untruncated building blocks so sequences can be re-assembled
    under a different budget.
    """

    tokens: tuple[str, ...]
    boundary: int
    parts: MentionParts | TitleParts | tuple[MentionParts, TitleParts] | None = None

    def __len__(self) -> int:
        return len(self.tokens)

    def dump(self) -> str:
        """Newline-joined token list (golden-file friendly)."""
        return "\n".join(self.tokens)


# ---------------------------------------------------------------------------
# context windows

def _snap_left(text: str, pos: int) -> int:
    if 0 < pos < len(text) and not text[pos - 1].isspace() and not text[pos].isspace():
        while pos > 0 and not text[pos - 1].isspace():
            pos -= 1
    return pos


def _snap_right(text: str, pos: int) -> int:
    if 0 < pos < len(text) and not text[pos - 1].isspace() and not text[pos].isspace():
        while pos < len(text) and not text[pos].isspace():
            pos += 1
    return pos


def window_bounds(doc_text: str, span: tuple[int, int],
                  cfg: ReprConfig) -> tuple[int, int]:
    """Character bounds [left, right) of the context window around ``span``."""
    start, end = span
    if not (0 <= start <= end <= len(doc_text)):
        raise ValueError(f"span {span} outside document bounds")
    left = _snap_left(doc_text, max(0, start - cfg.window_chars))
    right = _snap_right(doc_text, min(len(doc_text), end + cfg.window_chars))
    return left, right


def context_window(doc_text: str, span: tuple[int, int],
                   cfg: ReprConfig) -> tuple[str, str]:
    """Up to ``window_chars`` characters per side, whole words only, the
    mention text excluded from both sides."""
    left, right = window_bounds(doc_text, span, cfg)
    return doc_text[left:span[0]], doc_text[span[1]:right]


# ---------------------------------------------------------------------------
# assembly with truncation

def _drop_tail(seq: tuple, want: int) -> tuple[tuple, int]:
    cut = min(want, len(seq))
    return (seq[:len(seq) - cut] if cut else seq), want - cut


def _drop_head(seq: tuple, want: int) -> tuple[tuple, int]:
    cut = min(want, len(seq))
    return (seq[cut:] if cut else seq), want - cut


def _mention_cost(p: MentionParts) -> int:
    ent = sum(len(toks) + 2 for _, toks, _ in p.entity_blocks)
    return 5 + len(p.ctxt_l) + len(p.mention) + len(p.ctxt_r) + ent


def _title_cost(p: TitleParts) -> int:
    anchors = sum(len(b) for b in p.anchor_blocks)
    seps = max(0, len(p.anchor_blocks) - 1)
    return 4 + len(p.title) + len(p.description) + anchors + seps


def _shrink_mention(p: MentionParts, over: int) -> tuple[MentionParts, int]:
    ctxt_r, over = _drop_tail(p.ctxt_r, over)
    ctxt_l, over = _drop_head(p.ctxt_l, over)
    blocks = list(p.entity_blocks)
    while over > 0 and blocks:
        _, toks, _ = blocks.pop()
        over -= len(toks) + 2
    mention = p.mention
    if over > 0:
        # Degenerate budget: trim inside the mention block, markers stay.
        mention, over = _drop_tail(mention, over)
    return MentionParts(ctxt_l, mention, ctxt_r, tuple(blocks)), max(0, over)


def _shrink_title(p: TitleParts, over: int) -> tuple[TitleParts, int]:
    description, over = _drop_tail(p.description, over)
    blocks = list(p.anchor_blocks)
    while over > 0 and blocks:
        dropped = blocks.pop()
        over -= len(dropped) + (1 if blocks else 0)
    title = p.title
    if over > 0:
        title, over = _drop_tail(title, over)
    return TitleParts(title, description, tuple(blocks)), max(0, over)


def _flatten_mention(p: MentionParts) -> tuple[tuple[str, ...], int]:
    tokens = [CLS, *p.ctxt_l, MENTION_START, *p.mention, MENTION_END, *p.ctxt_r]
    boundary = len(tokens)
    tokens.append(SEP)
    for open_m, toks, close_m in p.entity_blocks:
        tokens += [open_m, *toks, close_m]
    tokens.append(SEP)
    return tuple(tokens), boundary


def _flatten_title(p: TitleParts) -> tuple[tuple[str, ...], int]:
    tokens = [CLS, *p.title, TITLE_SEP, *p.description]
    boundary = len(tokens)
    tokens.append(SEP)
    for i, block in enumerate(p.anchor_blocks):
        if i:
            tokens.append(SEP)
        tokens += block
    tokens.append(SEP)
    return tuple(tokens), boundary


def _select_entities(mention: EventMention, entities, cfg: ReprConfig,
                     bounds: tuple[int, int]) -> list[EntitySpan]:
    left, right = bounds
    start, end = mention.span
    inside = [e for e in entities
              if left <= e.span[0] and e.span[1] <= right
              and not (e.span[0] < end and start < e.span[1])]
    inside.sort(key=lambda e: (e.span[0], -(e.span[1] - e.span[0])))
    kept: list[EntitySpan] = []
    for ent in inside:
        if kept and ent.span[0] < kept[-1].span[1]:
            continue  # overlap: the earlier-starting, longer span wins
        kept.append(ent)
    return kept


def build_mention_repr(mention: EventMention, entities=None,
                       cfg: ReprConfig = ReprConfig()) -> TokenSequence:
    """Render a mention with its in-window entities.

    ``include_entities=False`` drops the entity segment entirely;
    ``include_entity_types=False`` replaces typed markers with the single
    untyped pair. Entities overlapping the mention span are excluded.
    """
    if entities is None:
        entities = mention.entities
    bounds = window_bounds(mention.doc_text, mention.span, cfg)
    ctxt_l = mention.doc_text[bounds[0]:mention.span[0]]
    ctxt_r = mention.doc_text[mention.span[1]:bounds[1]]

    blocks = []
    if cfg.include_entities:
        for ent in _select_entities(mention, entities, cfg, bounds):
            if cfg.include_entity_types:
                open_m, close_m = entity_markers(ent.etype)
            else:
                open_m, close_m = ENT_START, ENT_END
            blocks.append((open_m, tuple(tokenize(ent.surface)), close_m))

    parts = MentionParts(
        ctxt_l=tuple(tokenize(ctxt_l)),
        mention=tuple(tokenize(mention.surface)),
        ctxt_r=tuple(tokenize(ctxt_r)),
        entity_blocks=tuple(blocks),
    )
    fitted, _ = _shrink_mention(parts, _mention_cost(parts) - cfg.max_len)
    tokens, boundary = _flatten_mention(fitted)
    return TokenSequence(tokens, boundary, parts)


def build_title_repr(entry: KBEntry, cfg: ReprConfig = ReprConfig()) -> TokenSequence:
    """Render a KB entry: title, capped description, first anchors."""
    end = min(len(entry.body), cfg.description_chars)
    end = _snap_right(entry.body, end)
    description = entry.body[:end]
    anchors = entry.anchors[:cfg.max_anchors]
    parts = TitleParts(
        title=tuple(tokenize(entry.title)),
        description=tuple(tokenize(description)),
        anchor_blocks=tuple(tuple(tokenize(a.surface)) for a in anchors),
    )
    fitted, _ = _shrink_title(parts, _title_cost(parts) - cfg.max_len)
    tokens, boundary = _flatten_title(fitted)
    return TokenSequence(tokens, boundary, parts)


def build_joint_repr(mention_seq: TokenSequence, title_seq: TokenSequence,
                     cfg: ReprConfig = ReprConfig()) -> TokenSequence:
    """Mention sequence followed by the title sequence minus its [CLS].

    The combined budget is ``cfg.max_len``; the title description shrinks
    first, then trailing anchors, then the mention contexts and entity
    blocks as in mention assembly.
    """
    mp = mention_seq.parts
    tp = title_seq.parts
    if not isinstance(mp, MentionParts) or not isinstance(tp, TitleParts):
        raise ValueError("joint representation needs mention and title "
                         "sequences built by this module")
    over = _mention_cost(mp) + _title_cost(tp) - 1 - cfg.max_len
    if over > 0:
        budget = (len(tp.description)
                  + sum(len(b) for b in tp.anchor_blocks)
                  + max(0, len(tp.anchor_blocks) - 1))
        tp, _ = _shrink_title(tp, min(over, budget))
        over = _mention_cost(mp) + _title_cost(tp) - 1 - cfg.max_len
    if over > 0:
        mp, over = _shrink_mention(mp, over)
    if over > 0:
        tp, _ = _shrink_title(tp, over)
    m_tokens, _ = _flatten_mention(mp)
    t_tokens, _ = _flatten_title(tp)
    tokens = m_tokens + t_tokens[1:]
    return TokenSequence(tokens, boundary=len(m_tokens), parts=(mp, tp))
