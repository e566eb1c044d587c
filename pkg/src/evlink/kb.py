"""Knowledge-base and mention domain types plus line-record ingestion.

The KB record format is one JSON object per line (UTF-8):

    {"id": int, "title": str, "body": str,
     "anchors": [{"surface": str, "target_id": int, "offset": int}],
     "types": [str]}

Mention records:

    {"mention_id": int, "doc_text": str, "span": [int, int],
     "pos": "verb"|"nominal", "gold_id": int|null,
     "entities": [{"surface": str, "type": str, "span": [int, int]}]?,
     "surface": str?, "split": str?}

All character offsets count Unicode scalar values (Python string indices),
never bytes. Spans are half-open [start, end).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

log = logging.getLogger(__name__)

# The 18 OntoNotes entity type labels.
ONTONOTES_TYPES = frozenset({
    "PERSON", "NORP", "FAC", "ORG", "GPE", "LOC", "PRODUCT", "EVENT",
    "WORK_OF_ART", "LAW", "LANGUAGE", "DATE", "TIME", "PERCENT", "MONEY",
    "QUANTITY", "ORDINAL", "CARDINAL",
})


class KBError(Exception):
    """Base class for KB/mention ingestion failures."""


class RecordFormatError(KBError):
    """Malformed record; carries the source path and 1-based line number."""

    def __init__(self, path, lineno: int, reason: str):
        super().__init__(f"{path}:{lineno}: {reason}")
        self.path = str(path)
        self.lineno = lineno
        self.reason = reason


class DuplicateIdError(KBError):
    pass


class MentionValidationError(KBError):
    pass


class PosClass(Enum):
    VERB = "verb"
    NOMINAL = "nominal"


class SplitLabel(Enum):
    SEEN_EVENT = "seen_event"
    UNSEEN_FORM = "unseen_form"
    UNSEEN_EVENT = "unseen_event"
    NOMINAL_HARD = "nominal_hard"
    NOMINAL_EASY = "nominal_easy"
    NIL = "nil"


VERB_LABELS = (SplitLabel.SEEN_EVENT, SplitLabel.UNSEEN_FORM,
               SplitLabel.UNSEEN_EVENT, SplitLabel.NIL)
NOMINAL_LABELS = (SplitLabel.NOMINAL_HARD, SplitLabel.NOMINAL_EASY,
                  SplitLabel.NIL)


@dataclass(frozen=True)
class Anchor:
    """A hyperlinked span inside a page body."""

    surface: str
    target_id: int
    offset: int


@dataclass(frozen=True)
class KBEntry:
    """A titled page: body text, anchored spans and type tags."""

    id: int
    title: str
    body: str
    anchors: tuple[Anchor, ...] = ()
    type_tags: frozenset[str] = frozenset()


@dataclass(frozen=True)
class EntitySpan:
    """An annotated entity occurrence in a mention document."""

    surface: str
    etype: str
    span: tuple[int, int]


@dataclass(frozen=True)
class EventMention:
    """A verb or nominal span in context, optionally linked to a KB entry.

    ``gold_id is None`` means the mention has no page (Nil).
    """

    mention_id: int
    doc_text: str
    span: tuple[int, int]
    surface: str
    pos_class: PosClass
    gold_id: int | None = None
    entities: tuple[EntitySpan, ...] = ()
    split_label: SplitLabel | None = None


@dataclass
class KB:
    """Immutable-after-load collection of entries with a title lookup."""

    entries: dict[int, KBEntry] = field(default_factory=dict)
    title_index: dict[str, int] = field(default_factory=dict)
    dropped_anchors: int = 0

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, entry_id: int) -> bool:
        return entry_id in self.entries

    def __getitem__(self, entry_id: int) -> KBEntry:
        return self.entries[entry_id]

    def ids(self) -> list[int]:
        return sorted(self.entries)

    def __eq__(self, other) -> bool:
        if not isinstance(other, KB):
            return NotImplemented
        return self.entries == other.entries


def _check_anchor(entry_id: int, anchor: Anchor, body: str) -> str | None:
    """Return a reason string if the anchor is malformed, else None."""
    end = anchor.offset + len(anchor.surface)
    if anchor.offset < 0 or end > len(body):
        return "offset out of body bounds"
    if body[anchor.offset:end] != anchor.surface:
        return "surface does not match body substring"
    return None


def load_kb(path) -> KB:
    """Load and validate a KB from a line-record file.

    Duplicate ids raise :class:`DuplicateIdError`. Anchors that are out of
    bounds, mismatch the body text, or point at an id absent from the file
    (red links) are dropped with a warning; the total ends up in
    ``kb.dropped_anchors``.
    """
    path = Path(path)
    raw: list[tuple[int, KBEntry]] = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise RecordFormatError(path, lineno, f"invalid JSON ({exc.msg})")
            try:
                entry = KBEntry(
                    id=int(rec["id"]),
                    title=str(rec["title"]),
                    body=str(rec["body"]),
                    anchors=tuple(
                        Anchor(str(a["surface"]), int(a["target_id"]), int(a["offset"]))
                        for a in rec.get("anchors", [])
                    ),
                    type_tags=frozenset(str(t) for t in rec.get("types", [])),
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise RecordFormatError(path, lineno, f"bad record field: {exc}")
            raw.append((lineno, entry))

    kb = KB()
    for lineno, entry in raw:
        if entry.id in kb.entries:
            raise DuplicateIdError(
                f"{path}:{lineno}: duplicate id {entry.id}")
        kb.entries[entry.id] = entry
        kb.title_index[entry.title] = entry.id

    # Anchor validation needs the full id set (forward references are legal).
    dropped = 0
    for entry_id in list(kb.entries):
        entry = kb.entries[entry_id]
        kept = []
        for anchor in entry.anchors:
            reason = _check_anchor(entry_id, anchor, entry.body)
            if reason is None and anchor.target_id not in kb.entries:
                reason = f"dangling target {anchor.target_id}"
            if reason is None:
                kept.append(anchor)
            else:
                dropped += 1
                log.warning("kb %s: entry %d: dropped anchor %r (%s)",
                            path.name, entry_id, anchor.surface, reason)
        if len(kept) != len(entry.anchors):
            kb.entries[entry_id] = KBEntry(
                id=entry.id, title=entry.title, body=entry.body,
                anchors=tuple(kept), type_tags=entry.type_tags)
    kb.dropped_anchors = dropped
    if dropped:
        log.warning("kb %s: dropped %d anchor(s) in total", path.name, dropped)
    return kb


def save_kb(kb: KB, path) -> None:
    """Write a KB back out, one record per line, ids ascending."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for entry_id in sorted(kb.entries):
            entry = kb.entries[entry_id]
            rec = {
                "id": entry.id,
                "title": entry.title,
                "body": entry.body,
                "anchors": [
                    {"surface": a.surface, "target_id": a.target_id,
                     "offset": a.offset}
                    for a in entry.anchors
                ],
                "types": sorted(entry.type_tags),
            }
            fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")


def event_titles(kb: KB, event_tag: str) -> set[int]:
    """Ids of entries whose type tags contain ``event_tag``."""
    if not event_tag:
        raise ValueError("event_tag must be nonempty")
    return {eid for eid, entry in kb.entries.items()
            if event_tag in entry.type_tags}


def _mention_from_record(rec: dict, kb: KB | None, where: str) -> EventMention:
    try:
        mention_id = int(rec["mention_id"])
        doc_text = str(rec["doc_text"])
        start, end = (int(v) for v in rec["span"])
        pos = PosClass(rec["pos"])
    except (KeyError, TypeError, ValueError) as exc:
        raise MentionValidationError(f"{where}: bad record field: {exc}")
    if not (0 <= start <= end <= len(doc_text)):
        raise MentionValidationError(
            f"{where}: mention {mention_id}: span [{start},{end}] outside "
            f"document of length {len(doc_text)}")
    surface = doc_text[start:end]
    if "surface" in rec and rec["surface"] != surface:
        raise MentionValidationError(
            f"{where}: mention {mention_id}: surface {rec['surface']!r} does "
            f"not match doc_text[{start}:{end}] == {surface!r}")
    gold_id = rec.get("gold_id")
    if gold_id is not None:
        gold_id = int(gold_id)
        if kb is not None and gold_id not in kb:
            raise MentionValidationError(
                f"{where}: mention {mention_id}: unknown gold_id {gold_id}")
    entities = []
    for ent in rec.get("entities") or []:
        es, ee = (int(v) for v in ent["span"])
        if not (0 <= es <= ee <= len(doc_text)):
            raise MentionValidationError(
                f"{where}: mention {mention_id}: entity span [{es},{ee}] out "
                "of bounds")
        etype = str(ent["type"])
        if etype not in ONTONOTES_TYPES:
            raise MentionValidationError(
                f"{where}: mention {mention_id}: unknown entity type {etype!r}")
        entities.append(EntitySpan(str(ent["surface"]), etype, (es, ee)))
    label = rec.get("split")
    return EventMention(
        mention_id=mention_id,
        doc_text=doc_text,
        span=(start, end),
        surface=surface,
        pos_class=pos,
        gold_id=gold_id,
        entities=tuple(entities),
        split_label=SplitLabel(label) if label is not None else None,
    )


def load_mentions(path, kb: KB | None = None) -> list[EventMention]:
    """Load mentions from a line-record file, validating against ``kb``.

    A missing/null ``gold_id`` is preserved as Nil. Passing ``kb=None``
    skips only the gold-id resolution check.
    """
    path = Path(path)
    mentions = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise RecordFormatError(path, lineno, f"invalid JSON ({exc.msg})")
            mentions.append(_mention_from_record(rec, kb, f"{path}:{lineno}"))
    return mentions


def mention_to_record(m: EventMention) -> dict:
    rec = {
        "mention_id": m.mention_id,
        "doc_text": m.doc_text,
        "span": [m.span[0], m.span[1]],
        "surface": m.surface,
        "pos": m.pos_class.value,
        "gold_id": m.gold_id,
    }
    if m.entities:
        rec["entities"] = [
            {"surface": e.surface, "type": e.etype, "span": [e.span[0], e.span[1]]}
            for e in m.entities
        ]
    if m.split_label is not None:
        rec["split"] = m.split_label.value
    return rec


def save_mentions(mentions, path) -> None:
    """Write mention records, one per line, in the given order."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for m in mentions:
            fh.write(json.dumps(mention_to_record(m), ensure_ascii=False,
                                sort_keys=True) + "\n")
