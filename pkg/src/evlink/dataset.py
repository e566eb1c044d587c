"""Train/dev/test split construction from a hyperlink-annotated KB.

Event mentions are harvested from anchors pointing at event-tagged titles.
Verb mentions are all kept and nominals are down-sampled to the same size;
evaluation mentions are then partitioned into difficulty classes: verbs by
whether surface form and gold title were seen in training, nominals by
character-trigram Jaccard similarity to the gold title (threshold 0.1,
strictly below = hard). Titles with at most ``unseen_max_verb_mentions``
verb mentions are kept out of training entirely.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
from dataclasses import dataclass, field, replace

import numpy as np

from .kb import (
    KB,
    EntitySpan,
    EventMention,
    PosClass,
    SplitLabel,
    save_mentions,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SplitConfig:
    seed: int = 0
    jaccard_threshold: float = 0.1
    unseen_max_verb_mentions: int = 5
    event_tag: str = "Event"
    min_prior_count: int = 10
    # dev/test share the remainder equally: 70/15/15.
    train_pct: int = 70
    dev_pct: int = 15

    def __post_init__(self):
        if not 0.0 <= self.jaccard_threshold <= 1.0:
            raise ValueError("jaccard_threshold must lie in [0, 1]")
        if not 0 < self.train_pct + 2 * self.dev_pct <= 100:
            raise ValueError("split percentages out of range")


# ---------------------------------------------------------------------------
# mention extraction

# Approximate verb/nominal fallback used only when records carry no POS.
_VERB_LEXICON = frozenset("""
    is are was were be been being has have had do does did
    went gone came become became begun began fought won lost led
    held took taken gave given made found met left sent built rebuilt
    rose fell drew drawn broke broken struck sank sunk threw thrown
    arose chose chosen drove driven flew flown forbade froze got
    killed died launched signed ended started stormed invaded occupied
    attacked bombed erupted collapsed surrendered declared
""".split())

_VERB_SUFFIXES = ("ed", "ing", "ify", "ise", "ize")


def guess_pos(surface: str) -> PosClass:
    """Suffix/lexicon heuristic POS fallback; approximate by design."""
    for token in surface.split():
        low = token.lower()
        if low in _VERB_LEXICON:
            return PosClass.VERB
        if token[:1].islower() and len(low) > 4 and low.endswith(_VERB_SUFFIXES):
            return PosClass.VERB
    return PosClass.NOMINAL


def extract_event_links(kb: KB, event_tag: str,
                        pos_tagger=guess_pos) -> list[EventMention]:
    """One mention per anchor whose target carries ``event_tag``.

    The enclosing page body becomes the mention document and the anchor
    span becomes the mention span. POS class comes from ``pos_tagger``
    (anchor records carry none).
    """
    from .kb import event_titles

    targets = event_titles(kb, event_tag)
    mentions = []
    next_id = 0
    for entry_id in sorted(kb.entries):
        entry = kb.entries[entry_id]
        for anchor in entry.anchors:
            if anchor.target_id not in targets:
                continue
            span = (anchor.offset, anchor.offset + len(anchor.surface))
            mentions.append(EventMention(
                mention_id=next_id,
                doc_text=entry.body,
                span=span,
                surface=anchor.surface,
                pos_class=pos_tagger(anchor.surface),
                gold_id=anchor.target_id,
            ))
            next_id += 1
    return mentions


def load_gazetteer(path) -> list[tuple[str, str]]:
    """Read `surface<TAB>TYPE` lines; blank lines and '#' comments skipped."""
    entries = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            surface, _, etype = line.partition("\t")
            if not surface or not etype:
                raise ValueError(f"bad gazetteer line: {line!r}")
            entries.append((surface, etype))
    return entries


def annotate_entities(mentions: list[EventMention],
                      gazetteer: list[tuple[str, str]]) -> list[EventMention]:
    """Attach entity spans by exact gazetteer string matching.

    Longest surfaces match first; matches use word boundaries and never
    overlap each other or the mention span. Only a stand-in for a real
    tagger.
    """
    by_len = sorted(gazetteer, key=lambda e: (-len(e[0]), e[0]))
    patterns = [(re.compile(r"(?<!\w)" + re.escape(s) + r"(?!\w)"), s, t)
                for s, t in by_len]
    out = []
    for m in mentions:
        taken = [m.span]
        found = []
        for pat, surface, etype in patterns:
            for match in pat.finditer(m.doc_text):
                span = match.span()
                if any(span[0] < e and s < span[1] for s, e in taken):
                    continue
                taken.append(span)
                found.append(EntitySpan(surface, etype, span))
        found.sort(key=lambda e: e.span)
        out.append(replace(m, entities=tuple(found)))
    return out


# ---------------------------------------------------------------------------
# balancing and difficulty classes

def balance_pos(mentions: list[EventMention], seed: int) -> list[EventMention]:
    """Keep all verb mentions; sample nominals (without replacement) down to
    the same count. If nominals are scarcer, keep them all and warn."""
    verbs = [m for m in mentions if m.pos_class is PosClass.VERB]
    nominals = sorted((m for m in mentions if m.pos_class is PosClass.NOMINAL),
                      key=lambda m: m.mention_id)
    if len(nominals) <= len(verbs):
        if len(nominals) < len(verbs):
            log.warning("balance: only %d nominals for %d verbs; keeping all",
                        len(nominals), len(verbs))
        chosen = nominals
    else:
        rng = np.random.default_rng(seed)
        idx = rng.choice(len(nominals), size=len(verbs), replace=False)
        chosen = [nominals[i] for i in sorted(idx)]
    kept_ids = {m.mention_id for m in chosen} | {m.mention_id for m in verbs}
    return [m for m in mentions if m.mention_id in kept_ids]


def _trigrams(s: str) -> frozenset[str]:
    s = s.lower()
    if len(s) < 3:
        return frozenset({s})
    return frozenset(s[i:i + 3] for i in range(len(s) - 2))


def jaccard3(a: str, b: str) -> float:
    """Jaccard similarity of lowercase character trigram sets.

    Spaces are ordinary characters and strings shorter than 3 characters
    contribute themselves as a single gram.
    """
    if not a or not b:
        raise ValueError("jaccard3 requires nonempty strings")
    ga, gb = _trigrams(a), _trigrams(b)
    return len(ga & gb) / len(ga | gb)


def classify_nominal(mention: EventMention, gold_title: str,
                     cfg: SplitConfig) -> SplitLabel:
    """Hard iff similarity to the gold title is strictly below the threshold."""
    if mention.pos_class is not PosClass.NOMINAL:
        raise ValueError("classify_nominal expects a nominal mention")
    if mention.gold_id is None:
        raise ValueError("classify_nominal expects a linked mention")
    if jaccard3(mention.surface, gold_title) < cfg.jaccard_threshold:
        return SplitLabel.NOMINAL_HARD
    return SplitLabel.NOMINAL_EASY


def classify_verb(mention: EventMention, train_surfaces: set[str],
                  train_titles: set[int]) -> SplitLabel:
    """Verb class from training-set membership of surface form and gold title.

    Surfaces are compared case-folded; titles by id.
    """
    if mention.pos_class is not PosClass.VERB:
        raise ValueError("classify_verb expects a verb mention")
    if mention.gold_id is None:
        raise ValueError("classify_verb expects a linked mention")
    if mention.gold_id not in train_titles:
        return SplitLabel.UNSEEN_EVENT
    if mention.surface.casefold() in train_surfaces:
        return SplitLabel.SEEN_EVENT
    return SplitLabel.UNSEEN_FORM


# ---------------------------------------------------------------------------
# split assignment

@dataclass
class SplitStats:
    """Per (split x pos class x label) mention counts."""

    counts: dict[str, dict[str, dict[str, int]]] = field(default_factory=dict)

    def record(self, split: str, mention: EventMention) -> None:
        pos = mention.pos_class.value
        label = mention.split_label.value if mention.split_label else "total"
        per_split = self.counts.setdefault(split, {})
        per_pos = per_split.setdefault(pos, {})
        per_pos[label] = per_pos.get(label, 0) + 1

    def split_total(self, split: str) -> int:
        return sum(n for per_pos in self.counts.get(split, {}).values()
                   for n in per_pos.values())

    def pos_total(self, split: str, pos: str) -> int:
        return sum(self.counts.get(split, {}).get(pos, {}).values())

    def to_dict(self) -> dict:
        out = {}
        for split in ("train", "dev", "test"):
            per_split = self.counts.get(split, {})
            out[split] = {
                pos: dict(sorted(per_pos.items()))
                for pos, per_pos in sorted(per_split.items())
            }
            out[split]["total"] = self.split_total(split)
        return out

    def format_table(self) -> str:
        rows = [("", "Train", "Dev", "Test")]

        def add(label, key, pos):
            vals = []
            for split in ("train", "dev", "test"):
                if key == "total":
                    n = self.pos_total(split, pos)
                else:
                    n = self.counts.get(split, {}).get(pos, {}).get(key, 0)
                vals.append(str(n) if n else "-")
            rows.append((label, *vals))

        add("Verb", "total", "verb")
        for lbl, name in (("seen_event", "  Seen Event"),
                          ("unseen_form", "  Unseen Form"),
                          ("unseen_event", "  Unseen Event"),
                          ("nil", "  Nil")):
            add(name, lbl, "verb")
        add("Nominal", "total", "nominal")
        for lbl, name in (("nominal_hard", "  Hard"),
                          ("nominal_easy", "  Easy"),
                          ("nil", "  Nil")):
            add(name, lbl, "nominal")
        rows.append(("Total",
                     *(str(self.split_total(s)) for s in ("train", "dev", "test"))))
        widths = [max(len(r[i]) for r in rows) for i in range(4)]
        return "\n".join(
            "  ".join(col.ljust(widths[i]) if i == 0 else col.rjust(widths[i])
                      for i, col in enumerate(r))
            for r in rows)


def _route(mention_id: int, seed: int, salt: str = "") -> int:
    """Stable bucket in [0, 100) for split assignment."""
    key = f"{salt}:{seed}:{mention_id}".encode()
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(),
                          "little") % 100


def build_splits(mentions: list[EventMention], kb: KB, cfg: SplitConfig,
                 ) -> tuple[list[EventMention], list[EventMention],
                            list[EventMention], SplitStats]:
    """Partition a balanced mention list into train/dev/test.

    Titles with at most ``cfg.unseen_max_verb_mentions`` verb mentions go
    wholly to the evaluation splits; Nil mentions go to test (training and
    development carry no Nil examples). Everything else is routed by a
    stable hash of (seed, mention_id) at train_pct/dev_pct/rest. Dev/test
    mentions get their difficulty label, and within each evaluation split
    the larger of the hard/easy nominal classes is down-sampled to match
    the smaller.
    """
    verb_counts: dict[int, int] = {}
    for m in mentions:
        if m.pos_class is PosClass.VERB and m.gold_id is not None:
            verb_counts[m.gold_id] = verb_counts.get(m.gold_id, 0) + 1
    linked_titles = {m.gold_id for m in mentions if m.gold_id is not None}
    unseen_titles = {t for t in linked_titles
                     if verb_counts.get(t, 0) <= cfg.unseen_max_verb_mentions}

    train: list[EventMention] = []
    dev: list[EventMention] = []
    test: list[EventMention] = []
    for m in sorted(mentions, key=lambda m: m.mention_id):
        if m.gold_id is None:
            test.append(m)
        elif m.gold_id in unseen_titles:
            (dev if _route(m.mention_id, cfg.seed, "eval") < 50 else test).append(m)
        else:
            bucket = _route(m.mention_id, cfg.seed)
            if bucket < cfg.train_pct:
                train.append(m)
            elif bucket < cfg.train_pct + cfg.dev_pct:
                dev.append(m)
            else:
                test.append(m)

    train_surfaces = {m.surface.casefold() for m in train}
    train_titles = {m.gold_id for m in train if m.gold_id is not None}

    def label(m: EventMention) -> EventMention:
        if m.gold_id is None:
            return replace(m, split_label=SplitLabel.NIL)
        if m.pos_class is PosClass.VERB:
            return replace(m, split_label=classify_verb(m, train_surfaces,
                                                        train_titles))
        title = kb[m.gold_id].title
        return replace(m, split_label=classify_nominal(m, title, cfg))

    dev = [label(m) for m in dev]
    test = [label(m) for m in test]

    def equalize(split: list[EventMention], salt: int) -> list[EventMention]:
        hard = [m for m in split if m.split_label is SplitLabel.NOMINAL_HARD]
        easy = [m for m in split if m.split_label is SplitLabel.NOMINAL_EASY]
        n = min(len(hard), len(easy))
        rng = np.random.default_rng([cfg.seed, salt])
        keep_ids = set()
        for group in (hard, easy):
            group = sorted(group, key=lambda m: m.mention_id)
            idx = rng.choice(len(group), size=n, replace=False) if group else []
            keep_ids.update(group[i].mention_id for i in idx)
        return [m for m in split
                if m.split_label not in (SplitLabel.NOMINAL_HARD,
                                         SplitLabel.NOMINAL_EASY)
                or m.mention_id in keep_ids]

    dev = equalize(dev, 1)
    test = equalize(test, 2)

    stats = SplitStats()
    for name, split in (("train", train), ("dev", dev), ("test", test)):
        for m in split:
            stats.record(name, m)
    return train, dev, test, stats


def write_splits(train, dev, test, stats: SplitStats, out_dir) -> None:
    """Write the three mention files plus machine- and human-readable stats."""
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, split in (("train", train), ("dev", dev), ("test", test)):
        save_mentions(sorted(split, key=lambda m: m.mention_id),
                      out / f"{name}.jsonl")
    (out / "stats.json").write_text(
        json.dumps(stats.to_dict(), indent=2, sort_keys=True) + "\n",
        encoding="utf-8")
    (out / "stats.txt").write_text(stats.format_table() + "\n", encoding="utf-8")
