"""Deterministic synthetic corpora for tests and pipeline smoke runs.

The generator builds a small knowledge base of invented event pages, the
entity pages they anchor, and mention documents whose only disambiguating
signal is entity overlap: every mention context names the gold title's
entities (annotated) plus the entities of a distractor title (present in
the text but left unannotated). Contexts otherwise share one noise
vocabulary, and verb surfaces are drawn from one shared pool, so neither
context style nor the mention surface identifies the gold title.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kb import KB, Anchor, EntitySpan, EventMention, KBEntry, PosClass

_SYLLABLES = [
    "bal", "dor", "mir", "vek", "tas", "rol", "fen", "gar", "lum", "pra",
    "zin", "kor", "sel", "tur", "wan", "hol", "que", "nim", "rav", "ost",
    "ith", "ulm", "ber", "cas",
]
_EVENT_KINDS = ["Uprising", "Siege", "Accord", "Flood", "Expedition", "Strike"]
_VERB_POOL = ["erupted", "unfolded", "escalated", "collapsed", "ignited",
              "intensified"]
_RARE_VERB_SUFFIX = "ified"
_HARD_NOMINALS = ["the turmoil", "the hostilities", "the unrest",
                  "the standoff", "the episode"]
_ENTITY_TYPES = ["PERSON", "GPE", "ORG"]
_NOISE = ("reports from the region describe how local people watched while "
          "officials said little and the town waited for news of what came "
          "next during those weeks").split()


@dataclass
class SynthConfig:
    seed: int = 7
    n_event_titles: int = 20
    verbs_per_title: int = 5
    easy_nominals_per_title: int = 0
    hard_nominals_per_title: int = 0
    entities_per_title: int = 3
    n_filler_titles: int = 0
    n_nil_mentions: int = 0
    # Extra low-frequency titles that trip the unseen-event routing rule.
    rare_titles: int = 0
    rare_verbs: int = 2
    context_noise: int = 6


class _Namer:
    def __init__(self, rng: np.random.Generator):
        combos = [a + b for a in _SYLLABLES for b in _SYLLABLES if a != b]
        rng.shuffle(combos)
        self._deck = combos

    def next(self) -> str:
        return self._deck.pop().capitalize()


def _compose(pieces):
    """Join text pieces with spaces, tracking tagged spans.

    Each piece is (text, tag); returns (text, {order: (tag, start, end)}).
    """
    text = ""
    spans = []
    for piece, tag in pieces:
        if text:
            text += " "
        start = len(text)
        text += piece
        if tag is not None:
            spans.append((tag, start, len(text)))
    return text, spans


def _noise(rng, n) -> list[str]:
    return [str(rng.choice(_NOISE)) for _ in range(n)]


def build_fixture(cfg: SynthConfig) -> tuple[KB, list[EventMention]]:
    rng = np.random.default_rng(cfg.seed)
    namer = _Namer(rng)

    entries: dict[int, KBEntry] = {}
    next_id = 1

    def add_entry(title, body, anchors=(), types=()) -> int:
        nonlocal next_id
        entries[next_id] = KBEntry(next_id, title, body, tuple(anchors),
                                   frozenset(types))
        next_id += 1
        return next_id - 1

    # Entity pages first so event anchors have resolvable targets. Their
    # bodies never repeat the page name, keeping them from crowding out
    # event pages in the candidate space.
    n_events = cfg.n_event_titles + cfg.rare_titles
    event_entities: list[list[tuple[int, str, str]]] = []
    for _ in range(n_events):
        group = []
        for j in range(cfg.entities_per_title):
            name = namer.next()
            etype = _ENTITY_TYPES[j % len(_ENTITY_TYPES)]
            body = " ".join(["a name known across the region ."]
                            + _noise(rng, 20))
            eid = add_entry(name, body, types=[etype.capitalize()])
            group.append((eid, name, etype))
        event_entities.append(group)

    event_ids = []
    for group in event_entities:
        name = namer.next()
        kind = str(rng.choice(_EVENT_KINDS))
        title = f"{name} {kind}"
        names = [n for _, n, _ in group]
        pieces = [(f"The {title} was a major event involving", None)]
        for i, ent_name in enumerate(names):
            if i:
                pieces.append(("and" if i == len(names) - 1 else ",", None))
            pieces.append((ent_name, i))
        pieces.append((".", None))
        second = list(names)
        rng.shuffle(second)
        pieces.append((f"Accounts of the {kind.lower()} describe how", None))
        for ent_name in second:
            pieces.append((ent_name, None))
            pieces.append((" ".join(_noise(rng, 2)), None))
        pieces.append((" ".join(_noise(rng, 8)) + " .", None))
        body, spans = _compose(pieces)
        anchors = [Anchor(names[tag], group[tag][0], start)
                   for tag, start, end in spans]
        event_ids.append(add_entry(title, body, anchors, types=["Event"]))

    for _ in range(cfg.n_filler_titles):
        name = namer.next()
        body = " ".join([name, "is a quiet place ."] + _noise(rng, 12))
        add_entry(name, body, types=["Place"])

    kb = KB(entries=entries,
            title_index={e.title: e.id for e in entries.values()})

    mentions: list[EventMention] = []
    mention_id = 0

    def add_mention(surface, pos, gold_id, gold_group, distractor_names):
        nonlocal mention_id
        left = _noise(rng, cfg.context_noise)
        right = _noise(rng, cfg.context_noise)
        pieces = [(" ".join(left[:3]), None)]
        for i, (eid, name, etype) in enumerate(gold_group[:2]):
            pieces.append((name, ("entity", name, etype)))
            pieces.append((" ".join(_noise(rng, 2)), None))
        if distractor_names:
            pieces.append((distractor_names[0], None))
            pieces.append((" ".join(left[3:]), None))
        pieces.append((surface, "mention"))
        pieces.append((" ".join(right[:2]), None))
        for eid, name, etype in gold_group[2:]:
            pieces.append((name, ("entity", name, etype)))
            pieces.append((" ".join(_noise(rng, 2)), None))
        for extra in distractor_names[1:]:
            pieces.append((extra, None))
            pieces.append((" ".join(_noise(rng, 1)), None))
        pieces.append((" ".join(right[2:]) + " .", None))
        text, spans = _compose(pieces)
        span = None
        ents = []
        for tag, start, end in spans:
            if tag == "mention":
                span = (start, end)
            else:
                _, name, etype = tag
                ents.append(EntitySpan(name, etype, (start, end)))
        mentions.append(EventMention(
            mention_id=mention_id, doc_text=text, span=span,
            surface=text[span[0]:span[1]], pos_class=pos, gold_id=gold_id,
            entities=tuple(ents)))
        mention_id += 1

    def pick_distractor(idx: int) -> list[str]:
        # A random other title's full entity group appears unannotated, so
        # annotation weighting is the only stable disambiguator.
        other = int(rng.integers(len(event_ids) - 1))
        if other >= idx:
            other += 1
        return [n for _, n, _ in event_entities[other]]

    for idx, gold_id in enumerate(event_ids):
        group = event_entities[idx]
        is_rare = idx >= cfg.n_event_titles
        n_verbs = cfg.rare_verbs if is_rare else cfg.verbs_per_title
        for _ in range(n_verbs):
            if rng.random() < 0.15:
                surface = namer.next().lower() + _RARE_VERB_SUFFIX
            else:
                surface = str(rng.choice(_VERB_POOL))
            add_mention(surface, PosClass.VERB, gold_id, group,
                        pick_distractor(idx))
        if not is_rare:
            title = kb[gold_id].title
            for _ in range(cfg.easy_nominals_per_title):
                add_mention(f"the {title.lower()}", PosClass.NOMINAL, gold_id,
                            group, pick_distractor(idx))
            for _ in range(cfg.hard_nominals_per_title):
                add_mention(str(rng.choice(_HARD_NOMINALS)), PosClass.NOMINAL,
                            gold_id, group, pick_distractor(idx))

    for i in range(cfg.n_nil_mentions):
        loner = namer.next()
        pos = PosClass.VERB if i % 2 == 0 else PosClass.NOMINAL
        surface = "vanished" if pos is PosClass.VERB else "the disappearance"
        group = [(0, loner, "PERSON")]
        add_mention(surface, pos, None, group, [])

    return kb, mentions


def linking_task(seed: int = 7, n_titles: int = 20,
                 mentions_per_title: int = 5,
                 entities_per_title: int = 3) -> tuple[KB, list[EventMention]]:
    """Verb-only entity-overlap task: gold titles are identifiable only
    through the annotated entities shared with the title page."""
    return build_fixture(SynthConfig(
        seed=seed, n_event_titles=n_titles, verbs_per_title=mentions_per_title,
        entities_per_title=entities_per_title))


def corpus_fixture(seed: int = 11) -> tuple[KB, list[EventMention]]:
    """A ~200-title corpus with nominals, rare titles and Nil mentions,
    rich enough to drive every pipeline stage."""
    return build_fixture(SynthConfig(
        seed=seed, n_event_titles=18, verbs_per_title=8,
        easy_nominals_per_title=4, hard_nominals_per_title=4,
        entities_per_title=3, n_filler_titles=116, n_nil_mentions=6,
        rare_titles=2, rare_verbs=3))


def write_fixture(out_dir, kind: str = "corpus", seed: int | None = None):
    """Write kb.jsonl and mentions.jsonl for a generated fixture."""
    from pathlib import Path

    from .kb import save_kb, save_mentions

    if kind == "corpus":
        kb, mentions = corpus_fixture(seed if seed is not None else 11)
    elif kind == "task":
        kb, mentions = linking_task(seed if seed is not None else 7)
    else:
        raise ValueError(f"unknown fixture kind {kind!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_kb(kb, out / "kb.jsonl")
    save_mentions(mentions, out / "mentions.jsonl")
    return out / "kb.jsonl", out / "mentions.jsonl"
