"""Event linking: map verb/nominal event mentions to knowledge-base titles.

Pipeline pieces: KB + mention ingestion (:mod:`evlink.kb`), split
construction (:mod:`evlink.dataset`), entity-augmented token sequences
(:mod:`evlink.representation`), the trainable two-tower encoder
(:mod:`evlink.encoder`), cached dense retrieval (:mod:`evlink.retrieval`),
cross-encoder-style reranking with the Nil rule (:mod:`evlink.reranker`),
non-neural baselines (:mod:`evlink.baselines`), the metric suite
(:mod:`evlink.evaluation`) and staged orchestration
(:mod:`evlink.pipeline`).
"""

from .kb import (
    KB,
    Anchor,
    EntitySpan,
    EventMention,
    KBEntry,
    PosClass,
    SplitLabel,
    event_titles,
    load_kb,
    load_mentions,
    save_kb,
    save_mentions,
)

__version__ = "0.1.0"

__all__ = [
    "KB", "Anchor", "EntitySpan", "EventMention", "KBEntry", "PosClass",
    "SplitLabel", "event_titles", "load_kb", "load_mentions", "save_kb",
    "save_mentions", "__version__",
]
