"""Metrics and breakdowns: recall@K, accuracy@1/@5, Nil-aware accuracy.

Reports slice every number by part of speech and difficulty class (seen /
unseen-form / unseen-event verbs, hard / easy nominals, Nil) and always
carry the verb, nominal and combined totals. Percentages are reported to
two decimals with half-up rounding. Recall and plain accuracy are defined
over linkable mentions only; Nil-gold mentions are excluded and counted,
never silently dropped.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal

from .kb import EventMention, PosClass, SplitLabel

log = logging.getLogger(__name__)

_VERB_ORDER = ("seen_event", "unseen_form", "unseen_event", "nil", "unlabeled")
_NOM_ORDER = ("nominal_hard", "nominal_easy", "nil", "unlabeled")
_SLICE_NAMES = {
    "seen_event": "Seen", "unseen_form": "Unseen Form",
    "unseen_event": "Unseen", "nominal_hard": "Hard",
    "nominal_easy": "Easy", "nil": "Nil", "unlabeled": "(unlabeled)",
}


def pct(hits: int, count: int) -> float:
    """Percentage with two decimals, half-up, matching table style."""
    if count == 0:
        return 0.0
    value = Decimal(hits) * 100 / Decimal(count)
    return float(value.quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


@dataclass
class SliceScore:
    count: int = 0
    hits: int = 0

    def add(self, hit: bool) -> None:
        self.count += 1
        self.hits += int(hit)

    @property
    def value(self) -> float:
        return pct(self.hits, self.count)

    def to_dict(self) -> dict:
        return {"count": self.count, "hits": self.hits, "pct": self.value}


@dataclass
class EvalReport:
    mode: str
    slices: dict[tuple[str, str], SliceScore] = field(default_factory=dict)
    excluded_nil: int = 0
    missing_predictions: int = 0
    accu1: float | None = None
    accu5: float | None = None

    def record(self, mention: EventMention, hit: bool) -> None:
        pos = mention.pos_class.value
        label = mention.split_label.value if mention.split_label else "unlabeled"
        self.slices.setdefault((pos, label), SliceScore()).add(hit)

    def _total(self, pos: str | None = None) -> SliceScore:
        agg = SliceScore()
        for (p, _), score in self.slices.items():
            if pos is None or p == pos:
                agg.count += score.count
                agg.hits += score.hits
        return agg

    @property
    def verb_overall(self) -> SliceScore:
        return self._total("verb")

    @property
    def nominal_overall(self) -> SliceScore:
        return self._total("nominal")

    @property
    def combined(self) -> SliceScore:
        return self._total()

    def to_dict(self) -> dict:
        out = {
            "mode": self.mode,
            "slices": {f"{pos}/{label}": s.to_dict()
                       for (pos, label), s in sorted(self.slices.items())},
            "verb_overall": self.verb_overall.to_dict(),
            "nominal_overall": self.nominal_overall.to_dict(),
            "combined": self.combined.to_dict(),
            "excluded_nil": self.excluded_nil,
            "missing_predictions": self.missing_predictions,
        }
        if self.accu1 is not None:
            out["accu1"] = self.accu1
        if self.accu5 is not None:
            out["accu5"] = self.accu5
        return out

    def format_table(self) -> str:
        cols: list[tuple[str, SliceScore | None]] = []
        for label in _VERB_ORDER:
            score = self.slices.get(("verb", label))
            if score:
                cols.append((f"V:{_SLICE_NAMES[label]}", score))
        cols.append(("V:Overall", self.verb_overall))
        for label in _NOM_ORDER:
            score = self.slices.get(("nominal", label))
            if score:
                cols.append((f"N:{_SLICE_NAMES[label]}", score))
        cols.append(("N:Overall", self.nominal_overall))
        cols.append(("All", self.combined))
        if self.accu5 is not None:
            cols.append(("Accu@5", None))
            cols.append(("Accu@1", None))

        header, values, counts = [], [], []
        for name, score in cols:
            if name == "Accu@5":
                val, cnt = f"{self.accu5:.2f}", ""
            elif name == "Accu@1":
                val, cnt = f"{self.accu1:.2f}", ""
            else:
                val, cnt = f"{score.value:.2f}", str(score.count)
            width = max(len(name), len(val), len(cnt))
            header.append(name.rjust(width))
            values.append(val.rjust(width))
            counts.append(cnt.rjust(width))
        lines = [f"mode: {self.mode}",
                 "  ".join(header), "  ".join(values), "  ".join(counts)]
        notes = []
        if self.excluded_nil:
            notes.append(f"excluded {self.excluded_nil} Nil-gold mention(s)")
        if self.missing_predictions:
            notes.append(f"{self.missing_predictions} mention(s) had no "
                         "prediction (counted as misses)")
        if notes:
            lines.append("; ".join(notes))
        return "\n".join(lines)


def _ranked_ids(prediction) -> list[int]:
    if prediction is None:
        return []
    if hasattr(prediction, "ids"):
        return prediction.ids()
    return list(prediction)


def recall_at_k(predictions, mentions, k: int) -> EvalReport:
    """Fraction of linkable mentions whose gold id is in the top-K
    candidates. ``predictions`` maps mention_id to a ranked id list (or any
    object with ``.ids()``)."""
    report = EvalReport(mode=f"recall@{k}")
    for m in mentions:
        if m.gold_id is None:
            report.excluded_nil += 1
            continue
        ranked = _ranked_ids(predictions.get(m.mention_id))
        if not ranked and m.mention_id not in predictions:
            report.missing_predictions += 1
        report.record(m, m.gold_id in ranked[:k])
    if report.missing_predictions:
        log.warning("recall: %d mention(s) missing from predictions",
                    report.missing_predictions)
    return report


def accuracy(predictions, mentions, at: int = 1) -> EvalReport:
    """Top-``at`` accuracy over linkable mentions (Nil-gold excluded).

    The combined Accu@1 and Accu@5 figures are always attached.
    """
    report = EvalReport(mode=f"accuracy@{at}")
    hits1 = hits5 = total = 0
    for m in mentions:
        if m.gold_id is None:
            report.excluded_nil += 1
            continue
        ranked = _ranked_ids(predictions.get(m.mention_id))
        if not ranked and m.mention_id not in predictions:
            report.missing_predictions += 1
        report.record(m, m.gold_id in ranked[:at])
        total += 1
        hits1 += int(m.gold_id in ranked[:1])
        hits5 += int(m.gold_id in ranked[:5])
    report.accu1 = pct(hits1, total)
    report.accu5 = pct(hits5, total)
    if report.missing_predictions:
        log.warning("accuracy: %d mention(s) missing from predictions",
                    report.missing_predictions)
    return report


def accuracy_with_nil(predictions, mentions, threshold: float = 0.5) -> EvalReport:
    """Accuracy over all mentions, Nil included.

    A Nil-gold mention is correct iff its top probability falls strictly
    below the threshold; a linkable mention is correct iff it is not
    tagged Nil and its top-1 candidate is the gold title. ``predictions``
    maps mention_id to a PredictionList (probabilities required).
    """
    report = EvalReport(mode=f"accuracy+nil@{threshold}")
    hits1 = hits5 = total = 0
    for m in mentions:
        pred = predictions.get(m.mention_id)
        if pred is None:
            report.missing_predictions += 1
        top_prob = pred.top_prob() if pred is not None else 0.0
        is_nil = top_prob < threshold
        ranked = _ranked_ids(pred)
        if m.gold_id is None:
            mention = m if m.split_label is not None else _with_nil_label(m)
            report.record(mention, is_nil)
        else:
            hit = (not is_nil) and bool(ranked) and ranked[0] == m.gold_id
            report.record(m, hit)
            total += 1
            hits1 += int(hit)
            hits5 += int((not is_nil) and m.gold_id in ranked[:5])
    report.accu1 = pct(hits1, total)
    report.accu5 = pct(hits5, total)
    if report.missing_predictions:
        log.warning("accuracy+nil: %d mention(s) missing from predictions",
                    report.missing_predictions)
    return report


def _with_nil_label(m: EventMention):
    from dataclasses import replace

    return replace(m, split_label=SplitLabel.NIL)


# ---------------------------------------------------------------------------
# ablations

ABLATION_VARIANTS = ("full", "no-type", "no-entities")


def ablation_flags(variant: str) -> dict:
    """Representation flags for an ablation variant."""
    if variant == "full":
        return {}
    if variant == "no-type":
        return {"include_entity_types": False}
    if variant == "no-entities":
        return {"include_entities": False}
    raise ValueError(f"unknown ablation variant {variant!r}; expected one of "
                     f"{ABLATION_VARIANTS}")


def run_ablation(run_cfg, variants=ABLATION_VARIANTS) -> dict[str, dict]:
    """Run the full pipeline per variant and collect its reports.

    Each variant retrains with its own representation flags in a sibling
    output directory; the result maps variant name to that run's report
    dict (see ``pipeline.run_pipeline``).
    """
    from dataclasses import replace as cfg_replace
    from pathlib import Path

    from .pipeline import run_pipeline

    results = {}
    for variant in variants:
        flags = ablation_flags(variant)
        cfg = cfg_replace(
            run_cfg,
            out=str(Path(run_cfg.out) / variant.replace("-", "_")),
            include_entities=flags.get("include_entities", True),
            include_entity_types=flags.get("include_entity_types", True),
        )
        results[variant] = run_pipeline(cfg)
    return results


def format_ablation_table(results: dict[str, dict]) -> str:
    rows = [("variant", "recall@1", "recall@K", "accu@1", "accu@5")]
    for variant, reports in results.items():
        recall1 = reports.get("recall@1")
        recall = reports.get("recall")
        acc = reports.get("accuracy")
        rows.append((
            variant,
            f"{recall1['combined']['pct']:.2f}" if recall1 else "-",
            f"{recall['combined']['pct']:.2f}" if recall else "-",
            f"{acc['accu1']:.2f}" if acc else "-",
            f"{acc['accu5']:.2f}" if acc else "-",
        ))
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    return "\n".join("  ".join(col.ljust(widths[i])
                               for i, col in enumerate(row)) for row in rows)
