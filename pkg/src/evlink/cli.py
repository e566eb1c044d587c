"""Command-line interface for the event-linking pipeline.

Configuration comes from a key=value file (path via --config or the
EVLINK_CONFIG environment variable) with CLI flags overriding individual
keys. Progress is logged to stderr; data goes to files or stdout only.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import click

from . import evaluation, kb as kbmod, pipeline, reranker, retrieval, synth
from .pipeline import RunConfig, StageError, load_config
from .representation import build_mention_repr, build_title_repr

log = logging.getLogger("evlink")

_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def _base_config(config_path: str | None) -> RunConfig:
    path = config_path or os.environ.get("EVLINK_CONFIG")
    return load_config(path) if path else RunConfig()


def _merge(cfg: RunConfig, sets: tuple[str, ...], **overrides) -> RunConfig:
    updates = {k: v for k, v in overrides.items() if v is not None}
    for item in sets:
        key, sep, value = item.partition("=")
        if not sep or key not in _FIELD_TYPES:
            raise click.UsageError(f"bad --set {item!r}; expected key=value "
                                   "with a known config key")
        updates[key] = pipeline._coerce(key, value, _FIELD_TYPES[key])
    return dataclasses.replace(cfg, **updates)


def common_options(fn):
    fn = click.option("--config", "config_path", default=None,
                      help="key=value config file")(fn)
    fn = click.option("--kb", "kb_path", default=None)(fn)
    fn = click.option("--mentions", "mentions_path", default=None)(fn)
    fn = click.option("--out", default=None)(fn)
    fn = click.option("--seed", type=int, default=None)(fn)
    fn = click.option("--k", type=int, default=None)(fn)
    fn = click.option("--nil-threshold", type=float, default=None)(fn)
    fn = click.option("--set", "sets", multiple=True,
                      help="override any config key, e.g. --set epochs=5")(fn)
    return fn


def _cfg_from(config_path, kb_path, mentions_path, out, seed, k,
              nil_threshold, sets) -> RunConfig:
    return _merge(_base_config(config_path), sets, kb=kb_path,
                  mentions=mentions_path, out=out, seed=seed, k=k,
                  nil_threshold=nil_threshold)


def _run_stages(cfg: RunConfig, stages: str) -> None:
    try:
        pipeline.run_pipeline(dataclasses.replace(cfg, stages=stages))
    except StageError as exc:
        raise SystemExit(f"error: {exc}")
    except pipeline.PipelineLockError as exc:
        raise SystemExit(f"error: {exc}")


@click.group()
@click.option("-v", "--verbose", is_flag=True)
def main(verbose):
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s")


# -- kb ---------------------------------------------------------------------

@main.group()
def kb():
    """Knowledge-base utilities."""


@kb.command("validate")
@common_options
def kb_validate(**kw):
    """Schema-check inputs and scan pipeline invariants."""
    cfg = _cfg_from(**kw)
    diags = pipeline.validate(cfg)
    for diag in diags:
        click.echo(diag)
    if diags:
        raise SystemExit(1)
    log.info("validate: clean")


# -- dataset ----------------------------------------------------------------

@main.group()
def dataset():
    """Split construction."""


@dataset.command("build")
@click.option("--gazetteer", default=None)
@common_options
def dataset_build(gazetteer, **kw):
    """Extract (or read) mentions, balance them, and write splits."""
    cfg = _cfg_from(**kw)
    if gazetteer:
        cfg = dataclasses.replace(cfg, gazetteer=gazetteer)
    _run_stages(cfg, "dataset")


# -- training ---------------------------------------------------------------

@main.group()
def train():
    """Model training."""


@train.command("biencoder")
@common_options
def train_biencoder_cmd(**kw):
    _run_stages(_cfg_from(**kw), "biencoder")


@train.command("reranker")
@common_options
def train_reranker_cmd(**kw):
    _run_stages(_cfg_from(**kw), "reranker")


# -- index / linking --------------------------------------------------------

@main.group()
def index():
    """Dense index over title vectors."""


@index.command("build")
@common_options
def index_build(**kw):
    _run_stages(_cfg_from(**kw), "index")


@main.group()
def link():
    """Candidate generation and ranking."""


@link.command("retrieve")
@common_options
def link_retrieve(**kw):
    _run_stages(_cfg_from(**kw), "retrieve")


@link.command("rank")
@click.option("--candidates", "candidates_path", default=None,
              help="candidate record file (default: the retrieve stage "
                   "output for --split)")
@click.option("--split", default="test")
@common_options
def link_rank(candidates_path, split, **kw):
    """Rerank candidates and decide Nil per mention."""
    cfg = _cfg_from(**kw)
    if candidates_path is None and split == "test":
        _run_stages(cfg, "rank")
        return
    kb_obj = kbmod.load_kb(cfg.kb)
    mentions = kbmod.load_mentions(
        Path(cfg.out) / "splits" / f"{split}.jsonl", kb_obj)
    candidates_path = candidates_path or (
        Path(cfg.out) / f"candidates_{split}.jsonl")
    csets = retrieval.load_candidates(candidates_path)
    params = reranker.load_reranker(Path(cfg.out) / "reranker.ckpt")
    predictions = []
    for m in mentions:
        cs = csets.get(m.mention_id)
        if cs is None or not cs.candidates:
            log.warning("rank: mention %d has no candidates", m.mention_id)
            continue
        predictions.append(reranker.rank_and_decide(
            params, m, cs, kb_obj, nil_threshold=cfg.nil_threshold,
            repr_cfg=cfg.repr_cfg()))
    out = Path(cfg.out) / f"predictions_{split}.jsonl"
    reranker.save_predictions(predictions, out)
    log.info("wrote %s (%d predictions)", out, len(predictions))


# -- baselines --------------------------------------------------------------

@main.command("baseline")
@click.argument("system", type=click.Choice(["prior", "bm25", "cosine"]))
@click.option("--split", default="test")
@common_options
def baseline_cmd(system, split, **kw):
    """Run a non-neural baseline over a split."""
    cfg = _cfg_from(**kw)
    try:
        out = pipeline.run_baseline(cfg, system, split)
    except ValueError as exc:
        raise SystemExit(f"error: {exc}")
    log.info("wrote %s", out)


# -- evaluation -------------------------------------------------------------

@main.command("eval")
@click.option("--mode", type=click.Choice(["recall", "accuracy", "nil"]),
              default="accuracy")
@click.option("--at", type=int, default=1, help="accuracy cutoff (1 or 5)")
@click.option("--threshold", type=float, default=0.5, help="nil threshold")
@click.option("--predictions", "predictions_path", default=None,
              help="prediction or candidate record file")
@click.option("--split", default="test")
@click.option("--covered-only", is_flag=True,
              help="restrict gold mentions to those present in predictions "
                   "(prior-baseline style coverage)")
@click.option("--json", "json_out", default=None,
              help="also write the machine-readable report here")
@common_options
def eval_cmd(mode, at, threshold, predictions_path, split, covered_only,
             json_out, **kw):
    """Score predictions against a gold split."""
    cfg = _cfg_from(**kw)
    kb_obj = kbmod.load_kb(cfg.kb)
    mentions = kbmod.load_mentions(
        Path(cfg.out) / "splits" / f"{split}.jsonl", kb_obj)
    if predictions_path is None:
        predictions_path = (Path(cfg.out) / f"candidates_{split}.jsonl"
                            if mode == "recall"
                            else Path(cfg.out) / f"predictions_{split}.jsonl")
    if mode == "recall":
        csets = retrieval.load_candidates(predictions_path)
        preds = {mid: cs.ids() for mid, cs in csets.items()}
    else:
        preds = reranker.load_predictions(predictions_path)
    if covered_only:
        mentions = [m for m in mentions if m.mention_id in preds]
    if mode == "recall":
        k = kw.get("k") or cfg.k or max(retrieval.K_GRID)
        report = evaluation.recall_at_k(preds, mentions, k)
    elif mode == "accuracy":
        report = evaluation.accuracy(preds, mentions, at=at)
    else:
        report = evaluation.accuracy_with_nil(preds, mentions,
                                              threshold=threshold)
    click.echo(report.format_table())
    if json_out:
        Path(json_out).write_text(
            json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8")


# -- ablations ---------------------------------------------------------------

@main.command("ablate")
@click.option("--variants", default="full,no-type,no-entities")
@common_options
def ablate_cmd(variants, **kw):
    """Retrain per representation variant and print the comparison."""
    cfg = _cfg_from(**kw)
    names = [v.strip() for v in variants.split(",") if v.strip()]
    try:
        results = evaluation.run_ablation(cfg, names)
    except StageError as exc:
        raise SystemExit(f"error: {exc}")
    click.echo(evaluation.format_ablation_table(results))


# -- pipeline ----------------------------------------------------------------

@main.group(name="pipeline")
def pipeline_group():
    """Whole-pipeline orchestration."""


@pipeline_group.command("run")
@click.option("--stages", default=None,
              help="comma-separated stage subset (default: all)")
@common_options
def pipeline_run(stages, **kw):
    """Run every stage; completed stages with matching digests are skipped."""
    cfg = _cfg_from(**kw)
    if stages is not None:
        cfg = dataclasses.replace(cfg, stages=stages)
    try:
        summary = pipeline.run_pipeline(cfg)
    except StageError as exc:
        raise SystemExit(f"error: {exc}")
    except pipeline.PipelineLockError as exc:
        raise SystemExit(f"error: {exc}")
    if summary:
        combined = summary.get("accuracy", {}).get("combined", {})
        log.info("done; combined accuracy %.2f over %d mention(s)",
                 combined.get("pct", 0.0), combined.get("count", 0))


# -- debugging ---------------------------------------------------------------

@main.group(name="repr")
def repr_group():
    """Representation inspection."""


@repr_group.command("dump")
@click.option("--mention", "mention_id", type=int, default=None)
@click.option("--title", "title_id", type=int, default=None)
@common_options
def repr_dump(mention_id, title_id, **kw):
    """Print the exact token sequence, one token per line."""
    cfg = _cfg_from(**kw)
    kb_obj = kbmod.load_kb(cfg.kb)
    if (mention_id is None) == (title_id is None):
        raise click.UsageError("pass exactly one of --mention / --title")
    if mention_id is not None:
        if not cfg.mentions:
            raise click.UsageError("--mentions file required")
        mentions = kbmod.load_mentions(cfg.mentions, kb_obj)
        matches = [m for m in mentions if m.mention_id == mention_id]
        if not matches:
            raise SystemExit(f"error: no mention with id {mention_id}")
        seq = build_mention_repr(matches[0], cfg=cfg.repr_cfg())
    else:
        if title_id not in kb_obj:
            raise SystemExit(f"error: no KB entry with id {title_id}")
        seq = build_title_repr(kb_obj[title_id], cfg=cfg.repr_cfg())
    click.echo(seq.dump())


# -- fixtures ----------------------------------------------------------------

@main.command("synth")
@click.option("--kind", type=click.Choice(["corpus", "task"]), default="corpus")
@click.option("--out", required=True)
@click.option("--seed", type=int, default=None)
def synth_cmd(kind, out, seed):
    """Generate a synthetic KB + mention fixture."""
    kb_path, mentions_path = synth.write_fixture(out, kind, seed)
    log.info("wrote %s and %s", kb_path, mentions_path)


if __name__ == "__main__":
    main()
