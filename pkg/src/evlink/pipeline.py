"""Staged, resumable pipeline: ingest -> split -> train -> index -> retrieve
-> rerank -> evaluate.

Every stage writes its artifacts under the output directory and records
input/output digests in ``manifest.json``; rerunning a stage whose inputs,
parameters and outputs all match the recorded digests is a no-op. A lock
file serializes pipelines per output directory. Progress goes to standard
error; artifacts only to files.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import baselines, dataset, encoder, evaluation, kb as kbmod, reranker, retrieval
from .representation import ReprConfig, build_mention_repr

log = logging.getLogger(__name__)

STAGES = ("dataset", "biencoder", "index", "retrieve", "reranker", "rank", "eval")


class StageError(Exception):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


class PipelineLockError(Exception):
    pass


@dataclass
class RunConfig:
    """Every stage parameter in one place; file keys and CLI flags match
    these field names one to one."""

    kb: str = ""
    mentions: str = ""          # optional: extracted from anchors if empty
    gazetteer: str = ""         # optional entity gazetteer for extraction
    vectors: str = ""           # optional static word-vector file
    out: str = "run"
    seed: int = 0
    event_tag: str = "Event"
    jaccard_threshold: float = 0.1
    unseen_max_verb_mentions: int = 5
    min_prior_count: int = 10
    window_chars: int = 500
    max_anchors: int = 10
    description_chars: int = 2000
    max_len: int = 256
    include_entities: bool = True
    include_entity_types: bool = True
    vocab_size: int = 65536
    dim: int = 64
    batch_size: int = 32
    epochs: int = 10
    learning_rate: float = 0.05
    init_scale: float = 0.01
    candidates_per_mention: int = 30
    k: int = 0                  # 0 = tune on dev over the standard grid
    nil_threshold: float = 0.5
    stages: str = ""            # comma list; empty = all

    def repr_cfg(self) -> ReprConfig:
        return ReprConfig(
            window_chars=self.window_chars,
            max_anchors=self.max_anchors,
            description_chars=self.description_chars,
            max_len=self.max_len,
            include_entities=self.include_entities,
            include_entity_types=self.include_entity_types,
        )

    def train_cfg(self) -> encoder.TrainConfig:
        return encoder.TrainConfig(
            batch_size=self.batch_size, epochs=self.epochs,
            learning_rate=self.learning_rate, seed=self.seed,
            init_scale=self.init_scale)

    def rerank_cfg(self) -> reranker.RerankTrainConfig:
        return reranker.RerankTrainConfig(
            candidates_per_mention=self.candidates_per_mention,
            epochs=self.epochs, learning_rate=self.learning_rate,
            seed=self.seed, init_scale=self.init_scale)

    def split_cfg(self) -> dataset.SplitConfig:
        return dataset.SplitConfig(
            seed=self.seed, jaccard_threshold=self.jaccard_threshold,
            unseen_max_verb_mentions=self.unseen_max_verb_mentions,
            event_tag=self.event_tag, min_prior_count=self.min_prior_count)


_BOOL_WORDS = {"true": True, "false": False, "yes": True, "no": False,
               "1": True, "0": False}


def load_config(path) -> RunConfig:
    """Parse a plain key=value config file ('#' starts a comment)."""
    values: dict = {}
    fields = {f.name: f.type for f in dataclasses.fields(RunConfig)}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if not sep or key not in fields:
                raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
            values[key] = _coerce(key, value, fields[key])
    return RunConfig(**values)


def _coerce(key: str, value: str, ftype: str):
    if ftype == "int":
        return int(value)
    if ftype == "float":
        return float(value)
    if ftype == "bool":
        try:
            return _BOOL_WORDS[value.lower()]
        except KeyError:
            raise ValueError(f"config key {key}: expected a boolean, got {value!r}")
    return value


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _config_digest(cfg: RunConfig) -> str:
    payload = dataclasses.asdict(cfg)
    payload.pop("out", None)
    payload.pop("stages", None)
    return hashlib.sha256(
        json.dumps(payload, sort_keys=True).encode()).hexdigest()


class _Manifest:
    def __init__(self, path: Path):
        self.path = path
        self.data = {}
        if path.exists():
            self.data = json.loads(path.read_text(encoding="utf-8"))

    def fresh(self, stage: str, inputs: list[Path], params: str) -> bool:
        entry = self.data.get(stage)
        if not entry or entry.get("params") != params:
            return False
        recorded = entry.get("inputs", {})
        if set(recorded) != {str(p) for p in inputs}:
            return False
        for p in inputs:
            if not p.exists() or _sha256(p) != recorded[str(p)]:
                return False
        for out_path, digest in entry.get("outputs", {}).items():
            p = Path(out_path)
            if not p.exists() or _sha256(p) != digest:
                return False
        return True

    def record(self, stage: str, inputs: list[Path], outputs: list[Path],
               params: str) -> None:
        self.data[stage] = {
            "params": params,
            "inputs": {str(p): _sha256(p) for p in inputs},
            "outputs": {str(p): _sha256(p) for p in outputs},
        }
        self.path.write_text(json.dumps(self.data, indent=2, sort_keys=True)
                             + "\n", encoding="utf-8")


class _Lock:
    def __init__(self, out_dir: Path):
        self.path = out_dir / ".evlink.lock"

    def __enter__(self):
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise PipelineLockError(
                f"{self.path} exists; another pipeline may be running on "
                "this output directory (remove the lock file if not)")
        with os.fdopen(fd, "w") as fh:
            fh.write(str(os.getpid()))
        return self

    def __exit__(self, *exc):
        self.path.unlink(missing_ok=True)


# ---------------------------------------------------------------------------
# stage implementations

def _splits_dir(cfg) -> Path:
    return Path(cfg.out) / "splits"


def _load_splits(cfg, kb):
    d = _splits_dir(cfg)
    return {name: kbmod.load_mentions(d / f"{name}.jsonl", kb)
            for name in ("train", "dev", "test")}


def _stage_dataset(cfg: RunConfig, kb) -> list[Path]:
    if cfg.mentions:
        mentions = kbmod.load_mentions(cfg.mentions, kb)
    else:
        mentions = dataset.extract_event_links(kb, cfg.event_tag)
        if cfg.gazetteer:
            gaz = dataset.load_gazetteer(cfg.gazetteer)
            mentions = dataset.annotate_entities(mentions, gaz)
    balanced = dataset.balance_pos(mentions, cfg.seed)
    train, dev, test, stats = dataset.build_splits(balanced, kb, cfg.split_cfg())
    dataset.write_splits(train, dev, test, stats, _splits_dir(cfg))
    d = _splits_dir(cfg)
    return [d / "train.jsonl", d / "dev.jsonl", d / "test.jsonl",
            d / "stats.json", d / "stats.txt"]


def _stage_biencoder(cfg: RunConfig, kb) -> list[Path]:
    train = kbmod.load_mentions(_splits_dir(cfg) / "train.jsonl", kb)
    params = encoder.train_biencoder(
        train, kb, cfg.train_cfg(), repr_cfg=cfg.repr_cfg(),
        vocab_size=cfg.vocab_size, dim=cfg.dim)
    out = Path(cfg.out) / "biencoder.ckpt"
    encoder.save_biencoder(out, params)
    return [out]


def _stage_index(cfg: RunConfig, kb) -> list[Path]:
    ckpt = Path(cfg.out) / "biencoder.ckpt"
    params = encoder.load_biencoder(ckpt)
    provider = encoder.EncoderVectors(params.title, kb, cfg.repr_cfg(),
                                      source=_sha256(ckpt)[:16])
    index = retrieval.build_index(kb, provider)
    out = Path(cfg.out) / "index.vec"
    retrieval.save_index(index, out)
    return [out, out.with_suffix(out.suffix + ".manifest.json")]


def _retrieval_k(cfg: RunConfig) -> int:
    return cfg.k if cfg.k else max(retrieval.K_GRID)


def _stage_retrieve(cfg: RunConfig, kb) -> list[Path]:
    params = encoder.load_biencoder(Path(cfg.out) / "biencoder.ckpt")
    index = retrieval.load_index(Path(cfg.out) / "index.vec")
    splits = _load_splits(cfg, kb)
    repr_cfg = cfg.repr_cfg()
    outputs = []
    for name, mentions in splits.items():
        k = cfg.candidates_per_mention if name == "train" else _retrieval_k(cfg)
        if mentions:
            queries = np.stack([
                encoder.encode(params.mention, build_mention_repr(m, cfg=repr_cfg))
                for m in mentions
            ])
            sets = retrieval.retrieve_batch(
                index, queries, k, [m.mention_id for m in mentions])
        else:
            sets = []
        out = Path(cfg.out) / f"candidates_{name}.jsonl"
        retrieval.save_candidates(sets, out)
        outputs.append(out)

    if cfg.k:
        chosen = cfg.k
    else:
        dev_sets = retrieval.load_candidates(Path(cfg.out) / "candidates_dev.jsonl")
        chosen = retrieval.select_k(
            {mid: cs.ids() for mid, cs in dev_sets.items()}, splits["dev"])
    k_path = Path(cfg.out) / "k_selected.json"
    k_path.write_text(json.dumps({"k": chosen}) + "\n", encoding="utf-8")
    outputs.append(k_path)
    return outputs


def _stage_reranker(cfg: RunConfig, kb) -> list[Path]:
    train = kbmod.load_mentions(_splits_dir(cfg) / "train.jsonl", kb)
    csets = retrieval.load_candidates(Path(cfg.out) / "candidates_train.jsonl")
    params = reranker.train_reranker(
        train, csets, kb, cfg.rerank_cfg(), repr_cfg=cfg.repr_cfg(),
        vocab_size=cfg.vocab_size, dim=cfg.dim)
    out = Path(cfg.out) / "reranker.ckpt"
    reranker.save_reranker(out, params)
    return [out]


def _stage_rank(cfg: RunConfig, kb) -> list[Path]:
    params = reranker.load_reranker(Path(cfg.out) / "reranker.ckpt")
    test = kbmod.load_mentions(_splits_dir(cfg) / "test.jsonl", kb)
    csets = retrieval.load_candidates(Path(cfg.out) / "candidates_test.jsonl")
    k = json.loads((Path(cfg.out) / "k_selected.json").read_text())["k"]
    predictions = []
    for m in test:
        cs = csets.get(m.mention_id)
        if cs is None or not cs.candidates:
            log.warning("rank: mention %d has no candidates", m.mention_id)
            continue
        cut = retrieval.CandidateSet(cs.mention_id, cs.candidates[:k], k)
        predictions.append(reranker.rank_and_decide(
            params, m, cut, kb, nil_threshold=cfg.nil_threshold,
            repr_cfg=cfg.repr_cfg()))
    out = Path(cfg.out) / "predictions_test.jsonl"
    reranker.save_predictions(predictions, out)
    return [out]


def _stage_eval(cfg: RunConfig, kb) -> list[Path]:
    test = kbmod.load_mentions(_splits_dir(cfg) / "test.jsonl", kb)
    csets = retrieval.load_candidates(Path(cfg.out) / "candidates_test.jsonl")
    ranked = {mid: cs.ids() for mid, cs in csets.items()}
    k = json.loads((Path(cfg.out) / "k_selected.json").read_text())["k"]
    predictions = reranker.load_predictions(Path(cfg.out) / "predictions_test.jsonl")

    reports = {
        "recall": evaluation.recall_at_k(ranked, test, k),
        "recall@1": evaluation.recall_at_k(ranked, test, 1),
        "accuracy": evaluation.accuracy(predictions, test, at=1),
        "nil": evaluation.accuracy_with_nil(predictions, test,
                                            threshold=cfg.nil_threshold),
    }
    outputs = []
    summary = {}
    for name, report in reports.items():
        base = Path(cfg.out) / f"report_{name.replace('@', '_at_')}"
        base.with_suffix(".json").write_text(
            json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8")
        base.with_suffix(".txt").write_text(report.format_table() + "\n",
                                            encoding="utf-8")
        outputs += [base.with_suffix(".json"), base.with_suffix(".txt")]
        summary[name] = report.to_dict()
    summary_path = Path(cfg.out) / "summary.json"
    summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n",
                            encoding="utf-8")
    outputs.append(summary_path)
    return outputs


def _stage_inputs(cfg: RunConfig, stage: str) -> list[Path]:
    out = Path(cfg.out)
    d = _splits_dir(cfg)
    splits = [d / "train.jsonl", d / "dev.jsonl", d / "test.jsonl"]
    table = {
        "dataset": [Path(cfg.kb)] + ([Path(cfg.mentions)] if cfg.mentions else [])
                   + ([Path(cfg.gazetteer)] if cfg.gazetteer else []),
        "biencoder": [Path(cfg.kb), d / "train.jsonl"],
        "index": [Path(cfg.kb), out / "biencoder.ckpt"],
        "retrieve": [Path(cfg.kb), out / "biencoder.ckpt", out / "index.vec",
                     *splits],
        "reranker": [Path(cfg.kb), d / "train.jsonl",
                     out / "candidates_train.jsonl"],
        "rank": [Path(cfg.kb), d / "test.jsonl", out / "reranker.ckpt",
                 out / "candidates_test.jsonl", out / "k_selected.json"],
        "eval": [d / "test.jsonl", out / "candidates_test.jsonl",
                 out / "k_selected.json", out / "predictions_test.jsonl"],
    }
    return table[stage]


_STAGE_FUNCS = {
    "dataset": _stage_dataset,
    "biencoder": _stage_biencoder,
    "index": _stage_index,
    "retrieve": _stage_retrieve,
    "reranker": _stage_reranker,
    "rank": _stage_rank,
    "eval": _stage_eval,
}


def run_pipeline(cfg: RunConfig) -> dict:
    """Run the selected stages; returns the eval summary (empty when the
    eval stage did not run)."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    selected = ([s.strip() for s in cfg.stages.split(",") if s.strip()]
                if cfg.stages else list(STAGES))
    for stage in selected:
        if stage not in STAGES:
            raise ValueError(f"unknown stage {stage!r}; expected {STAGES}")

    with _Lock(out):
        manifest = _Manifest(out / "manifest.json")
        params = _config_digest(cfg)
        kb = kbmod.load_kb(cfg.kb)
        for stage in STAGES:
            if stage not in selected:
                continue
            inputs = _stage_inputs(cfg, stage)
            missing = [p for p in inputs if not p.exists()]
            if missing:
                raise StageError(stage, FileNotFoundError(
                    f"missing input(s): {', '.join(map(str, missing))}"))
            if manifest.fresh(stage, inputs, params):
                log.info("stage %s: up to date, skipping", stage)
                continue
            log.info("stage %s: running", stage)
            try:
                outputs = _STAGE_FUNCS[stage](cfg, kb)
            except Exception as exc:
                raise StageError(stage, exc)
            manifest.record(stage, inputs, outputs, params)

    summary_path = out / "summary.json"
    if summary_path.exists():
        return json.loads(summary_path.read_text(encoding="utf-8"))
    return {}


# ---------------------------------------------------------------------------
# validation

def validate(cfg: RunConfig) -> list[str]:
    """Schema-check input files and scan pipeline invariants.

    Returns human-readable diagnostics; an empty list means clean. Never
    raises on malformed input.
    """
    diags: list[str] = []
    kb = None
    try:
        kb = kbmod.load_kb(cfg.kb)
    except Exception as exc:
        diags.append(f"kb: {exc}")

    if cfg.mentions:
        try:
            mentions = kbmod.load_mentions(cfg.mentions, kb)
            for m in mentions:
                if m.surface != m.doc_text[m.span[0]:m.span[1]]:
                    diags.append(f"mention {m.mention_id}: surface mismatch")
        except Exception as exc:
            diags.append(f"mentions: {exc}")

    d = _splits_dir(cfg)
    if kb is not None and d.exists():
        try:
            splits = _load_splits(cfg, kb)
        except Exception as exc:
            diags.append(f"splits: {exc}")
        else:
            seen: dict[int, str] = {}
            for name, split in splits.items():
                for m in split:
                    if m.mention_id in seen:
                        diags.append(
                            f"mention {m.mention_id} appears in both "
                            f"{seen[m.mention_id]} and {name}")
                    seen[m.mention_id] = name
            train_titles = {m.gold_id for m in splits["train"]
                            if m.gold_id is not None}
            for name in ("dev", "test"):
                for m in splits[name]:
                    if (m.split_label is kbmod.SplitLabel.UNSEEN_EVENT
                            and m.gold_id in train_titles):
                        diags.append(
                            f"{name} mention {m.mention_id}: unseen-event "
                            f"title {m.gold_id} has training mentions")
    return diags


# ---------------------------------------------------------------------------
# baseline runners (same prediction-record format as the reranker)

def run_baseline(cfg: RunConfig, system: str, split: str = "test") -> Path:
    """Run a non-neural baseline over a split; writes prediction records.

    The prior builds its table from the train split only and skips
    uncovered mentions (coverage reported alongside).
    """
    kb = kbmod.load_kb(cfg.kb)
    splits = _load_splits(cfg, kb)
    mentions = splits[split]
    k = cfg.k if cfg.k else max(retrieval.K_GRID)
    predictions = []
    covered = 0
    if system == "prior":
        table = baselines.build_prior(splits["train"], cfg.min_prior_count)
        for m in mentions:
            ranked = baselines.prior_ranked(table, m)
            if ranked is None:
                continue
            covered += 1
            cs = retrieval.CandidateSet(
                m.mention_id,
                tuple((tid, float(n)) for tid, n in ranked[:k]), k)
            predictions.append(
                baselines.candidate_set_to_prediction(cs, cfg.nil_threshold))
        coverage = {"covered": covered, "total": len(mentions),
                    "pct": evaluation.pct(covered, len(mentions))}
        (Path(cfg.out) / f"prior_coverage_{split}.json").write_text(
            json.dumps(coverage, sort_keys=True) + "\n", encoding="utf-8")
        log.info("prior covers %d/%d mentions", covered, len(mentions))
    elif system == "bm25":
        index = baselines.Bm25Index(kb, baselines.Bm25Params(),
                                    repr_cfg=cfg.repr_cfg())
        for m in mentions:
            cs = baselines.bm25_retrieve(index, m, k, repr_cfg=cfg.repr_cfg())
            predictions.append(
                baselines.candidate_set_to_prediction(cs, cfg.nil_threshold))
    elif system == "cosine":
        if not cfg.vectors:
            raise ValueError("cosine baseline needs a word-vector file "
                             "(config key 'vectors')")
        vectors = baselines.StaticVectors.load(cfg.vectors)
        for m in mentions:
            cs = baselines.vector_cosine_predict(vectors, m, kb, k)
            predictions.append(
                baselines.candidate_set_to_prediction(cs, cfg.nil_threshold))
    else:
        raise ValueError(f"unknown baseline {system!r}")
    out = Path(cfg.out) / f"baseline_{system}_{split}.jsonl"
    out.parent.mkdir(parents=True, exist_ok=True)
    reranker.save_predictions(predictions, out)
    return out
