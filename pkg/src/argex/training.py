"""Supervised training, self-training and end-to-end prediction."""
from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .data import Argument, EventRecord, RoleSchema, SentenceRecord, write_corpus
from .embedder import Vocabulary
from .errors import ConfigError, CorpusError, TrainingError
from .evaluation import ScoreReport, score, trigger_scores
from .model import ENTITIES, EAEModel, Instance, ModelConfig, instances_from_gold

log = logging.getLogger(__name__)

TSV_HEADER = "epoch\tsplit\tAI-P\tAI-R\tAI-F1\tRC-P\tRC-R\tRC-F1\n"


@dataclass
class TrainConfig:
    # optimisation
    batch_size: int = 8
    main_prob: float = 0.9
    aux_prob: float = 0.1
    lr: float = 1e-3
    patience: int = 20
    max_epochs: int = 30
    seed: int = 0
    threshold: float = 0.5
    # model
    mode: str = ENTITIES
    d_tok: int = 64
    emb_layers: int = 2
    emb_heads: int = 2
    emb_ff: int = 128
    max_position: int = 64
    dropout: float = 0.1
    d_type: int = 50
    d_ind: int = 50
    d_model: int = 64
    syn_layers: int = 2
    syn_heads: int = 2
    syn_ff: int = 128
    entity_pool: str = "max"
    window: int = 0
    entity_types: list | None = None
    # ablation switches
    use_ti: bool = True
    use_tt: bool = True
    use_te: bool = True
    use_aux: bool = True
    use_dhead: bool = True
    # self-training
    silver_threshold: float = 0.0
    # pretraining
    pretrain_steps: int = 200
    pretrain_lr: float = 1e-3
    pretrain_batch_size: int = 16
    next_sentence: bool = False

    def validate(self):
        if abs(self.main_prob + self.aux_prob - 1.0) > 1e-9:
            raise ConfigError(f"main_prob + aux_prob must be 1, got {self.main_prob + self.aux_prob}")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigError("batch_size and max_epochs must be positive")
        self.model_config().validate()

    def model_config(self) -> ModelConfig:
        return ModelConfig.from_dict(asdict(self))

    def config_hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        return cls(**d)

    def replace(self, **kw) -> "TrainConfig":
        d = asdict(self)
        d.update(kw)
        return TrainConfig.from_dict(d)


@dataclass
class EpochLog:
    epoch: int
    ai_f1: float
    rc_f1: float
    report: dict


@dataclass
class RunRecord:
    seed: int
    config_hash: str
    epochs: list = field(default_factory=list)
    best_epoch: int = 0
    best_rc_f1: float = -1.0
    wall_time: float = 0.0
    aux_steps: int = 0
    main_steps: int = 0
    stage: str = "train"

    def to_json(self) -> dict:
        return asdict(self)


class TaskScheduler:
    """Draws main vs auxiliary batches with fixed probabilities."""

    def __init__(self, aux_prob: float, rng):
        self.aux_prob = aux_prob
        self.rng = rng

    def draw(self) -> str:
        if self.aux_prob <= 0.0:
            return "main"
        return "aux" if self.rng.random() < self.aux_prob else "main"


def build_vocab(records: Sequence[SentenceRecord]) -> Vocabulary:
    return Vocabulary.build(r.tokens for r in records)


def evaluate(model: EAEModel, records: Sequence[SentenceRecord], threshold=0.5) -> ScoreReport:
    preds = predict(model, records, trigger_source="gold", threshold=threshold)
    return score(preds, records)


def _write_tsv_row(path, epoch, split, report: ScoreReport):
    with open(path, "a") as f:
        f.write(f"{epoch}\t{split}\t" + "\t".join(f"{v:.6f}" for v in report.row()) + "\n")


def train(train_records: Sequence[SentenceRecord], dev_records: Sequence[SentenceRecord],
          config: TrainConfig, schema: RoleSchema, vocab: Vocabulary | None = None,
          model: EAEModel | None = None, out_dir=None, stage: str = "train"):
    """Fit a model; returns (model restored to its best dev epoch, RunRecord)."""
    config.validate()
    instances = instances_from_gold(train_records)
    if not instances:
        raise TrainingError("training split has no events", stage)
    if not dev_records:
        raise TrainingError("dev split is empty", stage)
    t0 = time.time()
    if model is None:
        model = EAEModel(config.model_config(), schema, vocab or build_vocab(train_records), seed=config.seed)
    rng = np.random.default_rng(config.seed + 1)
    store = model.store
    opt = T.Adam(store, lr=config.lr)
    scheduler = TaskScheduler(config.aux_prob if config.use_aux else 0.0, rng)
    aux_records = list(train_records)
    run = RunRecord(seed=config.seed, config_hash=config.config_hash(), stage=stage)
    tsv = None
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        tsv = Path(out_dir) / "metrics.tsv"
        if not tsv.exists():
            tsv.write_text(TSV_HEADER)
    best_state = store.state()
    bs = config.batch_size
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(instances))
        main_batches = [order[i : i + bs] for i in range(0, len(order), bs)]
        aux_order = rng.permutation(len(aux_records))
        aux_ptr = 0
        done = 0
        while done < len(main_batches):
            task = scheduler.draw()
            if task == "aux":
                idx = aux_order[aux_ptr : aux_ptr + bs]
                aux_ptr += bs
                if aux_ptr >= len(aux_order):
                    aux_order = rng.permutation(len(aux_records))
                    aux_ptr = 0
                batch = model.encode_trigger_batch([aux_records[i] for i in idx])
                loss = model.aux_loss(batch, train=True, rng=rng)
                run.aux_steps += 1
            else:
                batch = model.encode_batch([instances[i] for i in main_batches[done]])
                loss = model.main_loss(batch, train=True, rng=rng)
                done += 1
                run.main_steps += 1
            store.zero_grad()
            T.backward(loss)
            opt.step()
        report = evaluate(model, dev_records, config.threshold)
        run.epochs.append(EpochLog(epoch, report.ai_f1, report.rc_f1, report.to_json()))
        if tsv is not None:
            _write_tsv_row(tsv, epoch, f"{stage}-dev", report)
        log.info("[%s] epoch %d dev AI-F1 %.4f RC-F1 %.4f", stage, epoch, report.ai_f1, report.rc_f1)
        if report.rc_f1 > run.best_rc_f1:
            run.best_rc_f1 = report.rc_f1
            run.best_epoch = epoch
            best_state = store.state()
        elif epoch - run.best_epoch >= config.patience:
            break
    store.load_state(best_state)
    run.wall_time = time.time() - t0
    if out_dir is not None:
        model.save(Path(out_dir) / "model", {"train_config": asdict(config)})
    return model, run


# ---------------------------------------------------------------------------
# prediction


def _instances_for(model: EAEModel, records, trigger_source, triggers=None):
    instances = []
    for k, rec in enumerate(records):
        if trigger_source == "gold":
            for ev in rec.events:
                instances.append(Instance(rec, ev.trigger_start, ev.trigger_end, ev.event_type, ev, "gold"))
        else:
            for s, e, t in triggers[k]:
                instances.append(Instance(rec, s, e, t, None, "predicted"))
    return instances


def predict(model: EAEModel, records: Sequence[SentenceRecord], trigger_source: str = "gold",
            threshold: float = 0.5) -> list:
    """Prediction lines, one per (sentence, trigger) pair, in corpus order."""
    if trigger_source not in ("gold", "tagger"):
        raise ConfigError(f"trigger source must be gold or tagger, got {trigger_source!r}")
    for rec in records:
        if len(rec.dep_heads) != len(rec.tokens):
            raise CorpusError("sentence lacks a dependency parse", doc_id=rec.doc_id, sent_id=rec.sent_id)
    triggers = model.predict_triggers(records) if trigger_source == "tagger" and records else None
    instances = _instances_for(model, records, trigger_source, triggers)
    if not instances:
        return []
    preds = model.predict_arguments(instances, threshold=threshold)
    lines = []
    for inst, args in zip(instances, preds):
        lines.append({
            "doc_id": inst.record.doc_id,
            "sent_id": inst.record.sent_id,
            "trigger": {"start": inst.trigger_start, "end": inst.trigger_end,
                        "type": inst.event_type, "source": inst.trigger_source},
            "arguments": [{"start": a.start, "end": a.end, "role": a.role, "score": round(a.score, 6)}
                          for a in args],
        })
    return lines


# ---------------------------------------------------------------------------
# self-training


def _thread_count():
    try:
        return max(1, int(os.environ.get("ARGEX_THREADS", "1")))
    except ValueError:
        return 1


def silver_label(model: EAEModel, pool: Sequence[SentenceRecord], threshold: float = 0.0,
                 decision_threshold: float = 0.5) -> list:
    """Tag the pool with predicted triggers and arguments.

    Arguments scoring below ``threshold`` are dropped (0 keeps everything).
    Work is sharded over ARGEX_THREADS threads; shards merge in order.
    """
    n = len(pool)
    n_threads = min(_thread_count(), max(1, n))
    shards = [list(pool[k * n // n_threads : (k + 1) * n // n_threads]) for k in range(n_threads)]

    def run(shard):
        return predict(model, shard, trigger_source="tagger", threshold=decision_threshold) if shard else []

    if n_threads == 1:
        results = [run(s) for s in shards]
    else:
        with ThreadPoolExecutor(n_threads) as ex:
            results = list(ex.map(run, shards))
    by_key = {}
    for lines in results:
        for line in lines:
            by_key.setdefault((line["doc_id"], line["sent_id"]), []).append(line)
    silver = []
    for rec in pool:
        events = []
        for line in by_key.get(rec.key, []):
            t = line["trigger"]
            spans = {(e.start, e.end): k for k, e in enumerate(rec.entities)}
            args = tuple(Argument(a["start"], a["end"], a["role"], spans.get((a["start"], a["end"])))
                         for a in line["arguments"] if a["score"] >= threshold)
            events.append(EventRecord(t["start"], t["end"], t["type"], args))
        silver.append(SentenceRecord(rec.doc_id, rec.sent_id, rec.tokens, rec.dep_heads, rec.dep_labels,
                                     rec.entities, tuple(events), "silver"))
    return silver


@dataclass
class SelfTrainRecord:
    """Per-stage log: RunRecords for the three training stages, counts for silver labeling."""

    stages: dict = field(default_factory=dict)

    def to_json(self):
        return {k: (v.to_json() if hasattr(v, "to_json") else v) for k, v in self.stages.items()}


def self_train(gold_train: Sequence[SentenceRecord], dev: Sequence[SentenceRecord],
               pool: Sequence[SentenceRecord], config: TrainConfig, schema: RoleSchema,
               vocab: Vocabulary | None = None, out_dir=None, init_state: dict | None = None):
    """Gold model -> silver pool -> fresh model on silver -> fine-tune on gold."""
    if not pool:
        raise TrainingError("unlabeled pool is empty", "silver-label")
    vocab = vocab or build_vocab(list(gold_train) + list(pool))
    rec = SelfTrainRecord()
    out = Path(out_dir) if out_dir is not None else None

    def stage_dir(name):
        return out / name if out is not None else None

    def fresh_model(seed):
        m = EAEModel(config.model_config(), schema, vocab, seed=seed)
        if init_state:
            m.store.load_state({**m.store.state(), **init_state})
        return m

    with _stage("gold"):
        gold_model, run1 = train(gold_train, dev, config, schema, model=fresh_model(config.seed),
                                 out_dir=stage_dir("1-gold"), stage="gold")
    rec.stages["gold"] = run1

    with _stage("silver-label"):
        silver = silver_label(gold_model, pool, threshold=config.silver_threshold,
                              decision_threshold=config.threshold)
    n_events = sum(len(r.events) for r in silver)
    rec.stages["silver-label"] = {
        "n_sentences": len(silver), "n_events": n_events,
        "n_arguments": sum(len(e.arguments) for r in silver for e in r.events),
    }
    if out is not None:
        write_corpus(out / "silver.jsonl", silver, schema)
    if n_events == 0:
        raise TrainingError("silver labeling produced no events", "silver-label")

    with _stage("silver-train"):
        silver_model, run3 = train(silver, dev, config, schema, model=fresh_model(config.seed + 1000),
                                   out_dir=stage_dir("3-silver"), stage="silver-train")
    rec.stages["silver-train"] = run3

    with _stage("finetune"):
        final, run4 = train(gold_train, dev, config, schema, model=silver_model,
                            out_dir=stage_dir("4-finetune"), stage="finetune")
    rec.stages["finetune"] = run4
    return final, rec


class _stage:
    """Re-raise any failure inside a self-training stage as TrainingError(stage=...)."""

    def __init__(self, name):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is None or (isinstance(exc, TrainingError) and exc.stage is not None):
            return False
        raise TrainingError(str(exc), self.name) from exc
