"""The full extraction model: embedder -> trigger-aware encoder -> syntax Transformer -> decoder."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .data import RoleSchema, SentenceRecord
from .decoder import (ArgumentDecoder, emit_entity_predictions, emit_tagger_predictions,
                      encode_trigger_tags, decode_trigger_tags, entity_loss, tagger_loss,
                      B_TAG, I_TAG, O_TAG)
from .embedder import EmbedderConfig, TokenEmbedder, Vocabulary
from .errors import ConfigError, CorpusError, SpanError
from .syntax import SyntaxConfig, SyntaxTransformer, neighbor_mask, neighbor_sets
from .trigger_encoder import TriggerEncoder, TriggerEncoderConfig

ENTITIES, PLAIN = "entities", "plain"


@dataclass
class ModelConfig:
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
    use_ti: bool = True
    use_tt: bool = True
    use_te: bool = True
    use_dhead: bool = True
    entity_pool: str = "max"
    window: int = 0
    entity_types: tuple | None = None

    def validate(self):
        if self.mode not in (ENTITIES, PLAIN):
            raise ConfigError(f"mode must be {ENTITIES!r} or {PLAIN!r}, got {self.mode!r}")
        if self.window != 0:
            raise ConfigError("only the same-sentence candidate window (window=0) is supported")
        if self.entity_pool not in ("max", "mean"):
            raise ConfigError(f"entity_pool must be max or mean, got {self.entity_pool!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        kw = {k: v for k, v in d.items() if k in names}
        if kw.get("entity_types") is not None:
            kw["entity_types"] = tuple(kw["entity_types"])
        return cls(**kw)


@dataclass
class Instance:
    """One (sentence, trigger) input pair."""

    record: SentenceRecord
    trigger_start: int
    trigger_end: int
    event_type: str
    event: object = None  # gold EventRecord when available
    trigger_source: str = "gold"


def instances_from_gold(records: Sequence[SentenceRecord]) -> list:
    return [Instance(r, ev.trigger_start, ev.trigger_end, ev.event_type, ev)
            for r in records for ev in r.events]


class EAEModel:
    def __init__(self, config: ModelConfig, schema: RoleSchema, vocab: Vocabulary, seed: int = 0):
        config.validate()
        self.config = config
        self.schema = schema
        self.vocab = vocab
        self.seed = seed
        self.store = T.ParameterStore()
        rng = np.random.default_rng(seed)
        c = config
        self.embedder = TokenEmbedder(self.store, EmbedderConfig(
            vocab_size=len(vocab), d_tok=c.d_tok, n_layers=c.emb_layers, n_heads=c.emb_heads,
            d_ff=c.emb_ff, max_position=c.max_position, dropout=c.dropout,
            pad_token_id=vocab.pad_id, unk_token_id=vocab.unk_id, mask_token_id=vocab.mask_id), rng)
        self.trigger_encoder = TriggerEncoder(self.store, TriggerEncoderConfig(
            n_types=len(schema.trigger_types), d_tok=c.d_tok, d_type=c.d_type, d_ind=c.d_ind,
            d_model=c.d_model, use_indicator=c.use_ti, use_type=c.use_tt,
            use_trigger_embedding=c.use_te), rng)
        self.syntax = SyntaxTransformer(self.store, SyntaxConfig(
            d_model=c.d_model, n_layers=c.syn_layers, n_heads=c.syn_heads, d_ff=c.syn_ff,
            dropout=c.dropout, use_dhead=c.use_dhead), rng)
        self.decoder = ArgumentDecoder(self.store, len(schema.roles), c.d_model, c.d_tok,
                                       len(schema.trigger_types), rng, pooling=c.entity_pool)
        self._role_masks = {t: schema.role_mask(t) for t in schema.trigger_types}

    # ------------------------------------------------------------------
    # batching

    def _candidate_ok(self, record):
        allowed = self.config.entity_types
        return [allowed is None or e.entity_type in allowed for e in record.entities]

    def encode_batch(self, instances: Sequence[Instance], with_targets=True) -> dict:
        n = len(instances)
        L = max(len(i.record.tokens) for i in instances)
        if L > self.config.max_position:
            raise CorpusError(f"sentence length {L} exceeds max_position {self.config.max_position}")
        R = len(self.schema.roles)
        ids = np.full((n, L), self.vocab.pad_id, dtype=np.int64)
        key_mask = np.zeros((n, L), dtype=bool)
        trig = np.zeros((n, L), dtype=bool)
        types = np.zeros(n, dtype=np.int64)
        nbr = np.zeros((n, L, L), dtype=bool)
        role_mask = np.zeros((n, R), dtype=bool)
        for b, inst in enumerate(instances):
            rec = inst.record
            m = len(rec.tokens)
            if len(rec.dep_heads) != m:
                raise CorpusError("sentence lacks a dependency parse", doc_id=rec.doc_id, sent_id=rec.sent_id)
            ids[b, :m] = self.vocab.encode(rec.tokens)
            key_mask[b, :m] = True
            trig[b, inst.trigger_start : inst.trigger_end + 1] = True
            types[b] = self.schema.type_index(inst.event_type)
            nbr[b] = neighbor_mask(neighbor_sets(rec.dep_heads), L)
            role_mask[b] = self._role_masks[inst.event_type]
        batch = dict(ids=ids, key_mask=key_mask, seg=trig.astype(np.int64), trigger_mask=trig,
                     type_ids=types, nbr=nbr, role_mask=role_mask, lengths=key_mask.sum(1))
        if self.config.mode == ENTITIES:
            E = max(1, max(len(i.record.entities) for i in instances))
            ent_mask = np.zeros((n, E, L), dtype=bool)
            ent_mask[:, :, 0] = True  # placeholder rows for padding candidates
            valid = np.zeros((n, E), dtype=bool)
            for b, inst in enumerate(instances):
                ok = self._candidate_ok(inst.record)
                for e, ent in enumerate(inst.record.entities):
                    if not 0 <= ent.start <= ent.end < len(inst.record.tokens):
                        raise SpanError(f"entity span ({ent.start}, {ent.end}) outside the sentence",
                                        doc_id=inst.record.doc_id, sent_id=inst.record.sent_id)
                    ent_mask[b, e] = False
                    ent_mask[b, e, ent.start : ent.end + 1] = True
                    valid[b, e] = ok[e]
            batch.update(ent_mask=ent_mask, ent_valid=valid)
            if with_targets:
                tgt = np.zeros((n, E, R))
                for b, inst in enumerate(instances):
                    if inst.event is None:
                        continue
                    spans = {(e.start, e.end): k for k, e in enumerate(inst.record.entities)}
                    for a in inst.event.arguments:
                        k = a.entity_index if a.entity_index is not None else spans.get(a.span)
                        if k is not None:
                            tgt[b, k, self.schema.role_index(a.role)] = 1.0
                batch["targets"] = tgt
                batch["weights"] = (valid[:, :, None] & role_mask[:, None, :]).astype(float)
        elif with_targets:
            tags = np.full((n, L, R), O_TAG, dtype=np.int64)
            for b, inst in enumerate(instances):
                if inst.event is None:
                    continue
                for a in inst.event.arguments:
                    r = self.schema.role_index(a.role)
                    tags[b, a.start, r] = B_TAG
                    tags[b, a.start + 1 : a.end + 1, r] = I_TAG
            batch["tag_targets"] = tags
            batch["weights"] = (key_mask[:, :, None] & role_mask[:, None, :]).astype(float)
        return batch

    def encode_trigger_batch(self, records: Sequence[SentenceRecord], with_targets=True) -> dict:
        n = len(records)
        L = max(len(r.tokens) for r in records)
        ids = np.full((n, L), self.vocab.pad_id, dtype=np.int64)
        key_mask = np.zeros((n, L), dtype=bool)
        tags = np.zeros((n, L), dtype=np.int64)
        for b, rec in enumerate(records):
            m = len(rec.tokens)
            ids[b, :m] = self.vocab.encode(rec.tokens)
            key_mask[b, :m] = True
            if with_targets:
                tags[b, :m] = encode_trigger_tags(m, rec.events, self.schema.trigger_types)
        return dict(ids=ids, key_mask=key_mask, seg=np.zeros((n, L), dtype=np.int64), tags=tags)

    # ------------------------------------------------------------------
    # forward passes

    def encode(self, batch, train=False, rng=None) -> T.Tensor:
        B = self.embedder(batch["ids"], batch["seg"], batch["key_mask"], train, rng)
        enc = self.trigger_encoder.encode(B, batch["trigger_mask"], batch["type_ids"])
        U0 = self.trigger_encoder.project(enc)
        return self.syntax(U0, batch["key_mask"], batch["nbr"], train, rng)

    def main_loss(self, batch, train=False, rng=None) -> T.Tensor:
        U = self.encode(batch, train, rng)
        if self.config.mode == ENTITIES:
            logits = self.decoder.entity_logits(U, batch["ent_mask"])
            return entity_loss(logits, batch["targets"], batch["weights"])
        logits = self.decoder.tag_logits(U)
        return tagger_loss(logits, batch["tag_targets"], batch["weights"])

    def aux_loss(self, batch, train=False, rng=None) -> T.Tensor:
        B = self.embedder(batch["ids"], batch["seg"], batch["key_mask"], train, rng)
        logits = self.decoder.trigger_logits(B)
        return T.cross_entropy(logits, batch["tags"], batch["key_mask"].astype(float))

    # ------------------------------------------------------------------
    # inference

    def predict_arguments(self, instances: Sequence[Instance], threshold=0.5, batch_size=64) -> list:
        """Per instance, the list of RolePrediction in eval mode."""
        out = []
        roles = self.schema.roles
        for i in range(0, len(instances), batch_size):
            chunk = instances[i : i + batch_size]
            batch = self.encode_batch(chunk, with_targets=False)
            U = self.encode(batch)
            if self.config.mode == ENTITIES:
                scores = T._sigmoid(self.decoder.entity_logits(U, batch["ent_mask"]).data)
                for b, inst in enumerate(chunk):
                    out.append(emit_entity_predictions(
                        scores[b], inst.record.entities, roles, batch["role_mask"][b], threshold,
                        candidate_ok=self._candidate_ok(inst.record)))
            else:
                logits = self.decoder.tag_logits(U).data
                z = np.exp(logits - logits.max(-1, keepdims=True))
                probs = z / z.sum(-1, keepdims=True)
                for b, inst in enumerate(chunk):
                    m = len(inst.record.tokens)
                    out.append(emit_tagger_predictions(probs[b, :m], roles, batch["role_mask"][b]))
        return out

    def predict_triggers(self, records: Sequence[SentenceRecord], batch_size=64) -> list:
        """Per record, (start, end, event_type) triples from the auxiliary tagger."""
        out = []
        types = list(self.schema.trigger_types)
        for i in range(0, len(records), batch_size):
            chunk = records[i : i + batch_size]
            batch = self.encode_trigger_batch(chunk, with_targets=False)
            B = self.embedder(batch["ids"], batch["seg"], batch["key_mask"])
            tags = self.decoder.trigger_logits(B).data.argmax(-1)
            for b, rec in enumerate(chunk):
                out.append(decode_trigger_tags(tags[b, : len(rec.tokens)], types))
        return out

    # ------------------------------------------------------------------
    # persistence

    def meta(self) -> dict:
        return {"model_config": asdict(self.config), "schema": self.schema.to_json(), "seed": self.seed}

    def save(self, directory, extra_meta: dict | None = None):
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        self.vocab.save(d / "vocab.txt")
        meta = self.meta()
        meta.update(extra_meta or {})
        T.save_checkpoint(d / "model.ckpt", self.store, meta)

    @classmethod
    def load(cls, directory) -> "EAEModel":
        d = Path(directory)
        _, meta = T.read_checkpoint(d / "model.ckpt")
        config = ModelConfig.from_dict(meta["model_config"])
        schema = RoleSchema.from_json(meta["schema"])
        model = cls(config, schema, Vocabulary.load(d / "vocab.txt"), seed=meta.get("seed", 0))
        T.load_checkpoint(d / "model.ckpt", model.store)
        return model
