"""Deterministic synthetic corpus standing in for annotated and unlabeled news text.

Sentences are generated as dependency trees and linearized projectively.  An
argument is an entity phrase attached to the trigger either directly (with a
case-marking cue word as its child) or through a cue word that heads it.  The
role it plays is a fixed function of (cue word, attachment kind, event type),
so :meth:`SyntheticCorpus.rule_roles` recovers every gold role exactly.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import Argument, EntitySpan, EventRecord, RoleSchema, SentenceRecord
from .errors import ConfigError

EVENT_TYPE_NAMES = ["Attack", "Injure", "Transport", "Meet", "Transfer", "Die", "Elect", "Arrest"]
ROLE_NAMES = ["Attacker", "Target", "Victim", "Agent", "Place", "Time", "Instrument", "Origin",
              "Destination", "Giver", "Recipient", "Person"]
TRIGGER_WORDS = {
    "Attack": ["attacked", "bombed", "struck"],
    "Injure": ["injured", "wounded", "hurt"],
    "Transport": ["traveled", "shipped", "drove"],
    "Meet": ["met", "gathered", "convened"],
    "Transfer": ["paid", "donated", "lent"],
    "Die": ["died", "perished", "drowned"],
    "Elect": ["elected", "voted", "appointed"],
    "Arrest": ["arrested", "detained", "jailed"],
}
AMBIGUOUS_TRIGGERS = ["hit", "took", "handled"]
PARTICLES = ["off", "out", "up"]
SINGLE_CUES = ["by", "at", "with", "from", "to", "for", "on", "against"]
DOUBLE_CUES = ["as", "via"]
DETERMINERS = ["the", "a", "two", "some"]
ADJECTIVES = ["local", "armed", "former", "senior"]
NOUNS = {
    "PER": ["soldiers", "bomber", "officials", "man", "police", "troops"],
    "ORG": ["army", "company", "ministry", "group"],
    "LOC": ["city", "border", "village", "capital"],
    "WEA": ["rifle", "bomb", "truck"],
    "TIME": ["yesterday", "monday", "morning"],
}
DIRECT, VIA = "direct", "via"


@dataclass(frozen=True)
class GenConfig:
    n_sentences: int = 800
    n_unlabeled: int = 200
    vocab_size: int = 160
    n_event_types: int = 5
    n_roles: int = 8
    roles_per_type: int = 4
    n_single_cues: int = 6
    min_len: int = 6
    max_len: int = 48
    overlap_rate: float = 0.10
    long_range_rate: float = 0.2
    long_range_k: int = 8
    ambiguous_trigger_rate: float = 0.3
    two_event_rate: float = 0.35
    no_event_rate: float = 0.1
    distractor_rate: float = 0.5
    multiword_trigger_rate: float = 0.15
    max_args: int = 3
    sentences_per_doc: int = 5
    schema_seed: int = 0

    def validate(self):
        if not 1 <= self.n_event_types <= len(EVENT_TYPE_NAMES):
            raise ConfigError(f"n_event_types must be in [1, {len(EVENT_TYPE_NAMES)}]")
        if not 1 <= self.n_roles <= len(ROLE_NAMES):
            raise ConfigError(f"n_roles must be in [1, {len(ROLE_NAMES)}]")
        if not 1 <= self.roles_per_type <= self.n_roles:
            raise ConfigError("roles_per_type must be in [1, n_roles]")
        if self.overlap_rate > 0 and self.roles_per_type < 2:
            raise ConfigError("infeasible config: role overlap needs at least 2 permissible roles per type")
        if not 1 <= self.n_single_cues <= len(SINGLE_CUES):
            raise ConfigError(f"n_single_cues must be in [1, {len(SINGLE_CUES)}]")
        for name in ("overlap_rate", "long_range_rate", "ambiguous_trigger_rate", "two_event_rate",
                     "no_event_rate", "distractor_rate", "multiword_trigger_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must be a probability, got {v}")
        if self.two_event_rate + self.no_event_rate > 1.0:
            raise ConfigError("two_event_rate + no_event_rate exceeds 1")
        if self.min_len < 1 or self.max_len < self.min_len:
            raise ConfigError("invalid sentence length range")
        if self.n_sentences < 1:
            raise ConfigError("n_sentences must be positive")


# Preset where half of all arguments sit beyond a filler block of length > k.
LONG_RANGE = GenConfig(long_range_rate=0.5)


@dataclass
class _Node:
    word: str
    label: str
    left: list = field(default_factory=list)
    right: list = field(default_factory=list)
    tag: object = None


@dataclass
class SyntheticCorpus:
    gold: list
    pool: list
    schema: RoleSchema
    cues: dict  # (cue, kind, event_type) -> tuple of roles
    config: GenConfig

    def rule_roles(self, record: SentenceRecord, event: EventRecord) -> list:
        """Hand-written oracle: (span, role) pairs read off parse, cue and type."""
        heads = record.dep_heads
        tokens = record.tokens
        trig = _span_head(heads, event.trigger_start, event.trigger_end)
        out = []
        for ent in record.entities:
            h = _span_head(heads, ent.start, ent.end)
            parent = heads[h]
            if parent == trig:
                kind = DIRECT
                cue = next((tokens[c] for c in range(len(tokens))
                            if heads[c] == h and (tokens[c], DIRECT, event.event_type) in self.cues), None)
            elif parent >= 0 and heads[parent] == trig and (tokens[parent], VIA, event.event_type) in self.cues:
                kind = VIA
                cue = tokens[parent]
            else:
                continue
            if cue is None:
                continue
            for role in self.cues[(cue, kind, event.event_type)]:
                out.append(((ent.start, ent.end), role))
        return out


def _span_head(heads, start, end):
    for i in range(start, end + 1):
        if not start <= heads[i] <= end:
            return i
    raise ValueError(f"span ({start}, {end}) has no head token")


def build_lexicon(config: GenConfig):
    """Schema plus the (cue, kind, type) -> roles table, from ``schema_seed`` only."""
    rng = np.random.default_rng(config.schema_seed)
    types = EVENT_TYPE_NAMES[: config.n_event_types]
    roles = ROLE_NAMES[: config.n_roles]
    permissible = {}
    for t in types:
        pick = sorted(rng.choice(config.n_roles, size=config.roles_per_type, replace=False))
        permissible[t] = [roles[i] for i in pick]
    schema = RoleSchema(types, roles, permissible)
    cues = {}
    for t in types:
        allowed = permissible[t]
        for kind in (DIRECT, VIA):
            for cue in SINGLE_CUES[: config.n_single_cues]:
                cues[(cue, kind, t)] = (allowed[int(rng.integers(len(allowed)))],)
            if config.roles_per_type >= 2:
                for cue in DOUBLE_CUES:
                    pair = rng.choice(len(allowed), size=2, replace=False)
                    cues[(cue, kind, t)] = tuple(allowed[i] for i in sorted(pair))
    return schema, cues


def filler_words(config: GenConfig) -> list:
    fixed = sum(len(TRIGGER_WORDS[t]) for t in EVENT_TYPE_NAMES[: config.n_event_types])
    fixed += len(AMBIGUOUS_TRIGGERS) + len(PARTICLES) + config.n_single_cues + len(DOUBLE_CUES)
    fixed += len(DETERMINERS) + len(ADJECTIVES) + sum(len(v) for v in NOUNS.values())
    return [f"w{i}" for i in range(max(10, config.vocab_size - fixed))]


class _Builder:
    def __init__(self, config: GenConfig, schema: RoleSchema, cues: dict, rng):
        self.cfg = config
        self.schema = schema
        self.cues = cues
        self.rng = rng
        self.fillers = filler_words(config)
        self.single = SINGLE_CUES[: config.n_single_cues]

    def choice(self, seq):
        return seq[int(self.rng.integers(len(seq)))]

    def filler(self, label="dep"):
        return _Node(self.choice(self.fillers), label)

    def entity_phrase(self, case_cue=None):
        etype = self.choice(sorted(NOUNS))
        noun = _Node(self.choice(NOUNS[etype]), "obj")
        mods = []
        if self.rng.random() < 0.6:
            mods.append(_Node(self.choice(DETERMINERS), "det"))
        if self.rng.random() < 0.3:
            mods.append(_Node(self.choice(ADJECTIVES), "amod"))
        noun.left = ([_Node(case_cue, "case")] if case_cue else []) + mods
        noun.tag = ("entity", etype)
        return noun

    def long_filler(self):
        k = self.cfg.long_range_k
        head = self.filler("advcl")
        head.right = [self.filler() for _ in range(k + int(self.rng.integers(0, 3)))]
        return head

    def argument(self, event_type):
        """Returns (block root, entity node, roles, long_range flag)."""
        overlap = self.rng.random() < self.cfg.overlap_rate
        cue = self.choice(DOUBLE_CUES if overlap else self.single)
        kind = DIRECT if self.rng.random() < 0.5 else VIA
        roles = self.cues[(cue, kind, event_type)]
        if kind == DIRECT:
            ent = self.entity_phrase(case_cue=cue)
            ent.label = "obj"
            root = ent
        else:
            ent = self.entity_phrase()
            ent.label = "pobj"
            root = _Node(cue, "prep", right=[ent])
        return root, ent, roles, self.rng.random() < self.cfg.long_range_rate

    def distractor(self):
        host = self.filler("obl")
        ent = self.entity_phrase(case_cue=self.choice(self.single + DOUBLE_CUES))
        ent.label = "nmod"
        host.right = [ent]
        return host

    def trigger(self, event_type, label):
        if self.rng.random() < self.cfg.ambiguous_trigger_rate:
            word = self.choice(AMBIGUOUS_TRIGGERS)
        else:
            word = self.choice(TRIGGER_WORDS[event_type])
        node = _Node(word, label)
        particle = None
        if self.rng.random() < self.cfg.multiword_trigger_rate:
            particle = _Node(self.choice(PARTICLES), "compound:prt")
        return node, particle

    def event_clause(self, event_type, label, extra_blocks=()):
        trig, particle = self.trigger(event_type, label)
        n_args = int(self.rng.integers(1, self.cfg.max_args + 1))
        args = [self.argument(event_type) for _ in range(n_args)]
        near, far = [], []
        for root, ent, roles, long_range in args:
            (far if long_range else near).append(root)
        blocks = near + list(extra_blocks)
        if self.rng.random() < self.cfg.distractor_rate:
            blocks.append(self.distractor())
        for _ in range(int(self.rng.integers(0, 3))):
            blocks.append(self.filler("advmod"))
        self._arrange(trig, blocks, far, particle)
        trig.tag = ("trigger", event_type, particle, [(ent, roles) for _, ent, roles, _ in args])
        return trig

    def _arrange(self, head, blocks, far, particle=None):
        order = list(self.rng.permutation(len(blocks)))
        left, right = [], []
        for i in order:
            (left if self.rng.random() < 0.5 else right).append(blocks[i])
        far_left, far_right = [], []
        for b in far:
            (far_left if self.rng.random() < 0.5 else far_right).append(b)
        if far_right:
            right = [self.long_filler()] + right + far_right
        if far_left:
            left = far_left + left + [self.long_filler()]
        if particle is not None:
            right = [particle] + right
        head.left = left + head.left
        head.right = right + head.right

    def sentence(self):
        r = self.rng.random()
        types = self.schema.trigger_types
        if r < self.cfg.no_event_rate:
            root = self.filler("root")
            blocks = [self.distractor() for _ in range(int(self.rng.integers(0, 3)))]
            blocks += [self.entity_phrase(case_cue=self.choice(self.single))]
            self._arrange(root, blocks, [])
        elif r < self.cfg.no_event_rate + self.cfg.two_event_rate:
            second = self.event_clause(self.choice(types), "conj")
            root = self.event_clause(self.choice(types), "root", extra_blocks=[second])
        else:
            root = self.event_clause(self.choice(types), "root")
        target = int(self.rng.integers(self.cfg.min_len, self.cfg.max_len + 1))
        n = _count(root)
        while n < target:
            (root.left if self.rng.random() < 0.5 else root.right).append(self.filler("advmod"))
            n += 1
        return root


def _count(node):
    return 1 + sum(_count(c) for c in node.left) + sum(_count(c) for c in node.right)


def _linearize(node, parent_pos, out):
    """Append (node, head position) in surface order; returns this node's position."""
    for child in node.left:
        _linearize_child(child, out)
    pos = len(out)
    out.append([node, parent_pos])
    for child in node.right:
        _linearize_child(child, out)
    for child in node.left + node.right:
        out[child._pos][1] = pos
    node._pos = pos
    return pos


def _linearize_child(child, out):
    _linearize(child, None, out)


def _to_record(root, doc_id, sent_id):
    out = []
    _linearize(root, -1, out)
    out[root._pos][1] = -1
    tokens = tuple(n.word for n, _ in out)
    heads = tuple(h for _, h in out)
    labels = tuple(n.label for n, _ in out)
    entities = []
    ent_index = {}
    for pos, (node, _) in enumerate(out):
        if isinstance(node.tag, tuple) and node.tag[0] == "entity":
            start = pos - sum(1 for c in node.left if c.label != "case")
            ent_index[id(node)] = len(entities)
            entities.append(EntitySpan(start, pos, node.tag[1]))
    events = []
    for pos, (node, _) in enumerate(out):
        if isinstance(node.tag, tuple) and node.tag[0] == "trigger":
            _, etype, particle, args = node.tag
            end = particle._pos if particle is not None else pos
            arguments = []
            for ent, roles in args:
                idx = ent_index[id(ent)]
                span = entities[idx]
                for role in roles:
                    arguments.append(Argument(span.start, span.end, role, idx))
            events.append(EventRecord(pos, end, etype, tuple(arguments)))
    return SentenceRecord(doc_id, sent_id, tokens, heads, labels, tuple(entities), tuple(events))


def generate_synthetic(config: GenConfig | None = None, seed: int = 0) -> SyntheticCorpus:
    """Gold corpus plus an unlabeled pool from the same distribution."""
    config = config or GenConfig()
    config.validate()
    schema, cues = build_lexicon(config)
    rng = np.random.default_rng(seed)
    builder = _Builder(config, schema, cues, rng)

    def make(n, prefix):
        records = []
        for i in range(n):
            for _ in range(100):
                root = builder.sentence()
                if _count(root) <= config.max_len:
                    break
            doc = f"{prefix}-{i // config.sentences_per_doc:04d}"
            records.append(_to_record(root, doc, str(i % config.sentences_per_doc)))
        return records

    gold = make(config.n_sentences, "synth")
    pool = [r.strip_events() for r in make(config.n_unlabeled, "pool")]
    return SyntheticCorpus(gold, pool, schema, cues, config)


def split_by_document(records: Sequence[SentenceRecord], dev_fraction=0.2, test_fraction=0.0):
    """Deterministic document-level split in corpus order: train, dev[, test]."""
    docs = []
    for r in records:
        if not docs or docs[-1] != r.doc_id:
            if r.doc_id not in docs:
                docs.append(r.doc_id)
    n = len(docs)
    n_test = int(round(n * test_fraction))
    n_dev = max(1, int(round(n * dev_fraction))) if dev_fraction > 0 else 0
    dev_docs = set(docs[n - n_test - n_dev : n - n_test])
    test_docs = set(docs[n - n_test :])
    train = [r for r in records if r.doc_id not in dev_docs and r.doc_id not in test_docs]
    dev = [r for r in records if r.doc_id in dev_docs]
    if test_fraction:
        return train, dev, [r for r in records if r.doc_id in test_docs]
    return train, dev


def overlap_fraction(records) -> float:
    """Fraction of (event, argument span) pairs carrying two or more roles."""
    total = multi = 0
    for rec in records:
        for ev in rec.events:
            counts = {}
            for a in ev.arguments:
                counts[a.span] = counts.get(a.span, 0) + 1
            total += len(counts)
            multi += sum(1 for c in counts.values() if c >= 2)
    return multi / total if total else 0.0


def long_range_fraction(records, k) -> float:
    """Fraction of argument spans more than ``k`` tokens from their trigger."""
    total = far = 0
    for rec in records:
        for ev in rec.events:
            for span in {a.span for a in ev.arguments}:
                total += 1
                gap = max(span[0] - ev.trigger_end, ev.trigger_start - span[1])
                far += gap > k
    return far / total if total else 0.0
