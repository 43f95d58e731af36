"""Corpus schema, JSONL ingestion and validation, subword-to-parse projection."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import CorpusError, CyclicParseError, SchemaError, SpanError, SubwordMapError

ROOT = -1


@dataclass(frozen=True)
class RoleSchema:
    trigger_types: tuple
    roles: tuple
    permissible: dict

    def __post_init__(self):
        object.__setattr__(self, "trigger_types", tuple(self.trigger_types))
        object.__setattr__(self, "roles", tuple(self.roles))
        perm = {t: tuple(rs) for t, rs in self.permissible.items()}
        object.__setattr__(self, "permissible", perm)
        known = set(self.roles)
        for t, rs in perm.items():
            if t not in self.trigger_types:
                raise SchemaError(f"permissible map names unknown trigger type {t!r}")
            bad = [r for r in rs if r not in known]
            if bad:
                raise SchemaError(f"trigger type {t!r} allows undeclared roles {bad}")

    def type_index(self, event_type: str) -> int:
        try:
            return self.trigger_types.index(event_type)
        except ValueError:
            raise SchemaError(f"unknown event type {event_type!r}") from None

    def role_index(self, role: str) -> int:
        try:
            return self.roles.index(role)
        except ValueError:
            raise SchemaError(f"unknown role {role!r}") from None

    def allowed(self, event_type: str) -> tuple:
        if event_type not in self.trigger_types:
            raise SchemaError(f"unknown event type {event_type!r}")
        return self.permissible.get(event_type, ())

    def role_mask(self, event_type: str) -> np.ndarray:
        """Boolean vector over ``roles`` marking roles permissible for ``event_type``."""
        allowed = set(self.allowed(event_type))
        return np.array([r in allowed for r in self.roles], dtype=bool)

    def to_json(self) -> dict:
        return {
            "trigger_types": list(self.trigger_types),
            "roles": list(self.roles),
            "permissible": {t: list(self.permissible.get(t, ())) for t in self.trigger_types},
        }

    @classmethod
    def from_json(cls, obj: dict) -> "RoleSchema":
        try:
            return cls(obj["trigger_types"], obj["roles"], obj["permissible"])
        except KeyError as e:
            raise SchemaError(f"schema missing field {e}") from None


@dataclass(frozen=True)
class EntitySpan:
    start: int
    end: int
    entity_type: str = "ENT"


@dataclass(frozen=True)
class Argument:
    start: int
    end: int
    role: str
    entity_index: int | None = None

    @property
    def span(self):
        return (self.start, self.end)


@dataclass(frozen=True)
class EventRecord:
    trigger_start: int
    trigger_end: int
    event_type: str
    arguments: tuple = ()

    @property
    def trigger(self):
        return (self.trigger_start, self.trigger_end)


@dataclass(frozen=True)
class SentenceRecord:
    doc_id: str
    sent_id: str
    tokens: tuple
    dep_heads: tuple
    dep_labels: tuple = ()
    entities: tuple = ()
    events: tuple = ()
    provenance: str | None = None

    @property
    def key(self):
        return (self.doc_id, self.sent_id)

    def __len__(self):
        return len(self.tokens)

    def strip_events(self) -> "SentenceRecord":
        return SentenceRecord(self.doc_id, self.sent_id, self.tokens, self.dep_heads,
                              self.dep_labels, self.entities, (), self.provenance)


# ---------------------------------------------------------------------------
# validation


def check_tree(heads: Sequence[int], where: dict | None = None) -> None:
    """Raise unless ``heads`` encodes a single rooted tree over range(len(heads))."""
    where = where or {}
    T = len(heads)
    roots = [i for i, h in enumerate(heads) if h == ROOT]
    if len(roots) != 1:
        raise CyclicParseError(f"expected exactly one root, found {len(roots)}", **where)
    for i, h in enumerate(heads):
        if h != ROOT and not 0 <= h < T:
            raise SpanError(f"head of token {i} out of range: {h}", **where)
        if h == i:
            raise CyclicParseError(f"token {i} heads itself", **where)
    state = [0] * T  # 0 unvisited, 1 on current path, 2 reaches root
    for start in range(T):
        path = []
        i = start
        while i != ROOT and state[i] == 0:
            state[i] = 1
            path.append(i)
            i = heads[i]
        if i != ROOT and state[i] == 1:
            raise CyclicParseError(f"dependency cycle through token {i}", **where)
        for j in path:
            state[j] = 2


def _check_span(start, end, T, what, where):
    if not (0 <= start <= end < T):
        raise SpanError(f"{what} span ({start}, {end}) outside [0, {T})", **where)


def validate_record(rec: SentenceRecord, schema: RoleSchema, line: int | None = None) -> None:
    where = {"doc_id": rec.doc_id, "sent_id": rec.sent_id, "line": line}
    T = len(rec.tokens)
    if T < 1:
        raise CorpusError("sentence has no tokens", **where)
    if len(rec.dep_heads) != T:
        raise CorpusError(f"dep_heads has length {len(rec.dep_heads)}, expected {T}", **where)
    if rec.dep_labels and len(rec.dep_labels) != T:
        raise CorpusError(f"dep_labels has length {len(rec.dep_labels)}, expected {T}", **where)
    check_tree(rec.dep_heads, where)
    for ent in rec.entities:
        _check_span(ent.start, ent.end, T, "entity", where)
    for ev in rec.events:
        _check_span(ev.trigger_start, ev.trigger_end, T, "trigger", where)
        if ev.event_type not in schema.trigger_types:
            raise SchemaError(f"unknown event type {ev.event_type!r}", **where)
        allowed = set(schema.permissible.get(ev.event_type, ()))
        seen = set()
        for arg in ev.arguments:
            _check_span(arg.start, arg.end, T, "argument", where)
            if arg.role not in allowed:
                raise SchemaError(
                    f"role {arg.role!r} not permissible for event type {ev.event_type!r}", **where
                )
            if (arg.span, arg.role) in seen:
                raise CorpusError(f"duplicate argument {arg.span} {arg.role}", **where)
            seen.add((arg.span, arg.role))
            if arg.entity_index is not None:
                if not 0 <= arg.entity_index < len(rec.entities):
                    raise SpanError(f"argument references missing entity {arg.entity_index}", **where)
                ent = rec.entities[arg.entity_index]
                if (ent.start, ent.end) != arg.span:
                    raise SpanError(
                        f"argument span {arg.span} differs from entity {arg.entity_index}", **where
                    )


# ---------------------------------------------------------------------------
# JSONL


def record_to_json(rec: SentenceRecord) -> dict:
    out = {
        "doc_id": rec.doc_id,
        "sent_id": rec.sent_id,
        "tokens": list(rec.tokens),
        "dep_heads": list(rec.dep_heads),
        "dep_labels": list(rec.dep_labels),
        "entities": [{"start": e.start, "end": e.end, "type": e.entity_type} for e in rec.entities],
        "events": [],
    }
    for ev in rec.events:
        args = []
        for a in ev.arguments:
            item = {"start": a.start, "end": a.end, "role": a.role}
            if a.entity_index is not None:
                item["entity_index"] = a.entity_index
            args.append(item)
        out["events"].append({
            "trigger_start": ev.trigger_start,
            "trigger_end": ev.trigger_end,
            "event_type": ev.event_type,
            "arguments": args,
        })
    if rec.provenance is not None:
        out["provenance"] = rec.provenance
    return out


def record_from_json(obj: dict, line: int | None = None) -> SentenceRecord:
    where = {"doc_id": obj.get("doc_id"), "sent_id": obj.get("sent_id"), "line": line}
    try:
        entities = tuple(EntitySpan(int(e["start"]), int(e["end"]), e.get("type", "ENT"))
                         for e in obj.get("entities", []))
        events = tuple(
            EventRecord(
                int(ev["trigger_start"]),
                int(ev["trigger_end"]),
                ev["event_type"],
                tuple(Argument(int(a["start"]), int(a["end"]), a["role"], a.get("entity_index"))
                      for a in ev.get("arguments", [])),
            )
            for ev in obj.get("events", [])
        )
        return SentenceRecord(
            doc_id=str(obj["doc_id"]),
            sent_id=str(obj["sent_id"]),
            tokens=tuple(obj["tokens"]),
            dep_heads=tuple(int(h) for h in obj["dep_heads"]),
            dep_labels=tuple(obj.get("dep_labels", ())),
            entities=entities,
            events=events,
            provenance=obj.get("provenance"),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise CorpusError(f"malformed record: {e!r}", **where) from None


def parse_corpus(path) -> tuple[list, RoleSchema]:
    """Read a corpus JSONL file whose first line is the schema object."""
    records = []
    schema = None
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise CorpusError(f"malformed JSON: {e.msg}", line=lineno) from None
            if schema is None:
                if "schema" not in obj:
                    raise SchemaError("first line must be the schema object", line=lineno)
                schema = RoleSchema.from_json(obj["schema"])
                continue
            rec = record_from_json(obj, line=lineno)
            validate_record(rec, schema, line=lineno)
            records.append(rec)
    if schema is None:
        raise SchemaError(f"{path}: empty corpus file")
    return records, schema


def write_corpus(path, records: Iterable[SentenceRecord], schema: RoleSchema) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps({"schema": schema.to_json()}, ensure_ascii=False) + "\n")
        for rec in records:
            f.write(json.dumps(record_to_json(rec), ensure_ascii=False) + "\n")


# ---------------------------------------------------------------------------
# subwords


def project_subwords(record: SentenceRecord, word_to_pieces: Sequence[tuple[int, int]]) -> list[tuple]:
    """Piece-level head sets under the rule that pieces inherit their word's edges.

    ``word_to_pieces[w]`` is the half-open piece range ``(start, stop)`` of word
    ``w``.  Entry ``p`` of the result lists every piece of the head word of
    ``p``'s word (empty for the root word), so the downstream neighbor set of a
    piece is all pieces of its word's head plus all pieces of its word's children.
    """
    if len(word_to_pieces) != len(record.tokens):
        raise SubwordMapError(
            f"piece map covers {len(word_to_pieces)} words, sentence has {len(record.tokens)}"
        )
    expected = 0
    for w, (a, b) in enumerate(word_to_pieces):
        if a != expected or b <= a:
            raise SubwordMapError(f"piece range of word {w} is {(a, b)}; ranges must be contiguous and non-empty")
        expected = b
    out = []
    for w, (a, b) in enumerate(word_to_pieces):
        h = record.dep_heads[w]
        heads = () if h == ROOT else tuple(range(*word_to_pieces[h]))
        out.extend([heads] * (b - a))
    return out
