"""Argument identification (AI) and role classification (RC) scoring.

Predictions use the prediction-JSONL shape::

    {"doc_id", "sent_id", "trigger": {"start", "end", "type", "source"},
     "arguments": [{"start", "end", "role", "score"}]}

An argument is AI-correct when its span matches a gold argument of the same
event instance (same sentence, trigger span and event type); RC-correct when
the role matches as well.  Each gold (span, role) item is matched at most once.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

from .data import SentenceRecord
from .errors import EvaluationError


def prf(correct: int, predicted: int, gold: int):
    p = correct / predicted if predicted else 0.0
    r = correct / gold if gold else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f


@dataclass
class ScoreReport:
    ai_precision: float
    ai_recall: float
    ai_f1: float
    rc_precision: float
    rc_recall: float
    rc_f1: float
    n_gold: int
    n_predicted: int
    ai_correct: int
    rc_correct: int

    @classmethod
    def from_counts(cls, n_gold, n_pred, ai, rc) -> "ScoreReport":
        return cls(*prf(ai, n_pred, n_gold), *prf(rc, n_pred, n_gold), n_gold, n_pred, ai, rc)

    def to_json(self) -> dict:
        return asdict(self)

    def row(self) -> list:
        return [self.ai_precision, self.ai_recall, self.ai_f1,
                self.rc_precision, self.rc_recall, self.rc_f1]

    def to_table(self) -> str:
        head = f"{'':>4} {'AI-P':>6} {'AI-R':>6} {'AI-F1':>6} | {'RC-P':>6} {'RC-R':>6} {'RC-F1':>6}"
        vals = [f"{100 * v:6.1f}" for v in self.row()]
        body = f"{'':>4} {vals[0]} {vals[1]} {vals[2]} | {vals[3]} {vals[4]} {vals[5]}"
        counts = (f"gold={self.n_gold} predicted={self.n_predicted} "
                  f"ai_correct={self.ai_correct} rc_correct={self.rc_correct}")
        return "\n".join([head, body, counts])


def _span_head(heads, start, end):
    for i in range(start, end + 1):
        if not start <= heads[i] <= end:
            return i
    return end


def gold_items(records: Iterable[SentenceRecord]) -> list:
    """(event key, span, role) for every gold argument role."""
    items = []
    for rec in records:
        for ev in rec.events:
            key = (rec.doc_id, rec.sent_id, ev.trigger_start, ev.trigger_end, ev.event_type)
            for a in ev.arguments:
                items.append((key, (a.start, a.end), a.role))
    return items


def predicted_items(predictions: Iterable[dict], known_sentences=None) -> list:
    items = []
    for p in predictions:
        sk = (str(p["doc_id"]), str(p["sent_id"]))
        if known_sentences is not None and sk not in known_sentences:
            raise EvaluationError(f"prediction references unknown sentence {sk}")
        t = p["trigger"]
        key = sk + (int(t["start"]), int(t["end"]), t["type"])
        for a in p.get("arguments", []):
            items.append((key, (int(a["start"]), int(a["end"])), a["role"]))
    return items


def _span_key_fn(records, match):
    if match == "exact":
        return lambda key, span: span
    if match != "head":
        raise EvaluationError(f"unknown match mode {match!r}")
    heads = {r.key: r.dep_heads for r in records}
    return lambda key, span: _span_head(heads[key[:2]], span[0], span[1])


def score_items(pred: Sequence, gold: Sequence, span_key=None) -> ScoreReport:
    """Greedy one-to-one matching in prediction order."""
    span_key = span_key or (lambda key, span: span)
    ai_pool, rc_pool = {}, {}
    for key, span, role in gold:
        s = span_key(key, span)
        ai_pool[(key, s)] = ai_pool.get((key, s), 0) + 1
        rc_pool[(key, s, role)] = rc_pool.get((key, s, role), 0) + 1
    ai = rc = 0
    for key, span, role in pred:
        s = span_key(key, span)
        if ai_pool.get((key, s), 0) > 0:
            ai_pool[(key, s)] -= 1
            ai += 1
        if rc_pool.get((key, s, role), 0) > 0:
            rc_pool[(key, s, role)] -= 1
            rc += 1
    return ScoreReport.from_counts(len(gold), len(pred), ai, rc)


def score(predictions: Iterable[dict], gold: Sequence[SentenceRecord], match: str = "exact") -> ScoreReport:
    gold = list(gold)
    known = {r.key for r in gold}
    pred = predicted_items(predictions, known)
    return score_items(pred, gold_items(gold), _span_key_fn(gold, match))


def reference_score_items(pred: Sequence, gold: Sequence) -> ScoreReport:
    """Exhaustive search over all one-to-one matchings (exact-span mode).

    Exponential; for verification on small instances only.
    """

    def best(compatible):
        used = [False] * len(gold)

        def rec(i):
            if i == len(pred):
                return 0
            top = rec(i + 1)  # leave prediction i unmatched
            for j in range(len(gold)):
                if not used[j] and compatible(pred[i], gold[j]):
                    used[j] = True
                    top = max(top, 1 + rec(i + 1))
                    used[j] = False
            return top

        return rec(0)

    ai = best(lambda p, g: p[0] == g[0] and p[1] == g[1])
    rc = best(lambda p, g: p == g)
    return ScoreReport.from_counts(len(gold), len(pred), ai, rc)


def trigger_scores(pred_triggers: Sequence, records: Sequence[SentenceRecord]) -> dict:
    """Trigger classification P/R/F1 (span + type); informational only."""
    gold = {(r.key, ev.trigger_start, ev.trigger_end, ev.event_type) for r in records for ev in r.events}
    pred = {(r.key, s, e, t) for r, trig in zip(records, pred_triggers) for s, e, t in trig}
    p, r, f = prf(len(pred & gold), len(pred), len(gold))
    return {"precision": p, "recall": r, "f1": f}


def read_predictions(path) -> list:
    with open(path, encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]


def write_predictions(path, predictions: Iterable[dict]):
    with open(path, "w", encoding="utf-8") as f:
        for p in predictions:
            f.write(json.dumps(p, ensure_ascii=False) + "\n")


def gold_as_predictions(records: Sequence[SentenceRecord]) -> list:
    """Gold events rendered in prediction form (used for gold-vs-gold sanity checks)."""
    out = []
    for rec in records:
        for ev in rec.events:
            out.append({
                "doc_id": rec.doc_id, "sent_id": rec.sent_id,
                "trigger": {"start": ev.trigger_start, "end": ev.trigger_end,
                            "type": ev.event_type, "source": "gold"},
                "arguments": [{"start": a.start, "end": a.end, "role": a.role, "score": 1.0}
                              for a in ev.arguments],
            })
    return out
