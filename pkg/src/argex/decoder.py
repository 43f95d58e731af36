"""Role-specific argument decoding and the auxiliary trigger tagger.

With entities, each permissible role has its own sigmoid classifier over a
pooled entity representation, so one entity may take several roles.  Without
entities, each role has its own B/I/O tagger over the tokens.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .layers import Linear

B_TAG, I_TAG, O_TAG = 0, 1, 2
TAG_NAMES = ("B", "I", "O")


@dataclass(frozen=True)
class RolePrediction:
    start: int
    end: int
    role: str
    score: float
    source: str  # "entity" | "tagger"

    @property
    def span(self):
        return (self.start, self.end)


def decode_bio(tags) -> list:
    """Spans (start, end) from a B/I/O sequence.

    B always opens a span; I continues the open span or, with none open,
    starts one; O closes.  Accepts tag strings or the integer ids above.
    """
    spans = []
    start = None
    for i, tag in enumerate(tags):
        t = TAG_NAMES[tag] if not isinstance(tag, str) else tag
        if t == "B" or (t == "I" and start is None):
            if start is not None:
                spans.append((start, i - 1))
            start = i
        elif t == "O":
            if start is not None:
                spans.append((start, i - 1))
            start = None
        elif t != "I":
            raise ValueError(f"unknown BIO tag {tag!r}")
    if start is not None:
        spans.append((start, len(tags) - 1))
    return spans


def trigger_tag_names(trigger_types) -> list:
    return ["O"] + [f"{p}-{t}" for t in trigger_types for p in ("B", "I")]


def encode_trigger_tags(length, events, trigger_types) -> np.ndarray:
    """Gold BIO-over-types ids: 0 = O, 1 + 2k = B-type_k, 2 + 2k = I-type_k."""
    tags = np.zeros(length, dtype=np.int64)
    for ev in events:
        k = trigger_types.index(ev.event_type)
        tags[ev.trigger_start] = 1 + 2 * k
        tags[ev.trigger_start + 1 : ev.trigger_end + 1] = 2 + 2 * k
    return tags


def decode_trigger_tags(tags, trigger_types) -> list:
    """(start, end, type) triples; an I of a different type than the open span starts a new one."""
    out = []
    cur = None
    for i, tag in enumerate(list(tags) + [0]):
        tag = int(tag)
        if tag == 0:
            if cur:
                out.append(tuple(cur))
            cur = None
            continue
        k, inside = (tag - 1) // 2, (tag - 1) % 2 == 1
        if inside and cur is not None and cur[2] == trigger_types[k]:
            cur[1] = i
        else:
            if cur:
                out.append(tuple(cur))
            cur = [i, i, trigger_types[k]]
    return out


class ArgumentDecoder:
    def __init__(self, store: T.ParameterStore, n_roles: int, d_model: int, d_tok: int,
                 n_trigger_types: int, rng, pooling: str = "max", prefix="decoder"):
        if pooling not in ("max", "mean"):
            raise ValueError(f"unknown pooling {pooling!r}")
        self.n_roles = n_roles
        self.pooling = pooling
        self.role_clf = Linear(store, f"{prefix}.role_clf", d_model, n_roles, rng)
        self.role_tagger = Linear(store, f"{prefix}.role_tagger", d_model, 3 * n_roles, rng)
        self.trigger_tagger = Linear(store, f"{prefix}.trigger_tagger", d_tok, 2 * n_trigger_types + 1, rng)

    # entity mode -------------------------------------------------------

    def pool_entities(self, U: T.Tensor, entity_mask) -> T.Tensor:
        """(B, T, d) x (B, E, T) -> (B, E, d)."""
        if self.pooling == "max":
            return T.max_pool_over_positions(U, entity_mask)
        return T.mean_pool_over_positions(U, entity_mask)

    def entity_logits(self, U: T.Tensor, entity_mask) -> T.Tensor:
        """One independent logit per (entity, role): (B, E, R)."""
        return self.role_clf(self.pool_entities(U, entity_mask))

    # tagger mode -------------------------------------------------------

    def tag_logits(self, U: T.Tensor) -> T.Tensor:
        """(B, T, R, 3) B/I/O scores, one tagger per role."""
        n, L, _ = U.shape
        return T.reshape(self.role_tagger(U), (n, L, self.n_roles, 3))

    # auxiliary trigger tagger -------------------------------------------

    def trigger_logits(self, B: T.Tensor) -> T.Tensor:
        return self.trigger_tagger(B)


def entity_loss(logits: T.Tensor, targets, weights) -> T.Tensor:
    """Binary cross-entropy summed over permissible roles of real candidates."""
    return T.binary_cross_entropy_with_logits(logits, targets, weights)


def tagger_loss(logits: T.Tensor, tag_targets, weights) -> T.Tensor:
    """Token cross-entropy summed over permissible role taggers; weights (B, T, R)."""
    return T.cross_entropy(logits, tag_targets, weights)


def emit_entity_predictions(scores, entities, role_names, role_mask, threshold=0.5,
                            candidate_ok=None) -> list:
    """Multi-label emission: (entity, role) iff score >= threshold and role permissible."""
    out = []
    for e, ent in enumerate(entities):
        if candidate_ok is not None and not candidate_ok[e]:
            continue
        for r, name in enumerate(role_names):
            if role_mask[r] and scores[e, r] >= threshold:
                out.append(RolePrediction(ent.start, ent.end, name, float(scores[e, r]), "entity"))
    return out


def emit_tagger_predictions(tag_probs, role_names, role_mask) -> list:
    """``tag_probs`` (T, R, 3) for one sentence; argmax per token and role, then BIO decode."""
    out = []
    tags = tag_probs.argmax(axis=-1)
    for r, name in enumerate(role_names):
        if not role_mask[r]:
            continue
        for a, b in decode_bio(tags[:, r]):
            # span confidence: mean probability of the decoded tags
            conf = float(np.mean([tag_probs[t, r, tags[t, r]] for t in range(a, b + 1)]))
            out.append(RolePrediction(a, b, name, conf, "tagger"))
    return out
