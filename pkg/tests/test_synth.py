import pytest

from argex.data import validate_record, write_corpus
from argex.errors import ConfigError
from argex.evaluation import score
from argex.synth import (LONG_RANGE, GenConfig, generate_synthetic, long_range_fraction,
                         overlap_fraction, split_by_document)


@pytest.fixture(scope="module")
def corpus():
    return generate_synthetic(GenConfig(n_sentences=1000, n_unlabeled=50), seed=3)


def test_same_seed_gives_identical_bytes(tmp_path):
    for name in ("a", "b"):
        c = generate_synthetic(GenConfig(n_sentences=100, n_unlabeled=20), seed=11)
        write_corpus(tmp_path / f"{name}.jsonl", c.gold + c.pool, c.schema)
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()


def test_different_seeds_differ():
    a = generate_synthetic(GenConfig(n_sentences=20, n_unlabeled=0), seed=1)
    b = generate_synthetic(GenConfig(n_sentences=20, n_unlabeled=0), seed=2)
    assert a.gold != b.gold


def test_overlap_rate_matches_config(corpus):
    assert abs(overlap_fraction(corpus.gold) - 0.10) <= 0.02


def test_every_record_is_valid(corpus):
    # tree invariant, span bounds and role permissibility
    for rec in corpus.gold + corpus.pool:
        validate_record(rec, corpus.schema)
    assert all(not r.events for r in corpus.pool)


def test_schema_defaults(corpus):
    assert len(corpus.schema.trigger_types) == 5
    assert len(corpus.schema.roles) == 8


def test_rule_oracle_is_perfect(corpus):
    _, dev = split_by_document(corpus.gold, 0.2)
    preds = []
    for rec in dev:
        for ev in rec.events:
            args = [{"start": s, "end": e, "role": r, "score": 1.0} for (s, e), r in corpus.rule_roles(rec, ev)]
            preds.append({"doc_id": rec.doc_id, "sent_id": rec.sent_id,
                          "trigger": {"start": ev.trigger_start, "end": ev.trigger_end, "type": ev.event_type},
                          "arguments": args})
    report = score(preds, dev)
    assert report.n_gold > 0
    assert report.rc_f1 == 1.0 and report.ai_f1 == 1.0


def test_long_range_preset_places_far_arguments():
    short = generate_synthetic(GenConfig(n_sentences=300, n_unlabeled=0), seed=0)
    far = generate_synthetic(GenConfig(**{**LONG_RANGE.__dict__, "n_sentences": 300, "n_unlabeled": 0}), seed=0)
    assert long_range_fraction(far.gold, 8) > long_range_fraction(short.gold, 8) + 0.1


def test_split_is_by_document(corpus):
    train, dev = split_by_document(corpus.gold, 0.2)
    assert not {r.doc_id for r in train} & {r.doc_id for r in dev}
    assert len(train) + len(dev) == len(corpus.gold)


def test_infeasible_overlap_config():
    with pytest.raises(ConfigError, match="infeasible"):
        generate_synthetic(GenConfig(roles_per_type=1, overlap_rate=0.1))


def test_bad_probability_rejected():
    with pytest.raises(ConfigError):
        GenConfig(overlap_rate=1.5).validate()
