import numpy as np
import pytest

from argex import training
from argex.data import parse_corpus, validate_record
from argex.errors import ConfigError, CorpusError, TrainingError
from argex.evaluation import score
from argex.model import EAEModel
from argex.synth import GenConfig, generate_synthetic, split_by_document
from argex.training import (TSV_HEADER, TaskScheduler, TrainConfig, build_vocab, evaluate, predict,
                            self_train, silver_label, train)

TINY = dict(d_tok=8, emb_layers=1, emb_heads=2, emb_ff=16, d_type=4, d_ind=4, d_model=8,
            syn_layers=1, syn_heads=2, syn_ff=16, max_position=24, max_epochs=3, batch_size=8)


@pytest.fixture(scope="module")
def corpus():
    c = generate_synthetic(GenConfig(n_sentences=40, n_unlabeled=15, max_len=20), seed=7)
    train_recs, dev_recs = split_by_document(c.gold, 0.25)
    return c, train_recs, dev_recs


def _cfg(**kw):
    return TrainConfig(**{**TINY, **kw})


def test_scheduler_fraction():
    s = TaskScheduler(0.1, np.random.default_rng(0))
    draws = [s.draw() for _ in range(10_000)]
    assert abs(draws.count("aux") / 10_000 - 0.10) <= 0.01


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(main_prob=0.8, aux_prob=0.1).validate()
    with pytest.raises(ConfigError):
        TrainConfig(patience=0).validate()
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"learning_rate": 1})
    with pytest.raises(ConfigError):
        TrainConfig(window=2).validate()
    assert TrainConfig().config_hash() == TrainConfig().config_hash() != TrainConfig(seed=1).config_hash()


def test_no_aux_leaves_trigger_tagger_untouched(corpus):
    c, tr, dv = corpus
    vocab = build_vocab(tr)
    cfg = _cfg(main_prob=1.0, aux_prob=0.0, max_epochs=1)
    init = EAEModel(cfg.model_config(), c.schema, vocab, seed=0).store.state()
    model, run = train(tr, dv, cfg, c.schema, vocab=vocab)
    after = model.store.state()
    assert run.aux_steps == 0
    changed = {n for n in init if not np.array_equal(init[n], after[n])}
    assert not any(n.startswith("decoder.trigger_tagger") for n in changed)
    for prefix in ("embedder.", "trigger.", "syntax.", "decoder.role_clf"):
        assert any(n.startswith(prefix) for n in changed)


def test_run_is_deterministic(corpus, tmp_path):
    c, tr, dv = corpus
    for name in ("a", "b"):
        train(tr, dv, _cfg(), c.schema, out_dir=tmp_path / name)
    a = (tmp_path / "a" / "metrics.tsv").read_bytes()
    assert a.startswith(TSV_HEADER.encode())
    assert a == (tmp_path / "b" / "metrics.tsv").read_bytes()


def test_early_stopping_and_restore(corpus):
    c, tr, dv = corpus
    model, run = train(tr, dv, _cfg(patience=1, max_epochs=6), c.schema)
    assert len(run.epochs) == min(6, run.best_epoch + 1)
    assert run.best_rc_f1 == max(e.rc_f1 for e in run.epochs)
    assert evaluate(model, dv).to_json() == run.epochs[run.best_epoch - 1].report


def test_saved_model_predicts_identically(corpus, tmp_path):
    c, tr, dv = corpus
    model, _ = train(tr, dv, _cfg(max_epochs=1), c.schema, out_dir=tmp_path)
    again = EAEModel.load(tmp_path / "model")
    assert predict(again, dv) == predict(model, dv)
    assert predict(model, dv) == predict(model, dv)


def test_empty_splits_rejected(corpus):
    c, tr, dv = corpus
    with pytest.raises(TrainingError):
        train([r.strip_events() for r in tr], dv, _cfg(), c.schema)
    with pytest.raises(TrainingError):
        train(tr, [], _cfg(), c.schema)


def test_predict_line_counts(corpus):
    c, tr, dv = corpus
    model = EAEModel(_cfg().model_config(), c.schema, build_vocab(tr))
    assert predict(model, [r.strip_events() for r in dv]) == []
    two = next(r for r in c.gold if len(r.events) == 2)
    lines = predict(model, [two])
    assert len(lines) == 2
    assert {(l["trigger"]["start"], l["trigger"]["type"]) for l in lines} == \
        {(e.trigger_start, e.event_type) for e in two.events}


def test_predict_needs_parse(corpus):
    c, tr, _ = corpus
    model = EAEModel(_cfg().model_config(), c.schema, build_vocab(tr))
    r = tr[0]
    broken = type(r)(r.doc_id, r.sent_id, r.tokens, r.dep_heads[:-1], r.dep_labels, r.entities, r.events)
    with pytest.raises(CorpusError):
        predict(model, [broken])


class _PerfectModel:
    """Stands in for a flawless stage-1 model by reading gold annotations."""

    def __init__(self, gold):
        self.gold = {r.key: r for r in gold}

    def predict_triggers(self, records):
        return [[(e.trigger_start, e.trigger_end, e.event_type) for e in self.gold[r.key].events]
                for r in records]

    def predict_arguments(self, instances, threshold=0.5):
        from argex.decoder import RolePrediction

        out = []
        for inst in instances:
            ev = next(e for e in self.gold[inst.record.key].events
                      if (e.trigger_start, e.event_type) == (inst.trigger_start, inst.event_type))
            out.append([RolePrediction(a.start, a.end, a.role, 1.0, "entity") for a in ev.arguments])
        return out


@pytest.mark.parametrize("threads", ["1", "3"])
def test_perfect_model_silver_equals_gold(corpus, monkeypatch, threads):
    monkeypatch.setenv("ARGEX_THREADS", threads)
    c, _, _ = corpus
    pool = [r.strip_events() for r in c.gold]
    silver = silver_label(_PerfectModel(c.gold), pool)
    assert [r.key for r in silver] == [r.key for r in c.gold]
    for s, g in zip(silver, c.gold):
        assert s.provenance == "silver"
        assert s.events == g.events
    assert score(training.predict(_PerfectModel(c.gold), pool, trigger_source="tagger"), c.gold).rc_f1 == 1.0


def test_self_training_stages(corpus, tmp_path, monkeypatch):
    c, tr, dv = corpus
    cfg = _cfg(max_epochs=2)
    vocab = build_vocab(tr + c.pool)
    seen = {}
    real_train = training.train

    def spy(records, dev, config, schema, vocab=None, model=None, out_dir=None, stage="train"):
        seen[stage] = model.store.state()
        return real_train(records, dev, config, schema, vocab=vocab, model=model, out_dir=out_dir, stage=stage)

    monkeypatch.setattr(training, "train", spy)
    model, rec = self_train(tr, dv, c.pool, cfg, c.schema, vocab=vocab, out_dir=tmp_path)
    assert list(rec.stages) == ["gold", "silver-label", "silver-train", "finetune"]
    assert rec.stages["silver-label"]["n_sentences"] == len(c.pool)
    fresh = EAEModel(cfg.model_config(), c.schema, vocab, seed=cfg.seed + 1000).store.state()
    assert all(np.array_equal(fresh[n], seen["silver-train"][n]) for n in fresh)
    silver, schema = parse_corpus(tmp_path / "silver.jsonl")
    assert schema == c.schema and len(silver) == len(c.pool)
    for r in silver:
        validate_record(r, schema)
        assert r.provenance == "silver"
    for d in ("1-gold", "3-silver", "4-finetune"):
        assert (tmp_path / d / "metrics.tsv").exists()


def test_self_training_errors_carry_stage(corpus):
    c, tr, dv = corpus
    with pytest.raises(TrainingError) as err:
        self_train(tr, dv, [], _cfg(), c.schema)
    assert err.value.stage == "silver-label"
    with pytest.raises(TrainingError) as err:
        self_train(tr, [], c.pool, _cfg(), c.schema)
    assert err.value.stage == "gold"
