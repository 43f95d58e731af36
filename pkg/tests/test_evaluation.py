import numpy as np
import pytest

from argex.data import Argument, EntitySpan, EventRecord, SentenceRecord
from argex.errors import EvaluationError
from argex.evaluation import (ScoreReport, gold_as_predictions, prf, read_predictions,
                              reference_score_items, score, score_items, write_predictions)

REC = SentenceRecord(
    "d", "0", ("the", "army", "struck", "the", "city", "today"), (1, 2, -1, 4, 2, 2),
    ("det", "nsubj", "root", "det", "obj", "advmod"),
    (EntitySpan(0, 1, "ORG"), EntitySpan(3, 4, "LOC"), EntitySpan(5, 5, "TIME")),
    (EventRecord(2, 2, "Attack", (Argument(0, 1, "Attacker", 0), Argument(3, 4, "Target", 1))),),
)


def _pred(args, etype="Attack"):
    return {"doc_id": "d", "sent_id": "0", "trigger": {"start": 2, "end": 2, "type": etype},
            "arguments": [{"start": s, "end": e, "role": r} for s, e, r in args]}


def test_one_right_one_wrong_role():
    rep = score([_pred([(0, 1, "Attacker"), (3, 4, "Place")])], [REC])
    assert (rep.ai_precision, rep.ai_recall, rep.ai_f1) == (1.0, 1.0, 1.0)
    assert (rep.rc_precision, rep.rc_recall, rep.rc_f1) == (0.5, 0.5, 0.5)


def test_empty_predictions():
    rep = score([], [REC])
    assert rep.row() == [0.0] * 6
    assert rep.n_gold == 2 and rep.n_predicted == 0


def test_gold_vs_gold_is_perfect():
    assert score(gold_as_predictions([REC]), [REC]).row() == [1.0] * 6


def test_wrong_event_type_gets_no_credit():
    rep = score([_pred([(0, 1, "Attacker")], etype="Meet")], [REC])
    assert rep.ai_correct == 0


def test_duplicate_prediction_matches_once():
    rep = score([_pred([(0, 1, "Attacker"), (0, 1, "Attacker")])], [REC])
    assert rep.rc_correct == 1 and rep.n_predicted == 2


def test_unknown_sentence():
    bad = _pred([])
    bad["sent_id"] = "9"
    with pytest.raises(EvaluationError):
        score([bad], [REC])


def test_head_match_mode():
    # (4, 4) is the head token of gold span (3, 4)
    rep = score([_pred([(4, 4, "Target")])], [REC], match="head")
    assert rep.rc_correct == 1
    assert score([_pred([(4, 4, "Target")])], [REC]).rc_correct == 0


def test_f1_convention():
    assert prf(0, 0, 0) == (0.0, 0.0, 0.0)
    p, r, f = prf(1, 4, 2)
    assert f == pytest.approx(2 * p * r / (p + r))


def test_monotonicity():
    rng = np.random.default_rng(0)
    universe = [(("k", i % 2), (i, i), r) for i in range(4) for r in "AB"]
    for _ in range(200):
        gold = [universe[i] for i in rng.choice(len(universe), size=3, replace=False)]
        pred = [universe[i] for i in rng.integers(len(universe), size=3)]
        before = score_items(pred, gold)
        missing = [g for g in gold if g not in pred]
        if missing:
            assert score_items(pred + missing[:1], gold).rc_recall >= before.rc_recall
        wrong = (("k", 9), (9, 9), "A")
        assert score_items(pred + [wrong], gold).rc_precision <= before.rc_precision


def test_rc_never_exceeds_ai():
    rng = np.random.default_rng(1)
    universe = [(("k", 0), (i, i), r) for i in range(3) for r in "AB"]
    for _ in range(200):
        gold = [universe[i] for i in rng.choice(len(universe), size=3, replace=False)]
        pred = [universe[i] for i in rng.integers(len(universe), size=4)]
        rep = score_items(pred, gold)
        assert rep.rc_correct <= rep.ai_correct
        assert rep == reference_score_items(pred, gold)


def test_predictions_round_trip(tmp_path):
    preds = gold_as_predictions([REC])
    write_predictions(tmp_path / "p.jsonl", preds)
    assert read_predictions(tmp_path / "p.jsonl") == preds


def test_table_has_both_blocks():
    text = ScoreReport.from_counts(2, 2, 2, 1).to_table()
    assert "AI-F1" in text and "RC-F1" in text and "100.0" in text and "50.0" in text
