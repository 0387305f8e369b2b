"""Evaluation harness tests: summary schema, determinism, judge protocol."""

import json

import pytest

from rqakit.corpus import Passage, PassageStore
from rqakit.datagen import QAPair
from rqakit.evaluation import (
    PredictionRecord,
    evaluate_pipeline,
    judge_accuracy,
    load_predictions,
    save_predictions,
)
from rqakit.errors import EmptyEvalSet
from rqakit.llm import MockLLMClient
from rqakit.pipeline import Component, MockQAComponent, RQAPipeline


def store_and_pairs(n=6):
    store = PassageStore()
    pairs = []
    for i in range(n):
        store.add(Passage(f"p{i}", f"content of passage {i}", "src", i, 4))
        pairs.append(QAPair(f"question {i}?", f"answer {i}", f"p{i}", split="test"))
    return store, pairs


def echo_pipeline(store, k=4):
    sources = [
        {"passage_id": p.passage_id, "content": p.content, "source": p.source}
        for p in list(store)[:k]
    ]
    return RQAPipeline([MockQAComponent(answer_prefix="answer ", sources=sources)])


def test_summary_contains_expected_metric_keys(tmp_path):
    store, pairs = store_and_pairs()
    summary, path = evaluate_pipeline(
        echo_pipeline(store), pairs, store, k=4, out_path=tmp_path / "pred.jsonl"
    )
    for key in ("recall_at_1", "recall_at_4", "ndcg_at_4", "rouge_l", "bleu",
                "judge_accuracy", "n_items", "n_failures",
                "retrieval_time_ms", "generation_time_ms", "total_time_ms"):
        assert key in summary, key
    assert summary["n_items"] == len(pairs)
    assert summary["n_failures"] == 0
    records = load_predictions(path)
    assert len(records) == len(pairs)
    assert all(len(r.retrieved_passage_ids) == 4 for r in records)
    assert (tmp_path / "pred.jsonl.summary.json").exists()


def strip_timing(path):
    rows = []
    for line in path.read_text().splitlines():
        record = json.loads(line)
        record.pop("retrieval_time_ms", None)
        record.pop("generation_time_ms", None)
        rows.append(record)
    return rows


def test_predictions_deterministic_modulo_timing(tmp_path):
    store, pairs = store_and_pairs()
    _, path_a = evaluate_pipeline(echo_pipeline(store), pairs, store, out_path=tmp_path / "a.jsonl")
    _, path_b = evaluate_pipeline(echo_pipeline(store), pairs, store, out_path=tmp_path / "b.jsonl")
    assert strip_timing(path_a) == strip_timing(path_b)


def test_failing_item_recorded_not_fatal(tmp_path):
    store, pairs = store_and_pairs(4)

    class FragileGenerator(Component):
        run_input_keys = ["batch_questions"]

        def run(self, batch_questions):
            if "question 2" in batch_questions[0]:
                raise RuntimeError("flaky item")
            return {
                "batch_answers": [f"answer for {q}" for q in batch_questions],
                "batch_source_documents": [[store.get("p0")] for _ in batch_questions],
            }

    summary, path = evaluate_pipeline(
        RQAPipeline([FragileGenerator()]), pairs, store, k=1, out_path=tmp_path / "p.jsonl"
    )
    assert summary["n_failures"] == 1
    records = load_predictions(path)
    assert len(records) == 4
    failed = [r for r in records if r.error]
    assert len(failed) == 1
    assert "question 2" in failed[0].question


def test_judge_always_correct_gives_100():
    store, pairs = store_and_pairs(3)
    records = [
        PredictionRecord(p.question, p.answer, p.gold_passage_id, ["p0"], "whatever")
        for p in pairs
    ]
    judge = MockLLMClient(script=lambda prompt: "Looks right.\nVERDICT: CORRECT")
    summary = judge_accuracy(records, judge, store)
    assert summary.accuracy_pct == 100.0
    assert all(r.judge_verdict == "correct" for r in records)


def test_judge_alternating_gives_50():
    store, pairs = store_and_pairs(4)
    records = [
        PredictionRecord(p.question, p.answer, p.gold_passage_id, ["p0"], "x") for p in pairs
    ]
    flips = iter(["VERDICT: CORRECT", "VERDICT: INCORRECT"] * 2)
    judge = MockLLMClient(script=lambda prompt: next(flips))
    summary = judge_accuracy(records, judge, store)
    assert summary.accuracy_pct == 50.0


def test_judge_garbage_goes_to_invalid_bucket():
    store, pairs = store_and_pairs(4)
    records = [
        PredictionRecord(p.question, p.answer, p.gold_passage_id, ["p0"], "x") for p in pairs
    ]
    judge = MockLLMClient(script=lambda prompt: "no verdict here")
    summary = judge_accuracy(records, judge, store)
    assert summary.accuracy_pct is None
    assert summary.n_invalid == 4
    assert all(r.judge_verdict == "invalid" for r in records)


def test_judge_retries_parse_once():
    store, pairs = store_and_pairs(1)
    records = [PredictionRecord(pairs[0].question, "a", "p0", ["p0"], "x")]
    calls = []

    def judge_fn(prompt):
        calls.append(prompt)
        return "hmm" if len(calls) == 1 else "VERDICT: INCORRECT"

    summary = judge_accuracy(records, MockLLMClient(script=judge_fn), store)
    assert len(calls) == 2
    assert summary.n_incorrect == 1


def test_judge_wired_through_evaluate(tmp_path):
    store, pairs = store_and_pairs(3)
    judge = MockLLMClient(script=lambda prompt: "VERDICT: CORRECT")
    summary, path = evaluate_pipeline(
        echo_pipeline(store), pairs, store, judge=judge, out_path=tmp_path / "p.jsonl"
    )
    assert summary["judge_accuracy"] == 100.0
    records = load_predictions(path)
    assert all(r.judge_verdict == "correct" for r in records)


def test_empty_eval_set_rejected(tmp_path):
    store, _ = store_and_pairs(1)
    with pytest.raises(EmptyEvalSet):
        evaluate_pipeline(echo_pipeline(store), [], store, out_path=tmp_path / "p.jsonl")


def test_prediction_record_round_trip(tmp_path):
    record = PredictionRecord(
        question="q?", gold_answer="a", gold_passage_id="p0",
        retrieved_passage_ids=["p0", "p1"], generated_answer="g",
        retrieval_time_ms=1.5, generation_time_ms=2.5, judge_verdict="correct",
    )
    path = tmp_path / "one.jsonl"
    save_predictions([record], path)
    assert load_predictions(path)[0].to_dict() == record.to_dict()
