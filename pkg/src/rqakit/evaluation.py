"""End-to-end evaluation: run a pipeline over test pairs, time retrieval and
generation separately, score with the automatic metrics, and emit one
prediction record per test item as JSONL (the input of the static-eval UI).
"""

import json
import re
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

from .corpus import PassageStore
from .datagen import QAPair
from .errors import EmptyEvalSet, LoadError
from .llm import LLMClient
from .metrics import bleu, ndcg_at_k, recall_at_k, rouge_l
from .pipeline import DialogueSession, RQAPipeline, build_pipeline, load_pipeline
from .templates import PromptTemplate, load_default

_VERDICT_RE = re.compile(r"VERDICT:\s*(CORRECT|INCORRECT)", re.IGNORECASE)


@dataclass
class PredictionRecord:
    """One evaluated test item; JSONL row consumed by the static-eval UI."""

    question: str
    gold_answer: str
    gold_passage_id: str
    retrieved_passage_ids: list[str] = field(default_factory=list)
    generated_answer: str = ""
    retrieval_time_ms: float = 0.0
    generation_time_ms: float = 0.0
    judge_verdict: str | None = None
    error: str | None = None

    def to_dict(self) -> dict[str, Any]:
        record = {
            "question": self.question,
            "gold_answer": self.gold_answer,
            "gold_passage_id": self.gold_passage_id,
            "retrieved_passage_ids": list(self.retrieved_passage_ids),
            "generated_answer": self.generated_answer,
            "retrieval_time_ms": self.retrieval_time_ms,
            "generation_time_ms": self.generation_time_ms,
        }
        if self.judge_verdict is not None:
            record["judge_verdict"] = self.judge_verdict
        if self.error is not None:
            record["error"] = self.error
        return record

    @classmethod
    def from_dict(cls, record: Mapping[str, Any]) -> "PredictionRecord":
        return cls(
            question=record["question"],
            gold_answer=record["gold_answer"],
            gold_passage_id=record["gold_passage_id"],
            retrieved_passage_ids=list(record.get("retrieved_passage_ids", [])),
            generated_answer=record.get("generated_answer", ""),
            retrieval_time_ms=float(record.get("retrieval_time_ms", 0.0)),
            generation_time_ms=float(record.get("generation_time_ms", 0.0)),
            judge_verdict=record.get("judge_verdict"),
            error=record.get("error"),
        )


def save_predictions(records: Sequence[PredictionRecord], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record.to_dict(), ensure_ascii=False) + "\n")


def load_predictions(path: str | Path) -> list[PredictionRecord]:
    records = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                records.append(PredictionRecord.from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError) as exc:
                raise LoadError(f"corrupt prediction line {lineno}: {exc}", line=lineno) from exc
    return records


@dataclass
class JudgeSummary:
    accuracy_pct: float | None
    n_correct: int
    n_incorrect: int
    n_invalid: int


def _parse_verdict(text: str) -> str | None:
    matches = _VERDICT_RE.findall(text)
    return matches[-1].lower() if matches else None


def judge_accuracy(
    records: Sequence[PredictionRecord],
    judge: LLMClient,
    store: PassageStore,
    prompt_template: PromptTemplate | None = None,
) -> JudgeSummary:
    """Ask the judge for a CORRECT/INCORRECT verdict per record.

    Unparseable judge output is retried once, then counted in an ``invalid``
    bucket that is excluded from the accuracy denominator. Verdicts are
    written back into the records.
    """
    if not records:
        raise EmptyEvalSet("judge over zero records")
    prompt_template = prompt_template or load_default("judge")
    n_correct = n_incorrect = n_invalid = 0
    for record in records:
        gold_passage = store.get(record.gold_passage_id).content if record.gold_passage_id in store else ""
        prompt = prompt_template.render(
            question=record.question,
            gold_passage=gold_passage,
            gold_answer=record.gold_answer,
            generated_answer=record.generated_answer,
        )
        verdict = _parse_verdict(judge.generate(prompt))
        if verdict is None:
            verdict = _parse_verdict(judge.generate(prompt))
        if verdict == "correct":
            n_correct += 1
        elif verdict == "incorrect":
            n_incorrect += 1
        else:
            verdict = "invalid"
            n_invalid += 1
        record.judge_verdict = verdict
    graded = n_correct + n_incorrect
    accuracy = 100.0 * n_correct / graded if graded else None
    return JudgeSummary(accuracy, n_correct, n_incorrect, n_invalid)


def _time_stats(values: Sequence[float]) -> dict[str, float]:
    if not values:
        return {"mean": 0.0, "p50": 0.0, "p95": 0.0}
    ordered = sorted(values)

    def pct(q: float) -> float:
        return ordered[min(len(ordered) - 1, max(0, round(q * (len(ordered) - 1))))]

    return {"mean": sum(values) / len(values), "p50": pct(0.5), "p95": pct(0.95)}


def evaluate_pipeline(
    pipeline: "RQAPipeline | str | Path | Mapping[str, Any]",
    test_pairs: Sequence[QAPair],
    store: PassageStore,
    k: int = 4,
    judge: LLMClient | None = None,
    judge_template: PromptTemplate | None = None,
    out_path: str | Path = "predictions.jsonl",
) -> tuple[dict[str, Any], Path]:
    """Run the pipeline once per test question and score the predictions.

    Each question gets a fresh empty dialogue session; retrieval and
    generation components are timed separately with a monotonic clock. Items
    whose pipeline call raises are recorded with an ``error`` field and
    excluded from the metric means; the summary carries the failure count.
    """
    if not test_pairs:
        raise EmptyEvalSet("no test pairs")
    if isinstance(pipeline, (str, Path)):
        pipeline = load_pipeline(pipeline)
    elif isinstance(pipeline, Mapping):
        pipeline = build_pipeline(pipeline)

    records: list[PredictionRecord] = []
    for pair in test_pairs:
        record = PredictionRecord(
            question=pair.question,
            gold_answer=pair.answer,
            gold_passage_id=pair.gold_passage_id,
        )
        try:
            output, timings = pipeline.qa_with_timings(
                [pair.question], [DialogueSession()]
            )
            record.generated_answer = output.batch_answers[0]
            record.retrieved_passage_ids = [p.passage_id for p in output.batch_source_documents[0]]
            record.retrieval_time_ms = 1000 * sum(
                t.seconds for t in timings if "batch_source_documents" in t.output_keys
            )
            record.generation_time_ms = 1000 * sum(
                t.seconds for t in timings if "batch_answers" in t.output_keys
            )
        except Exception as exc:
            record.error = f"{type(exc).__name__}: {exc}"
        records.append(record)

    scored = [r for r in records if r.error is None]
    summary: dict[str, Any] = {
        "n_items": len(records),
        "n_failures": len(records) - len(scored),
        "k": k,
    }
    if scored:
        summary["recall_at_1"] = recall_at_k(scored, 1)
        summary[f"recall_at_{k}"] = recall_at_k(scored, k)
        summary[f"ndcg_at_{k}"] = ndcg_at_k(scored, k)
        summary["rouge_l"] = sum(rouge_l(r.generated_answer, r.gold_answer) for r in scored) / len(scored)
        summary["bleu"] = sum(bleu(r.generated_answer, r.gold_answer) for r in scored) / len(scored)
        summary["retrieval_time_ms"] = _time_stats([r.retrieval_time_ms for r in scored])
        summary["generation_time_ms"] = _time_stats([r.generation_time_ms for r in scored])
        summary["total_time_ms"] = _time_stats(
            [r.retrieval_time_ms + r.generation_time_ms for r in scored]
        )
    if judge is not None and scored:
        verdicts = judge_accuracy(scored, judge, store, judge_template)
        summary["judge_accuracy"] = verdicts.accuracy_pct
        summary["judge_invalid"] = verdicts.n_invalid
    else:
        summary["judge_accuracy"] = None

    out_path = Path(out_path)
    save_predictions(records, out_path)
    summary_path = out_path.with_suffix(out_path.suffix + ".summary.json")
    summary_path.write_text(json.dumps(summary, indent=2), encoding="utf-8")
    return summary, out_path
