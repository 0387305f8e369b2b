"""Synthesize question/answer/passage training data from a passage store.

The flow mirrors how such datasets are usually bootstrapped: sample gold
passages plus same-source hard negatives, prompt an LLM for questions and
answers, drop near-duplicate questions by ROUGE-L overlap, and split into
train/validation/test without leaking a gold passage across splits.
"""

import json
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

from .corpus import Passage, PassageStore, passage_id_for
from .errors import (
    GenerationBackendError,
    InsufficientCorpus,
    InsufficientData,
    LoadError,
    SchemaViolation,
    UnknownPassage,
)
from .llm import LLMClient, SamplingParams
from .metrics import rouge_l
from .templates import PromptTemplate, load_default
from .tokenization import Tokenizer, WhitespaceTokenizer

DEFAULT_ROUGE_DEDUP_THRESHOLD = 0.7
DEFAULT_QUESTIONS_PER_PASSAGE = 2
DEFAULT_HARD_NEGATIVES = 4

SPLITS = ("train", "validation", "test")


@dataclass
class QAPair:
    """A question, its answer, and the gold passage that supports it."""

    question: str
    answer: str
    gold_passage_id: str
    hard_negative_ids: list[str] = field(default_factory=list)
    split: str = "train"

    def to_dict(self) -> dict[str, Any]:
        return {
            "question": self.question,
            "answer": self.answer,
            "gold_passage_id": self.gold_passage_id,
            "hard_negative_ids": list(self.hard_negative_ids),
            "split": self.split,
        }

    @classmethod
    def from_dict(cls, record: dict[str, Any]) -> "QAPair":
        try:
            return cls(
                question=record["question"],
                answer=record["answer"],
                gold_passage_id=record["gold_passage_id"],
                hard_negative_ids=list(record.get("hard_negative_ids", [])),
                split=record.get("split", "train"),
            )
        except KeyError as exc:
            raise SchemaViolation(f"qa record missing {exc}") from exc

    def validate(self, store: PassageStore) -> None:
        if self.gold_passage_id not in store:
            raise UnknownPassage(f"gold passage {self.gold_passage_id} not in store")
        gold = store.get(self.gold_passage_id)
        for neg in self.hard_negative_ids:
            if neg == self.gold_passage_id:
                raise SchemaViolation("hard negative equals the gold passage")
            if store.get(neg).source != gold.source:
                raise SchemaViolation(f"hard negative {neg} crosses sources")


def sample_gold_and_negatives(
    store: PassageStore, n_gold: int, n_hard_neg: int, rng_seed: int
) -> list[tuple[str, list[str]]]:
    """Pick distinct gold passages and same-source hard negatives.

    Negatives are drawn uniformly without replacement from other passages of
    the gold passage's source; when fewer than ``n_hard_neg`` exist, all of
    them are returned.
    """
    if n_hard_neg < 0:
        raise ValueError("n_hard_neg must be >= 0")
    all_ids = store.passage_ids()
    if n_gold > len(all_ids):
        raise InsufficientCorpus(f"asked for {n_gold} gold passages, store has {len(all_ids)}")
    rng = random.Random(rng_seed)
    gold_ids = rng.sample(all_ids, n_gold)
    out = []
    for gold_id in gold_ids:
        source = store.get(gold_id).source
        candidates = [p.passage_id for p in store.passages_for_source(source) if p.passage_id != gold_id]
        negatives = rng.sample(candidates, min(n_hard_neg, len(candidates)))
        out.append((gold_id, negatives))
    return out


def generate_questions(
    client: LLMClient,
    gold: Sequence[Passage],
    questions_per_passage: int = DEFAULT_QUESTIONS_PER_PASSAGE,
    prompt_template: PromptTemplate | None = None,
    filter_fn: Callable[[Passage], bool] | None = None,
    sampling: SamplingParams | None = None,
    parallelism: int = 1,
) -> list[tuple[str, str]]:
    """Prompt the client for questions over every passage that passes the filter.

    Client calls may run concurrently (``parallelism`` > 1); results are
    reassembled in input order either way.
    """
    if questions_per_passage < 1:
        raise ValueError("questions_per_passage must be >= 1")
    prompt_template = prompt_template or load_default("question_gen")
    kept = [p for p in gold if filter_fn is None or filter_fn(p)]
    jobs = [
        (p.passage_id, prompt_template.render(passage=p.content, index=i + 1))
        for p in kept
        for i in range(questions_per_passage)
    ]

    def call(job: tuple[str, str]) -> tuple[str, str]:
        passage_id, prompt = job
        try:
            return client.generate(prompt, sampling), passage_id
        except GenerationBackendError:
            raise
        except Exception as exc:
            raise GenerationBackendError(f"question generation failed for {passage_id}: {exc}") from exc

    if parallelism > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            return list(pool.map(call, jobs))
    return [call(job) for job in jobs]


def dedup_questions(
    questions: Sequence[tuple[str, str]], rouge_l_threshold: float = DEFAULT_ROUGE_DEDUP_THRESHOLD
) -> list[tuple[str, str]]:
    """Drop questions whose ROUGE-L F1 against any retained question exceeds the threshold.

    Scan order is input order, so the result is stable and the operation is
    idempotent on its own output.
    """
    if not 0.0 <= rouge_l_threshold <= 1.0:
        raise ValueError("rouge_l_threshold must be in [0, 1]")
    retained: list[tuple[str, str]] = []
    for question, passage_id in questions:
        if any(rouge_l(question, prev) > rouge_l_threshold for prev, _ in retained):
            continue
        retained.append((question, passage_id))
    return retained


def generate_answers(
    client: LLMClient,
    items: Sequence[tuple[str, Passage]],
    store: PassageStore,
    prompt_template: PromptTemplate | None = None,
    hard_negatives: dict[str, list[str]] | None = None,
    sampling: SamplingParams | None = None,
    parallelism: int = 1,
) -> list[QAPair]:
    """Generate one answer per (question, gold passage) item.

    Hard negatives from the sampling step are attached to the resulting pairs
    by gold passage id.
    """
    prompt_template = prompt_template or load_default("answer_gen")
    hard_negatives = hard_negatives or {}
    for _, passage in items:
        if passage.passage_id not in store:
            raise UnknownPassage(f"passage {passage.passage_id} not in store")

    def call(item: tuple[str, Passage]) -> QAPair:
        question, passage = item
        prompt = prompt_template.render(question=question, passage=passage.content)
        try:
            answer = client.generate(prompt, sampling)
        except GenerationBackendError:
            raise
        except Exception as exc:
            raise GenerationBackendError(f"answer generation failed for {passage.passage_id}: {exc}") from exc
        return QAPair(
            question=question,
            answer=answer,
            gold_passage_id=passage.passage_id,
            hard_negative_ids=list(hard_negatives.get(passage.passage_id, [])),
        )

    if parallelism > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            return list(pool.map(call, items))
    return [call(item) for item in items]


def split_dataset(
    pairs: Sequence[QAPair],
    n_train: int | None,
    n_val: int,
    n_test: int,
    rng_seed: int,
) -> tuple[list[QAPair], list[QAPair], list[QAPair]]:
    """Split pairs into train/validation/test, disjoint by gold passage.

    Pairs sharing a gold passage always land in the same split. ``n_train``
    may be None, meaning "everything left after validation and test". Exact
    quotas are filled greedily over shuffled gold-passage groups; if a quota
    cannot be met, InsufficientData is raised.
    """
    pairs = list(pairs)
    requested = (n_train or 0) + n_val + n_test
    if requested > len(pairs):
        raise InsufficientData(f"requested {requested} pairs, have {len(pairs)}")
    groups: dict[str, list[QAPair]] = {}
    for pair in pairs:
        groups.setdefault(pair.gold_passage_id, []).append(pair)
    group_list = list(groups.values())
    random.Random(rng_seed).shuffle(group_list)

    def fill(quota: int, pool: list[list[QAPair]]) -> tuple[list[QAPair], list[list[QAPair]]]:
        taken: list[QAPair] = []
        rest: list[list[QAPair]] = []
        for group in pool:
            if len(taken) + len(group) <= quota:
                taken.extend(group)
            else:
                rest.append(group)
        if len(taken) < quota:
            raise InsufficientData(f"could not fill a split of {quota} pairs exactly")
        return taken, rest

    test, remaining = fill(n_test, group_list)
    val, remaining = fill(n_val, remaining)
    if n_train is None:
        train = [pair for group in remaining for pair in group]
    else:
        train, _ = fill(n_train, remaining)
    for split_name, split_pairs in zip(SPLITS, (train, val, test)):
        for pair in split_pairs:
            pair.split = split_name
    return train, val, test


def convert_generic_qa(
    records: Iterable[dict[str, Any]],
    store: PassageStore,
    tokenizer: Tokenizer | None = None,
) -> tuple[list[Passage], list[QAPair]]:
    """Convert ``{question, answer, positive_passages:[{content, source}]}`` records.

    Passages are deduplicated by (content, source); the first positive of each
    record becomes the gold passage. Returns the passages actually added to
    the store and one QAPair per record.
    """
    tokenizer = tokenizer or WhitespaceTokenizer()
    added: list[Passage] = []
    pairs: list[QAPair] = []
    seq_per_source: dict[str, int] = {}
    for index, record in enumerate(records):
        for key in ("question", "answer", "positive_passages"):
            if key not in record:
                raise SchemaViolation(f"record {index} missing field {key!r}")
        positives = record["positive_passages"]
        if not positives:
            raise SchemaViolation(f"record {index} has no positive passages")
        gold_id = None
        for j, pos in enumerate(positives):
            if "content" not in pos or "source" not in pos:
                raise SchemaViolation(f"record {index} positive {j} missing content/source")
            pid = passage_id_for(pos["content"], pos["source"])
            if j == 0:
                gold_id = pid
            if pid in store:
                continue
            seq = seq_per_source.setdefault(pos["source"], len(store.passages_for_source(pos["source"])))
            passage = Passage(
                passage_id=pid,
                content=pos["content"],
                source=pos["source"],
                seq_num=seq,
                token_count=len(tokenizer.tokenize(pos["content"])),
            )
            seq_per_source[pos["source"]] = seq + 1
            store.add(passage)
            added.append(passage)
        pairs.append(
            QAPair(question=record["question"], answer=record["answer"], gold_passage_id=gold_id)
        )
    return added, pairs


def save_pairs(pairs: Iterable[QAPair], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for pair in pairs:
            fh.write(json.dumps(pair.to_dict(), ensure_ascii=False) + "\n")


def load_pairs(path: str | Path) -> list[QAPair]:
    pairs = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                pairs.append(QAPair.from_dict(json.loads(line)))
            except (json.JSONDecodeError, SchemaViolation) as exc:
                raise LoadError(f"corrupt qa line {lineno}: {exc}", line=lineno) from exc
    return pairs
