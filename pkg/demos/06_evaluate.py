"""Evaluate a pipeline: retrieval metrics, generation metrics, judge verdicts,
and a predictions JSONL ready for human review.

Run: python demos/06_evaluate.py
"""

import json
import tempfile
from pathlib import Path

from rqakit.corpus import ingest
from rqakit.datagen import QAPair
from rqakit.evaluation import evaluate_pipeline, load_predictions
from rqakit.llm import MockLLMClient
from rqakit.models import HashingBowEmbedder
from rqakit.pipeline import SimpleRQA
from rqakit.retrieval import dense_index
from rqakit.synth import synthetic_documents

with tempfile.TemporaryDirectory() as tmp:
    tmp = Path(tmp)
    store = ingest(synthetic_documents(n_docs=40, n_topics=8, seed=0), max_passage_tokens=64)
    embedder = HashingBowEmbedder(dim=32, n_buckets=1024, seed=0)
    embedder.save(tmp / "embedder")
    db = tmp / "db"
    db.mkdir()
    store.save(db / "passages.jsonl")
    dense_index(store, embedder).save(db / "index.rqaidx")
    rqa = SimpleRQA.from_scratch(db, str(tmp / "embedder"), "mock", k=4)

    # test items: the question is a few words lifted from the gold passage
    test_pairs = []
    for passage in list(store)[:12]:
        words = passage.content.split()
        test_pairs.append(
            QAPair(" ".join(words[:4]) + " ?", " ".join(words[:6]), passage.passage_id, split="test")
        )

    # a scripted judge grades every answer CORRECT; swap for a remote client
    judge = MockLLMClient(script=lambda prompt: "VERDICT: CORRECT")
    summary, path = evaluate_pipeline(
        rqa, test_pairs, store, k=4, judge=judge, out_path=tmp / "predictions.jsonl"
    )
    print(json.dumps({k: v for k, v in summary.items() if "time" not in k}, indent=2))

    records = load_predictions(path)
    print(f"\n{len(records)} prediction records; first record:")
    first = records[0].to_dict()
    first["retrieved_passage_ids"] = first["retrieved_passage_ids"][:2] + ["..."]
    print(json.dumps(first, indent=2)[:500])
