"""Assemble an end-to-end QA pipeline and extend it with a custom component.

Run: python demos/05_assemble_pipeline.py
"""

import tempfile
from pathlib import Path

from rqakit.corpus import ingest
from rqakit.models import HashingBowEmbedder
from rqakit.pipeline import Component, DialogueSession, RQAOutput, SimpleRQA
from rqakit.retrieval import dense_index
from rqakit.synth import synthetic_documents

with tempfile.TemporaryDirectory() as tmp:
    tmp = Path(tmp)
    store = ingest(synthetic_documents(n_docs=40, n_topics=8, seed=0), max_passage_tokens=64)
    embedder = HashingBowEmbedder(dim=32, n_buckets=1024, seed=0)
    embedder.save(tmp / "embedder")

    # a "database" is a directory holding the passages and their index
    db = tmp / "db"
    db.mkdir()
    store.save(db / "passages.jsonl")
    dense_index(store, embedder).save(db / "index.rqaidx")

    # ready-made pipeline: retriever -> generator (mock backend here)
    rqa = SimpleRQA.from_scratch(
        database_path=db,
        embedding_model_name_or_path=str(tmp / "embedder"),
        qa_model_name_or_path="mock",
        k=4,
    )
    question = next(iter(store)).content.split()[0]
    response = rqa.qa(
        batch_questions=[question],
        batch_dialogue_session=[DialogueSession()],
    )
    print(f"Q: {question}")
    print(f"A: {response.batch_answers[0][:70]}...")
    print(f"sources: {[p.passage_id for p in response.batch_source_documents[0]]}")

    # extend the pipeline: a component is a run() plus its declared input keys
    class DontKnowSafetyFilter(Component):
        run_input_keys = [
            "batch_questions",
            "batch_source_documents",
            "batch_dialogue_session",
            "batch_answers",
        ]

        def run(self, **kwargs):
            return RQAOutput(
                batch_answers=["I don't know." for _ in kwargs["batch_answers"]],
                batch_source_documents=kwargs["batch_source_documents"],
                batch_dialogue_session=kwargs["batch_dialogue_session"],
            )

    rqa.components.append(DontKnowSafetyFilter())
    filtered = rqa.qa([question], [DialogueSession()])
    print(f"\nwith the filter appended: {filtered.batch_answers[0]!r}")
    print(f"sources still flow through: {len(filtered.batch_source_documents[0])} passages")

    # pipelines serialize to a manifest consumed by `rqakit eval` and workers
    rqa.components.pop()
    rqa.save_manifest(tmp / "pipeline.json")
    print(f"\nmanifest written; pipeline identity = {rqa.identity}")
