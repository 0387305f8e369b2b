"""Command-line entry points: one subcommand per stage of the workflow.

    rqakit ingest          documents -> passages.jsonl
    rqakit generate-data   passages  -> qa.jsonl (mock or remote LLM)
    rqakit train-retriever qa + passages -> embedder checkpoint
    rqakit train-generator qa + passages -> generator checkpoint
    rqakit build-index     passages + embedder -> database directory
    rqakit make-pipeline   database + checkpoints -> pipeline manifest
    rqakit eval            manifest + test split -> predictions.jsonl + summary
    rqakit serve / worker  controller and pipeline workers
    rqakit demo-corpus     synthetic documents for smoke runs
"""

import json
import shutil
import threading
import time
from pathlib import Path

import click

from . import corpus as corpus_mod
from . import datagen, serving, synth
from .evaluation import evaluate_pipeline
from .generation import PromptAssembly, TinyDecoderBackend, TinyEncoderDecoderBackend
from .generator_train import GeneratorTrainConfig, train_generator
from .llm import MockLLMClient, make_client
from .models import (
    HashingBowEmbedder,
    TinyDecoderLM,
    TinyEncoderDecoder,
    WordVocab,
    load_embedder,
    load_language_model,
)
from .pipeline import load_pipeline
from .retrieval import dense_index
from .retriever_train import RetrieverTrainConfig, train_retriever


@click.group()
def main():
    """Retrieval-augmented QA toolkit."""


@main.command()
@click.option("--input", "input_path", required=True, help="JSONL of documents or a directory of .txt/.md files")
@click.option("--max-tokens", default=400, show_default=True)
@click.option("--out", "out_path", default="passages.jsonl", show_default=True)
def ingest(input_path, max_tokens, out_path):
    """Chunk raw documents into a passage store."""
    docs = corpus_mod.load_documents(input_path)
    store = corpus_mod.ingest(docs, max_passage_tokens=max_tokens)
    store.save(out_path)
    click.echo(f"wrote {len(store)} passages from {len(docs)} documents to {out_path}")


@main.command("generate-data")
@click.option("--passages", "passages_path", required=True)
@click.option("--client", "client_kind", type=click.Choice(["mock", "remote"]), default="mock", show_default=True)
@click.option("--n-gold", default=600, show_default=True)
@click.option("--questions-per-passage", default=2, show_default=True)
@click.option("--hard-neg", default=4, show_default=True)
@click.option("--dedup-threshold", default=0.7, show_default=True)
@click.option("--n-val", default=75, show_default=True)
@click.option("--n-test", default=75, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--parallelism", default=1, show_default=True)
@click.option("--out", "out_path", default="qa.jsonl", show_default=True)
def generate_data(passages_path, client_kind, n_gold, questions_per_passage, hard_neg,
                  dedup_threshold, n_val, n_test, seed, parallelism, out_path):
    """Sample gold passages, generate q/a pairs, dedup, and split."""
    store = corpus_mod.PassageStore.load(passages_path)
    client = make_client(client_kind)
    sampled = datagen.sample_gold_and_negatives(store, n_gold, hard_neg, seed)
    hard_map = dict(sampled)
    gold_passages = [store.get(pid) for pid, _ in sampled]
    questions = datagen.generate_questions(
        client, gold_passages, questions_per_passage, parallelism=parallelism
    )
    questions = datagen.dedup_questions(questions, dedup_threshold)
    items = [(q, store.get(pid)) for q, pid in questions]
    pairs = datagen.generate_answers(
        client, items, store, hard_negatives=hard_map, parallelism=parallelism
    )
    train, val, test = datagen.split_dataset(pairs, None, n_val, n_test, seed)
    datagen.save_pairs(train + val + test, out_path)
    click.echo(
        f"wrote {len(train)} train / {len(val)} validation / {len(test)} test pairs to {out_path}"
    )


@main.command("convert-qa")
@click.option("--input", "input_path", required=True,
              help="JSONL: {question, answer, positive_passages:[{content, source}]}")
@click.option("--passages", "passages_path", default=None,
              help="existing passage store to merge into (optional)")
@click.option("--passages-out", "passages_out", default="passages.jsonl", show_default=True)
@click.option("--out", "out_path", default="qa.jsonl", show_default=True)
def convert_qa_cmd(input_path, passages_path, passages_out, out_path):
    """Convert a generic QA dataset into passages + qa pairs."""
    store = corpus_mod.PassageStore.load(passages_path) if passages_path else corpus_mod.PassageStore()
    with open(input_path, "r", encoding="utf-8") as fh:
        records = [json.loads(line) for line in fh if line.strip()]
    added, pairs = datagen.convert_generic_qa(records, store)
    store.save(passages_out)
    datagen.save_pairs(pairs, out_path)
    click.echo(f"added {len(added)} passages ({len(store)} total), wrote {len(pairs)} pairs to {out_path}")


@main.command("train-retriever")
@click.option("--algo", type=click.Choice(["ctl", "dca", "rpg"]), default="ctl", show_default=True)
@click.option("--data", "data_path", required=True)
@click.option("--passages", "passages_path", required=True)
@click.option("--aux", "aux_path", default=None, help="generator checkpoint for dca/rpg teachers")
@click.option("--tau", default=0.05, show_default=True)
@click.option("--gamma", default=0.1, show_default=True)
@click.option("--beta", default=1.0, show_default=True)
@click.option("--k-train", default=8, show_default=True)
@click.option("--hard-neg", default=4, show_default=True)
@click.option("--dim", default=64, show_default=True)
@click.option("--buckets", default=4096, show_default=True)
@click.option("--batch-size", default=16, show_default=True)
@click.option("--lr", default=0.05, show_default=True)
@click.option("--steps", default=500, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_dir", required=True)
def train_retriever_cmd(algo, data_path, passages_path, aux_path, tau, gamma, beta, k_train,
                        hard_neg, dim, buckets, batch_size, lr, steps, seed, out_dir):
    """Train the embedding retriever with CTL, DCA, or RPG."""
    store = corpus_mod.PassageStore.load(passages_path)
    pairs = [p for p in datagen.load_pairs(data_path) if p.split == "train"]
    config = RetrieverTrainConfig(
        algorithm=algo, temperature_tau=tau, gamma=gamma, beta=beta, k_train=k_train,
        n_hard_negatives=hard_neg, batch_size=batch_size, learning_rate=lr,
        max_steps=steps, seed=seed,
    )
    aux_model = None
    if aux_path:
        model, vocab = load_language_model(aux_path)
        aux_model = (
            TinyDecoderBackend(model, vocab)
            if isinstance(model, TinyDecoderLM)
            else TinyEncoderDecoderBackend(model, vocab)
        )
    embedder = HashingBowEmbedder(dim=dim, n_buckets=buckets, seed=seed)
    _, log = train_retriever(embedder, pairs, store, config, aux_model, out_dir=out_dir)
    click.echo(f"trained {algo} retriever for {steps} steps, final loss {log.final_loss:.4f} -> {out_dir}")


def _vocab_for(store, pairs, assembly: PromptAssembly) -> WordVocab:
    texts = [p.content for p in store]
    texts += [q.question for q in pairs] + [q.answer for q in pairs]
    texts.append(assembly.template.render(history="", passages="", question=""))
    texts.append("question : context :")
    return WordVocab.build(texts)


@main.command("train-generator")
@click.option("--algo", type=click.Choice(["sft", "swr", "fid"]), default="sft", show_default=True)
@click.option("--data", "data_path", required=True)
@click.option("--passages", "passages_path", required=True)
@click.option("--retriever", "retriever_ckpt", default=None, help="frozen retriever for swr/fid")
@click.option("--k", "k_context", default=4, show_default=True)
@click.option("--d-model", default=64, show_default=True)
@click.option("--layers", default=2, show_default=True)
@click.option("--heads", default=2, show_default=True)
@click.option("--batch-size", default=8, show_default=True)
@click.option("--lr", default=3e-3, show_default=True)
@click.option("--steps", default=300, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_dir", required=True)
def train_generator_cmd(algo, data_path, passages_path, retriever_ckpt, k_context, d_model,
                        layers, heads, batch_size, lr, steps, seed, out_dir):
    """Train the answer generator with SFT, SwR, or FiD."""
    import torch

    store = corpus_mod.PassageStore.load(passages_path)
    pairs = [p for p in datagen.load_pairs(data_path) if p.split == "train"]
    assembly = PromptAssembly()
    vocab = _vocab_for(store, pairs, assembly)
    torch.manual_seed(seed)
    if algo == "fid":
        model = TinyEncoderDecoder(len(vocab), d_model=d_model, n_heads=heads, n_layers=layers)
        backend = TinyEncoderDecoderBackend(model, vocab)
    else:
        model = TinyDecoderLM(len(vocab), d_model=d_model, n_heads=heads, n_layers=layers)
        backend = TinyDecoderBackend(model, vocab)
    config = GeneratorTrainConfig(
        algorithm=algo, k_context=k_context, frozen_retriever_ckpt=retriever_ckpt,
        batch_size=batch_size, learning_rate=lr, max_steps=steps, seed=seed,
    )
    _, log = train_generator(backend, pairs, store, config, assembly, out_dir=out_dir)
    click.echo(f"trained {algo} generator for {steps} steps, final loss {log.final_loss:.4f} -> {out_dir}")


@main.command("build-index")
@click.option("--passages", "passages_path", required=True)
@click.option("--embedder", "embedder_ckpt", required=True)
@click.option("--out-dir", "out_dir", required=True, help="database directory for SimpleRQA")
def build_index_cmd(passages_path, embedder_ckpt, out_dir):
    """Embed every passage and write a database directory (passages + index)."""
    store = corpus_mod.PassageStore.load(passages_path)
    embedder = load_embedder(embedder_ckpt)
    index = dense_index(store, embedder)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    shutil.copyfile(passages_path, out_dir / "passages.jsonl")
    index.save(out_dir / "index.rqaidx")
    click.echo(f"indexed {len(index)} passages into {out_dir}")


@main.command("make-pipeline")
@click.option("--database", "database_path", required=True)
@click.option("--embedder", "embedder_ckpt", required=True)
@click.option("--generator", "generator_spec", required=True, help="checkpoint dir, 'mock', or 'remote'")
@click.option("--k", default=4, show_default=True)
@click.option("--prompt-budget", default=1024, show_default=True)
@click.option("--max-new-tokens", default=64, show_default=True)
@click.option("--out", "out_path", default="pipeline.json", show_default=True)
def make_pipeline_cmd(database_path, embedder_ckpt, generator_spec, k, prompt_budget,
                      max_new_tokens, out_path):
    """Write a pipeline manifest consumed by eval, serve, and worker."""
    from .pipeline import SimpleRQA

    pipeline = SimpleRQA.from_scratch(
        database_path, embedder_ckpt, generator_spec, k=k,
        prompt_budget=prompt_budget, max_new_tokens=max_new_tokens,
    )
    pipeline.save_manifest(out_path)
    click.echo(f"pipeline {pipeline.identity} -> {out_path}")


@main.command("eval")
@click.option("--pipeline", "pipeline_path", required=True)
@click.option("--test", "test_path", required=True, help="qa.jsonl; the test split is used")
@click.option("--passages", "passages_path", required=True)
@click.option("--k", default=4, show_default=True)
@click.option("--judge", "judge_kind", type=click.Choice(["none", "mock", "remote"]), default="none", show_default=True)
@click.option("--out", "out_path", default="predictions.jsonl", show_default=True)
def eval_cmd(pipeline_path, test_path, passages_path, k, judge_kind, out_path):
    """Evaluate a pipeline over the test split and emit predictions JSONL."""
    import hashlib

    store = corpus_mod.PassageStore.load(passages_path)
    test_pairs = [p for p in datagen.load_pairs(test_path) if p.split == "test"]
    if judge_kind == "none":
        judge = None
    elif judge_kind == "mock":
        # deterministic parseable verdicts so the whole judge path runs offline
        judge = MockLLMClient(
            script=lambda prompt: "VERDICT: "
            + ("CORRECT" if hashlib.sha256(prompt.encode()).digest()[0] % 2 == 0 else "INCORRECT")
        )
    else:
        judge = make_client(judge_kind)
    summary, path = evaluate_pipeline(
        pipeline_path, test_pairs, store, k=k, judge=judge, out_path=out_path
    )
    click.echo(json.dumps(summary, indent=2))
    click.echo(f"predictions -> {path}")


@main.command("serve")
@click.option("--port", default=8000, show_default=True)
@click.option("--workers-expected", default=1, show_default=True)
@click.option("--data-dir", default="./runs", show_default=True)
@click.option("--pipeline", "pipeline_path", default=None,
              help="manifest whose identity registered workers must match")
@click.option("--pipeline-identity", default=None, help="reject workers serving a different pipeline")
@click.option("--static-dir", default=None, help="frontend bundle served at /")
@click.option("--heartbeat-ttl", default=30.0, show_default=True)
@click.option("--worker-timeout", default=120.0, show_default=True)
def serve_cmd(port, workers_expected, data_dir, pipeline_path, pipeline_identity, static_dir,
              heartbeat_ttl, worker_timeout):
    """Run the controller (chat, feedback, and static-eval endpoints)."""
    import uvicorn

    if pipeline_path and not pipeline_identity:
        pipeline_identity = load_pipeline(pipeline_path).identity
    app = serving.create_controller_app(
        data_dir, expected_pipeline=pipeline_identity, heartbeat_ttl=heartbeat_ttl,
        worker_timeout=worker_timeout, static_dir=static_dir,
    )
    click.echo(f"controller on :{port}, waiting for {workers_expected} worker(s); data in {data_dir}")
    uvicorn.run(app, host="0.0.0.0", port=port, log_level="info")


@main.command("worker")
@click.option("--controller", "controller_url", required=True)
@click.option("--port", default=8001, show_default=True)
@click.option("--pipeline", "pipeline_path", required=True)
@click.option("--worker-id", default="worker-1", show_default=True)
@click.option("--heartbeat-interval", default=5.0, show_default=True)
def worker_cmd(controller_url, port, pipeline_path, worker_id, heartbeat_interval):
    """Run one pipeline worker and register it with the controller."""
    import uvicorn

    pipeline = load_pipeline(pipeline_path)
    app = serving.create_worker_app(pipeline, worker_id)
    base_url = f"http://127.0.0.1:{port}"

    def register_then_heartbeat():
        for _ in range(50):
            try:
                serving.register_with_controller(controller_url, worker_id, base_url, pipeline.identity)
                break
            except Exception:
                time.sleep(0.2)
        serving.heartbeat_forever(controller_url, worker_id, heartbeat_interval)

    threading.Thread(target=register_then_heartbeat, daemon=True).start()
    click.echo(f"worker {worker_id} serving pipeline {pipeline.identity} on :{port}")
    uvicorn.run(app, host="0.0.0.0", port=port, log_level="info")


@main.command("demo-corpus")
@click.option("--docs", default=200, show_default=True)
@click.option("--topics", default=32, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_path", default="docs.jsonl", show_default=True)
def demo_corpus_cmd(docs, topics, seed, out_path):
    """Write a synthetic topic-based document collection."""
    documents = synth.synthetic_documents(docs, n_topics=topics, seed=seed)
    with open(out_path, "w", encoding="utf-8") as fh:
        for doc in documents:
            fh.write(json.dumps({"content": doc.content, "metadata": doc.metadata}) + "\n")
    click.echo(f"wrote {docs} synthetic documents to {out_path}")


if __name__ == "__main__":
    main()
