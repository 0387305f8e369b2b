"""Ingest a document collection and compare lexical vs dense retrieval.

Run: python demos/01_ingest_and_search.py
"""

from rqakit.corpus import ingest
from rqakit.models import HashingBowEmbedder
from rqakit.retrieval import bm25_index, bm25_search, dense_index, dense_search
from rqakit.synth import synthetic_documents

# 60 synthetic documents over 12 topics; same-topic documents share a source,
# exactly like pages crawled from one site section
docs = synthetic_documents(n_docs=60, n_topics=12, seed=0)
print(f"raw documents: {len(docs)}")
print(f"example metadata: {docs[0].metadata}")

store = ingest(docs, max_passage_tokens=64)
print(f"\npassages after chunking (max 64 tokens): {len(store)}")
example = next(iter(store))
print(f"example passage id={example.passage_id} tokens={example.token_count}")
print(f"  {example.content[:80]}...")

# lexical search: exact term matching, no training needed
query = example.content.split()[0]
lex = bm25_index(store)
hits = bm25_search(lex, query, k=3)
print(f"\nBM25 top-3 for query {query!r}:")
for pid, score in hits.hits:
    print(f"  {pid}  score={score:.3f}  source={store.get(pid).source}")

# dense search: an untrained bag-of-words embedder -- see demo 03 for training
embedder = HashingBowEmbedder(dim=64, n_buckets=4096, seed=0)
index = dense_index(store, embedder)
dense_hits = dense_search(index, embedder, query, k=3)
print(f"\nuntrained dense top-3 for the same query:")
for pid, score in dense_hits.hits:
    print(f"  {pid}  score={score:.3f}")

# the index persists to a single versioned file
index.save("/tmp/rqakit_demo_index.rqaidx")
print("\nindex saved to /tmp/rqakit_demo_index.rqaidx")
