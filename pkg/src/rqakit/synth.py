"""Synthetic topic-based corpora for demos, smoke tests, and desk-scale runs.

Each topic owns a disjoint vocabulary, so topic identity is a ground-truth
relevance oracle: a query built from topic t's words is answerable only by
topic t's passages.
"""

import random

from .corpus import PassageStore, RawDocument, ingest


def topic_vocab(topic: int, words_per_topic: int = 24) -> list[str]:
    return [f"t{topic:02d}w{j:02d}" for j in range(words_per_topic)]


def synthetic_documents(
    n_docs: int,
    n_topics: int = 32,
    words_per_topic: int = 24,
    tokens_per_doc: int = 60,
    seed: int = 0,
) -> list[RawDocument]:
    """Documents assigned to topics round-robin; same-topic docs share a source."""
    rng = random.Random(seed)
    docs = []
    for i in range(n_docs):
        topic = i % n_topics
        vocab = topic_vocab(topic, words_per_topic)
        words = [rng.choice(vocab) for _ in range(tokens_per_doc)]
        # sprinkle sentence ends so the chunker has boundaries to cut at
        sentences = []
        start = 0
        while start < len(words):
            length = rng.randint(5, 12)
            sentences.append(" ".join(words[start : start + length]) + ".")
            start += length
        docs.append(
            RawDocument(
                content=" ".join(sentences),
                metadata={"source": f"synthetic://topic{topic:02d}", "seq_num": i},
            )
        )
    return docs


def topic_corpus(
    n_topics: int = 32,
    words_per_topic: int = 24,
    tokens_per_passage: int = 30,
    queries_per_topic: int = 8,
    query_tokens: int = 4,
    seed: int = 0,
) -> tuple[PassageStore, list[tuple[str, str]], list[tuple[str, str]]]:
    """One passage per topic plus held-out (query, gold_passage_id) pairs.

    Passages draw from the first two thirds of a topic's vocabulary and
    queries from the last third, so queries and passages of the same topic
    never share a word: an untrained lexical embedder scores near chance and
    the query-to-passage association must be *learned*. Train and test
    queries are distinct draws from the same distribution.
    """
    rng = random.Random(seed)
    split = max(1, (2 * words_per_topic) // 3)
    docs = []
    for topic in range(n_topics):
        vocab = topic_vocab(topic, words_per_topic)
        words = [rng.choice(vocab[:split]) for _ in range(tokens_per_passage)]
        docs.append(
            RawDocument(
                content=" ".join(words) + ".",
                metadata={"source": f"synthetic://topic{topic:02d}", "seq_num": topic},
            )
        )
    store = ingest(docs, max_passage_tokens=max(16, tokens_per_passage + 4))
    gold_by_topic = {}
    for passage in store:
        topic = int(passage.source.rsplit("topic", 1)[1])
        gold_by_topic[topic] = passage.passage_id

    def sample_queries(count: int) -> list[tuple[str, str]]:
        queries = []
        for topic in range(n_topics):
            query_words = topic_vocab(topic, words_per_topic)[split:]
            for _ in range(count):
                query = " ".join(rng.choice(query_words) for _ in range(query_tokens))
                queries.append((query, gold_by_topic[topic]))
        return queries

    return store, sample_queries(queries_per_topic), sample_queries(queries_per_topic)
