"""Lexical (Okapi BM25) and dense (exact inner-product) retrieval.

The dense index is a brute-force scan over a row-major matrix: exact top-k,
no approximation. Ties break by ascending passage_id so rankings (and hence
Recall@k) are deterministic. Index files start with the magic string
``RQAIDX1`` followed by a JSON header and the raw vector block.
"""

import json
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .corpus import PassageStore
from .errors import DimensionMismatch, EmptyCorpus, EmptyQuery, IdentityMismatch, LoadError

INDEX_MAGIC = b"RQAIDX1\n"

BM25_K1 = 1.5
BM25_B = 0.75


class Embedder(Protocol):
    """Maps text to fixed-dimension vectors; deterministic in inference mode."""

    identity: str
    dimension: int

    def embed_query(self, text: str) -> np.ndarray: ...

    def embed_passage(self, text: str) -> np.ndarray: ...


@dataclass
class RetrievalResult:
    """Ordered hits for one query: (passage_id, score), scores non-increasing."""

    query: str
    hits: list[tuple[str, float]]
    k: int

    @property
    def passage_ids(self) -> list[str]:
        return [pid for pid, _ in self.hits]


def _rank_hits(ids: Sequence[str], scores: Sequence[float], k: int) -> list[tuple[str, float]]:
    order = sorted(range(len(ids)), key=lambda i: (-scores[i], ids[i]))
    return [(ids[i], float(scores[i])) for i in order[: min(k, len(ids))]]


class LexicalIndex:
    """Okapi BM25 over whitespace-lowercased tokens (k1=1.5, b=0.75)."""

    def __init__(self, store: PassageStore, k1: float = BM25_K1, b: float = BM25_B):
        if len(store) == 0:
            raise EmptyCorpus("cannot build a BM25 index over an empty store")
        self.k1 = k1
        self.b = b
        self.passage_ids: list[str] = []
        self._term_freqs: list[Counter] = []
        self._doc_lens: list[int] = []
        df: Counter = Counter()
        for passage in store:
            tokens = passage.content.lower().split()
            self.passage_ids.append(passage.passage_id)
            self._term_freqs.append(Counter(tokens))
            self._doc_lens.append(len(tokens))
            df.update(set(tokens))
        n = len(self.passage_ids)
        self._avgdl = sum(self._doc_lens) / n
        self._idf = {t: math.log(1 + (n - f + 0.5) / (f + 0.5)) for t, f in df.items()}

    def scores(self, query: str) -> list[float]:
        terms = query.lower().split()
        out = []
        for freqs, dl in zip(self._term_freqs, self._doc_lens):
            score = 0.0
            norm = self.k1 * (1 - self.b + self.b * dl / self._avgdl)
            for term in terms:
                idf = self._idf.get(term)
                if idf is None:
                    continue
                tf = freqs.get(term, 0)
                if tf:
                    score += idf * tf * (self.k1 + 1) / (tf + norm)
            out.append(score)
        return out

    def search(self, query: str, k: int) -> RetrievalResult:
        if not query.strip():
            raise EmptyQuery("BM25 query is empty")
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        hits = _rank_hits(self.passage_ids, self.scores(query), k)
        return RetrievalResult(query=query, hits=hits, k=k)


def bm25_index(store: PassageStore) -> LexicalIndex:
    return LexicalIndex(store)


def bm25_search(index: LexicalIndex, query: str, k: int) -> RetrievalResult:
    return index.search(query, k)


class VectorIndex:
    """Exact inner-product index over passage vectors."""

    def __init__(self, vectors: np.ndarray, passage_ids: Sequence[str], embedder_identity: str):
        vectors = np.asarray(vectors)
        if vectors.ndim != 2:
            raise DimensionMismatch(f"expected a 2-d vector matrix, got shape {vectors.shape}")
        if vectors.shape[0] != len(passage_ids):
            raise DimensionMismatch(
                f"{vectors.shape[0]} vectors for {len(passage_ids)} passage ids"
            )
        self.vectors = vectors
        self.passage_ids = list(passage_ids)
        self.embedder_identity = embedder_identity

    @property
    def dimension(self) -> int:
        return int(self.vectors.shape[1])

    def __len__(self) -> int:
        return len(self.passage_ids)

    def _check_embedder(self, embedder: Embedder) -> None:
        if embedder.identity != self.embedder_identity:
            raise IdentityMismatch(
                f"index built with {self.embedder_identity!r}, searched with {embedder.identity!r}"
            )

    def search_vector(self, query_vec: np.ndarray, k: int) -> list[tuple[str, float]]:
        query_vec = np.asarray(query_vec).reshape(-1)
        if self.vectors.shape[1] != query_vec.shape[0]:
            raise DimensionMismatch(
                f"index dimension {self.vectors.shape[1]}, query dimension {query_vec.shape[0]}"
            )
        scores = self.vectors @ query_vec
        return _rank_hits(self.passage_ids, scores.tolist(), k)

    def search(self, embedder: Embedder, query: str, k: int) -> RetrievalResult:
        self._check_embedder(embedder)
        hits = self.search_vector(embedder.embed_query(query), k)
        return RetrievalResult(query=query, hits=hits, k=k)

    def save(self, path: str | Path) -> None:
        header = {
            "embedder_identity": self.embedder_identity,
            "dimension": int(self.vectors.shape[1]),
            "count": len(self.passage_ids),
            "dtype": str(self.vectors.dtype),
        }
        with Path(path).open("wb") as fh:
            fh.write(INDEX_MAGIC)
            fh.write((json.dumps(header) + "\n").encode("utf-8"))
            fh.write(np.ascontiguousarray(self.vectors).tobytes())
            fh.write(json.dumps(self.passage_ids).encode("utf-8"))

    @classmethod
    def load(cls, path: str | Path) -> "VectorIndex":
        try:
            with Path(path).open("rb") as fh:
                magic = fh.read(len(INDEX_MAGIC))
                if magic != INDEX_MAGIC:
                    raise LoadError(f"bad index magic {magic!r}")
                header = json.loads(fh.readline().decode("utf-8"))
                dtype = np.dtype(header["dtype"])
                count, dim = int(header["count"]), int(header["dimension"])
                block = fh.read(count * dim * dtype.itemsize)
                vectors = np.frombuffer(block, dtype=dtype).reshape(count, dim).copy()
                passage_ids = json.loads(fh.read().decode("utf-8"))
        except LoadError:
            raise
        except Exception as exc:
            raise LoadError(f"corrupt index file: {exc}") from exc
        if len(passage_ids) != count:
            raise LoadError(f"header count {count} != {len(passage_ids)} passage ids")
        return cls(vectors, passage_ids, header["embedder_identity"])


def dense_index(store: PassageStore, embedder: Embedder, batch_size: int = 64) -> VectorIndex:
    """Embed every passage and build the exact index."""
    passages = list(store)
    vectors = np.stack([embedder.embed_passage(p.content) for p in passages]) if passages else (
        np.zeros((0, embedder.dimension))
    )
    return VectorIndex(vectors, [p.passage_id for p in passages], embedder.identity)


def dense_search(index: VectorIndex, embedder: Embedder, query: str, k: int) -> RetrievalResult:
    return index.search(embedder, query, k)


def save_index(index: VectorIndex, path: str | Path) -> None:
    index.save(path)


def load_index(path: str | Path) -> VectorIndex:
    return VectorIndex.load(path)
