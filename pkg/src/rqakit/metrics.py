"""Retrieval and generation metrics.

All text metrics tokenize on whitespace. ``recall_at_k``/``ndcg_at_k`` accept
any records exposing ``gold_passage_id`` and ``retrieved_passage_ids``
(binary relevance, one gold passage per record).
"""

import math
from typing import Sequence

from .errors import EmptyEvalSet


def _lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    """Longest common subsequence length, single-row DP."""
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0] * (len(b) + 1)
        for j, y in enumerate(b, start=1):
            if x == y:
                cur[j] = prev[j - 1] + 1
            else:
                cur[j] = max(prev[j], cur[j - 1])
        prev = cur
    return prev[-1]


def rouge_l(candidate: str, reference: str) -> float:
    """ROUGE-L F1 over whitespace tokens; 0.0 when either side is empty."""
    cand = candidate.split()
    ref = reference.split()
    if not cand or not ref:
        return 0.0
    lcs = _lcs_length(cand, ref)
    if lcs == 0:
        return 0.0
    recall = lcs / len(ref)
    precision = lcs / len(cand)
    return 2 * recall * precision / (recall + precision)


def _ngram_counts(tokens: Sequence[str], n: int) -> dict[tuple[str, ...], int]:
    counts: dict[tuple[str, ...], int] = {}
    for i in range(len(tokens) - n + 1):
        gram = tuple(tokens[i : i + n])
        counts[gram] = counts.get(gram, 0) + 1
    return counts


def bleu(candidate: str, reference: str, max_n: int = 4) -> float:
    """Sentence BLEU with add-1 smoothing for n >= 2 and a brevity penalty.

    Geometric mean of clipped n-gram precisions; a zero unigram precision
    yields 0.0. Empty candidate yields 0.0.
    """
    cand = candidate.split()
    ref = reference.split()
    if not cand:
        return 0.0
    log_precisions = []
    for n in range(1, max_n + 1):
        cand_counts = _ngram_counts(cand, n)
        ref_counts = _ngram_counts(ref, n)
        clipped = sum(min(c, ref_counts.get(g, 0)) for g, c in cand_counts.items())
        total = sum(cand_counts.values())
        if n == 1:
            if clipped == 0:
                return 0.0
            precision = clipped / total
        else:
            precision = (clipped + 1) / (total + 1)
        log_precisions.append(math.log(precision))
    brevity = math.exp(min(0.0, 1.0 - len(ref) / len(cand)))
    return brevity * math.exp(sum(log_precisions) / max_n)


def recall_at_k(records: Sequence, k: int) -> float:
    """Fraction of records whose gold passage appears in the top-k hits."""
    if not records:
        raise EmptyEvalSet("recall_at_k over zero records")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    hit = sum(1 for r in records if r.gold_passage_id in list(r.retrieved_passage_ids)[:k])
    return hit / len(records)


def ndcg_at_k(records: Sequence, k: int) -> float:
    """Mean DCG@k / IDCG with binary relevance and a single gold passage.

    DCG = 1/log2(rank + 1) when the gold passage sits at rank <= k (ranks are
    1-based), else 0; IDCG = 1.
    """
    if not records:
        raise EmptyEvalSet("ndcg_at_k over zero records")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    total = 0.0
    for r in records:
        top = list(r.retrieved_passage_ids)[:k]
        if r.gold_passage_id in top:
            rank = top.index(r.gold_passage_id) + 1
            total += 1.0 / math.log2(rank + 1)
    return total / len(records)
