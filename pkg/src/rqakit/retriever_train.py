"""Retriever trainers: contrastive learning (CTL) and two distillation
objectives — from an encoder-decoder's cross-attention mass (DCA) and from a
decoder's answer log-likelihood (RPG).

CTL is InfoNCE over in-batch positives plus per-query hard negatives. Both
distillation losses are KL(teacher ‖ retriever) where the teacher
distribution is detached; only the retriever receives gradients.
"""

import json
import random
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Protocol, Sequence

import torch
import torch.nn.functional as F

from .corpus import PassageStore
from .datagen import QAPair
from .errors import ConfigError, NumericalError, ShapeError
from .models import HashingBowEmbedder
from .training import TrainLog, make_optimizer

ALGORITHMS = ("ctl", "dca", "rpg")


@dataclass
class RetrieverTrainConfig:
    algorithm: str = "ctl"
    temperature_tau: float = 0.05
    gamma: float = 0.1
    beta: float = 1.0
    k_train: int = 8
    n_hard_negatives: int = 4
    in_batch_negatives: bool = True
    batch_size: int = 16
    learning_rate: float = 0.05
    max_steps: int = 500
    seed: int = 0

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown retriever algorithm {self.algorithm!r}")
        if min(self.temperature_tau, self.gamma, self.beta) <= 0:
            raise ConfigError("temperatures must be positive")
        if self.algorithm in ("dca", "rpg") and self.k_train < 2:
            raise ConfigError("distillation needs k_train >= 2")


class CrossAttentionTeacher(Protocol):
    """Encoder-decoder teacher exposing per-passage cross-attention."""

    is_encoder_decoder: bool

    def cross_attention_scores(
        self, question: str, passages: Sequence[str], answer: str
    ) -> tuple[torch.Tensor, list[int]]: ...


def _check_finite(tensor: torch.Tensor, what: str) -> None:
    if not torch.isfinite(tensor).all():
        raise NumericalError(f"non-finite values in {what}")


def ctl_loss(
    query_vecs: torch.Tensor,
    positive_vecs: torch.Tensor,
    hard_negative_vecs: torch.Tensor | None = None,
    tau: float = 0.05,
    in_batch_negatives: bool = True,
) -> torch.Tensor:
    """InfoNCE: mean over queries of -log softmax(sim(q, p+)/tau) over candidates.

    Candidates for query i are all in-batch positives plus query i's own hard
    negatives (shape n×m×d, m may be 0).
    """
    _check_finite(query_vecs, "query vectors")
    _check_finite(positive_vecs, "positive vectors")
    n = query_vecs.shape[0]
    if in_batch_negatives:
        logits = query_vecs @ positive_vecs.T
        labels = torch.arange(n, device=query_vecs.device)
    else:
        logits = (query_vecs * positive_vecs).sum(dim=-1, keepdim=True)
        labels = torch.zeros(n, dtype=torch.long, device=query_vecs.device)
    if hard_negative_vecs is not None and hard_negative_vecs.numel() > 0:
        _check_finite(hard_negative_vecs, "hard negative vectors")
        neg_logits = torch.einsum("nd,nmd->nm", query_vecs, hard_negative_vecs)
        logits = torch.cat([logits, neg_logits], dim=1)
    return F.cross_entropy(logits / tau, labels)


def dca_targets(cross_attention: torch.Tensor, passage_token_counts: Sequence[int]) -> torch.Tensor:
    """Per-passage attention mass, averaged over every leading axis.

    The last axis must cover exactly the concatenated encoder tokens of the k
    passages; the result is renormalized to a probability vector over k.
    """
    counts = list(passage_token_counts)
    if sum(counts) != cross_attention.shape[-1]:
        raise ShapeError(
            f"passage token counts sum to {sum(counts)} but attention covers "
            f"{cross_attention.shape[-1]} encoder tokens"
        )
    _check_finite(cross_attention, "cross attention")
    # float64: targets are tiny vectors and downstream tolerances are 1e-9
    flat = cross_attention.double().reshape(-1, cross_attention.shape[-1]).mean(dim=0)
    masses = torch.stack([segment.sum() for segment in torch.split(flat, counts)])
    return masses / masses.sum()


def rpg_targets(lm_loglik: torch.Tensor | Sequence[float], beta: float = 1.0) -> torch.Tensor:
    """Teacher distribution: softmax of answer log-likelihoods at temperature beta."""
    loglik = torch.as_tensor(lm_loglik).double()
    _check_finite(loglik, "LM log-likelihoods")
    if loglik.numel() < 2:
        raise ConfigError("need at least two candidate passages")
    return torch.softmax(loglik / beta, dim=-1)


def distill_loss(
    targets: torch.Tensor, retriever_scores: torch.Tensor, temp: float = 1.0
) -> torch.Tensor:
    """KL(teacher ‖ softmax(scores/temp)); no gradient flows into the teacher."""
    _check_finite(retriever_scores, "retriever scores")
    targets = targets.detach().double()
    log_p = F.log_softmax(retriever_scores.double() / temp, dim=-1)
    safe_log_q = torch.where(targets > 0, targets.clamp_min(1e-300).log(), torch.zeros_like(targets))
    return torch.where(targets > 0, targets * (safe_log_q - log_p), torch.zeros_like(targets)).sum()


def _candidate_ids(
    pair: QAPair, store: PassageStore, k_train: int, rng: random.Random
) -> list[str]:
    """Gold first, then hard negatives, then random fill — k_train total."""
    ids = [pair.gold_passage_id]
    ids.extend(pid for pid in pair.hard_negative_ids if pid in store)
    if len(ids) < k_train:
        pool = [pid for pid in store.passage_ids() if pid not in set(ids)]
        ids.extend(rng.sample(pool, min(k_train - len(ids), len(pool))))
    return ids[:k_train]


def _negative_contents(
    pair: QAPair, store: PassageStore, m: int, rng: random.Random
) -> list[str]:
    ids = [pid for pid in pair.hard_negative_ids if pid in store][:m]
    if len(ids) < m:
        pool = [pid for pid in store.passage_ids() if pid != pair.gold_passage_id and pid not in set(ids)]
        ids.extend(rng.sample(pool, min(m - len(ids), len(pool))))
    return [store.get(pid).content for pid in ids]


def train_retriever(
    embedder: HashingBowEmbedder,
    data: Sequence[QAPair],
    store: PassageStore,
    config: RetrieverTrainConfig,
    aux_model=None,
    out_dir: str | Path | None = None,
) -> tuple[HashingBowEmbedder, TrainLog]:
    """Run ``max_steps`` optimizer steps of the configured algorithm.

    DCA needs an encoder-decoder aux model exposing cross-attention; RPG
    needs a decoder aux model exposing log-likelihoods. Teacher targets are
    computed once per pair (the teacher is frozen) while retriever scores are
    recomputed every step.
    """
    algo = config.algorithm
    if algo == "dca":
        if aux_model is None or not getattr(aux_model, "is_encoder_decoder", False):
            raise ConfigError("DCA needs an encoder-decoder aux model")
        if not hasattr(aux_model, "cross_attention_scores"):
            raise ConfigError("DCA aux model must expose cross_attention_scores")
    if algo == "rpg":
        if aux_model is None or getattr(aux_model, "is_encoder_decoder", True):
            raise ConfigError("RPG needs a decoder aux model")
        if not hasattr(aux_model, "loglikelihood"):
            raise ConfigError("RPG aux model must expose loglikelihood")
    if not data:
        raise ConfigError("no training pairs")

    torch.manual_seed(config.seed)
    rng = random.Random(config.seed)
    log = TrainLog(algorithm=algo, config=asdict(config))
    optimizer, scheduler = make_optimizer(
        embedder.parameters(), config.learning_rate, config.max_steps
    )

    pairs = list(data)
    candidates = {
        i: _candidate_ids(pair, store, config.k_train, rng) for i, pair in enumerate(pairs)
    }
    negatives = {
        i: _negative_contents(pair, store, config.n_hard_negatives, rng)
        for i, pair in enumerate(pairs)
    }
    teacher_cache: dict[int, torch.Tensor] = {}

    def teacher_targets(index: int) -> torch.Tensor:
        if index not in teacher_cache:
            pair = pairs[index]
            contents = [store.get(pid).content for pid in candidates[index]]
            with torch.no_grad():
                if algo == "dca":
                    attention, counts = aux_model.cross_attention_scores(
                        pair.question, contents, pair.answer
                    )
                    teacher_cache[index] = dca_targets(attention, counts)
                else:
                    logliks = [
                        aux_model.loglikelihood(
                            f"question: {pair.question} context: {content}", pair.answer
                        )
                        for content in contents
                    ]
                    teacher_cache[index] = rpg_targets(torch.tensor(logliks), config.beta)
        return teacher_cache[index]

    order: list[int] = []
    embedder.train()
    for _ in range(config.max_steps):
        if len(order) < config.batch_size:
            refill = list(range(len(pairs)))
            rng.shuffle(refill)
            order.extend(refill)
        batch = [order.pop(0) for _ in range(min(config.batch_size, len(order)))]

        if algo == "ctl":
            questions = [pairs[i].question for i in batch]
            golds = [store.get(pairs[i].gold_passage_id).content for i in batch]
            query_vecs = embedder.encode(questions)
            positive_vecs = embedder.encode(golds)
            m = config.n_hard_negatives
            if m > 0:
                flat = [text for i in batch for text in negatives[i][:m]]
                neg_vecs = embedder.encode(flat).reshape(len(batch), m, -1)
            else:
                neg_vecs = None
            loss = ctl_loss(
                query_vecs,
                positive_vecs,
                neg_vecs,
                tau=config.temperature_tau,
                in_batch_negatives=config.in_batch_negatives,
            )
        else:
            temp = 1.0 if algo == "dca" else config.gamma
            per_pair = []
            for i in batch:
                contents = [store.get(pid).content for pid in candidates[i]]
                q_vec = embedder.encode([pairs[i].question])[0]
                passage_vecs = embedder.encode(contents)
                scores = passage_vecs @ q_vec
                per_pair.append(distill_loss(teacher_targets(i), scores, temp))
            loss = torch.stack(per_pair).mean()

        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        scheduler.step()
        log.record(loss.item())

    embedder.eval()
    if out_dir is not None:
        out_dir = Path(out_dir)
        embedder.save(out_dir)
        log.save(out_dir / "trainlog.json")
        (out_dir / "train_config.json").write_text(
            json.dumps(asdict(config), indent=2), encoding="utf-8"
        )
    return embedder, log
