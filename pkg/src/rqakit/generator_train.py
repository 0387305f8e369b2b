"""Generator trainers: supervised finetuning on gold passages (SFT), the same
with contexts fetched by a frozen retriever (SwR), and fusion-in-decoder
training for encoder-decoder models (FiD).

Cross-entropy is computed over answer tokens only by default; prompt tokens
are masked out of the loss.
"""

import json
import random
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import torch
import torch.nn.functional as F

from .corpus import PassageStore
from .datagen import QAPair
from .errors import ConfigError, EmptyContinuation
from .generation import (
    PromptAssembly,
    TinyDecoderBackend,
    TinyEncoderDecoderBackend,
    assemble_prompt,
    build_fid_input,
)
from .models import BOS, EOS, load_embedder, save_language_model
from .retrieval import VectorIndex, dense_index
from .training import TrainLog, make_optimizer

ALGORITHMS = ("sft", "swr", "fid")


@dataclass
class GeneratorTrainConfig:
    algorithm: str = "sft"
    k_context: int = 4
    frozen_retriever_ckpt: str | None = None
    per_passage_budget: int = 128
    loss_mask: bool = True
    batch_size: int = 8
    learning_rate: float = 3e-3
    max_steps: int = 300
    seed: int = 0

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown generator algorithm {self.algorithm!r}")
        if self.k_context < 1:
            raise ConfigError("k_context must be >= 1")
        if self.algorithm in ("swr", "fid") and not self.frozen_retriever_ckpt:
            raise ConfigError(f"{self.algorithm} needs frozen_retriever_ckpt")


def _decoder_batch_loss(
    backend: TinyDecoderBackend,
    examples: Sequence[tuple[str, str]],
    loss_mask: bool = True,
) -> torch.Tensor:
    """Mean next-token cross-entropy over answer tokens for (prompt, answer) pairs."""
    vocab = backend.vocab
    rows, labels = [], []
    for prompt, answer in examples:
        answer_ids = vocab.encode(answer)
        if not answer_ids:
            raise EmptyContinuation(f"answer tokenizes to nothing: {answer!r}")
        prompt_ids = [BOS] + vocab.encode(prompt)
        ids = prompt_ids + answer_ids + [EOS]
        # labels are the next-token targets; -100 masks a position out
        target = ids[1:]
        if loss_mask:
            target = [-100] * (len(prompt_ids) - 1) + target[len(prompt_ids) - 1 :]
        rows.append(ids[:-1])
        labels.append(target)
    width = max(len(r) for r in rows)
    ids_tensor = torch.full((len(rows), width), 0, dtype=torch.long)
    label_tensor = torch.full((len(rows), width), -100, dtype=torch.long)
    for i, (row, target) in enumerate(zip(rows, labels)):
        ids_tensor[i, : len(row)] = torch.tensor(row)
        label_tensor[i, : len(target)] = torch.tensor(target)
    logits = backend.model(ids_tensor)
    return F.cross_entropy(
        logits.reshape(-1, logits.shape[-1]), label_tensor.reshape(-1), ignore_index=-100
    )


def sft_loss(
    backend: TinyDecoderBackend,
    batch: Sequence[QAPair],
    store: PassageStore,
    assembly: PromptAssembly | None = None,
    loss_mask: bool = True,
) -> torch.Tensor:
    """Answer-token cross-entropy with the gold passage as the only context."""
    assembly = assembly or PromptAssembly()
    examples = [
        (assemble_prompt(pair.question, [store.get(pair.gold_passage_id)], None, assembly), pair.answer)
        for pair in batch
    ]
    return _decoder_batch_loss(backend, examples, loss_mask=loss_mask)


def swr_build_examples(
    embedder,
    index: VectorIndex,
    pairs: Sequence[QAPair],
    store: PassageStore,
    k_context: int = 4,
    assembly: PromptAssembly | None = None,
) -> list[tuple[str, str]]:
    """Build (prompt, answer) pairs whose contexts come from the frozen retriever.

    The retrieved top-k is used as-is — the gold passage is not forced in.
    """
    assembly = assembly or PromptAssembly()
    examples = []
    for pair in pairs:
        result = index.search(embedder, pair.question, k_context)
        passages = [store.get(pid) for pid in result.passage_ids]
        examples.append((assemble_prompt(pair.question, passages, None, assembly), pair.answer))
    return examples


def _fid_contexts(
    embedder, index: VectorIndex, pair: QAPair, store: PassageStore, k_context: int
) -> list[str]:
    """Frozen-retriever top-k with the gold passage forced in (replacing the last hit)."""
    hits = index.search(embedder, pair.question, k_context).passage_ids
    if pair.gold_passage_id not in hits:
        hits = hits[: k_context - 1] + [pair.gold_passage_id] if hits else [pair.gold_passage_id]
    return [store.get(pid).content for pid in hits]


def fid_loss(
    backend: TinyEncoderDecoderBackend,
    batch: Sequence[tuple[str, Sequence[str], str]],
    per_passage_budget: int = 128,
) -> torch.Tensor:
    """Seq2seq cross-entropy of each answer given its FiD-encoded passages."""
    if not backend.is_encoder_decoder:
        raise ConfigError("fid_loss needs an encoder-decoder backend")
    vocab = backend.vocab
    total = torch.zeros((), dtype=backend.model.head.weight.dtype)
    count = 0
    for question, passages, answer in batch:
        answer_ids = vocab.encode(answer)
        if not answer_ids:
            raise EmptyContinuation(f"answer tokenizes to nothing: {answer!r}")
        fid = build_fid_input(question, list(passages), per_passage_budget)
        id_lists = [vocab.encode(ctx) or [EOS] for ctx in fid.contexts]
        memory = backend.model.encode_fid(id_lists)
        decoder_ids = torch.tensor([[BOS] + answer_ids], dtype=torch.long)
        targets = torch.tensor([answer_ids + [EOS]], dtype=torch.long)
        logits = backend.model.decode(memory, decoder_ids)
        total = total + F.cross_entropy(
            logits.reshape(-1, logits.shape[-1]), targets.reshape(-1), reduction="sum"
        )
        count += targets.numel()
    return total / count


def train_generator(
    backend,
    data: Sequence[QAPair],
    store: PassageStore,
    config: GeneratorTrainConfig,
    assembly: PromptAssembly | None = None,
    out_dir: str | Path | None = None,
) -> tuple[object, TrainLog]:
    """Run ``max_steps`` optimizer steps of the configured generator trainer.

    SFT/SwR expect a decoder backend; FiD expects an encoder-decoder. SwR and
    FiD retrieve their contexts once up front — the retriever is frozen, so
    contexts cannot change during training.
    """
    algo = config.algorithm
    if algo in ("sft", "swr") and backend.is_encoder_decoder:
        raise ConfigError(f"{algo} needs a decoder backend")
    if algo == "fid" and not backend.is_encoder_decoder:
        raise ConfigError("fid needs an encoder-decoder backend")
    if not data:
        raise ConfigError("no training pairs")
    assembly = assembly or PromptAssembly()

    torch.manual_seed(config.seed)
    rng = random.Random(config.seed)

    pairs = list(data)
    if algo == "sft":
        examples = [
            (
                assemble_prompt(p.question, [store.get(p.gold_passage_id)], None, assembly),
                p.answer,
            )
            for p in pairs
        ]
    else:
        embedder = load_embedder(config.frozen_retriever_ckpt)
        index = dense_index(store, embedder)
        if algo == "swr":
            examples = swr_build_examples(embedder, index, pairs, store, config.k_context, assembly)
        else:
            examples = [
                (p.question, _fid_contexts(embedder, index, p, store, config.k_context), p.answer)
                for p in pairs
            ]

    log = TrainLog(algorithm=algo, config=asdict(config))
    optimizer, scheduler = make_optimizer(
        backend.model.parameters(), config.learning_rate, config.max_steps
    )
    order: list[int] = []
    backend.model.train()
    for _ in range(config.max_steps):
        if len(order) < config.batch_size:
            refill = list(range(len(examples)))
            rng.shuffle(refill)
            order.extend(refill)
        batch = [examples[order.pop(0)] for _ in range(min(config.batch_size, len(order)))]
        if algo == "fid":
            loss = fid_loss(backend, batch, config.per_passage_budget)
        else:
            loss = _decoder_batch_loss(backend, batch, loss_mask=config.loss_mask)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        scheduler.step()
        log.record(loss.item())
    backend.model.eval()

    if out_dir is not None:
        out_dir = Path(out_dir)
        save_language_model(backend.model, backend.vocab, out_dir)
        log.save(out_dir / "trainlog.json")
        (out_dir / "train_config.json").write_text(
            json.dumps(asdict(config), indent=2), encoding="utf-8"
        )
    return backend, log
