"""Train answer generators: SFT on gold passages, SwR with a frozen retriever,
and fusion-in-decoder (FiD) for an encoder-decoder.

Run: python demos/04_train_generator.py (takes ~30s on CPU)
"""

import tempfile
from pathlib import Path

import torch

from rqakit.corpus import Passage, PassageStore
from rqakit.datagen import QAPair
from rqakit.generation import (
    PromptAssembly,
    SamplingParams,
    TinyDecoderBackend,
    TinyEncoderDecoderBackend,
    assemble_prompt,
    build_fid_input,
    fid_generate,
)
from rqakit.generator_train import GeneratorTrainConfig, train_generator
from rqakit.models import HashingBowEmbedder, TinyDecoderLM, TinyEncoderDecoder, WordVocab
from rqakit.templates import PromptTemplate

store = PassageStore()
pairs = []
for i in range(10):
    content = f"fact{i} subject{i} relates to object{i}"
    store.add(Passage(f"p{i}", content, "src", i, len(content.split())))
    pairs.append(QAPair(f"what does subject{i} relate to ?", f"subject{i} relates to object{i}", f"p{i}"))

assembly = PromptAssembly(
    template=PromptTemplate("context: {passages}\n{history}question: {question}\nanswer:"),
    budget=128,
)
texts = [p.content for p in store] + [q.question for q in pairs] + [q.answer for q in pairs]
texts.append("context : question : answer :")
vocab = WordVocab.build(texts)

# ---- SFT: decoder learns to answer from the gold passage ---------------------
torch.manual_seed(0)
decoder = TinyDecoderLM(len(vocab), d_model=64, n_heads=2, n_layers=2, max_len=128)
backend = TinyDecoderBackend(decoder, vocab)
config = GeneratorTrainConfig(algorithm="sft", batch_size=10, learning_rate=3e-3, max_steps=400, seed=0)
_, log = train_generator(backend, pairs, store, config, assembly)
print(f"SFT: loss {log.losses[0]:.3f} -> {log.final_loss:.4f}")

pair = pairs[3]
prompt = assemble_prompt(pair.question, [store.get(pair.gold_passage_id)], None, assembly)
print(f"Q: {pair.question}")
print(f"A: {backend.generate(prompt, SamplingParams(temperature=0.0, max_new_tokens=16))}")

# ---- SwR: same loss, contexts come from a frozen retriever -------------------
with tempfile.TemporaryDirectory() as tmp:
    retriever = HashingBowEmbedder(dim=16, n_buckets=256, seed=0)
    retriever.save(Path(tmp) / "retriever")
    torch.manual_seed(0)
    swr_backend = TinyDecoderBackend(TinyDecoderLM(len(vocab), d_model=64, max_len=256), vocab)
    swr_config = GeneratorTrainConfig(
        algorithm="swr", k_context=2, frozen_retriever_ckpt=str(Path(tmp) / "retriever"),
        batch_size=10, max_steps=100, seed=0,
    )
    _, swr_log = train_generator(swr_backend, pairs, store, swr_config, assembly)
    print(f"SwR: loss {swr_log.losses[0]:.3f} -> {swr_log.final_loss:.4f}")

    # ---- FiD: encoder-decoder fuses k independently encoded passages --------
    torch.manual_seed(0)
    encdec = TinyEncoderDecoder(len(vocab), d_model=64, n_heads=2, n_layers=2)
    fid_backend = TinyEncoderDecoderBackend(encdec, vocab)
    fid_config = GeneratorTrainConfig(
        algorithm="fid", k_context=2, frozen_retriever_ckpt=str(Path(tmp) / "retriever"),
        batch_size=8, max_steps=200, seed=0,
    )
    _, fid_log = train_generator(fid_backend, pairs, store, fid_config)
    print(f"FiD: loss {fid_log.losses[0]:.3f} -> {fid_log.final_loss:.4f}")

    fid_input = build_fid_input(pair.question, [store.get("p3"), store.get("p1")])
    answer = fid_generate(fid_backend, fid_input, SamplingParams(temperature=0.0, max_new_tokens=16))
    print(f"FiD answer over 2 fused passages: {answer!r}")
