"""Train a dense retriever three ways: contrastive (CTL), distillation from
cross-attention (DCA), and distillation from LM likelihood (RPG).

Run: python demos/03_train_retriever.py (takes ~30s on CPU)
"""

import torch

from rqakit.datagen import QAPair
from rqakit.corpus import Passage, PassageStore
from rqakit.models import HashingBowEmbedder
from rqakit.retrieval import dense_index
from rqakit.retriever_train import RetrieverTrainConfig, train_retriever
from rqakit.synth import topic_corpus

# ---- CTL: in-batch negatives over a 32-topic corpus -------------------------
store, train_queries, test_queries = topic_corpus(n_topics=32, seed=0)
embedder = HashingBowEmbedder(dim=64, n_buckets=4096, seed=0)


def recall_at_1():
    index = dense_index(store, embedder)
    hits = sum(
        1 for q, gold in test_queries if index.search(embedder, q, 1).passage_ids[0] == gold
    )
    return hits / len(test_queries)


print(f"untrained Recall@1: {recall_at_1():.3f} (chance is {1/32:.3f})")
pairs = [QAPair(q, "", gold) for q, gold in train_queries]
config = RetrieverTrainConfig(algorithm="ctl", n_hard_negatives=0, batch_size=32,
                              learning_rate=0.05, max_steps=300, seed=0)
_, log = train_retriever(embedder, pairs, store, config)
print(f"CTL: {config.max_steps} steps, loss {log.losses[0]:.3f} -> {log.final_loss:.3f}")
print(f"trained Recall@1: {recall_at_1():.3f}")

# ---- DCA / RPG: distill a teacher's passage preferences ----------------------
# toy teachers with a fixed preference; in production the teacher is a real
# encoder-decoder (cross-attention mass) or decoder (answer log-likelihood)
toy = PassageStore()
for i in range(4):
    toy.add(Passage(f"p{i}", f"marker{i} body text", "src", i, 3))
pair = QAPair("which passage?", "the answer", "p0", ["p1", "p2", "p3"])


class AttentionTeacher:
    is_encoder_decoder = True

    def cross_attention_scores(self, question, passages, answer):
        return torch.tensor([0.4, 0.3, 0.2, 0.1]).reshape(1, 1, 1, -1), [1, 1, 1, 1]


class LoglikTeacher:
    is_encoder_decoder = False

    def loglikelihood(self, context, continuation):
        table = {"marker0": 9.0, "marker1": 1.0, "marker2": -5.0, "marker3": -9.0}
        return next(v for m, v in table.items() if m in context)


for algo, teacher in (("dca", AttentionTeacher()), ("rpg", LoglikTeacher())):
    student = HashingBowEmbedder(dim=16, n_buckets=256, seed=0)
    cfg = RetrieverTrainConfig(algorithm=algo, k_train=4, max_steps=300,
                               batch_size=1, learning_rate=0.05, seed=0)
    _, log = train_retriever(student, [pair], toy, cfg, teacher)
    print(f"{algo.upper()}: KL to teacher {log.losses[0]:.4f} -> {log.final_loss:.6f} nats")
