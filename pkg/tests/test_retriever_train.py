"""Retriever trainer tests: loss values, gradients, and training behaviour."""

import math

import pytest
import torch

from fdcheck import relative_grad_error
from rqakit.corpus import Passage, PassageStore
from rqakit.datagen import QAPair
from rqakit.errors import ConfigError, NumericalError, ShapeError
from rqakit.models import HashingBowEmbedder
from rqakit.retrieval import dense_index
from rqakit.retriever_train import (
    RetrieverTrainConfig,
    ctl_loss,
    dca_targets,
    distill_loss,
    rpg_targets,
    train_retriever,
)


def unit(vec):
    t = torch.tensor(vec, dtype=torch.float64)
    return t / t.norm()


# ---- ctl_loss ---------------------------------------------------------------
def test_ctl_single_pair_no_negatives_is_zero():
    q = unit([1.0, 0.0]).unsqueeze(0)
    p = unit([0.6, 0.8]).unsqueeze(0)
    assert ctl_loss(q, p, None, tau=0.05).item() == pytest.approx(0.0, abs=1e-12)


def test_ctl_equidistant_candidates_is_log4():
    # positive and three hard negatives all at the same similarity to q
    q = torch.tensor([[1.0, 0.0]], dtype=torch.float64)
    p = torch.tensor([[0.0, 1.0]], dtype=torch.float64)
    negs = torch.tensor([[[0.0, 1.0], [0.0, 1.0], [0.0, 1.0]]], dtype=torch.float64)
    assert ctl_loss(q, p, negs, tau=0.05).item() == pytest.approx(math.log(4), rel=1e-12)


def test_ctl_decreases_as_positive_similarity_rises():
    negs = torch.tensor([[[0.0, 1.0], [0.7071, 0.7071]]], dtype=torch.float64)
    q = torch.tensor([[1.0, 0.0]], dtype=torch.float64)
    losses = []
    for angle in (80, 60, 40, 20, 5):
        rad = math.radians(angle)
        p = torch.tensor([[math.cos(rad), math.sin(rad)]], dtype=torch.float64)
        losses.append(ctl_loss(q, p, negs, tau=0.1).item())
    assert all(a > b for a, b in zip(losses, losses[1:]))


def test_ctl_rejects_non_finite():
    q = torch.tensor([[float("nan"), 0.0]])
    with pytest.raises(NumericalError):
        ctl_loss(q, q, None)


def test_ctl_gradient_matches_finite_differences():
    embedder = HashingBowEmbedder(dim=2, n_buckets=16, seed=0, dtype=torch.float64)
    queries = ["alpha beta", "gamma delta"]
    positives = ["epsilon zeta", "eta theta"]
    negatives = [["iota kappa", "lam mu"], ["nu xi", "omicron pi"]]

    def loss_fn():
        q = embedder.encode(queries)
        p = embedder.encode(positives)
        n = torch.stack([embedder.encode(group) for group in negatives])
        return ctl_loss(q, p, n, tau=0.05)

    assert relative_grad_error(list(embedder.parameters()), loss_fn) < 1e-4


# ---- dca_targets -------------------------------------------------------------
def test_dca_all_mass_on_first_passage():
    attention = torch.zeros(2, 2, 3, 6)
    attention[..., :2] = 0.5  # both of passage 0's tokens
    targets = dca_targets(attention, [2, 2, 2])
    assert torch.allclose(targets, torch.tensor([1.0, 0.0, 0.0], dtype=torch.float64))


def test_dca_uniform_attention_equal_lengths():
    attention = torch.full((1, 2, 4, 8), 1 / 8)
    targets = dca_targets(attention, [4, 4])
    assert torch.allclose(targets, torch.tensor([0.5, 0.5], dtype=torch.float64))


def test_dca_uniform_attention_unequal_lengths():
    attention = torch.full((1, 1, 2, 4), 1 / 4)
    targets = dca_targets(attention, [1, 3])
    assert torch.allclose(targets, torch.tensor([0.25, 0.75], dtype=torch.float64))


def test_dca_boundary_mismatch_raises():
    with pytest.raises(ShapeError):
        dca_targets(torch.ones(1, 1, 1, 5), [2, 2])


def test_dca_targets_sum_to_one_random():
    torch.manual_seed(0)
    for _ in range(50):
        counts = torch.randint(1, 5, (4,)).tolist()
        attention = torch.rand(2, 3, 5, sum(counts))
        attention = attention / attention.sum(-1, keepdim=True)
        targets = dca_targets(attention, counts)
        assert targets.sum().item() == pytest.approx(1.0, abs=1e-9)
        assert (targets >= 0).all()


# ---- rpg_targets / distill_loss ----------------------------------------------
def test_rpg_shift_invariance():
    loglik = torch.tensor([-1.0, -2.0, -3.0])
    assert torch.allclose(rpg_targets(loglik, 1.0), rpg_targets(loglik + 7.5, 1.0))


def test_rpg_targets_sum_to_one():
    torch.manual_seed(1)
    for _ in range(50):
        loglik = torch.randn(5) * 10
        targets = rpg_targets(loglik, beta=0.7)
        assert targets.sum().item() == pytest.approx(1.0, abs=1e-9)


def test_distill_loss_zero_when_equal():
    scores = torch.tensor([2.0, 1.0, 0.5])
    targets = torch.softmax(scores.double(), dim=-1)
    assert distill_loss(targets, scores, 1.0).item() == pytest.approx(0.0, abs=1e-9)


def test_distill_loss_hand_case_log2():
    targets = torch.tensor([1.0, 0.0])
    scores = torch.tensor([0.0, 0.0])  # P = (0.5, 0.5)
    assert distill_loss(targets, scores, 1.0).item() == pytest.approx(math.log(2), rel=1e-9)


def test_distill_loss_nonnegative_and_zero_iff_equal():
    torch.manual_seed(2)
    for _ in range(50):
        scores = torch.randn(4)
        targets = torch.softmax(torch.randn(4), dim=-1)
        loss = distill_loss(targets, scores, 1.0).item()
        assert loss >= -1e-12
        if loss < 1e-9:
            assert torch.allclose(targets, torch.softmax(scores, -1), atol=1e-4)


def test_distill_gradient_matches_finite_differences():
    embedder = HashingBowEmbedder(dim=3, n_buckets=12, seed=1, dtype=torch.float64)
    contents = ["alpha beta", "gamma delta", "epsilon zeta", "eta theta"]
    targets = torch.tensor([0.4, 0.3, 0.2, 0.1], dtype=torch.float64)

    def loss_fn():
        q = embedder.encode(["the query words"])[0]
        p = embedder.encode(contents)
        return distill_loss(targets, p @ q, 0.5)

    assert relative_grad_error(list(embedder.parameters()), loss_fn) < 1e-4


def test_rpg_distill_gradient_through_targets_is_blocked():
    # targets are teacher signals: the loss must not differentiate through them
    scores = torch.randn(3, requires_grad=True)
    loglik = torch.randn(3, requires_grad=True)
    loss = distill_loss(rpg_targets(loglik, 1.0), scores, 1.0)
    loss.backward()
    assert loglik.grad is None or torch.allclose(loglik.grad, torch.zeros(3))
    assert scores.grad is not None


# ---- train_retriever ----------------------------------------------------------
def four_passage_store():
    store = PassageStore()
    for i in range(4):
        store.add(Passage(f"p{i}", f"marker{i} words in passage", "src", i, 4))
    return store


class FakeCrossAttentionTeacher:
    is_encoder_decoder = True

    def __init__(self, target):
        self.target = torch.tensor(target)

    def cross_attention_scores(self, question, passages, answer):
        return self.target.reshape(1, 1, 1, -1), [1] * len(self.target)


class FakeLoglikDecoder:
    is_encoder_decoder = False

    def __init__(self, by_marker):
        self.by_marker = by_marker

    def loglikelihood(self, context, continuation):
        for marker, value in self.by_marker.items():
            if marker in context:
                return value
        raise AssertionError(f"no marker in context: {context!r}")


def test_train_zero_steps_leaves_weights_unchanged():
    store = four_passage_store()
    pairs = [QAPair("marker0 question", "answer", "p0", ["p1"])]
    embedder = HashingBowEmbedder(dim=8, n_buckets=64, seed=0)
    before = embedder.weight.detach().clone()
    config = RetrieverTrainConfig(algorithm="ctl", max_steps=0, n_hard_negatives=1, seed=0)
    train_retriever(embedder, pairs, store, config)
    assert torch.equal(embedder.weight.detach(), before)


def test_train_log_bit_identical_across_runs():
    store = four_passage_store()
    pairs = [
        QAPair("q zero", "a", "p0", ["p1", "p2"]),
        QAPair("q one", "a", "p1", ["p0", "p3"]),
    ]

    def run():
        embedder = HashingBowEmbedder(dim=8, n_buckets=64, seed=3)
        config = RetrieverTrainConfig(
            algorithm="ctl", max_steps=25, batch_size=2, n_hard_negatives=2, seed=3
        )
        _, log = train_retriever(embedder, pairs, store, config)
        return log.losses

    assert run() == run()


def test_train_checkpoint_round_trip(tmp_path):
    store = four_passage_store()
    pairs = [QAPair("q", "a", "p0", ["p1"])]
    embedder = HashingBowEmbedder(dim=8, n_buckets=64, seed=0)
    config = RetrieverTrainConfig(algorithm="ctl", max_steps=5, n_hard_negatives=1, seed=0)
    train_retriever(embedder, pairs, store, config, out_dir=tmp_path / "ckpt")
    from rqakit.models import load_embedder

    reloaded = load_embedder(tmp_path / "ckpt")
    assert reloaded.identity == embedder.identity
    assert (tmp_path / "ckpt" / "trainlog.json").exists()


def test_dca_requires_encoder_decoder_aux():
    store = four_passage_store()
    pairs = [QAPair("q", "a", "p0", [])]
    config = RetrieverTrainConfig(algorithm="dca", k_train=2, max_steps=1)
    with pytest.raises(ConfigError):
        train_retriever(HashingBowEmbedder(dim=4, n_buckets=16), pairs, store, config,
                        aux_model=FakeLoglikDecoder({}))


def test_rpg_requires_decoder_aux():
    store = four_passage_store()
    pairs = [QAPair("q", "a", "p0", [])]
    config = RetrieverTrainConfig(algorithm="rpg", k_train=2, max_steps=1)
    with pytest.raises(ConfigError):
        train_retriever(HashingBowEmbedder(dim=4, n_buckets=16), pairs, store, config,
                        aux_model=FakeCrossAttentionTeacher([0.5, 0.5]))


def test_dca_trains_to_teacher_distribution():
    store = four_passage_store()
    pairs = [QAPair("the question", "the answer", "p0", ["p1", "p2", "p3"])]
    embedder = HashingBowEmbedder(dim=16, n_buckets=256, seed=0)
    config = RetrieverTrainConfig(
        algorithm="dca", k_train=4, max_steps=400, batch_size=1, learning_rate=0.05, seed=0
    )
    _, log = train_retriever(
        embedder, pairs, store, config, FakeCrossAttentionTeacher([0.4, 0.3, 0.2, 0.1])
    )
    assert log.final_loss < 0.01


def test_rpg_trains_to_teacher_distribution():
    store = four_passage_store()
    pairs = [QAPair("the question", "the answer", "p0", ["p1", "p2", "p3"])]
    embedder = HashingBowEmbedder(dim=16, n_buckets=256, seed=0)
    config = RetrieverTrainConfig(
        algorithm="rpg", k_train=4, max_steps=400, batch_size=1, learning_rate=0.05, seed=0
    )
    teacher = FakeLoglikDecoder(
        {"marker0": 9.0, "marker1": 1.0, "marker2": -5.0, "marker3": -9.0}
    )
    _, log = train_retriever(embedder, pairs, store, config, teacher)
    assert log.final_loss < 0.01


def test_ctl_improves_recall_on_topic_corpus():
    from rqakit.synth import topic_corpus

    store, train_queries, test_queries = topic_corpus(n_topics=8, queries_per_topic=6, seed=0)
    embedder = HashingBowEmbedder(dim=32, n_buckets=1024, seed=0)

    def recall1():
        index = dense_index(store, embedder)
        hits = sum(
            1 for q, gold in test_queries if index.search(embedder, q, 1).passage_ids[0] == gold
        )
        return hits / len(test_queries)

    pre = recall1()
    pairs = [QAPair(q, "", gold) for q, gold in train_queries]
    config = RetrieverTrainConfig(
        algorithm="ctl", n_hard_negatives=0, batch_size=16, learning_rate=0.05,
        max_steps=150, seed=0,
    )
    train_retriever(embedder, pairs, store, config)
    post = recall1()
    assert pre < 0.5
    assert post > 0.9
