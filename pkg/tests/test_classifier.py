import numpy as np
import pytest
import torch
import torch.nn.functional as F

from conceptex.classifier import (
    ClassifierConfig,
    TopicClassifier,
    TopicDistribution,
    classify,
    classify_batch,
    load_classifier,
    pad_batch,
    predict_topic,
    save_classifier,
    train_classifier,
)
from conceptex.corpus import DatasetSplit, make_splits
from conceptex.encoder import Vocabulary
from conceptex.synth import make_bias_corpus
from conceptex.taxonomy import Taxonomy

from conftest import finite_difference_gradients, max_relative_gradient_error


def tiny_taxonomy():
    return Taxonomy(
        k=4,
        clusters=[
            {"topic": "person", "concepts": ["writer", "famous writer"]},
            {"topic": "book", "concepts": ["novel", "popular novel"]},
            {"topic": "place", "concepts": ["city", "coastal city"]},
            {"topic": "creature", "concepts": ["bird", "small bird"]},
        ],
    )


def tiny_model(num_topics=4, vocab_tokens=("alpha", "beta", "gamma", "delta"), **overrides):
    config = ClassifierConfig(
        num_topics=num_topics, num_layers=2, embedding_dim=8, hidden_dim=16,
        num_heads=2, max_len=32, dropout=0.0, seed=0, **overrides,
    )
    vocab = Vocabulary(list(vocab_tokens))
    names = [f"topic_{i}" for i in range(num_topics)]
    torch.manual_seed(0)
    return TopicClassifier(config, vocab, names)


def test_classify_returns_valid_distribution():
    model = tiny_model()
    dist = classify(["alpha"], ["beta", "gamma", "delta"], model)
    assert dist.probabilities.sum() == pytest.approx(1.0, abs=1e-6)
    assert (dist.probabilities >= 0).all()
    assert dist.topic_name == f"topic_{dist.topic_index}"


def test_zero_head_gives_uniform_and_tie_to_zero():
    model = tiny_model()
    model.head[-1].weight.data.zero_()
    model.head[-1].bias.data.zero_()
    dist = classify(["alpha"], ["beta", "gamma"], model)
    assert np.allclose(dist.probabilities, 0.25, atol=1e-7)
    assert dist.topic_index == 0


def test_classify_deterministic_in_eval_mode():
    model = tiny_model()
    a = classify(["alpha"], ["beta", "gamma"], model)
    b = classify(["alpha"], ["beta", "gamma"], model)
    assert np.array_equal(a.probabilities, b.probabilities)


def test_classify_rejects_empty_input():
    model = tiny_model()
    with pytest.raises(ValueError):
        classify([], ["beta"], model)


def test_classify_truncates_long_abstract_with_warning():
    model = tiny_model()
    with pytest.warns(UserWarning, match="truncated"):
        dist = classify(["alpha"], ["beta"] * 100, model)
    assert dist.probabilities.sum() == pytest.approx(1.0, abs=1e-6)


def test_predict_topic_argmax_and_ties():
    names = [f"topic_{i}" for i in range(3)]
    assert predict_topic(TopicDistribution(np.array([0.1, 0.7, 0.2]), topic_names=names)) == "topic_1"
    uniform = TopicDistribution(np.full(17, 1 / 17))
    assert uniform.topic_index == 0
    one_hot = np.zeros(17)
    one_hot[16] = 1.0
    assert TopicDistribution(one_hot).topic_index == 16


def test_distribution_validation():
    with pytest.raises(ValueError):
        TopicDistribution(np.array([0.5, 0.6]))
    with pytest.raises(ValueError):
        TopicDistribution(np.array([-0.1, 1.1]))


def test_batch_order_does_not_change_outputs():
    model = tiny_model()
    inputs = [
        (["alpha"], ["beta", "gamma"]),
        (["beta"], ["delta"] * 7),
        (["gamma", "alpha"], ["beta"] * 3),
        (["delta"], ["alpha", "beta", "gamma", "delta"]),
    ]
    forward = classify_batch(inputs, model)
    backward = classify_batch(inputs[::-1], model)
    for dist_f, dist_b in zip(forward, backward[::-1]):
        assert np.allclose(dist_f.probabilities, dist_b.probabilities, atol=1e-6)


def test_classifier_gradients_match_finite_differences():
    model = tiny_model().double()
    ids, mask = pad_batch([
        model.vocab.encode(["[CLS]", "alpha", "[SEP]", "beta", "gamma"]),
        model.vocab.encode(["[CLS]", "beta", "[SEP]", "delta"]),
    ])
    targets = torch.tensor([1, 3])

    def loss_fn():
        with torch.no_grad():
            return float(F.cross_entropy(model(ids, mask), targets))

    model.zero_grad()
    F.cross_entropy(model(ids, mask), targets).backward()
    params = [p for p in model.parameters() if p.requires_grad]
    analytic = [p.grad.clone() for p in params]
    numeric = finite_difference_gradients(loss_fn, params)
    assert max_relative_gradient_error(analytic, numeric) < 1e-4


def synthetic_split(n=500, seed=0):
    corpus = make_bias_corpus(n, seed=seed)
    return corpus, make_splits(corpus.records, test_size=0, seed=seed + 1)


def test_training_on_separable_corpus_reaches_95_percent():
    corpus, split = synthetic_split(500, seed=3)
    config = ClassifierConfig(
        num_topics=4, num_layers=2, embedding_dim=48, hidden_dim=96, num_heads=4,
        max_len=64, dropout=0.05, learning_rate=1e-3, batch_size=16, epochs=10, seed=3,
    )
    model, report = train_classifier(split, tiny_taxonomy(), config)
    assert report["epochs"][-1]["val_accuracy"] >= 0.95


def test_training_loss_decreases_on_repeated_batch():
    corpus, _ = synthetic_split(40, seed=5)
    batch = corpus.records[:8]
    split = DatasetSplit(train=batch, validation=[], test=[], seed=0)
    config = ClassifierConfig(
        num_topics=4, num_layers=2, embedding_dim=16, hidden_dim=32, num_heads=2,
        max_len=64, dropout=0.0, learning_rate=1e-3, batch_size=8, epochs=6, seed=1,
    )
    _, report = train_classifier(split, tiny_taxonomy(), config)
    losses = [e["train_loss"] for e in report["epochs"]]
    assert all(b < a for a, b in zip(losses[1:], losses[2:]))


def test_zero_epochs_returns_initialization():
    corpus, split = synthetic_split(40, seed=6)
    config = ClassifierConfig(
        num_topics=4, num_layers=1, embedding_dim=8, hidden_dim=16, num_heads=2,
        max_len=64, dropout=0.0, epochs=0, seed=7,
    )
    model, report = train_classifier(split, tiny_taxonomy(), config)
    assert report["epochs"] == []
    torch.manual_seed(__import__("conceptex.io_utils", fromlist=["derive_seed"]).derive_seed(7, "classifier-init"))
    fresh = TopicClassifier(config, model.vocab, model.topic_names)
    for a, b in zip(model.state_dict().values(), fresh.state_dict().values()):
        assert torch.equal(a, b)


def test_records_outside_taxonomy_are_excluded_and_counted():
    corpus, split = synthetic_split(40, seed=8)
    partial = Taxonomy(
        k=4,
        clusters=[
            {"topic": "person", "concepts": ["writer", "famous writer"]},
            {"topic": "book", "concepts": ["novel", "popular novel"]},
            {"topic": "place", "concepts": ["city", "coastal city"]},
            {"topic": "creature", "concepts": []},  # birds fall outside
        ],
    )
    config = ClassifierConfig(
        num_topics=4, num_layers=1, embedding_dim=8, hidden_dim=16, num_heads=2,
        max_len=64, dropout=0.0, epochs=1, seed=0,
    )
    _, report = train_classifier(split, partial, config)
    n_birds = sum(1 for r in corpus.records if r.topic == "creature")
    assert report["excluded_records"] == n_birds


def test_checkpoint_roundtrip(tmp_path):
    corpus, split = synthetic_split(40, seed=9)
    config = ClassifierConfig(
        num_topics=4, num_layers=1, embedding_dim=8, hidden_dim=16, num_heads=2,
        max_len=64, dropout=0.1, epochs=1, seed=2,
    )
    model, _ = train_classifier(split, tiny_taxonomy(), config)
    path = tmp_path / "clf.ckpt"
    save_classifier(model, path)
    loaded = load_classifier(path)
    rec = corpus.records[0]
    a = classify(rec.entity_tokens, rec.abstract_tokens, model)
    b = classify(rec.entity_tokens, rec.abstract_tokens, loaded)
    assert np.allclose(a.probabilities, b.probabilities, atol=1e-7)
    assert loaded.topic_names == model.topic_names
