import math

import numpy as np
import pytest
import torch

from conceptex.corpus import EntityRecord, InputText, build_input, make_splits
from conceptex.encoder import Vocabulary
from conceptex.extractor import (
    ExtractorConfig,
    ExtractorModel,
    SpanPrediction,
    assemble_prompted_input,
    confidence,
    decode_spans,
    extract_concepts,
    forward_pointer,
    gold_label_vectors,
    load_extractor,
    save_extractor,
    train_extractor,
    training_loss,
)
from conceptex.synth import make_bias_corpus
from conceptex.tokenization import detokenize

from conftest import finite_difference_gradients, max_relative_gradient_error
from test_classifier import tiny_taxonomy


def make_input(n_entity=2, n_abstract=10):
    entity = [f"e{i}" for i in range(n_entity)]
    abstract = [f"t{i}" for i in range(n_abstract)]
    return InputText(
        tokens=entity + abstract,
        entity_span=(0, n_entity),
        abstract_span=(n_entity, n_entity + n_abstract),
    )


def brute_force_decode(p_start, p_end, abstract_span, threshold, max_span_len, tokens):
    """Independent reference decoder: plain loops, explicit sort, dict dedup."""
    a0, a1 = abstract_span
    candidates = []
    for i in range(a0, a1):
        for j in range(a0, a1):
            if j < i or j - i + 1 > max_span_len:
                continue
            cs = float(p_start[i]) + float(p_end[j])
            if cs > threshold:
                candidates.append((i, j, cs))
    candidates.sort(key=lambda t: (-t[2], t[0], t[1]))
    seen = {}
    ordered = []
    for i, j, cs in candidates:
        text = detokenize(tokens[i : j + 1])
        if text not in seen:
            seen[text] = (i, j, cs)
            ordered.append((i, j, cs, text))
    return ordered


# --- prompted input assembly ---

def test_layout_single_token_prompt():
    text = make_input(3, 40)
    prompted = assemble_prompted_input("person", text)
    assert len(prompted.tokens) == 1 + 43 + 3
    assert prompted.prompt_tokens == ["person"]
    assert prompted.prompt_span == (1, 2)
    assert prompted.entity_span == (3, 6)
    assert prompted.abstract_span == (6, 46)
    assert prompted.tokens[0] == "[CLS]" and prompted.tokens[-1] == "[SEP]"


def test_layout_multi_token_prompt():
    text = make_input(2, 8)
    prompted = assemble_prompted_input("Film and TV", text)
    assert prompted.prompt_span == (1, 4)
    assert len(prompted.tokens) == 3 + 10 + 3


def test_layout_no_prompt_ablation():
    text = make_input(2, 8)
    prompted = assemble_prompted_input(None, text)
    assert len(prompted.tokens) == 10 + 2
    assert prompted.prompt_span == (1, 1)
    assert prompted.entity_span == (1, 3)
    assert assemble_prompted_input("", text).tokens == prompted.tokens


def test_truncation_spares_prompt_and_entity():
    text = make_input(4, 60)
    with pytest.warns(UserWarning, match="truncated"):
        prompted = assemble_prompted_input("person", text, max_len=32)
    assert len(prompted.tokens) == 32
    assert prompted.prompt_tokens == ["person"]
    assert prompted.tokens[prompted.entity_span[0] : prompted.entity_span[1]] == text.entity_tokens
    assert prompted.abstract_span[1] - prompted.abstract_span[0] == 32 - 8  # 1+4 tokens + 3 sentinels fixed


def test_window_too_small_for_prompt_and_entity():
    text = make_input(10, 5)
    with pytest.raises(ValueError):
        assemble_prompted_input("some very long topic name here", text, max_len=12)


# --- pointer forward ---

def tiny_extractor(vocab_tokens, **overrides):
    defaults = dict(
        alpha=0.3, threshold=0.12, max_span_len=30, encoder="scratch_tiny",
        num_layers=1, embedding_dim=8, hidden_dim=16, num_heads=2, max_len=48,
        dropout=0.0, seed=0,
    )
    defaults.update(overrides)
    config = ExtractorConfig(**defaults)
    torch.manual_seed(0)
    return ExtractorModel(config, Vocabulary(list(vocab_tokens))), config


def test_forward_pointer_probabilities_sum_to_one():
    model, _ = tiny_extractor(["person", "e0", "e1", "t0", "t1", "t2"])
    prompted = assemble_prompted_input("person", make_input(2, 3))
    p_start, p_end = forward_pointer(model, prompted)
    assert len(p_start) == len(prompted.tokens)
    assert p_start.sum() == pytest.approx(1.0, abs=1e-6)
    assert p_end.sum() == pytest.approx(1.0, abs=1e-6)


def test_forward_pointer_deterministic():
    model, _ = tiny_extractor(["person", "e0", "e1", "t0", "t1", "t2"])
    prompted = assemble_prompted_input("person", make_input(2, 3))
    a = forward_pointer(model, prompted)
    b = forward_pointer(model, prompted)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_pointer_head_matches_hand_computed_softmax():
    model, _ = tiny_extractor(["e0", "t0", "t1"], num_layers=1)
    prompted = assemble_prompted_input(None, make_input(1, 2))
    hidden = model.encode_input(prompted)[0].detach().numpy()  # (L, d')
    w = model.pointer_w.weight.detach().numpy().T  # (d', 2)
    b = model.pointer_bias.detach().numpy()[: hidden.shape[0]]
    logits = hidden @ w + b
    exp = np.exp(logits - logits.max(axis=0, keepdims=True))
    expected = exp / exp.sum(axis=0, keepdims=True)
    p_start, p_end = forward_pointer(model, prompted)
    assert np.allclose(p_start, expected[:, 0], atol=1e-6)
    assert np.allclose(p_end, expected[:, 1], atol=1e-6)


# --- confidence ---

def test_confidence_is_plain_addition():
    p_start = np.zeros(8)
    p_end = np.zeros(8)
    p_start[2] = 0.3
    p_end[5] = 0.4
    assert confidence(2, 5, p_start, p_end) == pytest.approx(0.7)


def test_confidence_rejects_inverted_span():
    with pytest.raises(ValueError):
        confidence(5, 2, np.zeros(8), np.zeros(8))


def test_confidence_near_zero_stays_positive():
    p = np.full(4, np.finfo(float).tiny)
    assert 0 < confidence(1, 2, p, p) < 1e-300


# --- decoding ---

def nested_span_vectors():
    """famous American writer: nested spans all above a 0.30 threshold."""
    tokens = ["[CLS]", "E", "Alcott", "was", "a", "famous", "American", "writer", ".", "[SEP]"]
    prompted_span = (2, 9)  # abstract region
    p_start = np.zeros(10)
    p_end = np.zeros(10)
    p_start[5] = 0.12  # famous
    p_start[6] = 0.15  # American
    p_start[7] = 0.20  # writer
    p_start[2] = 0.53
    p_end[7] = 0.50  # writer
    p_end[8] = 0.50
    return tokens, prompted_span, p_start, p_end


def test_multi_grained_spans_all_returned():
    tokens, span, p_start, p_end = nested_span_vectors()
    spans = decode_spans(p_start, p_end, span, 0.30, 30, tokens)
    texts = [s.text for s in spans]
    assert "writer" in texts
    assert "American writer" in texts
    assert "famous American writer" in texts
    confos = {s.text: s.confidence for s in spans}
    assert confos["writer"] == pytest.approx(0.70)
    assert confos["American writer"] == pytest.approx(0.65)
    assert confos["famous American writer"] == pytest.approx(0.62)


def test_unattainable_threshold_gives_empty_list():
    tokens, span, p_start, p_end = nested_span_vectors()
    assert decode_spans(p_start, p_end, span, 2.0, 30, tokens) == []


def test_decode_matches_brute_force_on_random_vectors():
    rng = np.random.default_rng(42)
    for _ in range(100):
        n = int(rng.integers(4, 16))
        a0 = int(rng.integers(1, 3))
        a1 = int(rng.integers(a0 + 1, n))
        tokens = [rng.choice(["tok", "span", "x", "y"]) + str(rng.integers(3)) for _ in range(n)]
        p_start = rng.dirichlet(np.ones(n))
        p_end = rng.dirichlet(np.ones(n))
        threshold = float(rng.uniform(0, 0.8))
        m = int(rng.integers(1, 8))
        got = decode_spans(p_start, p_end, (a0, a1), threshold, m, tokens)
        expected = brute_force_decode(p_start, p_end, (a0, a1), threshold, m, tokens)
        assert [(s.start, s.end, s.text) for s in got] == [(i, j, t) for i, j, _, t in expected]
        for s, (_, _, cs, _) in zip(got, expected):
            assert s.confidence == pytest.approx(cs)
            assert 0.0 < s.confidence < 2.0


def test_decoded_spans_stay_inside_abstract():
    tokens, span, p_start, p_end = nested_span_vectors()
    p_start[0] = 0.9  # mass outside the abstract must never decode
    spans = decode_spans(p_start, p_end, span, 0.0, 30, tokens)
    for s in spans:
        assert span[0] <= s.start <= s.end < span[1]


def test_lowering_threshold_never_removes_spans():
    tokens, span, p_start, p_end = nested_span_vectors()
    high = {s.text for s in decode_spans(p_start, p_end, span, 0.5, 30, tokens)}
    low = {s.text for s in decode_spans(p_start, p_end, span, 0.1, 30, tokens)}
    assert high <= low


def test_duplicate_text_keeps_max_confidence():
    tokens = ["[CLS]", "E", "a", "b", "a", "b", "[SEP]"]
    p_start = np.array([0, 0, 0.3, 0, 0.2, 0, 0])
    p_end = np.array([0, 0, 0, 0.25, 0, 0.15, 0])
    spans = decode_spans(p_start, p_end, (2, 6), 0.0, 2, tokens)
    ab = [s for s in spans if s.text == "a b"]
    assert len(ab) == 1
    assert ab[0].confidence == pytest.approx(0.55)
    assert (ab[0].start, ab[0].end) == (2, 3)


def test_span_prediction_validates_order():
    with pytest.raises(ValueError):
        SpanPrediction(start=3, end=1, confidence=0.5, text="x")


# --- training loss ---

def test_loss_zero_for_perfect_one_hot():
    p_start = np.array([0.0, 1.0, 0.0])
    p_end = np.array([0.0, 0.0, 1.0])
    y_start = np.array([0.0, 1.0, 0.0])
    y_end = np.array([0.0, 0.0, 1.0])
    assert training_loss(p_start, p_end, y_start, y_end, 0.3) < 1e-9


def test_loss_hand_computed_three_token_example():
    p_start = np.array([0.2, 0.5, 0.3])
    y_start = np.array([0.0, 1.0, 0.0])
    p_end = np.array([0.0, 0.0, 1.0])
    y_end = np.array([0.0, 0.0, 1.0])
    expected = 0.3 * (-math.log(0.5))
    assert training_loss(p_start, p_end, y_start, y_end, 0.3) == pytest.approx(expected, abs=1e-9)


def test_loss_errors_without_gold_span():
    p = np.full(4, 0.25)
    with pytest.raises(ValueError, match="no gold span"):
        training_loss(p, p, np.zeros(4), np.array([0, 1, 0, 0]), 0.3)


def test_loss_multi_gold_normalizes_targets():
    p_start = np.array([0.5, 0.5, 0.0])
    p_end = np.array([0.0, 0.0, 1.0])
    y_start = np.array([1.0, 1.0, 0.0])
    y_end = np.array([0.0, 0.0, 1.0])
    # CE(start) = -(0.5 ln 0.5 + 0.5 ln 0.5) = ln 2
    expected = 0.3 * math.log(2)
    assert training_loss(p_start, p_end, y_start, y_end, 0.3) == pytest.approx(expected, abs=1e-9)


def test_alpha_default_matches_config():
    assert ExtractorConfig().alpha == pytest.approx(0.3)
    with pytest.raises(ValueError):
        ExtractorConfig(alpha=1.0)


def test_pointer_loss_gradients_match_finite_differences():
    model, config = tiny_extractor(
        ["person", "e0", "e1", "t0", "t1", "t2", "t3"], num_layers=2, hidden_dim=16,
    )
    model = model.double()
    prompted = assemble_prompted_input("person", make_input(2, 4))
    ids = torch.tensor([model.vocab.encode(prompted.tokens)])
    y_start = np.zeros(len(prompted.tokens))
    y_end = np.zeros(len(prompted.tokens))
    a0, _ = prompted.abstract_span
    y_start[a0] = 1.0
    y_end[a0 + 2] = 1.0

    def compute_loss():
        probs, _ = model(ids)
        return training_loss(probs[0, :, 0], probs[0, :, 1], y_start, y_end, config.alpha)

    def loss_fn():
        with torch.no_grad():
            return float(compute_loss())

    model.zero_grad()
    compute_loss().backward()
    params = [p for p in model.parameters() if p.requires_grad]
    analytic = [p.grad.clone() for p in params]
    numeric = finite_difference_gradients(loss_fn, params)
    assert max_relative_gradient_error(analytic, numeric) < 1e-4


# --- gold label vectors ---

def test_gold_label_vectors_mark_every_occurrence():
    record = EntityRecord(
        entity="X Y",
        abstract="a famous writer and a famous writer again .",
        concepts=["famous writer", "writer"],
    )
    prompted = assemble_prompted_input("person", build_input(record))
    y_start, y_end, hits = gold_label_vectors(prompted, record.concepts)
    assert hits == 4
    a0 = prompted.abstract_span[0]
    # "famous" at abstract offsets 1 and 5; "writer" at 2 and 6
    assert y_start[a0 + 1] == 1 and y_start[a0 + 5] == 1
    assert y_start[a0 + 2] == 1 and y_start[a0 + 6] == 1
    assert y_end[a0 + 2] == 1 and y_end[a0 + 6] == 1


# --- training and the full extraction path ---

def test_zero_epoch_training_returns_initialization():
    corpus = make_bias_corpus(40, seed=2)
    split = make_splits(corpus.records, test_size=4, seed=0)
    config = ExtractorConfig(
        num_layers=1, embedding_dim=8, hidden_dim=16, num_heads=2, max_len=64,
        dropout=0.0, epochs=0, seed=5,
    )
    model, report = train_extractor(split, tiny_taxonomy(), None, config)
    assert report["epochs"] == []
    assert report["train_size"] > 0


def test_training_reduces_loss_and_extracts(tmp_path):
    corpus = make_bias_corpus(60, seed=4)
    split = make_splits(corpus.records, test_size=6, seed=0)
    config = ExtractorConfig(
        num_layers=2, embedding_dim=32, hidden_dim=64, num_heads=4, max_len=64,
        dropout=0.1, learning_rate=2e-3, batch_size=8, epochs=4, seed=1,
        threshold=0.7, max_span_len=2,
    )
    model, report = train_extractor(split, tiny_taxonomy(), None, config)
    losses = [e["train_loss"] for e in report["epochs"]]
    assert losses[-1] < losses[0]

    path = tmp_path / "ext.ckpt"
    save_extractor(model, path)
    loaded = load_extractor(path)
    rec = split.test[0]
    prompted = assemble_prompted_input(rec.topic, build_input(rec), config.max_len)
    a = forward_pointer(model, prompted)
    b = forward_pointer(loaded, prompted)
    assert np.allclose(a[0], b[0], atol=1e-7)


def test_extract_concepts_empty_when_threshold_unattainable():
    corpus = make_bias_corpus(40, seed=6)
    split = make_splits(corpus.records, test_size=4, seed=0)
    config = ExtractorConfig(
        num_layers=1, embedding_dim=8, hidden_dim=16, num_heads=2, max_len=64,
        dropout=0.0, epochs=0, seed=3, threshold=2.0, use_prompt=False,
    )
    model, _ = train_extractor(split, tiny_taxonomy(), None, config)
    spans, topic = extract_concepts(split.test[0], None, model, tiny_taxonomy(), config)
    assert spans == []
    assert topic is None


def test_extracted_spans_never_touch_prompt_or_entity():
    corpus = make_bias_corpus(40, seed=7)
    split = make_splits(corpus.records, test_size=4, seed=0)
    config = ExtractorConfig(
        num_layers=1, embedding_dim=8, hidden_dim=16, num_heads=2, max_len=64,
        dropout=0.0, epochs=1, seed=3, threshold=0.0, max_span_len=4, use_prompt=False,
    )
    model, _ = train_extractor(split, tiny_taxonomy(), None, config)
    for rec in split.test:
        prompted = assemble_prompted_input(None, build_input(rec), config.max_len)
        spans, _ = extract_concepts(rec, None, model, tiny_taxonomy(), config)
        for s in spans:
            assert s.start >= prompted.abstract_span[0]
            assert s.end < prompted.abstract_span[1]
