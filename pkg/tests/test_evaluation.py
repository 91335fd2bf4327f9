import csv

import numpy as np
import pytest
import torch

from conceptex.corpus import InputText
from conceptex.encoder import Vocabulary
from conceptex.evaluation import (
    bias_rate,
    cls_attention_distribution,
    dump_attention,
    export_review_csv,
    hearst_extract,
    label_predictions,
    pooled_new_count,
    score_run,
    sub_concepts_of,
    token_attention_mass,
)
from conceptex.extractor import ExtractorConfig, ExtractorModel, assemble_prompted_input
from conceptex.io_utils import read_jsonl

from test_classifier import tiny_taxonomy


# --- score_run ---

def test_perfect_run_scores_one():
    predictions = {"e1": ["novel"], "e2": ["city"]}
    gold_new = {"e1": {"novel"}, "e2": {"city"}}
    run = score_run(predictions, {}, gold_new, pooled_nc_total=2)
    agg = run.aggregates
    assert agg["precision"] == 1.0
    assert agg["recall_r"] == 1.0
    assert agg["f1_r"] == 1.0
    assert agg["nc_count"] == 2


def test_hand_labeled_ten_entity_fixture():
    predictions = {
        "e0": ["writer", "novel"],        # EC + wrong
        "e1": ["famous writer"],          # NC
        "e2": [],                         # nothing
        "e3": ["city", "coastal city"],   # EC + NC
        "e4": ["bird"],                   # wrong (gold is city)
        "e5": ["small bird"],             # NC
        "e6": ["novel"],                  # EC
        "e7": ["popular novel"],          # NC
        "e8": ["writer"],                 # wrong (gold empty)
        "e9": ["city"],                   # EC
    }
    gold_existing = {
        "e0": {"writer"}, "e3": {"city"}, "e4": {"city"}, "e6": {"novel"}, "e9": {"city"},
    }
    gold_new = {
        "e1": {"famous writer"}, "e3": {"coastal city"}, "e5": {"small bird"}, "e7": {"popular novel"},
    }
    run = score_run(predictions, gold_existing, gold_new, pooled_nc_total=8)
    agg = run.aggregates
    # 11 predictions: 4 EC, 4 NC, 3 wrong -> precision 8/11
    assert agg["predictions"] == 11
    assert agg["ec_count"] == 4
    assert agg["nc_count"] == 4
    assert agg["precision"] == pytest.approx(8 / 11)
    assert agg["recall_r"] == pytest.approx(4 / 8)
    p, r = 8 / 11, 4 / 8
    assert agg["f1_r"] == pytest.approx(2 * p * r / (p + r))
    assert agg["len_nc"] == pytest.approx(2.0)  # all four NCs are two-token spans


def test_empty_predictions_give_null_metrics():
    run = score_run({}, {}, {}, pooled_nc_total=0)
    assert run.aggregates["precision"] is None
    assert run.aggregates["recall_r"] is None
    assert run.aggregates["f1_r"] is None
    assert run.aggregates["len_nc"] is None


def test_score_run_invariant_to_prediction_order():
    gold_existing = {"e": {"a"}}
    gold_new = {"e": {"b c"}}
    a = score_run({"e": ["a", "b c", "x"]}, gold_existing, gold_new, 1)
    b = score_run({"e": ["x", "a", "b c"]}, gold_existing, gold_new, 1)
    assert a.aggregates == b.aggregates


def test_pooled_new_count_unions_over_runs():
    gold_new = {"e1": {"n1", "n2"}, "e2": {"n3"}}
    runs = {
        "a": {"e1": ["n1"], "e2": ["n3"]},
        "b": {"e1": ["n1", "n2"], "e2": []},
    }
    assert pooled_new_count(runs, {}, gold_new) == 3


def test_labels_priority_existing_over_new():
    per = label_predictions({"e": ["x"]}, {"e": {"x"}}, {"e": {"x"}})
    assert per[0]["spans"][0]["label"] == "existing"


# --- bias rate ---

def entries_for(spans_by_entity, gold):
    return [
        {"entity": e, "gold": gold.get(e, set()), "spans": spans}
        for e, spans in spans_by_entity.items()
    ]


def test_bias_rate_hand_count():
    gold = {f"p{i}": {"writer", "famous writer"} for i in range(5)}
    spans = {
        "p0": ["writer", "novel"],
        "p1": ["writer"],
        "p2": ["popular novel"],
        "p3": ["famous writer"],
        "p4": ["novel", "popular novel"],
    }
    report = bias_rate(entries_for(spans, gold), "writer", "novel", taxonomy=tiny_taxonomy())
    assert report.biased_entities == 3
    assert report.total_entities == 5
    assert report.rate == pytest.approx(0.6)


def test_bias_rate_zero_when_biased_concept_absent():
    gold = {"p0": {"writer"}}
    report = bias_rate(entries_for({"p0": ["writer"]}, gold), "writer", "novel")
    assert report.rate == 0.0


def test_bias_rate_ignores_gold_occurrences():
    # span equals B but is gold for the entity -> not biased
    gold = {"b0": {"novel"}}
    report = bias_rate(entries_for({"b0": ["novel"]}, gold), "novel", "novel")
    assert report.rate == 0.0


def test_bias_rate_empty_entity_set_is_error():
    with pytest.raises(ValueError):
        bias_rate([], "writer", "novel")


def test_bias_rate_monotone_in_biased_entities():
    gold = {"p0": {"writer"}, "p1": {"writer"}}
    base = bias_rate(entries_for({"p0": ["novel"], "p1": ["writer"]}, gold), "writer", "novel")
    more = bias_rate(entries_for({"p0": ["novel"], "p1": ["novel"]}, gold), "writer", "novel")
    assert more.rate >= base.rate


def test_sub_concepts_from_taxonomy_cluster():
    taxonomy = tiny_taxonomy()
    assert sub_concepts_of("novel", taxonomy) == {"novel", "popular novel"}
    assert sub_concepts_of("city", None) == {"city"}


def test_explicit_sub_concept_list_overrides():
    gold = {"p0": {"writer"}}
    report = bias_rate(
        entries_for({"p0": ["story"]}, gold), "writer", "novel", sub_concepts={"story"}
    )
    assert report.rate == 1.0


# --- pattern baseline ---

def test_en_pattern_is_a_that_which_who():
    out = hearst_extract("Alcott is a writer who wrote many novels.")
    assert "writer" in out


def test_en_pattern_is_one_of():
    out = hearst_extract("The Nile is one of the longest rivers in the world.")
    assert "longest rivers in the world" in out


def test_en_pattern_refers_to():
    out = hearst_extract("Hangul refers to the Korean writing system.")
    assert "Korean writing system" in out


def test_en_pattern_member_of():
    out = hearst_extract("Hydrogen is a member of the periodic table.")
    assert "periodic table" in out


def test_en_pattern_as_y_x_is():
    out = hearst_extract("As a novelist, Alcott is famous.")
    assert "novelist" in out


def test_korean_alphabet_fixture_trim_rule():
    text = (
        "The Korean alphabet is a writing system for the Korean language "
        "created by King Sejong the Great in 1443."
    )
    out = hearst_extract(text)
    assert out == ["writing system for the Korean language"]


def test_no_copula_gives_empty_list():
    assert hearst_extract("Three birds flew over the hills.") == []


def test_patterns_apply_as_a_union():
    text = "As a craft, weaving is a skill that takes years. It refers to the art of thread."
    out = hearst_extract(text)
    assert "craft" in out
    assert "skill" in out
    assert "art of thread" in out


def test_zh_pattern_set():
    assert "historic town of the south" in hearst_extract("Luzhen is historic town of the south.", language="zh")
    assert "fine porcelain" in hearst_extract("This bowl belongs to fine porcelain.", language="zh")
    out = hearst_extract("Tokyo Tower is located in Minato.", language="zh")
    assert "Tokyo Tower" in out


def test_unknown_language_rejected():
    with pytest.raises(ValueError):
        hearst_extract("text", language="fr")


def test_hearst_deterministic():
    text = "Alcott is a writer who wrote novels. As a novelist, Alcott is famous."
    assert hearst_extract(text) == hearst_extract(text)


# --- CLS attention ---

def one_layer_model(heads=1):
    config = ExtractorConfig(
        num_layers=1, embedding_dim=8, hidden_dim=16, num_heads=heads,
        max_len=32, dropout=0.0, seed=0,
    )
    torch.manual_seed(1)
    vocab = Vocabulary(["person", "e0", "t0", "t1", "t2"])
    return ExtractorModel(config, vocab)


def prompted_fixture():
    text = InputText(tokens=["e0", "t0", "t1", "t2"], entity_span=(0, 1), abstract_span=(1, 4))
    return assemble_prompted_input("person", text)


def test_attention_distribution_sums_to_one():
    model = one_layer_model(heads=2)
    weights = cls_attention_distribution(model, prompted_fixture())
    assert weights.sum() == pytest.approx(1.0, abs=1e-6)
    assert len(weights) == 8  # [CLS] person [SEP] e0 t0 t1 t2 [SEP]


def test_single_head_single_layer_equals_raw_row():
    model = one_layer_model(heads=1)
    prompted = prompted_fixture()
    ids = torch.tensor([model.vocab.encode(prompted.tokens)])
    with torch.no_grad():
        _, attentions = model.encoder(ids)
    raw_row = attentions[-1][0][0, 0, :].numpy()
    weights = cls_attention_distribution(model, prompted)
    assert np.allclose(weights, raw_row / raw_row.sum(), atol=1e-6)


def test_token_attention_mass_counts_abstract_occurrences():
    prompted = prompted_fixture()
    weights = np.full(len(prompted.tokens), 1 / len(prompted.tokens))
    mass = token_attention_mass(weights, prompted, "t1")
    assert mass == pytest.approx(1 / 8)
    assert token_attention_mass(weights, prompted, "person") == 0.0  # prompt region excluded


def test_dump_attention_jsonl(tmp_path):
    model = one_layer_model(heads=2)
    prompted = prompted_fixture()
    path = tmp_path / "attn.jsonl"
    dump_attention(model, prompted, path)
    rows = list(read_jsonl(path))
    assert [r["token"] for r in rows] == prompted.tokens
    assert sum(r["weight"] for r in rows) == pytest.approx(1.0, abs=1e-6)


def test_export_review_csv(tmp_path):
    run = score_run({"e": ["a", "b"]}, {"e": {"a"}}, {}, 0)
    path = tmp_path / "review.csv"
    export_review_csv(run, path)
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["entity", "span", "auto_label", "manual_label"]
    assert len(rows) == 3
