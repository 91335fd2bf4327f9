"""Scoring of extraction runs, bias measurement, the pattern baseline and
CLS-attention inspection.

Correctness labels come from gold sets instead of human review: a predicted
span already in the KG for its entity is an EC, a span in the oracle new-label
set is an NC, anything else is wrong. Relative recall divides a run's NC count
by the pooled NC count of all runs in the comparison group.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .extractor import ExtractorModel, PromptedInput
from .io_utils import write_jsonl
from .taxonomy import Taxonomy
from .tokenization import find_subsequence, tokenize

WRONG, EXISTING, NEW = "wrong", "existing", "new"


@dataclass
class ScoredRun:
    run_name: str
    per_entity: list[dict]
    aggregates: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "run_name": self.run_name,
            "aggregates": self.aggregates,
            "per_entity": self.per_entity,
        }


@dataclass
class BiasReport:
    concept_a: str
    concept_b: str
    biased_entities: int
    total_entities: int

    @property
    def rate(self) -> float:
        return self.biased_entities / self.total_entities

    def to_json(self) -> dict:
        return {
            "concept_a": self.concept_a,
            "concept_b": self.concept_b,
            "biased_entities": self.biased_entities,
            "total_entities": self.total_entities,
            "rate": self.rate,
        }


def label_predictions(
    predictions: Mapping[str, Sequence[str]],
    gold_existing: Mapping[str, set],
    gold_new: Mapping[str, set],
) -> list[dict]:
    per_entity = []
    for entity in sorted(predictions):
        spans = []
        for text in predictions[entity]:
            if text in gold_existing.get(entity, set()):
                label = EXISTING
            elif text in gold_new.get(entity, set()):
                label = NEW
            else:
                label = WRONG
            spans.append({"text": text, "label": label})
        per_entity.append({"entity": entity, "spans": spans})
    return per_entity


def score_run(
    predictions: Mapping[str, Sequence[str]],
    gold_existing: Mapping[str, set],
    gold_new: Mapping[str, set],
    pooled_nc_total: int,
    run_name: str = "run",
) -> ScoredRun:
    """Precision over EC+NC, NC count and length, pooled relative recall and F1."""
    per_entity = label_predictions(predictions, gold_existing, gold_new)
    labels = [span["label"] for ent in per_entity for span in ent["spans"]]
    n_pred = len(labels)
    n_ec = labels.count(EXISTING)
    n_nc = labels.count(NEW)
    nc_lengths = [
        len(tokenize(span["text"]))
        for ent in per_entity
        for span in ent["spans"]
        if span["label"] == NEW
    ]

    precision = (n_ec + n_nc) / n_pred if n_pred else None
    recall_r = n_nc / pooled_nc_total if pooled_nc_total else None
    f1_r = None
    if precision is not None and recall_r is not None:
        f1_r = 2 * precision * recall_r / (precision + recall_r) if precision + recall_r else 0.0
    aggregates = {
        "predictions": n_pred,
        "ec_count": n_ec,
        "nc_count": n_nc,
        "len_nc": float(np.mean(nc_lengths)) if nc_lengths else None,
        "precision": precision,
        "recall_r": recall_r,
        "f1_r": f1_r,
        "pooled_nc_total": pooled_nc_total,
    }
    return ScoredRun(run_name=run_name, per_entity=per_entity, aggregates=aggregates)


def pooled_new_count(
    runs: Mapping[str, Mapping[str, Sequence[str]]],
    gold_existing: Mapping[str, set],
    gold_new: Mapping[str, set],
) -> int:
    """Distinct (entity, span) pairs labeled NC by any run in the comparison group."""
    pooled: set[tuple[str, str]] = set()
    for predictions in runs.values():
        for ent in label_predictions(predictions, gold_existing, gold_new):
            for span in ent["spans"]:
                if span["label"] == NEW:
                    pooled.add((ent["entity"], span["text"]))
    return len(pooled)


def sub_concepts_of(concept: str, taxonomy: Optional[Taxonomy]) -> set[str]:
    """Cluster members that contain the concept's tokens as a contiguous subsequence."""
    subs = {concept}
    if taxonomy is None:
        return subs
    cluster = taxonomy.cluster_of(concept)
    if not cluster:
        return subs
    needle = tokenize(concept)
    for candidate in cluster:
        if find_subsequence(tokenize(candidate), needle):
            subs.add(candidate)
    return subs


def bias_rate(
    runs: Sequence[Mapping],
    concept_a: str,
    biased_concept: str,
    taxonomy: Optional[Taxonomy] = None,
    sub_concepts: Optional[set[str]] = None,
) -> BiasReport:
    """Fraction of concept-A entities for which B (or a sub-concept of B) is
    mistakenly extracted.

    Each run entry carries {"entity", "gold": iterable, "spans": [texts]}; a
    span only counts as biased when it is not itself gold for that entity.
    """
    if not runs:
        raise ValueError(f"no entities supplied for concept {concept_a!r}")
    if sub_concepts is not None:
        targets = set(sub_concepts) | {biased_concept}
    else:
        targets = sub_concepts_of(biased_concept, taxonomy)
    biased = 0
    for entry in runs:
        gold = set(entry.get("gold") or [])
        if any(span in targets and span not in gold for span in entry["spans"]):
            biased += 1
    return BiasReport(
        concept_a=concept_a,
        concept_b=biased_concept,
        biased_entities=biased,
        total_entities=len(runs),
    )


# Pattern tables for the rule baseline. Captures run to the nearest clause
# punctuation and are then trimmed at boundary words and leading articles.
_BOUNDARY_WORDS = {
    "that", "which", "who", "whom", "whose", "and", "but", "or",
    "created", "founded", "located", "written", "known", "used", "named",
    "called", "made", "developed", "designed", "invented", "established",
}
_ARTICLES = {"a", "an", "the", "one"}

_EN_PATTERNS = [
    re.compile(r"\bis\s+an?\s+([^,.;:]+)", re.IGNORECASE),
    re.compile(r"\bis\s+one\s+of\s+([^,.;:]+)", re.IGNORECASE),
    re.compile(r"\brefers\s+to\s+([^,.;:]+)", re.IGNORECASE),
    re.compile(r"\bis\s+a\s+(?:member|part|form|kind|type|sort)\s+of\s+([^,.;:]+)", re.IGNORECASE),
    re.compile(r"(?:^|[.!?]\s+)As\s+([^,]+),", re.IGNORECASE),
]

_ZH_PATTERNS = [
    re.compile(r"\bis\s+([^,.;:]+)", re.IGNORECASE),
    re.compile(r"\bis\s+one\s+of\s+([^,.;:]+)", re.IGNORECASE),
    re.compile(r"\bis\s+a\s+type\s+of\s+([^,.;:]+)", re.IGNORECASE),
    re.compile(r"\bbelongs\s+to\s+([^,.;:]+)", re.IGNORECASE),
    re.compile(r"([^,.;:]+?)\s+is\s+(?:located|founded)\s+in\b", re.IGNORECASE),
]


def _trim_capture(raw: str) -> Optional[str]:
    words = raw.split()
    kept = []
    for w in words:
        if w.lower() in _BOUNDARY_WORDS:
            break
        kept.append(w)
    while kept and kept[0].lower() in _ARTICLES:
        kept.pop(0)
    return " ".join(kept) if kept else None


def hearst_extract(abstract: str, language: str = "en") -> list[str]:
    """Union of every pattern's trimmed captures, deduplicated and sorted."""
    if language == "en":
        patterns = _EN_PATTERNS
    elif language == "zh":
        patterns = _ZH_PATTERNS
    else:
        raise ValueError(f"unsupported pattern language {language!r}")
    captures: set[str] = set()
    for pattern in patterns:
        for match in pattern.finditer(abstract):
            trimmed = _trim_capture(match.group(1).strip())
            if trimmed:
                captures.add(trimmed)
    return sorted(captures)


def cls_attention_distribution(model: ExtractorModel, prompted: PromptedInput) -> np.ndarray:
    """Average the [CLS] attention rows of the last layer's heads, normalized to sum 1."""
    weights = model.cls_attention_raw(prompted)
    total = weights.sum()
    if total <= 0:
        raise ValueError("attention weights sum to zero")
    return weights / total


def token_attention_mass(
    weights: np.ndarray, prompted: PromptedInput, token: str
) -> float:
    """Total attention mass on every occurrence of a token within the abstract."""
    a0, a1 = prompted.abstract_span
    return float(
        sum(weights[i] for i in range(a0, a1) if prompted.tokens[i] == token)
    )


def dump_attention(model: ExtractorModel, prompted: PromptedInput, path: str | Path) -> None:
    weights = cls_attention_distribution(model, prompted)
    write_jsonl(
        path,
        ({"token": tok, "weight": float(w)} for tok, w in zip(prompted.tokens, weights)),
    )


def export_review_csv(run: ScoredRun, path: str | Path) -> None:
    """CSV for optional manual assessment (0 wrong / 1 existing / 2 new)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["entity", "span", "auto_label", "manual_label"])
        for ent in run.per_entity:
            for span in ent["spans"]:
                writer.writerow([ent["entity"], span["text"], span["label"], ""])
