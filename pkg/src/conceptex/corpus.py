"""Corpus ingestion, validation, splitting and extractor-input assembly.

Records come from knowledge-graph dumps (JSONL or TSV). A record is only
accepted when every gold concept occurs verbatim as a contiguous token
subsequence of the abstract; everything else is quarantined with a reason
rather than silently dropped.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .io_utils import write_jsonl
from .tokenization import detokenize, find_subsequence, tokenize


class CorpusValidationError(ValueError):
    """Raised when an input violates a corpus-level contract."""


@dataclass
class EntityRecord:
    """One entity with its abstract text and gold concept labels."""

    entity: str
    abstract: str
    concepts: list[str] = field(default_factory=list)
    topic: Optional[str] = None

    @property
    def entity_tokens(self) -> list[str]:
        return tokenize(self.entity)

    @property
    def abstract_tokens(self) -> list[str]:
        return tokenize(self.abstract)

    def to_json(self) -> dict:
        return {
            "entity": self.entity,
            "abstract": self.abstract,
            "concepts": list(self.concepts),
            "topic": self.topic,
        }


@dataclass
class InputText:
    """Entity tokens followed by abstract tokens, with both span ranges recorded."""

    tokens: list[str]
    entity_span: tuple[int, int]
    abstract_span: tuple[int, int]

    def __post_init__(self) -> None:
        e0, e1 = self.entity_span
        a0, a1 = self.abstract_span
        if not (e0 == 0 and e1 == a0 and a1 == len(self.tokens)):
            raise CorpusValidationError(
                f"entity_span {self.entity_span} and abstract_span {self.abstract_span} "
                f"must cover the {len(self.tokens)} tokens exactly"
            )

    @property
    def entity_tokens(self) -> list[str]:
        return self.tokens[self.entity_span[0] : self.entity_span[1]]

    @property
    def abstract_tokens(self) -> list[str]:
        return self.tokens[self.abstract_span[0] : self.abstract_span[1]]


@dataclass
class DatasetSplit:
    train: list[EntityRecord]
    validation: list[EntityRecord]
    test: list[EntityRecord]
    seed: int

    def manifest(self) -> dict:
        return {
            "seed": self.seed,
            "train": [r.entity for r in self.train],
            "validation": [r.entity for r in self.validation],
            "test": [r.entity for r in self.test],
        }


def validate_record(record: EntityRecord) -> Optional[str]:
    """Return a quarantine reason, or None when the record is clean."""
    if not record.entity_tokens:
        return "empty entity"
    abstract_tokens = record.abstract_tokens
    if not abstract_tokens:
        return "empty abstract"
    for concept in record.concepts:
        needle = tokenize(concept)
        if not needle:
            return f"empty concept label {concept!r}"
        if not find_subsequence(abstract_tokens, needle):
            return "concept not in abstract"
    return None


def _parse_jsonl_line(line: str) -> EntityRecord:
    obj = json.loads(line)
    if not isinstance(obj, dict) or "entity" not in obj or "abstract" not in obj:
        raise ValueError("object must carry entity and abstract fields")
    return EntityRecord(
        entity=str(obj["entity"]),
        abstract=str(obj["abstract"]),
        concepts=[str(c) for c in obj.get("concepts") or []],
        topic=obj.get("topic"),
    )


def _parse_tsv_line(line: str) -> EntityRecord:
    cols = line.split("\t")
    if len(cols) < 2:
        raise ValueError("expected at least entity<TAB>abstract")
    concepts = [c for c in cols[2].split("|") if c] if len(cols) > 2 else []
    topic = cols[3] if len(cols) > 3 and cols[3] else None
    return EntityRecord(entity=cols[0], abstract=cols[1], concepts=concepts, topic=topic)


def ingest(
    path: str | Path,
    format: str = "jsonl",
    quarantine_path: str | Path | None = None,
    single_gold: bool = False,
    seed: int = 0,
) -> list[EntityRecord]:
    """Read a KG dump into validated EntityRecords.

    Malformed lines and records failing validation are quarantined (written as a
    JSONL sidecar carrying a "reason" field), never fatal. An unreadable file is
    fatal. With single_gold=True, one gold concept per record is kept, chosen by
    the seeded RNG.
    """
    path = Path(path)
    if format not in ("jsonl", "tsv"):
        raise ValueError(f"unknown corpus format {format!r}")
    parse = _parse_jsonl_line if format == "jsonl" else _parse_tsv_line
    rng = random.Random(seed)

    records: list[EntityRecord] = []
    quarantined: list[dict] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            try:
                record = parse(line)
            except (ValueError, json.JSONDecodeError) as exc:
                quarantined.append({"line": lineno, "raw": line, "reason": f"malformed line: {exc}"})
                continue
            reason = validate_record(record)
            if reason is not None:
                quarantined.append({"line": lineno, **record.to_json(), "reason": reason})
                continue
            if single_gold and len(record.concepts) > 1:
                record.concepts = [rng.choice(record.concepts)]
            records.append(record)

    if quarantined:
        if quarantine_path is None:
            quarantine_path = path.with_name(path.name + ".quarantine.jsonl")
        write_jsonl(quarantine_path, quarantined)
    return records


def serialize(records: Iterable[EntityRecord], path: str | Path) -> None:
    write_jsonl(path, (r.to_json() for r in records))


def make_splits(records: Sequence[EntityRecord], test_size: int, seed: int) -> DatasetSplit:
    """Deterministic test carve-out followed by a 9:1 train/validation split.

    Splits are disjoint by entity name; rounding goes toward train.
    """
    if test_size >= len(records):
        raise CorpusValidationError(
            f"test_size {test_size} must be smaller than the corpus ({len(records)} records)"
        )
    by_name: dict[str, list[EntityRecord]] = {}
    order: list[str] = []
    for rec in records:
        if rec.entity not in by_name:
            by_name[rec.entity] = []
            order.append(rec.entity)
        by_name[rec.entity].append(rec)

    rng = random.Random(seed)
    shuffled = list(order)
    rng.shuffle(shuffled)

    test_names = shuffled[:test_size]
    rest = shuffled[test_size:]
    n_val = len(rest) // 10
    val_names = rest[:n_val]
    train_names = rest[n_val:]

    def collect(names: list[str]) -> list[EntityRecord]:
        return [rec for name in names for rec in by_name[name]]

    return DatasetSplit(
        train=collect(train_names),
        validation=collect(val_names),
        test=collect(test_names),
        seed=seed,
    )


def build_input(record: EntityRecord) -> InputText:
    """Concatenate entity and abstract tokens into the extractor input."""
    entity_tokens = record.entity_tokens
    abstract_tokens = record.abstract_tokens
    if not entity_tokens:
        raise CorpusValidationError("entity has no tokens")
    if not abstract_tokens:
        raise CorpusValidationError("abstract has no tokens")
    n_e = len(entity_tokens)
    tokens = entity_tokens + abstract_tokens
    return InputText(
        tokens=tokens,
        entity_span=(0, n_e),
        abstract_span=(n_e, len(tokens)),
    )


def detokenize_input(text: InputText) -> tuple[str, str]:
    """Recover (entity, abstract) strings from an InputText."""
    return detokenize(text.entity_tokens), detokenize(text.abstract_tokens)
