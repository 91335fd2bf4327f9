"""Templated synthetic corpus with planted topics, gold spans and planted bias.

Four topics (person, book, place, creature), each with a coarse and a fine gold
concept embedded verbatim in every abstract. A configurable fraction of person
records additionally contains the book lexeme "novel" inside the exact frame
book records use for their gold span, and vice versa for book records: the
lexical co-occurrence is real, the gold labels disagree, and only the topic
identity resolves the ambiguity. That is the planted analogue of concept bias:
an extractor that cannot use the topic keeps firing on the co-occurring lexeme.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .classifier import ClassifierConfig
from .corpus import EntityRecord
from .extractor import ExtractorConfig
from .io_utils import derive_seed

BIAS_SOURCE_TOPIC = "person"
BIAS_SOURCE_CONCEPT = "writer"
BIAS_TARGET_CONCEPT = "novel"

TOPIC_CONCEPTS = {
    "person": ("writer", "famous writer"),
    "book": ("novel", "popular novel"),
    "place": ("city", "coastal city"),
    "creature": ("bird", "small bird"),
}

# Topic identity is carried by the entity-name pools alone. Every sentence
# template is shared verbatim across person and book records (only the concept
# lexeme differs), and the gold frame never sits next to the entity mention, so
# a span model has to route through the name embeddings to resolve a planted
# lure, while a sequence classifier reads the name right next to [CLS].
_FIRST = ["Mara", "Lionel", "Edda", "Tomas", "Nadia", "Ruben", "Selma", "Viktor",
          "Ilsa", "Goran", "Petra", "Anselm"]
_LAST = ["Quent", "Harlow", "Brisk", "Fenn", "Ostler", "Marek", "Voss", "Calder",
         "Ibsen", "Trask", "Weld", "Norrel"]
_TITLE_ADJ = ["Silver", "Crimson", "Silent", "Hollow", "Amber", "Frozen", "Gilded",
              "Broken", "Velvet", "Pale", "Iron", "Quiet"]
_TITLE_NOUN = ["Crown", "River", "Garden", "Lantern", "Harbor", "Mirror", "Orchard",
               "Tower", "Meadow", "Compass", "Anchor", "Veil"]
_PLACES = ["Corvale", "Braxmoor", "Eldwick", "Tarnstead", "Seaholm", "Windmere",
           "Ashby", "Greyford", "Northam", "Duskvale", "Farrow", "Kestrel"]
_CREATURES = ["Finchling", "Mosswren", "Reedpiper", "Duskjay", "Brackenowl", "Tidelark",
              "Fernthrush", "Galewing", "Stonechat", "Mistplover", "Sableret", "Hollyfinch"]
_ADJ = ["quiet", "strange", "gentle", "bright", "wistful", "bold"]


@dataclass
class BiasCorpus:
    records: list[EntityRecord]
    biased_entities: list[str]
    concept_to_topic: dict[str, str] = field(default_factory=dict)
    gold_existing: dict[str, set] = field(default_factory=dict)
    gold_new: dict[str, set] = field(default_factory=dict)

    @property
    def topics(self) -> list[str]:
        return list(TOPIC_CONCEPTS)


def _concept_sentence(rng, subject: str, coarse: str, modifier: str) -> str:
    """One shared frame for person and book records; only the lexemes differ."""
    place = rng.choice(_PLACES)
    adj = rng.choice(_ADJ)
    variants = [
        f"A {modifier} {coarse} of {adj} renown , {subject} was known for years in {place} .",
        f"Seen as a {modifier} {coarse} by many , {subject} was spoken of in {place} .",
        f"A {modifier} {coarse} with a {adj} voice , {subject} was remembered in {place} .",
    ]
    return variants[rng.integers(len(variants))]


def _person_sentence(rng, name: str) -> str:
    return _concept_sentence(rng, name, "writer", "famous")


def _book_sentence(rng, title: str) -> str:
    return _concept_sentence(rng, title, "novel", "popular")


def _person_abstract(rng, name: str, biased: bool, lure_subject: Optional[str]) -> str:
    text = _person_sentence(rng, name)
    if biased:
        # A complete book-shaped sentence whose subject is another person-pool
        # name: the frame around "novel" is indistinguishable from a book
        # record's gold sentence, and every name in the abstract still belongs
        # to the person pool, so only the topic resolves the lure.
        lure = _book_sentence(rng, lure_subject)
        text = lure + " " + text if rng.random() < 0.5 else text + " " + lure
    return text


def _book_abstract(rng, title: str, lured: bool, lure_subject: Optional[str]) -> str:
    text = _book_sentence(rng, title)
    if lured:
        # Mirrored plant with a title-pool subject: the presence of either
        # concept lexeme stays uninformative about the topic.
        lure = _person_sentence(rng, lure_subject)
        text = lure + " " + text if rng.random() < 0.5 else text + " " + lure
    return text


def _place_abstract(rng, name: str) -> str:
    return _concept_sentence(rng, name, "city", "coastal")


def _creature_abstract(rng, name: str) -> str:
    return _concept_sentence(rng, name, "bird", "small")


def make_bias_corpus(
    n_records: int = 200,
    seed: int = 0,
    bias_fraction: float = 0.3,
    mirror_fraction: float = 0.3,
) -> BiasCorpus:
    """Evenly sized topics; the bias fraction of person records carries a
    book-shaped lure sentence, and the mirror fraction of book records carries
    a person-shaped one. Entity names are unique and share one token pool
    across person and book."""
    rng = np.random.default_rng(seed)
    per_topic = n_records // len(TOPIC_CONCEPTS)

    person_pool = [f"{a} {b}" for a in _FIRST for b in _LAST]
    title_pool = [f"{a} {b}" for a in _TITLE_ADJ for b in _TITLE_NOUN]
    rng.shuffle(person_pool)
    rng.shuffle(title_pool)
    person_names = person_pool[:per_topic]
    person_lures = person_pool[per_topic : 2 * per_topic]
    titles = title_pool[:per_topic]
    title_lures = title_pool[per_topic : 2 * per_topic]
    places = [f"{p} {s}" for p in _PLACES for s in ["Bay", "Point", "Reach", "Cross",
                                                    "Haven", "Gate", "Bend", "Rise",
                                                    "Moor", "Strand", "Fields", "Heights"]]
    creatures = [f"{a} {c}" for a in ["Northern", "Lesser", "Greater", "Eastern",
                                      "Western", "Marsh", "Cliff", "Valley",
                                      "Island", "Upland", "River", "Pine"] for c in _CREATURES]
    for pool in (places, creatures):
        rng.shuffle(pool)

    records: list[EntityRecord] = []
    biased_entities: list[str] = []
    gold_existing: dict[str, set] = {}
    gold_new: dict[str, set] = {}

    def add(topic: str, entity: str, abstract: str) -> None:
        coarse, fine = TOPIC_CONCEPTS[topic]
        records.append(
            EntityRecord(entity=entity, abstract=abstract, concepts=[coarse, fine], topic=topic)
        )
        gold_existing[entity] = {coarse}
        gold_new[entity] = {fine}

    n_biased = int(round(per_topic * bias_fraction))
    n_mirror = int(round(per_topic * mirror_fraction))
    for i in range(per_topic):
        name = person_names[i]
        biased = i < n_biased
        add("person", name, _person_abstract(rng, name, biased, person_lures[i % len(person_lures)]))
        if biased:
            biased_entities.append(name)
    for i in range(per_topic):
        title = titles[i]
        add("book", title, _book_abstract(rng, title, i < n_mirror, title_lures[i % len(title_lures)]))
    for i in range(per_topic):
        add("place", places[i], _place_abstract(rng, places[i]))
    for i in range(per_topic):
        name = creatures[i]
        add("creature", name, _creature_abstract(rng, name))

    order = rng.permutation(len(records))
    records = [records[i] for i in order]

    concept_to_topic = {c: t for t, pair in TOPIC_CONCEPTS.items() for c in pair}
    return BiasCorpus(
        records=records,
        biased_entities=biased_entities,
        concept_to_topic=concept_to_topic,
        gold_existing=gold_existing,
        gold_new=gold_new,
    )


_FIXTURE_FIRST = ["Orla", "Jasper", "Helene", "Bram", "Sylvie", "Konrad",
                  "Tilda", "Emeric", "Greta", "Soren", "Alva", "Mattis"]


def make_bias_fixtures(n: int, seed: int) -> list[EntityRecord]:
    """Fresh biased person records; the first-name pool is disjoint from the corpus."""
    rng = np.random.default_rng(derive_seed(seed, "bias-fixtures"))
    names = [f"{f} {b}" for f in _FIXTURE_FIRST for b in _LAST]
    rng.shuffle(names)
    fixtures = []
    for i in range(n):
        name = names[i]
        coarse, fine = TOPIC_CONCEPTS["person"]
        fixtures.append(
            EntityRecord(
                entity=name,
                abstract=_person_abstract(rng, name, biased=True, lure_subject=names[n + i]),
                concepts=[coarse, fine],
                topic="person",
            )
        )
    return fixtures


def cluster_label_map(matrix, assignment, concept_to_topic: dict[str, str]) -> dict[int, str]:
    """Name each cluster by the majority topic of its member concepts."""
    label_map: dict[int, str] = {}
    for cid in sorted(set(int(a) for a in assignment)):
        members = [matrix.concepts[i].name for i in range(len(assignment)) if int(assignment[i]) == cid]
        topics = [concept_to_topic[m] for m in members if m in concept_to_topic]
        if topics:
            values, counts = np.unique(topics, return_counts=True)
            label_map[cid] = str(values[np.argmax(counts)])
    return label_map


def synthetic_classifier_config(seed: int, num_topics: int = 4) -> ClassifierConfig:
    return ClassifierConfig(
        num_topics=num_topics,
        num_layers=2,
        embedding_dim=48,
        hidden_dim=96,
        num_heads=4,
        max_len=64,
        dropout=0.05,
        learning_rate=1e-3,
        batch_size=16,
        epochs=24,
        seed=derive_seed(seed, "synthetic-classifier"),
    )


def synthetic_extractor_config(seed: int, use_prompt: bool = True) -> ExtractorConfig:
    return ExtractorConfig(
        alpha=0.3,
        threshold=0.7,
        max_span_len=2,
        encoder="scratch_tiny",
        use_prompt=use_prompt,
        num_layers=2,
        embedding_dim=48,
        hidden_dim=96,
        num_heads=4,
        max_len=64,
        dropout=0.1,
        learning_rate=2e-3,
        batch_size=8,
        epochs=10,
        seed=derive_seed(seed, "synthetic-extractor"),
    )
