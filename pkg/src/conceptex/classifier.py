"""Topic classifier: from-scratch transformer encoder + two-layer ReLU MLP head.

Maps (entity, abstract) to a distribution over the taxonomy's topics. The
argmax topic becomes the knowledge-guided prompt for the extractor. Trained on
random embeddings only; see encoder module for why pretrained weights are
banned here.
"""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .corpus import DatasetSplit, EntityRecord
from .encoder import (
    CLS,
    SEP,
    EncoderConfig,
    TinyEncoder,
    Vocabulary,
    load_checkpoint,
    save_checkpoint,
    truncate_to_window,
)
from .io_utils import derive_seed
from .taxonomy import Taxonomy


@dataclass
class ClassifierConfig:
    num_topics: int = 17
    num_layers: int = 2
    embedding_dim: int = 64
    hidden_dim: int = 128
    num_heads: int = 4
    max_len: int = 128
    dropout: float = 0.1
    learning_rate: float = 3e-5
    batch_size: int = 16
    epochs: int = 2
    seed: int = 0

    def __post_init__(self) -> None:
        if self.hidden_dim % self.num_heads != 0:
            raise ValueError("hidden_dim must be divisible by num_heads")


@dataclass
class TopicDistribution:
    probabilities: np.ndarray
    topic_index: int = field(init=False)
    topic_name: str = field(init=False)
    topic_names: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        probs = np.asarray(self.probabilities, dtype=float)
        if (probs < 0).any() or abs(probs.sum() - 1.0) > 1e-6:
            raise ValueError("probabilities must be non-negative and sum to 1")
        self.probabilities = probs
        self.topic_index = int(np.argmax(probs))  # ties resolve to the lowest index
        if self.topic_names:
            self.topic_name = self.topic_names[self.topic_index]
        else:
            self.topic_name = f"topic_{self.topic_index}"


class TopicClassifier(nn.Module):
    def __init__(self, config: ClassifierConfig, vocab: Vocabulary, topic_names: list[str]):
        super().__init__()
        if len(topic_names) != config.num_topics:
            raise ValueError("num_topics must match the taxonomy")
        self.config = config
        self.vocab = vocab
        self.topic_names = list(topic_names)
        self.encoder = TinyEncoder(
            EncoderConfig(
                vocab_size=len(vocab),
                embed_dim=config.embedding_dim,
                hidden_dim=config.hidden_dim,
                num_layers=config.num_layers,
                num_heads=config.num_heads,
                max_len=config.max_len,
                dropout=config.dropout,
            )
        )
        self.head = nn.Sequential(
            nn.Linear(config.hidden_dim, config.hidden_dim),
            nn.ReLU(),
            nn.Linear(config.hidden_dim, config.num_topics),
        )

    def input_ids(self, entity_tokens: Sequence[str], abstract_tokens: Sequence[str]) -> list[int]:
        fixed = len(entity_tokens) + 2  # [CLS] E [SEP]
        abstract = truncate_to_window(fixed, abstract_tokens, self.config.max_len, "classifier input")
        tokens = [CLS, *entity_tokens, SEP, *abstract]
        return self.vocab.encode(tokens)

    def forward(self, ids: torch.Tensor, pad_mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        hidden, _ = self.encoder(ids, pad_mask)
        return self.head(hidden[:, 0, :])


def classify(
    entity_tokens: Sequence[str], abstract_tokens: Sequence[str], model: TopicClassifier
) -> TopicDistribution:
    if not entity_tokens or not abstract_tokens:
        raise ValueError("entity and abstract must be non-empty")
    model.eval()
    with torch.no_grad():
        ids = torch.tensor([model.input_ids(entity_tokens, abstract_tokens)])
        probs = F.softmax(model(ids), dim=-1)[0].numpy()
    return TopicDistribution(probabilities=probs, topic_names=model.topic_names)


def classify_batch(
    inputs: Sequence[tuple[Sequence[str], Sequence[str]]], model: TopicClassifier
) -> list[TopicDistribution]:
    model.eval()
    id_lists = [model.input_ids(e, a) for e, a in inputs]
    ids, pad_mask = pad_batch(id_lists)
    with torch.no_grad():
        probs = F.softmax(model(ids, pad_mask), dim=-1).numpy()
    return [TopicDistribution(probabilities=p, topic_names=model.topic_names) for p in probs]


def predict_topic(dist: TopicDistribution) -> str:
    return dist.topic_name


def pad_batch(id_lists: Sequence[list[int]]) -> tuple[torch.Tensor, torch.Tensor]:
    """Right-pad with PAD (id 0); mask is True at padding positions."""
    width = max(len(ids) for ids in id_lists)
    ids = torch.zeros(len(id_lists), width, dtype=torch.long)
    mask = torch.ones(len(id_lists), width, dtype=torch.bool)
    for i, row in enumerate(id_lists):
        ids[i, : len(row)] = torch.tensor(row)
        mask[i, : len(row)] = False
    return ids, mask


def derive_topic(record: EntityRecord, concept_to_topic: dict[str, str]) -> Optional[str]:
    """Topic supervision comes from the taxonomy cluster of the record's gold concepts."""
    for concept in record.concepts:
        topic = concept_to_topic.get(concept)
        if topic is not None:
            return topic
    return None


def train_classifier(
    split: DatasetSplit, taxonomy: Taxonomy, config: ClassifierConfig
) -> tuple[TopicClassifier, dict]:
    """Adam-optimized cross-entropy training; deterministic given config.seed."""
    if config.num_topics != taxonomy.k:
        raise ValueError(f"config.num_topics={config.num_topics} but taxonomy has k={taxonomy.k}")
    c2t = taxonomy.concept_to_topic()
    topic_names = taxonomy.topic_names
    topic_index = {name: i for i, name in enumerate(topic_names)}

    def labeled(records: Sequence[EntityRecord]) -> tuple[list[EntityRecord], list[int], int]:
        kept, targets, excluded = [], [], 0
        for rec in records:
            topic = derive_topic(rec, c2t)
            if topic is None:
                excluded += 1
                continue
            kept.append(rec)
            targets.append(topic_index[topic])
        return kept, targets, excluded

    train_recs, train_targets, excluded_train = labeled(split.train)
    val_recs, val_targets, excluded_val = labeled(split.validation)
    if not train_recs:
        raise ValueError("no training record maps into the taxonomy")

    torch.manual_seed(derive_seed(config.seed, "classifier-init"))
    vocab = Vocabulary.build(
        [rec.entity_tokens + rec.abstract_tokens for rec in train_recs]
    )
    model = TopicClassifier(config, vocab, topic_names)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    rng = np.random.default_rng(derive_seed(config.seed, "classifier-shuffle"))

    report: dict = {
        "excluded_records": excluded_train + excluded_val,
        "train_size": len(train_recs),
        "validation_size": len(val_recs),
        "seed": config.seed,
        "epochs": [],
    }

    targets_arr = np.array(train_targets)
    for epoch in range(config.epochs):
        model.train()
        perm = rng.permutation(len(train_recs))
        losses = []
        for start in range(0, len(perm), config.batch_size):
            idx = perm[start : start + config.batch_size]
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")  # truncation warnings already counted at ingest
                id_lists = [
                    model.input_ids(train_recs[i].entity_tokens, train_recs[i].abstract_tokens)
                    for i in idx
                ]
            ids, pad_mask = pad_batch(id_lists)
            logits = model(ids, pad_mask)
            loss = F.cross_entropy(logits, torch.tensor(targets_arr[idx]))
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            losses.append(float(loss.detach()))
        val_acc = None
        if val_recs:
            preds = classify_batch(
                [(r.entity_tokens, r.abstract_tokens) for r in val_recs], model
            )
            val_acc = float(np.mean([p.topic_index == t for p, t in zip(preds, val_targets)]))
        report["epochs"].append(
            {"epoch": epoch + 1, "train_loss": float(np.mean(losses)), "val_accuracy": val_acc}
        )
    return model, report


def save_classifier(model: TopicClassifier, path: str | Path) -> None:
    header = {
        "kind": "topic_classifier",
        "config": asdict(model.config),
        "vocab_sha256": model.vocab.sha256(),
        "topics": model.topic_names,
    }
    payload = {"state_dict": model.state_dict(), "vocab": model.vocab.itos}
    save_checkpoint(path, header, payload)


def load_classifier(path: str | Path) -> TopicClassifier:
    header, payload = load_checkpoint(path)
    if header.get("kind") != "topic_classifier":
        raise ValueError(f"{path} is not a topic classifier checkpoint")
    config = ClassifierConfig(**header["config"])
    vocab = Vocabulary(payload["vocab"])  # constructor re-anchors the special tokens
    model = TopicClassifier(config, vocab, header["topics"])
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model
