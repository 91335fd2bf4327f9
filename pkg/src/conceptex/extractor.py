"""Prompt-augmented encoder with a pointer-network head.

The input is [CLS] prompt [SEP] entity+abstract [SEP]. A linear projection W
(d' x 2) plus a learned per-position bias B (len x 2) produce start/end logits;
softmax over token positions turns each column into a distribution. A span
(i, j) scores p_start[i] + p_end[j]; decoding keeps every in-abstract pair above
the confidence threshold, so nested and overlapping spans survive by design.
"""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn as nn

from .classifier import TopicClassifier, classify, derive_topic, pad_batch
from .corpus import DatasetSplit, EntityRecord, InputText, build_input
from .encoder import (
    CLS,
    SEP,
    AttentionUnavailableError,
    EncoderConfig,
    PretrainedWordEncoder,
    TinyEncoder,
    Vocabulary,
    load_checkpoint,
    save_checkpoint,
)
from .io_utils import derive_seed
from .taxonomy import Taxonomy
from .tokenization import detokenize, find_subsequence, tokenize

SCRATCH_TINY = "scratch_tiny"
PRETRAINED_MLM = "pretrained_masked_lm"


@dataclass
class ExtractorConfig:
    alpha: float = 0.3
    threshold: float = 0.12
    max_span_len: int = 30
    encoder: str = SCRATCH_TINY
    pretrained_name: Optional[str] = None
    use_prompt: bool = True
    num_layers: int = 2
    embedding_dim: int = 64
    hidden_dim: int = 128
    num_heads: int = 4
    max_len: int = 128
    dropout: float = 0.1
    learning_rate: float = 3e-5
    batch_size: int = 4
    epochs: int = 2
    seed: int = 0

    def __post_init__(self) -> None:
        if not (0.0 < self.alpha < 1.0):
            raise ValueError("alpha must lie in (0, 1)")
        if self.threshold < 0:
            raise ValueError("threshold must be non-negative")
        if self.max_span_len < 1:
            raise ValueError("max_span_len must be at least 1")
        if self.encoder not in (SCRATCH_TINY, PRETRAINED_MLM):
            raise ValueError(f"unknown encoder backend {self.encoder!r}")
        if self.encoder == PRETRAINED_MLM and not self.pretrained_name:
            raise ValueError("pretrained_masked_lm backend needs pretrained_name")


@dataclass
class PromptedInput:
    tokens: list[str]
    prompt_span: tuple[int, int]
    entity_span: tuple[int, int]
    abstract_span: tuple[int, int]

    def __post_init__(self) -> None:
        p0, p1 = self.prompt_span
        e0, e1 = self.entity_span
        a0, a1 = self.abstract_span
        n = len(self.tokens)
        if not (0 < p0 <= p1 <= e0 <= e1 <= a0 <= a1 < n):
            raise ValueError("prompt, entity and abstract spans must be ordered and inside the body")
        if self.tokens[0] != CLS or self.tokens[-1] != SEP:
            raise ValueError("prompted input must start with [CLS] and end with [SEP]")
        n_prompt = p1 - p0
        n_x = (e1 - e0) + (a1 - a0)
        expected = n_prompt + n_x + 3 if n_prompt else n_x + 2
        if n != expected:
            raise ValueError(f"layout length {n} does not match expected {expected}")

    @property
    def prompt_tokens(self) -> list[str]:
        return self.tokens[self.prompt_span[0] : self.prompt_span[1]]

    @property
    def abstract_tokens(self) -> list[str]:
        return self.tokens[self.abstract_span[0] : self.abstract_span[1]]


@dataclass
class SpanPrediction:
    start: int
    end: int
    confidence: float
    text: str

    def __post_init__(self) -> None:
        if self.start > self.end:
            raise ValueError(f"span start {self.start} after end {self.end}")

    def to_json(self) -> dict:
        return {"text": self.text, "start": self.start, "end": self.end, "confidence": self.confidence}


def assemble_prompted_input(
    topic: Optional[str], input_text: InputText, max_len: Optional[int] = None
) -> PromptedInput:
    """Lay out [CLS] P [SEP] X [SEP]; an empty topic degenerates to [CLS] X [SEP].

    When the window overflows, abstract tokens are dropped from the right; the
    prompt and entity are never cut.
    """
    prompt_tokens = tokenize(topic) if topic else []
    entity_tokens = input_text.entity_tokens
    abstract_tokens = input_text.abstract_tokens
    n_fixed = len(prompt_tokens) + len(entity_tokens) + (3 if prompt_tokens else 2)
    if max_len is not None:
        budget = max_len - n_fixed
        if budget < 1:
            raise ValueError(
                f"prompt and entity ({n_fixed} tokens) leave no room for the abstract "
                f"in a window of {max_len}"
            )
        if len(abstract_tokens) > budget:
            warnings.warn(
                f"abstract truncated from {len(abstract_tokens)} to {budget} tokens to fit window"
            )
            abstract_tokens = abstract_tokens[:budget]

    if prompt_tokens:
        tokens = [CLS, *prompt_tokens, SEP, *entity_tokens, *abstract_tokens, SEP]
        p0 = 1
        e0 = 2 + len(prompt_tokens)
    else:
        tokens = [CLS, *entity_tokens, *abstract_tokens, SEP]
        p0 = 1
        e0 = 1
    p1 = p0 + len(prompt_tokens)
    e1 = e0 + len(entity_tokens)
    return PromptedInput(
        tokens=tokens,
        prompt_span=(p0, p1),
        entity_span=(e0, e1),
        abstract_span=(e1, e1 + len(abstract_tokens)),
    )


class ExtractorModel(nn.Module):
    def __init__(self, config: ExtractorConfig, vocab: Optional[Vocabulary] = None):
        super().__init__()
        self.config = config
        self.vocab = vocab
        if config.encoder == SCRATCH_TINY:
            if vocab is None:
                raise ValueError("scratch_tiny backend needs a vocabulary")
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
            d_out = config.hidden_dim
        else:
            self.encoder = PretrainedWordEncoder(config.pretrained_name, max_len=4 * config.max_len)
            d_out = self.encoder.output_dim
        self.pointer_w = nn.Linear(d_out, 2, bias=False)
        self.pointer_bias = nn.Parameter(torch.zeros(config.max_len, 2))

    def pointer_logits(self, hidden: torch.Tensor) -> torch.Tensor:
        """hidden (B, L, d') -> logits (B, L, 2) = HW + B truncated to the live length."""
        n = hidden.shape[1]
        if n > self.config.max_len:
            raise ValueError(f"sequence of {n} exceeds window {self.config.max_len}")
        return self.pointer_w(hidden) + self.pointer_bias[:n]

    def forward(
        self, ids: torch.Tensor, pad_mask: Optional[torch.Tensor] = None
    ) -> tuple[torch.Tensor, list[torch.Tensor]]:
        """Batched scratch forward: pointer probabilities (B, L, 2) plus attentions."""
        hidden, attentions = self.encoder(ids, pad_mask)
        logits = self.pointer_logits(hidden)
        if pad_mask is not None:
            logits = logits.masked_fill(pad_mask[:, :, None], float("-inf"))
        return torch.softmax(logits, dim=1), attentions

    def encode_input(self, prompted: PromptedInput) -> torch.Tensor:
        """Final hidden states (1, L, d') for one prompted input, eval mode."""
        self.eval()
        if self.config.encoder == SCRATCH_TINY:
            ids = torch.tensor([self.vocab.encode(prompted.tokens)])
            hidden, _ = self.encoder(ids)
            return hidden
        hidden, _ = self.encoder.forward_words(prompted.tokens)
        return hidden

    def cls_attention_raw(self, prompted: PromptedInput) -> np.ndarray:
        """Last-layer [CLS] attention row averaged over heads, one weight per token."""
        self.eval()
        with torch.no_grad():
            if self.config.encoder == SCRATCH_TINY:
                ids = torch.tensor([self.vocab.encode(prompted.tokens)])
                _, attentions = self.encoder(ids)
                if not attentions:
                    raise AttentionUnavailableError("encoder produced no attention maps")
                return attentions[-1][0][:, 0, :].mean(dim=0).numpy()
            _, cls_attn = self.encoder.forward_words(prompted.tokens)
            if cls_attn is None:
                raise AttentionUnavailableError("pretrained backend returned no attention maps")
            return cls_attn.numpy()


def forward_pointer(model: ExtractorModel, prompted: PromptedInput) -> tuple[np.ndarray, np.ndarray]:
    """Start/end probability vectors over all positions of one prompted input."""
    model.eval()
    with torch.no_grad():
        hidden = model.encode_input(prompted)
        probs = torch.softmax(model.pointer_logits(hidden), dim=1)[0]
    return probs[:, 0].numpy(), probs[:, 1].numpy()


def confidence(i: int, j: int, p_start: np.ndarray, p_end: np.ndarray) -> float:
    """cs_ij = p_start[i] + p_end[j] for a candidate span."""
    if i > j:
        raise ValueError(f"start {i} after end {j}")
    return float(p_start[i] + p_end[j])


def decode_spans(
    p_start: np.ndarray,
    p_end: np.ndarray,
    abstract_span: tuple[int, int],
    threshold: float,
    max_span_len: int,
    tokens: Sequence[str],
) -> list[SpanPrediction]:
    """All abstract-internal spans above the threshold, best first.

    Ranking is by confidence descending with (start, end) as the tie-break;
    spans rendering to the same text are deduplicated keeping the highest
    confidence. Nested and overlapping spans are all retained.
    """
    ps = np.asarray(p_start, dtype=float)
    pe = np.asarray(p_end, dtype=float)
    a0, a1 = abstract_span
    if a1 <= a0:
        return []
    starts, ends = np.meshgrid(np.arange(a0, a1), np.arange(a0, a1), indexing="ij")
    valid = (ends >= starts) & (ends - starts + 1 <= max_span_len)
    cs = ps[starts] + pe[ends]
    keep = valid & (cs > threshold)
    i_idx, j_idx = starts[keep], ends[keep]
    conf = cs[keep]
    order = np.lexsort((j_idx, i_idx, -conf))

    seen: set[str] = set()
    result = []
    for idx in order:
        i, j = int(i_idx[idx]), int(j_idx[idx])
        text = detokenize(tokens[i : j + 1])
        if text in seen:
            continue
        seen.add(text)
        result.append(SpanPrediction(start=i, end=j, confidence=float(conf[idx]), text=text))
    return result


def _as_tensor(v) -> torch.Tensor:
    return v if isinstance(v, torch.Tensor) else torch.as_tensor(np.asarray(v, dtype=float))


def training_loss(p_start, p_end, y_start, y_end, alpha: float):
    """alpha * CE(p_start, y_start) + (1 - alpha) * CE(p_end, y_end).

    The 0/1 gold vectors are normalized uniformly over their positive entries so
    multi-span supervision still targets a distribution. Returns a torch scalar
    when given tensors (autograd-friendly), a float otherwise.
    """
    was_tensor = isinstance(p_start, torch.Tensor)
    ps, pe = _as_tensor(p_start), _as_tensor(p_end)
    ys, ye = _as_tensor(y_start).to(ps.dtype), _as_tensor(y_end).to(pe.dtype)
    if ys.sum() == 0 or ye.sum() == 0:
        raise ValueError("no gold span: the start/end label vectors must have a positive entry")
    loss = torch.tensor(0.0, dtype=ps.dtype)
    for weight, p, y in ((alpha, ps, ys), (1.0 - alpha, pe, ye)):
        target = y / y.sum()
        ce = -(target * torch.log(p.clamp_min(1e-12))).sum()
        loss = loss + weight * ce
    return loss if was_tensor else float(loss)


def gold_label_vectors(
    prompted: PromptedInput, concepts: Sequence[str]
) -> tuple[np.ndarray, np.ndarray, int]:
    """0/1 start and end vectors with a 1 at every gold occurrence; returns hit count."""
    n = len(prompted.tokens)
    y_start = np.zeros(n)
    y_end = np.zeros(n)
    a0, _ = prompted.abstract_span
    abstract = prompted.abstract_tokens
    hits = 0
    for concept in concepts:
        needle = tokenize(concept)
        for pos in find_subsequence(abstract, needle):
            y_start[a0 + pos] = 1.0
            y_end[a0 + pos + len(needle) - 1] = 1.0
            hits += 1
    return y_start, y_end, hits


def _prompt_for(record: EntityRecord, taxonomy: Taxonomy, config: ExtractorConfig) -> Optional[str]:
    if not config.use_prompt:
        return None
    return derive_topic(record, taxonomy.concept_to_topic())


def train_extractor(
    split: DatasetSplit,
    taxonomy: Taxonomy,
    classifier_model: Optional[TopicClassifier],
    config: ExtractorConfig,
) -> tuple[ExtractorModel, dict]:
    """Adam training of the pointer loss; prompts come from gold clusters here.

    classifier_model is only consulted at inference time (extract_concepts);
    training supervision uses the taxonomy directly.
    """
    c2t = taxonomy.concept_to_topic()

    def prepare(records: Sequence[EntityRecord]) -> tuple[list[tuple], int]:
        items, skipped = [], 0
        for rec in records:
            topic = derive_topic(rec, c2t) if config.use_prompt else None
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    prompted = assemble_prompted_input(topic, build_input(rec), config.max_len)
            except ValueError:
                skipped += 1
                continue
            y_start, y_end, hits = gold_label_vectors(prompted, rec.concepts)
            if hits == 0:
                skipped += 1
                continue
            items.append((prompted, y_start, y_end))
        return items, skipped

    train_items, skipped_train = prepare(split.train)
    val_items, skipped_val = prepare(split.validation)
    if not train_items:
        raise ValueError("no training record yields an alignable gold span")

    torch.manual_seed(derive_seed(config.seed, "extractor-init"))
    vocab = None
    if config.encoder == SCRATCH_TINY:
        token_lists = [item[0].tokens for item in train_items]
        token_lists.append([t for name in taxonomy.topic_names for t in tokenize(name)])
        vocab = Vocabulary.build(token_lists)
    model = ExtractorModel(config, vocab)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    rng = np.random.default_rng(derive_seed(config.seed, "extractor-shuffle"))

    def batch_loss(batch: list[tuple]) -> torch.Tensor:
        if config.encoder == SCRATCH_TINY:
            ids, pad_mask = pad_batch([model.vocab.encode(it[0].tokens) for it in batch])
            probs, _ = model(ids, pad_mask)
            losses = []
            for b, (prompted, ys, ye) in enumerate(batch):
                n = len(prompted.tokens)
                pad = np.zeros(probs.shape[1] - n)
                losses.append(
                    training_loss(
                        probs[b, :, 0],
                        probs[b, :, 1],
                        np.concatenate([ys, pad]),
                        np.concatenate([ye, pad]),
                        config.alpha,
                    )
                )
            return torch.stack(losses).mean()
        # pretrained backend: word pooling works one sequence at a time
        losses = []
        for prompted, ys, ye in batch:
            hidden, _ = model.encoder.forward_words(prompted.tokens)
            probs = torch.softmax(model.pointer_logits(hidden), dim=1)[0]
            losses.append(training_loss(probs[:, 0], probs[:, 1], ys, ye, config.alpha))
        return torch.stack(losses).mean()

    report: dict = {
        "skipped_records": skipped_train + skipped_val,
        "train_size": len(train_items),
        "validation_size": len(val_items),
        "seed": config.seed,
        "epochs": [],
    }
    for epoch in range(config.epochs):
        model.train()
        perm = rng.permutation(len(train_items))
        losses = []
        for start in range(0, len(perm), config.batch_size):
            batch = [train_items[i] for i in perm[start : start + config.batch_size]]
            loss = batch_loss(batch)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            losses.append(float(loss.detach()))
        entry = {"epoch": epoch + 1, "train_loss": float(np.mean(losses)), "val_loss": None}
        if val_items:
            model.eval()
            with torch.no_grad():
                entry["val_loss"] = float(
                    np.mean([float(batch_loss([item])) for item in val_items])
                )
        report["epochs"].append(entry)
    return model, report


def extract_concepts(
    record: EntityRecord,
    classifier_model: Optional[TopicClassifier],
    extractor_model: ExtractorModel,
    taxonomy: Taxonomy,
    config: ExtractorConfig,
) -> tuple[list[SpanPrediction], Optional[str]]:
    """Classify the topic, prompt the encoder, decode ranked spans."""
    topic = None
    if config.use_prompt:
        if classifier_model is None:
            raise ValueError("prompted extraction needs a trained topic classifier")
        dist = classify(record.entity_tokens, record.abstract_tokens, classifier_model)
        topic = dist.topic_name
    prompted = assemble_prompted_input(topic, build_input(record), config.max_len)
    p_start, p_end = forward_pointer(extractor_model, prompted)
    spans = decode_spans(
        p_start, p_end, prompted.abstract_span, config.threshold, config.max_span_len, prompted.tokens
    )
    return spans, topic


def save_extractor(model: ExtractorModel, path: str | Path) -> None:
    header = {
        "kind": "span_extractor",
        "config": asdict(model.config),
        "vocab_sha256": model.vocab.sha256() if model.vocab else None,
    }
    payload = {
        "state_dict": model.state_dict() if model.config.encoder == SCRATCH_TINY else None,
        "vocab": model.vocab.itos if model.vocab else None,
    }
    if payload["state_dict"] is None:
        raise ValueError("only scratch_tiny checkpoints are serialized; reload pretrained by name")
    save_checkpoint(path, header, payload)


def load_extractor(path: str | Path) -> ExtractorModel:
    header, payload = load_checkpoint(path)
    if header.get("kind") != "span_extractor":
        raise ValueError(f"{path} is not a span extractor checkpoint")
    config = ExtractorConfig(**header["config"])
    vocab = Vocabulary(payload["vocab"])
    model = ExtractorModel(config, vocab)
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model
