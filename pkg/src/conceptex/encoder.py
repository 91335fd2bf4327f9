"""Encoders shared by the topic classifier and the span extractor.

The default backend is a small transformer trained from scratch with random
embeddings: using a pretrained encoder for the topic classifier would leak
pretrained co-occurrence knowledge straight into the prompt, defeating the
mediation argument the prompt rests on. A pretrained masked-LM backend exists
for the extractor side; it wraps an external checkpoint and pools first-subword
states back onto word positions so span indices stay in the word-token space.
"""

from __future__ import annotations

import hashlib
import io
import json
import math
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import torch
import torch.nn as nn

from .io_utils import atomic_write_bytes

PAD, UNK, CLS, SEP = "[PAD]", "[UNK]", "[CLS]", "[SEP]"
SPECIALS = [PAD, UNK, CLS, SEP]

_CKPT_MAGIC = b"CEXCKPT1"


class AttentionUnavailableError(RuntimeError):
    """The configured encoder backend does not expose attention maps."""


class Vocabulary:
    """Token -> id mapping with fixed special tokens and deterministic ordering."""

    def __init__(self, tokens: Sequence[str]):
        self.itos = list(SPECIALS) + [t for t in tokens if t not in SPECIALS]
        self.stoi = {t: i for i, t in enumerate(self.itos)}

    @classmethod
    def build(cls, token_lists: Iterable[Sequence[str]]) -> "Vocabulary":
        counts: dict[str, int] = {}
        for tokens in token_lists:
            for t in tokens:
                counts[t] = counts.get(t, 0) + 1
        ordered = sorted(counts, key=lambda t: (-counts[t], t))
        return cls(ordered)

    def __len__(self) -> int:
        return len(self.itos)

    def encode(self, tokens: Sequence[str]) -> list[int]:
        unk = self.stoi[UNK]
        return [self.stoi.get(t, unk) for t in tokens]

    def sha256(self) -> str:
        return hashlib.sha256("\n".join(self.itos).encode("utf-8")).hexdigest()


@dataclass
class EncoderConfig:
    vocab_size: int
    embed_dim: int = 64
    hidden_dim: int = 64
    num_layers: int = 2
    num_heads: int = 4
    max_len: int = 128
    dropout: float = 0.1

    def __post_init__(self) -> None:
        if self.hidden_dim % self.num_heads != 0:
            raise ValueError("hidden_dim must be divisible by num_heads")


class SelfAttention(nn.Module):
    def __init__(self, dim: int, heads: int, dropout: float):
        super().__init__()
        self.heads = heads
        self.head_dim = dim // heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.out = nn.Linear(dim, dim)
        self.drop = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, pad_mask: Optional[torch.Tensor]):
        b, n, d = x.shape
        qkv = self.qkv(x).view(b, n, 3, self.heads, self.head_dim).permute(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]  # (b, heads, n, head_dim)
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        if pad_mask is not None:
            scores = scores.masked_fill(pad_mask[:, None, None, :], float("-inf"))
        attn = scores.softmax(dim=-1)
        out = self.drop(attn) @ v
        out = out.transpose(1, 2).reshape(b, n, d)
        return self.out(out), attn


class EncoderLayer(nn.Module):
    def __init__(self, dim: int, heads: int, dropout: float):
        super().__init__()
        self.attn = SelfAttention(dim, heads, dropout)
        self.norm1 = nn.LayerNorm(dim)
        self.ff = nn.Sequential(nn.Linear(dim, 4 * dim), nn.ReLU(), nn.Linear(4 * dim, dim))
        self.norm2 = nn.LayerNorm(dim)
        self.drop = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, pad_mask: Optional[torch.Tensor]):
        attn_out, attn = self.attn(x, pad_mask)
        x = self.norm1(x + self.drop(attn_out))
        x = self.norm2(x + self.drop(self.ff(x)))
        return x, attn


class TinyEncoder(nn.Module):
    """From-scratch transformer: random embeddings, learned per-position bias."""

    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.config = config
        self.embed = nn.Embedding(config.vocab_size, config.embed_dim, padding_idx=0)
        self.in_proj = nn.Linear(config.embed_dim, config.hidden_dim, bias=False)
        self.pos_bias = nn.Parameter(torch.zeros(config.max_len, config.hidden_dim))
        self.layers = nn.ModuleList(
            EncoderLayer(config.hidden_dim, config.num_heads, config.dropout)
            for _ in range(config.num_layers)
        )
        self.drop = nn.Dropout(config.dropout)

    def forward(
        self, ids: torch.Tensor, pad_mask: Optional[torch.Tensor] = None
    ) -> tuple[torch.Tensor, list[torch.Tensor]]:
        """ids: (batch, len) int64. pad_mask: (batch, len) bool, True at padding.

        Returns final hidden states (batch, len, hidden) and per-layer attention
        maps (batch, heads, len, len).
        """
        n = ids.shape[1]
        if n > self.config.max_len:
            raise ValueError(f"sequence of {n} tokens exceeds window {self.config.max_len}")
        x = self.in_proj(self.embed(ids)) + self.pos_bias[:n]
        x = self.drop(x)
        attentions = []
        for layer in self.layers:
            x, attn = layer(x, pad_mask)
            attentions.append(attn)
        return x, attentions

    @property
    def output_dim(self) -> int:
        return self.config.hidden_dim


class PretrainedWordEncoder(nn.Module):
    """Wraps a pretrained bidirectional masked-LM as a word-level encoder.

    Word tokens are split into subwords with the checkpoint's own tokenizer;
    each word is represented by its first subword's final hidden state, keeping
    span indices in the word space the rest of the pipeline uses. Sentinel
    strings [CLS]/[SEP] map to the checkpoint's special tokens.
    """

    def __init__(self, name_or_path: str, max_len: int = 512):
        super().__init__()
        try:
            from transformers import AutoModel, AutoTokenizer
        except ImportError as exc:  # pragma: no cover
            raise ImportError("the pretrained_masked_lm backend requires `transformers`") from exc
        self.tokenizer = AutoTokenizer.from_pretrained(name_or_path)
        # eager attention keeps output_attentions usable for CLS inspection
        self.model = AutoModel.from_pretrained(name_or_path, attn_implementation="eager")
        self.max_len = max_len

    def encode_words(self, words: Sequence[str]) -> tuple[list[int], list[int]]:
        """Subword ids plus, per word, the index of its first subword."""
        ids = [self.tokenizer.cls_token_id]
        firsts = []
        for w in words:
            if w == CLS:
                firsts.append(0)
                continue
            if w == SEP:
                firsts.append(len(ids))
                ids.append(self.tokenizer.sep_token_id)
                continue
            pieces = self.tokenizer.encode(w, add_special_tokens=False)
            if not pieces:
                pieces = [self.tokenizer.unk_token_id]
            firsts.append(len(ids))
            ids.extend(pieces)
        if ids[-1] != self.tokenizer.sep_token_id:
            ids.append(self.tokenizer.sep_token_id)
        if len(ids) > self.max_len:
            raise ValueError(f"subword sequence of {len(ids)} exceeds window {self.max_len}")
        return ids, firsts

    def forward_words(self, words: Sequence[str]) -> tuple[torch.Tensor, Optional[torch.Tensor]]:
        """Word-level hidden states (1, n_words, d) and CLS-attention word weights."""
        ids, firsts = self.encode_words(words)
        batch = torch.tensor([ids])
        out = self.model(input_ids=batch, output_attentions=True)
        hidden = out.last_hidden_state[:, firsts, :]
        cls_attn = None
        if out.attentions:
            last = out.attentions[-1][0].detach()  # (heads, L_sub, L_sub)
            row = last[:, 0, :].mean(dim=0)  # CLS attention averaged over heads
            # Sum subword attention mass onto each word.
            bounds = firsts + [len(ids)]
            masses = [float(row[bounds[i] : bounds[i + 1]].sum()) for i in range(len(firsts))]
            cls_attn = torch.tensor(masses)
        return hidden, cls_attn

    @property
    def output_dim(self) -> int:
        return int(self.model.config.hidden_size)


def save_checkpoint(path: str | Path, header: dict, payload: dict) -> None:
    """Single binary file: magic, length-prefixed JSON header, torch payload."""
    header_bytes = json.dumps(header, ensure_ascii=False).encode("utf-8")
    buf = io.BytesIO()
    torch.save(payload, buf)
    atomic_write_bytes(
        path, _CKPT_MAGIC + struct.pack(">I", len(header_bytes)) + header_bytes + buf.getvalue()
    )


def load_checkpoint(path: str | Path) -> tuple[dict, dict]:
    with open(path, "rb") as fh:
        magic = fh.read(len(_CKPT_MAGIC))
        if magic != _CKPT_MAGIC:
            raise ValueError(f"{path} is not a conceptex checkpoint")
        (header_len,) = struct.unpack(">I", fh.read(4))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        payload = torch.load(fh, weights_only=False)
    return header, payload


def truncate_to_window(
    fixed_tokens: int, abstract_tokens: Sequence[str], max_len: int, context: str
) -> list[str]:
    """Drop abstract tokens from the right until fixed + abstract fits the window."""
    budget = max_len - fixed_tokens
    if budget < 0:
        raise ValueError(f"{context}: fixed tokens alone exceed the window ({max_len})")
    if len(abstract_tokens) > budget:
        warnings.warn(
            f"{context}: abstract truncated from {len(abstract_tokens)} to {budget} tokens"
        )
        return list(abstract_tokens[:budget])
    return list(abstract_tokens)

