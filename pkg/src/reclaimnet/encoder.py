"""Pretrained text encoder wrapper: tokenization, CLS pooling, linear head.

An EncoderBundle pairs a BERT-like backbone with its tokenizer and a
2-way classification head. The same bundle type serves as the baseline
reclamation classifier and as the user encoder trained on proxy labels.
Inputs are always the tweet and bio as a two-segment pair in the
backbone's native convention; when the pair overflows the length budget
the bio tail is truncated first so the tweet survives intact.
"""

from __future__ import annotations

import hashlib
import json
import re
import unicodedata
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import torch
from torch import nn
from transformers import AutoModel, AutoTokenizer, BertConfig, BertModel, BertTokenizer

SPECIAL_TOKENS = ("[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]")


@dataclass
class EncodedPair:
    """Tokenized two-segment input plus its attention mask."""

    token_ids: list[int]
    attention_mask: list[int]
    token_type_ids: list[int] | None = None

    def __post_init__(self):
        if len(self.attention_mask) != len(self.token_ids):
            raise ValueError("attention mask length must equal token length")
        if self.token_type_ids is not None and len(self.token_type_ids) != len(self.token_ids):
            raise ValueError("token type ids length must equal token length")

    def __len__(self) -> int:
        return len(self.token_ids)


@dataclass
class EncoderConfig:
    backbone_identifier: str
    hidden_dim: int
    max_sequence_length: int = 128
    pooling: str = "cls"
    head_dropout: float = 0.0

    def __post_init__(self):
        if self.pooling != "cls":
            raise ValueError(f"unsupported pooling {self.pooling!r}")
        if self.hidden_dim <= 0 or self.max_sequence_length <= 0:
            raise ValueError("hidden_dim and max_sequence_length must be positive")


def build_input(tweet: str, bio: str, tokenizer, max_sequence_length: int = 128) -> EncodedPair:
    """Encode ``tweet [SEP] bio`` as a two-segment input.

    Overflow is resolved by dropping tokens from the tail of the bio
    first, then (only if the tweet alone still overflows) from the tail
    of the tweet. Special tokens are whatever the backbone's tokenizer
    emits for a pair, so the output length is exactly
    ``max_sequence_length`` whenever truncation kicks in.
    """
    encoding = tokenizer(tweet, text_pair=bio, add_special_tokens=True, truncation=False)
    ids = list(encoding["input_ids"])
    token_types = list(encoding["token_type_ids"]) if "token_type_ids" in encoding else None
    segments = encoding.sequence_ids()

    overflow = len(ids) - max_sequence_length
    if overflow > 0:
        drop: set[int] = set()
        for segment in (1, 0):
            if overflow <= 0:
                break
            positions = [i for i, s in enumerate(segments) if s == segment]
            victims = positions[len(positions) - min(overflow, len(positions)) :]
            drop.update(victims)
            overflow -= len(victims)
        if overflow > 0:
            raise ValueError(
                f"max_sequence_length={max_sequence_length} cannot hold the special-token skeleton"
            )
        ids = [t for i, t in enumerate(ids) if i not in drop]
        if token_types is not None:
            token_types = [t for i, t in enumerate(token_types) if i not in drop]

    return EncodedPair(token_ids=ids, attention_mask=[1] * len(ids), token_type_ids=token_types)


def collate_pairs(pairs: Sequence[EncodedPair], pad_token_id: int, device: str | torch.device = "cpu") -> dict[str, torch.Tensor]:
    """Pad a batch of EncodedPairs into model-ready tensors."""
    width = max(len(p) for p in pairs)
    input_ids = torch.full((len(pairs), width), pad_token_id, dtype=torch.long)
    attention_mask = torch.zeros((len(pairs), width), dtype=torch.long)
    use_types = all(p.token_type_ids is not None for p in pairs)
    token_type_ids = torch.zeros((len(pairs), width), dtype=torch.long) if use_types else None
    for row, pair in enumerate(pairs):
        n = len(pair)
        input_ids[row, :n] = torch.tensor(pair.token_ids, dtype=torch.long)
        attention_mask[row, :n] = torch.tensor(pair.attention_mask, dtype=torch.long)
        if use_types:
            token_type_ids[row, :n] = torch.tensor(pair.token_type_ids, dtype=torch.long)
    batch = {"input_ids": input_ids.to(device), "attention_mask": attention_mask.to(device)}
    if use_types:
        batch["token_type_ids"] = token_type_ids.to(device)
    return batch


def _init_head(head: nn.Linear) -> None:
    # Small-uniform weights, zero bias: reproducible probe-stage behavior.
    nn.init.uniform_(head.weight, -0.02, 0.02)
    nn.init.zeros_(head.bias)


class EncoderBundle(nn.Module):
    """Backbone + CLS pooling + linear 2-way head."""

    def __init__(self, backbone: nn.Module, tokenizer, config: EncoderConfig):
        super().__init__()
        self.backbone = backbone
        self.tokenizer = tokenizer
        self.config = config
        self.head_dropout = nn.Dropout(config.head_dropout)
        self.head = nn.Linear(config.hidden_dim, 2)
        _init_head(self.head)

    @property
    def hidden_dim(self) -> int:
        return self.config.hidden_dim

    def encode_batch(self, batch: dict[str, torch.Tensor]) -> torch.Tensor:
        """Pooled final hidden state, shape (batch, hidden_dim)."""
        if batch["input_ids"].shape[1] > self.config.max_sequence_length:
            raise ValueError(
                f"input length {batch['input_ids'].shape[1]} exceeds "
                f"max_sequence_length {self.config.max_sequence_length}"
            )
        outputs = self.backbone(**batch)
        pooled = outputs.last_hidden_state[:, 0, :]
        if pooled.shape[-1] != self.config.hidden_dim:
            raise RuntimeError(f"backbone produced dim {pooled.shape[-1]}, expected {self.config.hidden_dim}")
        return pooled

    def forward(self, batch: dict[str, torch.Tensor]) -> torch.Tensor:
        return self.head(self.head_dropout(self.encode_batch(batch)))

    def encode_pair(self, pair: EncodedPair) -> torch.Tensor:
        """Convenience single-input encode; caller controls train/eval mode."""
        batch = collate_pairs([pair], self.tokenizer.pad_token_id, next(self.parameters()).device)
        return self.encode_batch(batch)[0]

    def classify_pair(self, pair: EncodedPair) -> torch.Tensor:
        batch = collate_pairs([pair], self.tokenizer.pad_token_id, next(self.parameters()).device)
        return self(batch)[0]

    def build_input(self, tweet: str, bio: str) -> EncodedPair:
        return build_input(tweet, bio, self.tokenizer, self.config.max_sequence_length)

    def save(self, directory: str | Path) -> None:
        """Checkpoint layout: backbone/ (weights + tokenizer), head.pt, config.json."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        self.backbone.save_pretrained(directory / "backbone")
        self.tokenizer.save_pretrained(directory / "backbone")
        torch.save(self.head.state_dict(), directory / "head.pt")
        (directory / "config.json").write_text(json.dumps(asdict(self.config), indent=2) + "\n")

    @classmethod
    def load(cls, directory: str | Path) -> "EncoderBundle":
        directory = Path(directory)
        config = EncoderConfig(**json.loads((directory / "config.json").read_text()))
        backbone = AutoModel.from_pretrained(directory / "backbone")
        tokenizer = AutoTokenizer.from_pretrained(directory / "backbone")
        bundle = cls(backbone, tokenizer, config)
        bundle.head.load_state_dict(torch.load(directory / "head.pt", weights_only=True))
        return bundle


def from_backbone(identifier: str, max_sequence_length: int = 128, head_dropout: float = 0.0) -> EncoderBundle:
    """Build a bundle from a pretrained checkpoint name or local path."""
    backbone = AutoModel.from_pretrained(identifier)
    tokenizer = AutoTokenizer.from_pretrained(identifier)
    config = EncoderConfig(
        backbone_identifier=str(identifier),
        hidden_dim=backbone.config.hidden_size,
        max_sequence_length=max_sequence_length,
        head_dropout=head_dropout,
    )
    return EncoderBundle(backbone, tokenizer, config)


_WORDISH = re.compile(r"\w+|[^\w\s]", re.UNICODE)


def build_word_vocab(texts: Iterable[str]) -> dict[str, int]:
    """Word-level WordPiece vocab (plus BERT specials) covering the given texts."""
    tokens: set[str] = set()
    for text in texts:
        normalized = unicodedata.normalize("NFC", text).lower()
        tokens.update(_WORDISH.findall(normalized))
    vocab = {token: i for i, token in enumerate(SPECIAL_TOKENS)}
    for token in sorted(tokens):
        vocab[token] = len(vocab)
    return vocab


def build_tiny_bundle(
    vocab: dict[str, int],
    hidden_dim: int = 32,
    num_layers: int = 2,
    max_sequence_length: int = 64,
    seed: int = 0,
    identifier: str = "tiny-random-bert",
) -> EncoderBundle:
    """Randomly initialized miniature BERT for CPU-scale experiments and tests."""
    heads = 4 if hidden_dim % 4 == 0 else (2 if hidden_dim % 2 == 0 else 1)
    config = BertConfig(
        vocab_size=len(vocab),
        hidden_size=hidden_dim,
        num_hidden_layers=num_layers,
        num_attention_heads=heads,
        intermediate_size=hidden_dim * 4,
        max_position_embeddings=max_sequence_length,
    )
    tokenizer = BertTokenizer(vocab=dict(vocab), do_lower_case=True, strip_accents=False)
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        backbone = BertModel(config)
        bundle = EncoderBundle(
            backbone,
            tokenizer,
            EncoderConfig(
                backbone_identifier=f"{identifier}-h{hidden_dim}-l{num_layers}",
                hidden_dim=hidden_dim,
                max_sequence_length=max_sequence_length,
            ),
        )
    return bundle


def parameter_digest(module: nn.Module, prefix: str = "") -> str:
    """SHA-256 over named parameters; bitwise-equal weights give equal digests."""
    digest = hashlib.sha256()
    for name, param in sorted(module.named_parameters()):
        if prefix and not name.startswith(prefix):
            continue
        digest.update(name.encode("utf-8"))
        digest.update(param.detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()
