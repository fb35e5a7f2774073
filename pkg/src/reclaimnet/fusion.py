"""Gated fusion of text and user representations, and the dual-encoder model.

The gate is a per-dimension sigmoid over a tanh bottleneck of the two
concatenated hidden states; the fused vector is the gate-weighted convex
combination of the two states, so each fused component always lies
between its text and user counterparts.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import torch
from torch import nn

from .encoder import EncodedPair, EncoderBundle, collate_pairs, _init_head


@dataclass
class FusionState:
    """Inputs, gate, and fused output of one fusion pass (batch-first tensors)."""

    h_text: torch.Tensor
    h_user: torch.Tensor
    gate: torch.Tensor
    fused: torch.Tensor


class GatedFusion(nn.Module):
    """Learned sigmoid gate interpolating two same-width representations.

    ``compress`` maps the concatenated pair (2d) to the gate bottleneck
    (d_g), ``project`` maps the tanh of that back to d where the sigmoid
    produces the per-dimension gate. Biases are standard practice but can
    be disabled for the exact bias-free equation.
    """

    def __init__(self, hidden_dim: int, gate_hidden_dim: int | None = None, bias: bool = True):
        super().__init__()
        self.hidden_dim = hidden_dim
        self.gate_hidden_dim = gate_hidden_dim or hidden_dim
        self.bias = bias
        self.compress = nn.Linear(2 * hidden_dim, self.gate_hidden_dim, bias=bias)
        self.project = nn.Linear(self.gate_hidden_dim, hidden_dim, bias=bias)
        nn.init.uniform_(self.compress.weight, -0.05, 0.05)
        nn.init.uniform_(self.project.weight, -0.05, 0.05)
        if bias:
            # Zero biases start the gate at 0.5: neither encoder dominates.
            nn.init.zeros_(self.compress.bias)
            nn.init.zeros_(self.project.bias)

    def forward(self, h_text: torch.Tensor, h_user: torch.Tensor) -> FusionState:
        if h_text.shape != h_user.shape or h_text.shape[-1] != self.hidden_dim:
            raise ValueError(
                f"expected two (*, {self.hidden_dim}) tensors, got {tuple(h_text.shape)} and {tuple(h_user.shape)}"
            )
        joint = torch.cat([h_text, h_user], dim=-1)
        gate = torch.sigmoid(self.project(torch.tanh(self.compress(joint))))
        fused = gate * h_text + (1.0 - gate) * h_user
        return FusionState(h_text=h_text, h_user=h_user, gate=gate, fused=fused)


class DualEncoderModel(nn.Module):
    """Two parallel encoders over the same tweet+bio input, gated into one head."""

    def __init__(
        self,
        text_encoder: EncoderBundle,
        user_encoder: EncoderBundle,
        gate_hidden_dim: int | None = None,
        fusion_bias: bool = True,
    ):
        super().__init__()
        if text_encoder.hidden_dim != user_encoder.hidden_dim:
            raise ValueError(
                f"encoder hidden dims disagree: {text_encoder.hidden_dim} vs {user_encoder.hidden_dim}"
            )
        self.text_encoder = text_encoder
        self.user_encoder = user_encoder
        self.fusion = GatedFusion(text_encoder.hidden_dim, gate_hidden_dim, bias=fusion_bias)
        self.head = nn.Linear(text_encoder.hidden_dim, 2)
        _init_head(self.head)

    @property
    def hidden_dim(self) -> int:
        return self.text_encoder.hidden_dim

    def forward(
        self,
        text_batch: dict[str, torch.Tensor],
        user_batch: dict[str, torch.Tensor] | None = None,
        return_state: bool = False,
    ):
        """Logits over both encoders' fused representation.

        ``user_batch`` defaults to ``text_batch``: both towers read the
        identical concatenated input unless their tokenizers differ.
        """
        h_text = self.text_encoder.encode_batch(text_batch)
        h_user = self.user_encoder.encode_batch(user_batch if user_batch is not None else text_batch)
        state = self.fusion(h_text, h_user)
        logits = self.head(state.fused)
        if return_state:
            return logits, state
        return logits

    def classify_pair(self, text_pair: EncodedPair, user_pair: EncodedPair | None = None) -> torch.Tensor:
        device = next(self.parameters()).device
        text_batch = collate_pairs([text_pair], self.text_encoder.tokenizer.pad_token_id, device)
        user_batch = None
        if user_pair is not None:
            user_batch = collate_pairs([user_pair], self.user_encoder.tokenizer.pad_token_id, device)
        return self(text_batch, user_batch)[0]

    def build_inputs(self, tweet: str, bio: str) -> tuple[EncodedPair, EncodedPair]:
        """Tokenize the same text once per tower (conventions may differ)."""
        return self.text_encoder.build_input(tweet, bio), self.user_encoder.build_input(tweet, bio)

    def save(self, directory: str | Path) -> None:
        """Checkpoint: both encoder checkpoints + fusion/head weights + config."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        self.text_encoder.save(directory / "text_encoder")
        self.user_encoder.save(directory / "user_encoder")
        torch.save(self.fusion.state_dict(), directory / "fusion.pt")
        torch.save(self.head.state_dict(), directory / "head.pt")
        (directory / "config.json").write_text(
            json.dumps(
                {
                    "hidden_dim": self.hidden_dim,
                    "gate_hidden_dim": self.fusion.gate_hidden_dim,
                    "fusion_bias": self.fusion.bias,
                },
                indent=2,
            )
            + "\n"
        )

    @classmethod
    def load(cls, directory: str | Path) -> "DualEncoderModel":
        directory = Path(directory)
        meta = json.loads((directory / "config.json").read_text())
        model = cls(
            EncoderBundle.load(directory / "text_encoder"),
            EncoderBundle.load(directory / "user_encoder"),
            gate_hidden_dim=meta["gate_hidden_dim"],
            fusion_bias=meta["fusion_bias"],
        )
        model.fusion.load_state_dict(torch.load(directory / "fusion.pt", weights_only=True))
        model.head.load_state_dict(torch.load(directory / "head.pt", weights_only=True))
        return model
