"""Losses, class weighting, seeding, and the per-stage training loop.

Four stages share one loop: the baseline text encoder and the user
encoder train end to end at the base learning rate; the dual model is
trained probe-first (fusion + head only, encoders frozen in eval mode)
and then jointly at a reduced rate. Best weights are selected by
validation macro-F1 and restored at stage end.
"""

from __future__ import annotations

import copy
import json
import logging
import random
import time
from collections import Counter
from dataclasses import dataclass, field, fields
from enum import Enum
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from .corpus import Instance
from .encoder import EncodedPair, EncoderBundle, collate_pairs
from .evaluation import MetricRecord, compute_metrics
from .fusion import DualEncoderModel

logger = logging.getLogger(__name__)


class Stage(str, Enum):
    BASELINE_TEXT = "baseline_text"
    USER_PROXY = "user_proxy"
    FUSION_PROBE = "fusion_probe"
    JOINT_FINETUNE = "joint_finetune"


class TrainingError(Exception):
    """Training could not start or finish (missing inputs, divergence)."""


class TrainingDiverged(TrainingError):
    """Loss became non-finite."""


@dataclass
class RunConfig:
    """Hyperparameters for one experiment; defaults follow the reference recipe."""

    learning_rate: float = 2e-5
    joint_finetune_learning_rate: float = 5e-6
    batch_size: int = 8
    weight_decay: float = 0.1
    loss: str = "weighted_cross_entropy"
    focal_gamma: float = 2.0
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    epochs_per_stage: int = 10
    early_stopping_patience: int = 3
    max_grad_norm: float = 1.0
    gate_hidden_dim: int | None = None
    fusion_bias: bool = True
    init_text_from_baseline: bool = True
    deterministic: bool = False
    device: str = "cpu"

    def validate(self) -> None:
        if self.learning_rate <= 0 or self.joint_finetune_learning_rate <= 0:
            raise ValueError("learning rates must be positive")
        if self.joint_finetune_learning_rate >= self.learning_rate:
            raise ValueError("joint fine-tune learning rate must be below the stage learning rate")
        if self.batch_size <= 0 or self.epochs_per_stage <= 0:
            raise ValueError("batch_size and epochs_per_stage must be positive")
        if self.loss not in ("weighted_cross_entropy", "focal"):
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.focal_gamma < 0:
            raise ValueError("focal_gamma must be nonnegative")
        if not self.seeds:
            raise ValueError("at least one seed required")

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["seeds"] = list(self.seeds)
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown training config keys: {sorted(unknown)}")
        kwargs = dict(data)
        if "seeds" in kwargs:
            kwargs["seeds"] = tuple(int(s) for s in kwargs["seeds"])
        return cls(**kwargs)


def seed_everything(seed: int, deterministic: bool = False) -> None:
    """Seed python, numpy and torch; optionally force deterministic kernels."""
    random.seed(seed)
    np.random.seed(seed % (2**32))
    torch.manual_seed(seed)
    if deterministic:
        torch.use_deterministic_algorithms(True)
        torch.set_num_threads(1)


def class_weights(distribution: Mapping[int, int]) -> torch.Tensor:
    """Inverse-frequency weights, mean-normalized: w_c = N / (K * n_c)."""
    counts = [distribution.get(0, 0), distribution.get(1, 0)]
    if any(c <= 0 for c in counts):
        raise ValueError(f"both classes need positive counts, got {counts}")
    total = sum(counts)
    return torch.tensor([total / (2 * c) for c in counts], dtype=torch.float64)


def _per_sample_nll(logits: torch.Tensor, labels: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    log_probs = F.log_softmax(logits, dim=-1)
    picked = log_probs.gather(1, labels.view(-1, 1)).squeeze(1)
    return -picked, log_probs


def _reduce(per_sample: torch.Tensor, sample_weights: torch.Tensor, reduction: str) -> torch.Tensor:
    if reduction == "none":
        return per_sample
    if reduction == "weighted_mean":
        return per_sample.sum() / sample_weights.sum()
    raise ValueError(f"unknown reduction {reduction!r}")


def weighted_cross_entropy(
    logits: torch.Tensor,
    labels: torch.Tensor,
    weights: torch.Tensor,
    reduction: str = "weighted_mean",
) -> torch.Tensor:
    """Class-weighted CE: -w[y] * log softmax(logits)[y], weighted-mean reduced."""
    nll, _ = _per_sample_nll(logits, labels.view(-1))
    sample_weights = weights.to(logits.dtype)[labels.view(-1)]
    return _reduce(sample_weights * nll, sample_weights, reduction)


def focal_loss(
    logits: torch.Tensor,
    labels: torch.Tensor,
    weights: torch.Tensor,
    gamma: float = 2.0,
    reduction: str = "weighted_mean",
) -> torch.Tensor:
    """Class-weighted focal loss: -w[y] * (1 - p_y)^gamma * log p_y.

    Shares the weighted-mean reduction with weighted_cross_entropy, so
    gamma = 0 reproduces it exactly.
    """
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    nll, log_probs = _per_sample_nll(logits, labels.view(-1))
    p_label = log_probs.gather(1, labels.view(-1, 1)).squeeze(1).exp()
    modulator = (1.0 - p_label) ** gamma
    sample_weights = weights.to(logits.dtype)[labels.view(-1)]
    return _reduce(sample_weights * modulator * nll, sample_weights, reduction)


def make_loss_fn(config: RunConfig, weights: torch.Tensor) -> Callable[[torch.Tensor, torch.Tensor], torch.Tensor]:
    if config.loss == "focal":
        return lambda logits, labels: focal_loss(logits, labels, weights, config.focal_gamma)
    return lambda logits, labels: weighted_cross_entropy(logits, labels, weights)


@dataclass
class SingleItem:
    instance_id: str
    pair: EncodedPair
    label: int


@dataclass
class DualItem:
    instance_id: str
    text_pair: EncodedPair
    user_pair: EncodedPair
    label: int


def encode_single(
    instances: Sequence[Instance],
    labels: Mapping[str, int] | None,
    bundle: EncoderBundle,
) -> list[SingleItem]:
    """Tokenize instances for one bundle; labels default to the gold label.

    Instances missing from an explicit label map are skipped (used to
    drop proxy-unresolved instances from user-encoder training).
    """
    items = []
    for inst in instances:
        if labels is None:
            label = int(inst.label)
        elif inst.id in labels:
            label = int(labels[inst.id])
        else:
            continue
        items.append(SingleItem(inst.id, bundle.build_input(inst.tweet, inst.bio), label))
    return items


def encode_dual(instances: Sequence[Instance], model: DualEncoderModel) -> list[DualItem]:
    items = []
    for inst in instances:
        text_pair, user_pair = model.build_inputs(inst.tweet, inst.bio)
        items.append(DualItem(inst.id, text_pair, user_pair, int(inst.label)))
    return items


def _batches(items: list, batch_size: int, rng: random.Random | None):
    order = list(range(len(items)))
    if rng is not None:
        rng.shuffle(order)
    for start in range(0, len(order), batch_size):
        yield [items[i] for i in order[start : start + batch_size]]


def _forward_batch(model: nn.Module, batch_items: list, device: str) -> tuple[torch.Tensor, torch.Tensor]:
    labels = torch.tensor([item.label for item in batch_items], dtype=torch.long, device=device)
    if isinstance(model, DualEncoderModel):
        text_batch = collate_pairs(
            [i.text_pair for i in batch_items], model.text_encoder.tokenizer.pad_token_id, device
        )
        user_batch = collate_pairs(
            [i.user_pair for i in batch_items], model.user_encoder.tokenizer.pad_token_id, device
        )
        logits = model(text_batch, user_batch)
    else:
        batch = collate_pairs([i.pair for i in batch_items], model.tokenizer.pad_token_id, device)
        logits = model(batch)
    return logits, labels


def predict(model: nn.Module, items: Sequence, batch_size: int = 32, device: str = "cpu") -> list[dict]:
    """Eval-mode predictions: one {id, gold, pred, prob_reclamatory} row per item."""
    was_training = model.training
    model.eval()
    rows = []
    with torch.no_grad():
        for batch_items in _batches(list(items), batch_size, rng=None):
            logits, labels = _forward_batch(model, batch_items, device)
            probs = F.softmax(logits, dim=-1)[:, 1]
            preds = logits.argmax(dim=-1)
            for item, gold, pred, prob in zip(batch_items, labels, preds, probs):
                rows.append(
                    {
                        "id": item.instance_id,
                        "gold": int(gold),
                        "pred": int(pred),
                        "prob_reclamatory": float(prob),
                    }
                )
    if was_training:
        model.train()
    return rows


@dataclass
class StageReport:
    """Per-epoch trajectory and best-checkpoint summary for one stage."""

    stage: Stage
    seed: int
    epochs: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_val_macro_f1: float = float("-inf")
    train_size: int = 0
    val_size: int = 0
    wall_time_s: float = 0.0
    checkpoint_path: str | None = None

    def to_dict(self) -> dict:
        return {
            "stage": self.stage.value,
            "seed": self.seed,
            "epochs": self.epochs,
            "best_epoch": self.best_epoch,
            "best_val_macro_f1": self.best_val_macro_f1,
            "train_size": self.train_size,
            "val_size": self.val_size,
            "wall_time_s": self.wall_time_s,
            "checkpoint_path": self.checkpoint_path,
        }


def _stage_parameters(model: nn.Module, stage: Stage) -> list[torch.nn.Parameter]:
    if stage == Stage.FUSION_PROBE:
        assert isinstance(model, DualEncoderModel)
        model.text_encoder.requires_grad_(False)
        model.user_encoder.requires_grad_(False)
        model.fusion.requires_grad_(True)
        model.head.requires_grad_(True)
        return list(model.fusion.parameters()) + list(model.head.parameters())
    model.requires_grad_(True)
    return list(model.parameters())


def _set_stage_mode(model: nn.Module, stage: Stage) -> None:
    model.train()
    if stage == Stage.FUSION_PROBE:
        # Frozen encoders act as fixed feature extractors: no dropout noise.
        model.text_encoder.eval()
        model.user_encoder.eval()


def train_stage(
    model: nn.Module,
    train_items: list,
    val_items: list,
    config: RunConfig,
    stage: Stage,
    seed: int = 0,
    log_path: str | Path | None = None,
) -> StageReport:
    """Run one stage; returns the report with best weights restored in place."""
    if not train_items:
        raise TrainingError(f"stage {stage.value}: empty training split")
    if stage in (Stage.FUSION_PROBE, Stage.JOINT_FINETUNE) and not isinstance(model, DualEncoderModel):
        raise TrainingError(f"stage {stage.value} requires a dual-encoder model")

    device = config.device
    model.to(device)
    lr = config.joint_finetune_learning_rate if stage == Stage.JOINT_FINETUNE else config.learning_rate
    parameters = _stage_parameters(model, stage)
    optimizer = torch.optim.AdamW(parameters, lr=lr, weight_decay=config.weight_decay)

    label_counts = Counter(item.label for item in train_items)
    weights = class_weights(label_counts).to(device)
    loss_fn = make_loss_fn(config, weights)

    rng = random.Random(seed * 1000 + list(Stage).index(stage))
    report = StageReport(stage=stage, seed=seed, train_size=len(train_items), val_size=len(val_items))
    best_state: dict | None = None
    epochs_since_best = 0
    started = time.monotonic()
    log_handle = open(log_path, "a", encoding="utf-8") if log_path else None

    try:
        for epoch in range(config.epochs_per_stage):
            _set_stage_mode(model, stage)
            total_loss = 0.0
            n_batches = 0
            for batch_items in _batches(train_items, config.batch_size, rng):
                optimizer.zero_grad()
                logits, labels = _forward_batch(model, batch_items, device)
                loss = loss_fn(logits, labels)
                if not torch.isfinite(loss):
                    raise TrainingDiverged(
                        f"stage {stage.value} epoch {epoch}: non-finite loss {loss.item()!r}"
                    )
                loss.backward()
                if config.max_grad_norm > 0:
                    nn.utils.clip_grad_norm_(parameters, config.max_grad_norm)
                optimizer.step()
                total_loss += float(loss.detach())
                n_batches += 1

            val_metrics: MetricRecord | None = None
            val_macro_f1 = float("nan")
            if val_items:
                rows = predict(model, val_items, batch_size=max(config.batch_size, 32), device=device)
                val_metrics = compute_metrics([(r["gold"], r["pred"]) for r in rows])
                val_macro_f1 = val_metrics.macro_f1

            record = {
                "stage": stage.value,
                "epoch": epoch,
                "train_loss": total_loss / max(n_batches, 1),
                "val": val_metrics.to_dict() if val_metrics else None,
            }
            report.epochs.append(record)
            if log_handle:
                log_handle.write(json.dumps(record) + "\n")
                log_handle.flush()

            improved = bool(val_items) and val_macro_f1 > report.best_val_macro_f1
            if improved or not val_items:
                report.best_epoch = epoch
                report.best_val_macro_f1 = val_macro_f1
                best_state = copy.deepcopy(model.state_dict())
                epochs_since_best = 0
            else:
                epochs_since_best += 1
                if config.early_stopping_patience > 0 and epochs_since_best >= config.early_stopping_patience:
                    logger.info("stage %s: early stop at epoch %d", stage.value, epoch)
                    break
    finally:
        if log_handle:
            log_handle.close()

    if best_state is not None:
        model.load_state_dict(best_state)
    report.wall_time_s = time.monotonic() - started
    return report
