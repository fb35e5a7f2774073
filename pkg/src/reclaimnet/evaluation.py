"""Metrics, seed aggregation, significance testing, and error reports.

Macro scores average the two per-class values unweighted; a class absent
from the gold labels contributes F1 = 0 and triggers a warning rather
than being dropped. The baseline-vs-candidate comparison is a two-sided
Welch t-test over per-seed macro-F1 values.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import statistics
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

from scipy.special import betainc

from .corpus import Instance

logger = logging.getLogger(__name__)

METRIC_NAMES = ("accuracy", "macro_precision", "macro_recall", "macro_f1")


@dataclass
class MetricRecord:
    """Binary-task metrics derived from (and recomputable from) a confusion matrix."""

    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    per_class: dict[int, dict[str, float]]
    confusion: list[list[int]]

    @classmethod
    def from_confusion(cls, confusion: Sequence[Sequence[int]]) -> "MetricRecord":
        cm = [[int(confusion[g][p]) for p in (0, 1)] for g in (0, 1)]
        total = sum(sum(row) for row in cm)
        if total == 0:
            raise ValueError("empty confusion matrix")
        per_class: dict[int, dict[str, float]] = {}
        for c in (0, 1):
            tp = cm[c][c]
            fp = cm[1 - c][c]
            fn = cm[c][1 - c]
            precision = tp / (tp + fp) if tp + fp > 0 else 0.0
            recall = tp / (tp + fn) if tp + fn > 0 else 0.0
            f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
            per_class[c] = {
                "precision": precision,
                "recall": recall,
                "f1": f1,
                "support": float(cm[c][0] + cm[c][1]),
            }
        return cls(
            accuracy=(cm[0][0] + cm[1][1]) / total,
            macro_precision=(per_class[0]["precision"] + per_class[1]["precision"]) / 2,
            macro_recall=(per_class[0]["recall"] + per_class[1]["recall"]) / 2,
            macro_f1=(per_class[0]["f1"] + per_class[1]["f1"]) / 2,
            per_class=per_class,
            confusion=cm,
        )

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
            "per_class": {str(k): v for k, v in self.per_class.items()},
            "confusion": self.confusion,
        }


def compute_metrics(predictions: Sequence[tuple[int, int]]) -> MetricRecord:
    """Accuracy and macro P/R/F1 from (gold, predicted) pairs."""
    if not predictions:
        raise ValueError("no predictions to score")
    confusion = [[0, 0], [0, 0]]
    for gold, pred in predictions:
        if gold not in (0, 1) or pred not in (0, 1):
            raise ValueError(f"labels must be binary, got ({gold}, {pred})")
        confusion[gold][pred] += 1
    for c in (0, 1):
        if confusion[c][0] + confusion[c][1] == 0:
            warnings.warn(f"class {c} absent from gold labels; its F1 counts as 0", stacklevel=2)
    return MetricRecord.from_confusion(confusion)


def aggregate_seeds(records: Sequence[MetricRecord]) -> dict[str, tuple[float, float]]:
    """Mean and sample standard deviation (n-1) of each metric over seeds."""
    if len(records) < 2:
        raise ValueError(f"need at least 2 seed records to aggregate, got {len(records)}")
    out = {}
    for name in METRIC_NAMES:
        values = [getattr(r, name) for r in records]
        out[name] = (statistics.fmean(values), statistics.stdev(values))
    return out


def _student_t_sf(t: float, df: float) -> float:
    # Survival function via the regularized incomplete beta.
    if math.isinf(t):
        return 0.0
    x = df / (df + t * t)
    return 0.5 * float(betainc(df / 2.0, 0.5, x))


def significance_test(baseline_scores: Sequence[float], candidate_scores: Sequence[float]) -> float:
    """Two-sided Welch t-test p-value comparing two per-seed score samples.

    Degenerate variance: two identical constant samples give p = 1.0,
    constant samples with different means give p = 0.0.
    """
    a = [float(v) for v in baseline_scores]
    b = [float(v) for v in candidate_scores]
    if len(a) < 2 or len(b) < 2:
        raise ValueError("both samples need at least 2 values")
    mean_a, mean_b = statistics.fmean(a), statistics.fmean(b)
    var_a, var_b = statistics.variance(a), statistics.variance(b)
    se_a, se_b = var_a / len(a), var_b / len(b)
    pooled = se_a + se_b
    if pooled == 0.0:
        return 1.0 if mean_a == mean_b else 0.0
    t = (mean_a - mean_b) / math.sqrt(pooled)
    df = pooled**2 / (se_a**2 / (len(a) - 1) + se_b**2 / (len(b) - 1))
    p = 2.0 * _student_t_sf(abs(t), df)
    return min(max(p, 0.0), 1.0)


@dataclass
class EvalReport:
    """Per-seed metrics with their aggregate, optionally compared to another run."""

    model_name: str
    split_name: str
    per_seed: dict[int, MetricRecord]
    aggregate: dict[str, tuple[float, float]]
    p_value: float | None = None
    compared_to: str | None = None
    language: str | None = None

    @classmethod
    def build(
        cls,
        model_name: str,
        split_name: str,
        per_seed: Mapping[int, MetricRecord],
        baseline: "EvalReport | None" = None,
        language: str | None = None,
    ) -> "EvalReport":
        records = list(per_seed.values())
        if len(records) >= 2:
            aggregate = aggregate_seeds(records)
        else:
            # Single-seed run: report the value itself, zero spread.
            aggregate = {name: (getattr(records[0], name), 0.0) for name in METRIC_NAMES}
        report = cls(
            model_name=model_name,
            split_name=split_name,
            per_seed=dict(per_seed),
            aggregate=aggregate,
            language=language,
        )
        if baseline is not None:
            if set(baseline.per_seed) != set(report.per_seed):
                logger.warning(
                    "seed sets differ between %s and %s", baseline.model_name, model_name
                )
            if len(baseline.per_seed) < 2 or len(report.per_seed) < 2:
                logger.warning("significance test skipped: both runs need at least 2 seeds")
            else:
                report.p_value = significance_test(
                    [m.macro_f1 for m in baseline.per_seed.values()],
                    [m.macro_f1 for m in report.per_seed.values()],
                )
            report.compared_to = baseline.model_name
        return report

    def to_dict(self) -> dict:
        return {
            "model": self.model_name,
            "split": self.split_name,
            "language": self.language,
            "per_seed": {str(seed): rec.to_dict() for seed, rec in sorted(self.per_seed.items())},
            "aggregate": {k: {"mean": m, "std": s} for k, (m, s) in self.aggregate.items()},
            "p_value": self.p_value,
            "compared_to": self.compared_to,
        }

    def save(self, path: str | Path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    def format_table(self) -> str:
        lines = [f"{self.model_name} on {self.split_name} ({len(self.per_seed)} seeds)"]
        for name in METRIC_NAMES:
            mean, std = self.aggregate[name]
            lines.append(f"  {name:<16} {mean:.4f} ± {std:.4f}")
        if self.p_value is not None:
            lines.append(f"  p-value vs {self.compared_to}: {self.p_value:.4f}")
        return "\n".join(lines)


@dataclass
class ErrorCase:
    """One misclassified instance, ordered by wrong-prediction confidence."""

    instance_id: str
    gold: int
    predicted: int
    confidence: float
    tweet: str | None
    bio: str | None

    def to_dict(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "gold": self.gold,
            "predicted": self.predicted,
            "confidence": self.confidence,
            "tweet": self.tweet,
            "bio": self.bio,
        }


@dataclass
class ErrorReport:
    cases: list[ErrorCase]
    false_positives: int
    false_negatives: int
    total: int

    def summary(self) -> str:
        return (
            f"{len(self.cases)}/{self.total} misclassified "
            f"({self.false_positives} false positives, {self.false_negatives} false negatives)"
        )

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8") as handle:
            for case in self.cases:
                handle.write(json.dumps(case.to_dict(), ensure_ascii=False) + "\n")


def _hash_id(instance_id: str) -> str:
    return hashlib.sha256(instance_id.encode("utf-8")).hexdigest()[:12]


def error_report_from_rows(
    rows: Sequence[Mapping],
    instances: Mapping[str, Instance],
    redact: bool = False,
) -> ErrorReport:
    """Collect misclassifications from prediction rows, most confident first.

    ``rows`` carry id/gold/pred and the reclamatory-class probability;
    confidence is the probability assigned to the (wrong) predicted
    class. Redacted mode hashes ids and drops texts for sharing.
    """
    cases = []
    fp = fn = 0
    for row in rows:
        gold, pred = int(row["gold"]), int(row["pred"])
        if gold == pred:
            continue
        if pred == 1:
            fp += 1
        else:
            fn += 1
        prob_pos = float(row["prob_reclamatory"])
        confidence = prob_pos if pred == 1 else 1.0 - prob_pos
        inst = instances.get(row["id"])
        cases.append(
            ErrorCase(
                instance_id=_hash_id(row["id"]) if redact else row["id"],
                gold=gold,
                predicted=pred,
                confidence=confidence,
                tweet=None if redact or inst is None else inst.tweet,
                bio=None if redact or inst is None else inst.bio,
            )
        )
    cases.sort(key=lambda c: c.confidence, reverse=True)
    return ErrorReport(cases=cases, false_positives=fp, false_negatives=fn, total=len(rows))


def error_report(
    predict_fn: Callable[[Sequence[Instance]], Sequence[Mapping]],
    split: Sequence[Instance],
    redact: bool = False,
) -> ErrorReport:
    """Run a model's predict function over a split and report its errors."""
    rows = predict_fn(split)
    return error_report_from_rows(rows, {inst.id: inst for inst in split}, redact=redact)
