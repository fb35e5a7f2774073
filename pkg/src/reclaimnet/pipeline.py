"""Three-stage experiment orchestration with on-disk run directories.

Stage layout per seed under the run directory:

    seed_<s>/
      baseline/                      stage-i text encoder checkpoint
      user/                          stage-ii user encoder checkpoint
      dual/                          stage-iii dual-model checkpoint
      <stage>_report.json            per-epoch trajectories
      <stage>_log.jsonl              append-only epoch records
      <model>_<split>_predictions.jsonl

Stages are independently resumable: the dual stage loads the baseline
and user checkpoints it finds on disk. A failing seed is recorded and
does not abort the remaining seeds.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

from .corpus import CorpusSplit
from .encoder import EncoderBundle
from .fusion import DualEncoderModel
from .training import (
    RunConfig,
    Stage,
    StageReport,
    TrainingError,
    encode_dual,
    encode_single,
    predict,
    seed_everything,
    train_stage,
)
from .weak_labeler import Affiliation

logger = logging.getLogger(__name__)

BundleFactory = Callable[[int], EncoderBundle]

_STAGE_SEED_OFFSET = {"baseline": 1, "user": 2, "dual": 3}


@dataclass
class PipelineResult:
    seed_reports: dict[int, dict[str, StageReport]] = field(default_factory=dict)
    failures: dict[int, str] = field(default_factory=dict)


def _seed_dir(run_dir: Path, seed: int) -> Path:
    return run_dir / f"seed_{seed}"


def write_prediction_rows(rows: Sequence[Mapping], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        for row in rows:
            handle.write(json.dumps(row) + "\n")


def read_prediction_rows(path: str | Path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise TrainingError(f"prediction file not found: {path}")
    with path.open(encoding="utf-8") as handle:
        return [json.loads(line) for line in handle if line.strip()]


def _save_report(report: StageReport | Mapping, path: Path) -> None:
    payload = report.to_dict() if isinstance(report, StageReport) else report
    path.write_text(json.dumps(payload, indent=2) + "\n")


def _write_split_predictions(model, split: CorpusSplit, seed_dir: Path, name: str, config: RunConfig) -> None:
    for split_name, instances in (("validation", split.validation), ("test", split.test)):
        if isinstance(model, DualEncoderModel):
            items = encode_dual(instances, model)
        else:
            items = encode_single(instances, None, model)
        rows = predict(model, items, batch_size=max(config.batch_size, 32), device=config.device)
        write_prediction_rows(rows, seed_dir / f"{name}_{split_name}_predictions.jsonl")


def run_baseline_stage(
    factory: BundleFactory,
    split: CorpusSplit,
    config: RunConfig,
    seed: int,
    run_dir: Path,
) -> StageReport:
    """Stage i: fine-tune the text encoder on reclamation labels."""
    seed_everything(seed * 1000 + _STAGE_SEED_OFFSET["baseline"], config.deterministic)
    seed_dir = _seed_dir(run_dir, seed)
    seed_dir.mkdir(parents=True, exist_ok=True)
    bundle = factory(seed * 10 + 1)
    train_items = encode_single(split.train, None, bundle)
    val_items = encode_single(split.validation, None, bundle)
    report = train_stage(
        bundle, train_items, val_items, config, Stage.BASELINE_TEXT, seed, seed_dir / "baseline_log.jsonl"
    )
    bundle.save(seed_dir / "baseline")
    report.checkpoint_path = str(seed_dir / "baseline")
    _save_report(report, seed_dir / "baseline_report.json")
    _write_split_predictions(bundle, split, seed_dir, "baseline", config)
    return report


def run_user_stage(
    factory: BundleFactory,
    split: CorpusSplit,
    proxy_labels: Mapping[str, Affiliation | int],
    config: RunConfig,
    seed: int,
    run_dir: Path,
) -> StageReport:
    """Stage ii: train the user encoder on weak affiliation labels.

    Instances without a resolved proxy label are dropped from this stage
    only; train and validation both draw labels from the proxy map.
    """
    seed_everything(seed * 1000 + _STAGE_SEED_OFFSET["user"], config.deterministic)
    seed_dir = _seed_dir(run_dir, seed)
    seed_dir.mkdir(parents=True, exist_ok=True)
    bundle = factory(seed * 10 + 2)
    labels = {k: int(v) for k, v in proxy_labels.items()}
    train_items = encode_single(split.train, labels, bundle)
    val_items = encode_single(split.validation, labels, bundle)
    dropped = len(split.train) - len(train_items)
    if dropped:
        logger.info("user stage: %d training instance(s) without proxy labels dropped", dropped)
    report = train_stage(
        bundle, train_items, val_items, config, Stage.USER_PROXY, seed, seed_dir / "user_log.jsonl"
    )
    bundle.save(seed_dir / "user")
    report.checkpoint_path = str(seed_dir / "user")
    _save_report(report, seed_dir / "user_report.json")
    return report


def run_dual_stage(
    split: CorpusSplit,
    config: RunConfig,
    seed: int,
    run_dir: Path,
    text_factory: BundleFactory | None = None,
) -> dict[str, StageReport]:
    """Stage iii: gated dual model, probe then joint fine-tune.

    The text tower starts from the stage-i checkpoint unless
    ``config.init_text_from_baseline`` is off, in which case a fresh
    bundle from ``text_factory`` is used. The user tower always starts
    from the stage-ii checkpoint.
    """
    seed_everything(seed * 1000 + _STAGE_SEED_OFFSET["dual"], config.deterministic)
    seed_dir = _seed_dir(run_dir, seed)
    user_ckpt = seed_dir / "user"
    if not user_ckpt.exists():
        raise TrainingError(
            f"dual stage for seed {seed} needs the user-encoder checkpoint at {user_ckpt}; "
            "run the user stage first"
        )
    if config.init_text_from_baseline:
        baseline_ckpt = seed_dir / "baseline"
        if not baseline_ckpt.exists():
            raise TrainingError(
                f"dual stage for seed {seed} needs the baseline checkpoint at {baseline_ckpt}; "
                "run the baseline stage first (or disable init_text_from_baseline)"
            )
        text_encoder = EncoderBundle.load(baseline_ckpt)
    else:
        if text_factory is None:
            raise TrainingError("init_text_from_baseline is off but no text factory was given")
        text_encoder = text_factory(seed * 10 + 3)
    user_encoder = EncoderBundle.load(user_ckpt)

    model = DualEncoderModel(
        text_encoder,
        user_encoder,
        gate_hidden_dim=config.gate_hidden_dim,
        fusion_bias=config.fusion_bias,
    )
    train_items = encode_dual(split.train, model)
    val_items = encode_dual(split.validation, model)
    log_path = seed_dir / "dual_log.jsonl"
    probe = train_stage(model, train_items, val_items, config, Stage.FUSION_PROBE, seed, log_path)
    joint = train_stage(model, train_items, val_items, config, Stage.JOINT_FINETUNE, seed, log_path)
    model.save(seed_dir / "dual")
    probe.checkpoint_path = joint.checkpoint_path = str(seed_dir / "dual")
    _save_report(
        {"probe": probe.to_dict(), "joint": joint.to_dict()}, seed_dir / "dual_report.json"
    )
    _write_split_predictions(model, split, seed_dir, "dual", config)
    return {"fusion_probe": probe, "joint_finetune": joint}


def run_pipeline(
    config: RunConfig,
    split: CorpusSplit,
    proxy_labels: Mapping[str, Affiliation | int],
    text_factory: BundleFactory,
    user_factory: BundleFactory,
    run_dir: str | Path,
    stages: Sequence[str] = ("baseline", "user", "dual"),
) -> PipelineResult:
    """Run the requested stages for every configured seed.

    Stage order within a seed is baseline → user → dual; a seed that
    raises is recorded under ``failures`` and the remaining seeds
    continue.
    """
    config.validate()
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    result = PipelineResult()
    for seed in config.seeds:
        reports: dict[str, StageReport] = {}
        try:
            if "baseline" in stages:
                reports["baseline_text"] = run_baseline_stage(text_factory, split, config, seed, run_dir)
            if "user" in stages:
                reports["user_proxy"] = run_user_stage(
                    user_factory, split, proxy_labels, config, seed, run_dir
                )
            if "dual" in stages:
                reports.update(run_dual_stage(split, config, seed, run_dir, text_factory))
        except Exception as exc:
            logger.exception("seed %d failed", seed)
            result.failures[seed] = f"{type(exc).__name__}: {exc}"
            continue
        result.seed_reports[seed] = reports

    summary = {
        "seeds": list(config.seeds),
        "stages": list(stages),
        "completed": {
            str(seed): {name: rep.best_val_macro_f1 for name, rep in reports.items()}
            for seed, reports in result.seed_reports.items()
        },
        "failures": {str(seed): msg for seed, msg in result.failures.items()},
    }
    (run_dir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return result
