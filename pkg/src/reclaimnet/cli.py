"""Command line entry point: split, annotate, train, eval, report.

Every command reads one YAML experiment config (see config.py); a few
flags override config values for one invocation. Exit codes: 0 success,
1 usage or config error, 2 data error, 3 training failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import subprocess
import sys
from pathlib import Path

from .config import ConfigError, PipelineConfig, load_config, save_config_snapshot
from .corpus import (
    CorpusError,
    Instance,
    class_distribution,
    load_corpus,
    load_manifest,
    stratified_split,
    write_manifest,
)
from .encoder import build_tiny_bundle, build_word_vocab, from_backbone
from .evaluation import EvalReport, MetricRecord, compute_metrics, error_report_from_rows
from .pipeline import read_prediction_rows, run_pipeline
from .training import TrainingError
from .weak_labeler import (
    AnnotationCache,
    LLMClientError,
    MockLLMClient,
    OpenAICompatibleClient,
    annotate_corpus,
    load_proxy_file,
    write_proxy_file,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_TRAINING = 3

_STAGE_SETS = {
    "baseline": ("baseline",),
    "user": ("user",),
    "dual": ("dual",),
    "all": ("baseline", "user", "dual"),
}


class CLIParser(argparse.ArgumentParser):
    def error(self, message):
        # Usage errors exit 1; argparse's default 2 is reserved for data errors.
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def parse_tiny_spec(identifier: str) -> dict[str, int]:
    """Parse ``tiny[:hidden=32,layers=2]`` backbone specs for offline runs."""
    params = {"hidden": 32, "layers": 2}
    _, _, tail = identifier.partition(":")
    if tail:
        for part in tail.split(","):
            key, _, value = part.partition("=")
            if key not in params or not value:
                raise ConfigError(f"bad tiny backbone spec {identifier!r} (expected hidden=/layers=)")
            try:
                params[key] = int(value)
            except ValueError:
                raise ConfigError(f"bad tiny backbone spec {identifier!r}: {value!r} is not an int") from None
    return params


def make_bundle_factory(identifier: str, corpus: list[Instance], config: PipelineConfig):
    """Resolve a backbone identifier to a seed → EncoderBundle factory.

    ``tiny:*`` identifiers build randomly initialized miniature encoders
    with a word vocabulary drawn from the corpus; anything else is loaded
    as a pretrained checkpoint name or local path.
    """
    settings = config.encoders
    if identifier == "tiny" or identifier.startswith("tiny:"):
        params = parse_tiny_spec(identifier)
        texts = [t for inst in corpus for t in (inst.tweet, inst.bio) if t]
        vocab = build_word_vocab(texts)
        return lambda seed: build_tiny_bundle(
            vocab,
            hidden_dim=params["hidden"],
            num_layers=params["layers"],
            max_sequence_length=settings.max_sequence_length,
            seed=seed,
        )
    return lambda seed: from_backbone(
        identifier, settings.max_sequence_length, settings.head_dropout
    )


def _load_language_corpus(config: PipelineConfig) -> list[Instance]:
    return load_corpus(config.paths.corpus, config.language)


def _print_distribution(name: str, instances) -> None:
    parts = ", ".join(
        f"{label.name}={count} ({fraction:.2%})"
        for label, (count, fraction) in class_distribution(instances).items()
    )
    print(f"{name:<12} n={len(instances):<6} {parts}")


def cmd_split(config: PipelineConfig) -> int:
    corpus = _load_language_corpus(config)
    split = stratified_split(corpus, config.split.ratios, config.split.seed)
    manifest_path = config.paths.resolved_manifest()
    write_manifest(split, manifest_path)
    _print_distribution("corpus", corpus)
    for name, part in split.parts().items():
        _print_distribution(name, part)
    print(f"manifest written to {manifest_path}")
    return EXIT_OK


def _build_client(config: PipelineConfig):
    if config.llm.mock:
        return MockLLMClient()
    if not config.llm.base_url or not config.llm.model:
        raise ConfigError("llm.base_url and llm.model are required unless mock mode is on")
    api_key = os.environ.get(config.llm.api_key_env, "")
    if not api_key:
        raise ConfigError(f"environment variable {config.llm.api_key_env} is not set")
    return OpenAICompatibleClient(config.llm.base_url, config.llm.model, api_key)


def cmd_annotate(config: PipelineConfig) -> int:
    corpus = _load_language_corpus(config)
    client = _build_client(config)
    cache = AnnotationCache(config.paths.resolved_cache())
    result = annotate_corpus(
        corpus, client, cache, retries=config.llm.retries, fan_out=config.llm.fan_out
    )
    proxy_path = config.paths.resolved_proxy()
    write_proxy_file(result.signals, proxy_path)
    print(result.summary())
    if result.unresolved:
        shown = ", ".join(u.instance_id for u in result.unresolved[:10])
        print(f"unresolved ids: {shown}{' ...' if len(result.unresolved) > 10 else ''}")
    print(f"proxy labels written to {proxy_path}")
    return EXIT_OK


def _spawn_seed_workers(args, seeds) -> int:
    worst = EXIT_OK
    for seed in seeds:
        cmd = [
            sys.executable,
            "-m",
            "reclaimnet.cli",
            "train",
            "--config",
            args.config,
            "--stage",
            args.stage,
            "--seed",
            str(seed),
        ]
        if args.language:
            cmd += ["--language", args.language]
        if args.deterministic:
            cmd.append("--deterministic")
        logger.info("spawning seed worker: %s", " ".join(cmd))
        proc = subprocess.run(cmd)
        worst = max(worst, proc.returncode)
    return worst


def cmd_train(config: PipelineConfig, args) -> int:
    stages = _STAGE_SETS[args.stage]
    corpus = _load_language_corpus(config)
    manifest_path = config.paths.resolved_manifest()
    if not manifest_path.exists():
        raise CorpusError(f"split manifest {manifest_path} not found; run `split` first")
    split = load_manifest(manifest_path, corpus)

    proxy_labels = {}
    if "user" in stages:
        proxy_path = config.paths.resolved_proxy()
        if not proxy_path.exists():
            raise CorpusError(f"proxy-label file {proxy_path} not found; run `annotate` first")
        proxy_labels = load_proxy_file(proxy_path)

    if args.parallel and len(config.training.seeds) > 1:
        return _spawn_seed_workers(args, config.training.seeds)

    run_dir = Path(config.paths.run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    save_config_snapshot(config, run_dir / "config.yaml")

    text_factory = make_bundle_factory(config.encoders.backbone_for("text", config.language), corpus, config)
    user_factory = make_bundle_factory(config.encoders.backbone_for("user", config.language), corpus, config)
    result = run_pipeline(
        config.training, split, proxy_labels, text_factory, user_factory, run_dir, stages
    )
    for seed, reports in sorted(result.seed_reports.items()):
        summary = ", ".join(f"{name}={rep.best_val_macro_f1:.4f}" for name, rep in reports.items())
        print(f"seed {seed}: {summary}")
    for seed, message in sorted(result.failures.items()):
        print(f"seed {seed}: FAILED ({message})")
    return EXIT_TRAINING if result.failures else EXIT_OK


def _parse_run_spec(spec: str) -> tuple[Path, str]:
    path, _, model = spec.partition(":")
    model = model or "dual"
    if model not in ("baseline", "dual"):
        raise ConfigError(f"unknown model {model!r} in run spec {spec!r} (use baseline or dual)")
    return Path(path), model


def _collect_seed_metrics(run_dir: Path, model: str, split_name: str) -> dict[int, MetricRecord]:
    records = {}
    for seed_dir in sorted(run_dir.glob("seed_*")):
        predictions = seed_dir / f"{model}_{split_name}_predictions.jsonl"
        if not predictions.exists():
            continue
        rows = read_prediction_rows(predictions)
        seed = int(seed_dir.name.split("_", 1)[1])
        records[seed] = compute_metrics([(r["gold"], r["pred"]) for r in rows])
    if not records:
        raise TrainingError(f"no {model} {split_name} predictions under {run_dir}")
    return records


def cmd_eval(config: PipelineConfig, args) -> int:
    run_a, model_a = _parse_run_spec(args.run_a)
    baseline_report = None
    if args.run_b:
        run_b, model_b = _parse_run_spec(args.run_b)
        baseline_report = EvalReport.build(
            f"{run_b.name}:{model_b}",
            args.split,
            _collect_seed_metrics(run_b, model_b, args.split),
            language=config.language,
        )
    report = EvalReport.build(
        f"{run_a.name}:{model_a}",
        args.split,
        _collect_seed_metrics(run_a, model_a, args.split),
        baseline=baseline_report,
        language=config.language,
    )
    if baseline_report is not None:
        print(baseline_report.format_table())
    print(report.format_table())
    out_path = Path(args.out) if args.out else run_a / f"eval_{model_a}_{args.split}.json"
    report.save(out_path)
    print(f"report written to {out_path}")
    return EXIT_OK


def cmd_report(config: PipelineConfig, args) -> int:
    corpus = _load_language_corpus(config)
    run_dir, model = _parse_run_spec(args.run)
    if args.seed is not None:
        seed = args.seed
    else:
        seed_dirs = sorted(run_dir.glob("seed_*"))
        if not seed_dirs:
            raise TrainingError(f"no seed directories under {run_dir}")
        seed = int(seed_dirs[0].name.split("_", 1)[1])
    predictions = run_dir / f"seed_{seed}" / f"{model}_{args.split}_predictions.jsonl"
    rows = read_prediction_rows(predictions)
    report = error_report_from_rows(rows, {inst.id: inst for inst in corpus}, redact=args.redact)
    out_path = (
        Path(args.out)
        if args.out
        else run_dir / f"seed_{seed}" / f"{model}_{args.split}_errors.jsonl"
    )
    report.save(out_path)
    print(report.summary())
    for case in report.cases[:5]:
        print(f"  id={case.instance_id} gold={case.gold} pred={case.predicted} conf={case.confidence:.3f}")
    print(f"error report written to {out_path}")
    return EXIT_OK


def build_parser() -> CLIParser:
    parser = CLIParser(prog="reclaimnet", description="Slur reclamation detection pipeline")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="experiment YAML config")
    common.add_argument("--language", choices=["it", "es"], help="override config language")
    common.add_argument("--seed", type=int, help="override the split seed / restrict training to one seed")
    common.add_argument("--deterministic", action="store_true", help="force deterministic training kernels")
    common.add_argument("--mock-llm", action="store_true", help="use the offline mock annotation client")

    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("split", parents=[common], help="stratified train/validation/test split")
    sub.add_parser("annotate", parents=[common], help="weak LLM affiliation labeling")

    train = sub.add_parser("train", parents=[common], help="train pipeline stages")
    train.add_argument("--stage", choices=sorted(_STAGE_SETS), default="all")
    train.add_argument("--parallel", action="store_true", help="one worker process per seed")

    evaluate = sub.add_parser("eval", parents=[common], help="aggregate metrics, optional comparison")
    evaluate.add_argument("run_a", help="run directory, optionally dir:model (model: baseline|dual)")
    evaluate.add_argument("run_b", nargs="?", help="reference run for the significance test")
    evaluate.add_argument("--split", choices=["validation", "test"], default="validation")
    evaluate.add_argument("--out", help="report output path")

    report = sub.add_parser("report", parents=[common], help="error analysis for one run")
    report.add_argument("run", help="run directory, optionally dir:model")
    report.add_argument("--split", choices=["validation", "test"], default="validation")
    report.add_argument("--redact", action="store_true", help="hash ids and drop texts")
    report.add_argument("--out", help="error report output path")
    return parser


def _apply_overrides(config: PipelineConfig, args) -> None:
    if args.language:
        config.language = args.language.upper()
    if args.deterministic:
        config.training.deterministic = True
    if getattr(args, "mock_llm", False):
        config.llm.mock = True
    if args.seed is not None:
        config.split.seed = args.seed
        if args.command == "train":
            config.training.seeds = (args.seed,)


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        from transformers.utils import logging as hf_logging

        hf_logging.disable_progress_bar()
    except ImportError:
        pass
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config)
        _apply_overrides(config, args)
        if args.command == "split":
            return cmd_split(config)
        if args.command == "annotate":
            return cmd_annotate(config)
        if args.command == "train":
            return cmd_train(config, args)
        if args.command == "eval":
            return cmd_eval(config, args)
        if args.command == "report":
            return cmd_report(config, args)
        parser.error(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CorpusError, LLMClientError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingError as exc:
        print(f"training error: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    return EXIT_USAGE


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
