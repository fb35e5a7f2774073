"""Experiment configuration: one YAML file per run, CLI flags override.

Unknown keys anywhere in the file are an error — a typoed hyperparameter
must never be silently ignored.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

import yaml

from .corpus import LANGUAGES
from .training import RunConfig

DEFAULT_TEXT_BACKBONES = {
    "IT": "nickprock/setfit-italian-hate-speech",
    "ES": "cardiffnlp/twitter-xlm-roberta-base",
}


class ConfigError(Exception):
    """Bad or missing configuration."""


def _from_mapping(cls, data: Mapping[str, Any] | None, section: str):
    data = data or {}
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown key(s) in '{section}': {sorted(unknown)}")
    return cls(**data)


@dataclass
class PathSettings:
    corpus: str = ""
    run_dir: str = "runs/default"
    cache: str | None = None
    manifest: str | None = None
    proxy_labels: str | None = None

    def resolved_cache(self) -> Path:
        return Path(self.cache) if self.cache else Path(self.run_dir) / "annotation_cache.jsonl"

    def resolved_manifest(self) -> Path:
        return Path(self.manifest) if self.manifest else Path(self.run_dir) / "split_manifest.json"

    def resolved_proxy(self) -> Path:
        return Path(self.proxy_labels) if self.proxy_labels else Path(self.run_dir) / "proxy_labels.jsonl"


@dataclass
class SplitSettings:
    ratios: tuple[float, float, float] = (0.70, 0.15, 0.15)
    seed: int = 13

    def __post_init__(self):
        self.ratios = tuple(float(r) for r in self.ratios)


@dataclass
class LLMSettings:
    base_url: str = ""
    model: str = ""
    api_key_env: str = "LLM_API_KEY"
    fan_out: int = 1
    retries: int = 3
    mock: bool = False


@dataclass
class EncoderSettings:
    text_backbone: str | None = None
    user_backbone: str | None = None
    max_sequence_length: int = 128
    head_dropout: float = 0.0

    def backbone_for(self, role: str, language: str) -> str:
        configured = self.text_backbone if role == "text" else self.user_backbone
        if configured:
            return configured
        try:
            return DEFAULT_TEXT_BACKBONES[language]
        except KeyError:
            raise ConfigError(f"no default backbone for language {language!r}") from None


@dataclass
class PipelineConfig:
    language: str = "IT"
    paths: PathSettings = field(default_factory=PathSettings)
    split: SplitSettings = field(default_factory=SplitSettings)
    llm: LLMSettings = field(default_factory=LLMSettings)
    encoders: EncoderSettings = field(default_factory=EncoderSettings)
    training: RunConfig = field(default_factory=RunConfig)

    def __post_init__(self):
        self.language = self.language.strip().upper()
        if self.language not in LANGUAGES:
            raise ConfigError(f"unknown language {self.language!r}; expected one of {LANGUAGES}")

    def to_dict(self) -> dict:
        return {
            "language": self.language,
            "paths": {f.name: getattr(self.paths, f.name) for f in fields(self.paths)},
            "split": {"ratios": list(self.split.ratios), "seed": self.split.seed},
            "llm": {f.name: getattr(self.llm, f.name) for f in fields(self.llm)},
            "encoders": {f.name: getattr(self.encoders, f.name) for f in fields(self.encoders)},
            "training": self.training.to_dict(),
        }


_SECTIONS = {
    "paths": PathSettings,
    "split": SplitSettings,
    "llm": LLMSettings,
    "encoders": EncoderSettings,
}


def config_from_dict(data: Mapping[str, Any]) -> PipelineConfig:
    known = set(_SECTIONS) | {"language", "training"}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown top-level config key(s): {sorted(unknown)}")
    kwargs: dict[str, Any] = {}
    if "language" in data:
        kwargs["language"] = str(data["language"])
    for name, cls in _SECTIONS.items():
        if name in data:
            kwargs[name] = _from_mapping(cls, data[name], name)
    if "training" in data:
        try:
            kwargs["training"] = RunConfig.from_dict(data["training"] or {})
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from exc
    try:
        return PipelineConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path) -> PipelineConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
    if not isinstance(data, Mapping):
        raise ConfigError(f"config root must be a mapping, got {type(data).__name__}")
    return config_from_dict(data)


def save_config_snapshot(config: PipelineConfig, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(config.to_dict(), sort_keys=True), encoding="utf-8")
