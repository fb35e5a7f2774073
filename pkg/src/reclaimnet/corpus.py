"""Corpus ingestion, validation, and deterministic stratified splitting.

Corpus files are UTF-8 JSON Lines: one record per line with fields
``id``, ``tweet``, ``bio``, ``label`` and ``language``. ``label`` accepts
0/1 or the tokens ``non_reclamatory`` / ``reclamatory``; ``bio`` may be
empty or missing. Text is NFC-normalized on load and never lowercased,
so identity markers (emoji, schwa characters) survive intact.
"""

from __future__ import annotations

import json
import logging
import random
import unicodedata
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path
from typing import Iterable, Sequence

logger = logging.getLogger(__name__)

LANGUAGES = ("IT", "ES")


class Label(IntEnum):
    NON_RECLAMATORY = 0
    RECLAMATORY = 1


_LABEL_TOKENS = {
    "0": Label.NON_RECLAMATORY,
    "1": Label.RECLAMATORY,
    "non_reclamatory": Label.NON_RECLAMATORY,
    "reclamatory": Label.RECLAMATORY,
}


class CorpusError(Exception):
    """A corpus file or split request failed validation."""


@dataclass(frozen=True)
class Instance:
    """One corpus record: a tweet, its author's bio, and the gold label."""

    id: str
    tweet: str
    bio: str
    label: Label
    language: str


@dataclass(frozen=True)
class CorpusSplit:
    """Disjoint train/validation/test partition of a corpus."""

    train: tuple[Instance, ...]
    validation: tuple[Instance, ...]
    test: tuple[Instance, ...]
    seed: int
    ratios: tuple[float, float, float]

    def parts(self) -> dict[str, tuple[Instance, ...]]:
        return {"train": self.train, "validation": self.validation, "test": self.test}

    def __len__(self) -> int:
        return len(self.train) + len(self.validation) + len(self.test)


def _normalize_text(value: str) -> str:
    return unicodedata.normalize("NFC", value).strip()


def parse_label_token(value: object) -> Label:
    """Map a raw label field (0/1 or a name token) to a Label."""
    token = str(value).strip().lower()
    try:
        return _LABEL_TOKENS[token]
    except KeyError:
        raise CorpusError(f"unknown label token {value!r}") from None


def _parse_record(raw: dict, line_no: int) -> Instance:
    if not isinstance(raw, dict):
        raise CorpusError(f"line {line_no}: record is not an object")
    missing = [k for k in ("id", "tweet", "label", "language") if k not in raw]
    if missing:
        raise CorpusError(f"line {line_no}: missing fields {missing}")
    instance_id = str(raw["id"]).strip()
    if not instance_id:
        raise CorpusError(f"line {line_no}: empty id")
    tweet = _normalize_text(str(raw["tweet"]))
    if not tweet:
        raise CorpusError(f"line {line_no}: tweet is empty after normalization")
    bio = _normalize_text(str(raw.get("bio") or ""))
    language = str(raw["language"]).strip().upper()
    if language not in LANGUAGES:
        raise CorpusError(f"line {line_no}: unknown language {raw['language']!r}")
    try:
        label = parse_label_token(raw["label"])
    except CorpusError as exc:
        raise CorpusError(f"line {line_no}: {exc}") from None
    return Instance(id=instance_id, tweet=tweet, bio=bio, label=label, language=language)


def load_corpus(path: str | Path, language: str | None = None) -> list[Instance]:
    """Load and validate a JSONL corpus file.

    ``language`` ("IT"/"ES", case-insensitive) filters mixed files down to
    one language; records of other languages are skipped, not rejected.
    All malformed lines are collected and reported together with their
    line numbers in a single CorpusError.
    """
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"corpus file not found: {path}")
    wanted = language.strip().upper() if language else None
    if wanted is not None and wanted not in LANGUAGES:
        raise CorpusError(f"unknown language filter {language!r}")

    instances: list[Instance] = []
    errors: list[str] = []
    seen_ids: dict[str, int] = {}
    with path.open(encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                errors.append(f"line {line_no}: invalid JSON ({exc.msg})")
                continue
            try:
                inst = _parse_record(raw, line_no)
            except CorpusError as exc:
                errors.append(str(exc))
                continue
            if wanted is not None and inst.language != wanted:
                continue
            if inst.id in seen_ids:
                errors.append(
                    f"line {line_no}: duplicate id {inst.id!r} (first seen on line {seen_ids[inst.id]})"
                )
                continue
            seen_ids[inst.id] = line_no
            instances.append(inst)

    if errors:
        shown = "; ".join(errors[:10])
        more = f" (+{len(errors) - 10} more)" if len(errors) > 10 else ""
        raise CorpusError(f"{len(errors)} invalid record(s) in {path}: {shown}{more}")
    if not instances:
        logger.warning("corpus %s yielded no instances%s", path, f" for language {wanted}" if wanted else "")
    return instances


def class_distribution(instances: Sequence[Instance]) -> dict[Label, tuple[int, float]]:
    """Per-class (count, fraction) over a list of instances."""
    if not instances:
        return {}
    counts: dict[Label, int] = {}
    for inst in instances:
        counts[inst.label] = counts.get(inst.label, 0) + 1
    total = len(instances)
    return {label: (n, n / total) for label, n in sorted(counts.items())}


def _validate_ratios(ratios: Sequence[float]) -> tuple[float, float, float]:
    if len(ratios) != 3:
        raise ValueError(f"expected three split ratios, got {len(ratios)}")
    if any(r <= 0 for r in ratios):
        raise ValueError(f"split ratios must be positive: {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must sum to 1: {ratios}")
    return (float(ratios[0]), float(ratios[1]), float(ratios[2]))


def stratified_split(
    corpus: Sequence[Instance],
    ratios: Sequence[float] = (0.70, 0.15, 0.15),
    seed: int = 0,
) -> CorpusSplit:
    """Split a corpus with two consecutive stratified draws.

    The first draw carves out the train portion per class; the second
    divides each class's remainder between validation and test in
    proportion to the last two ratios. Instances are ordered by id and
    then shuffled with a seeded generator, so the result depends only on
    corpus content, seed, and ratios, not on input file order. Every
    split receives at least one member of every class, which requires at
    least three instances per class; for a class of exactly three this
    guarantee wins over proportional rounding (allocation 1/1/1).
    """
    r_train, r_val, r_test = _validate_ratios(ratios)
    ids = [inst.id for inst in corpus]
    if len(set(ids)) != len(ids):
        raise CorpusError("duplicate instance ids in corpus")

    ordered = sorted(corpus, key=lambda inst: inst.id)
    rng = random.Random(seed)
    rng.shuffle(ordered)

    by_class: dict[Label, list[Instance]] = {}
    for inst in ordered:
        by_class.setdefault(inst.label, []).append(inst)
    for label, members in by_class.items():
        if len(members) < 3:
            raise CorpusError(
                f"class {label.name} has {len(members)} instance(s); need at least 3 to stratify"
            )

    train_ids: set[str] = set()
    val_ids: set[str] = set()
    for members in by_class.values():
        n = len(members)
        n_train = min(max(round(n * r_train), 1), n - 2)
        remainder = n - n_train
        n_val = min(max(round(remainder * r_val / (r_val + r_test)), 1), remainder - 1)
        train_ids.update(inst.id for inst in members[:n_train])
        val_ids.update(inst.id for inst in members[n_train : n_train + n_val])

    train = tuple(i for i in ordered if i.id in train_ids)
    validation = tuple(i for i in ordered if i.id in val_ids)
    test = tuple(i for i in ordered if i.id not in train_ids and i.id not in val_ids)
    return CorpusSplit(train=train, validation=validation, test=test, seed=seed, ratios=(r_train, r_val, r_test))


def write_manifest(split: CorpusSplit, path: str | Path) -> None:
    """Persist split membership (ids only) plus the seed and ratios used."""
    payload = {
        "seed": split.seed,
        "ratios": list(split.ratios),
        "counts": {
            name: {label.name: count for label, (count, _) in class_distribution(part).items()}
            for name, part in split.parts().items()
        },
        "splits": {name: [inst.id for inst in part] for name, part in split.parts().items()},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, ensure_ascii=False, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_manifest(path: str | Path, corpus: Sequence[Instance]) -> CorpusSplit:
    """Rebuild a CorpusSplit from a manifest and the corpus it indexes."""
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"split manifest not found: {path}")
    payload = json.loads(path.read_text(encoding="utf-8"))
    by_id = {inst.id: inst for inst in corpus}
    parts: dict[str, tuple[Instance, ...]] = {}
    claimed: set[str] = set()
    for name in ("train", "validation", "test"):
        ids = payload["splits"][name]
        missing = [i for i in ids if i not in by_id]
        if missing:
            raise CorpusError(f"manifest {path} references unknown ids (e.g. {missing[:3]})")
        overlap = claimed.intersection(ids)
        if overlap:
            raise CorpusError(f"manifest {path} assigns ids to multiple splits (e.g. {sorted(overlap)[:3]})")
        claimed.update(ids)
        parts[name] = tuple(by_id[i] for i in ids)
    if len(claimed) != len(by_id):
        raise CorpusError(
            f"manifest {path} covers {len(claimed)} ids but corpus has {len(by_id)}"
        )
    return CorpusSplit(
        train=parts["train"],
        validation=parts["validation"],
        test=parts["test"],
        seed=int(payload["seed"]),
        ratios=tuple(float(r) for r in payload["ratios"]),
    )


def write_corpus(instances: Iterable[Instance], path: str | Path) -> None:
    """Serialize instances back to the JSONL corpus format."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        for inst in instances:
            handle.write(
                json.dumps(
                    {
                        "id": inst.id,
                        "tweet": inst.tweet,
                        "bio": inst.bio,
                        "label": int(inst.label),
                        "language": inst.language,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )
