"""Synthetic corpus where user context genuinely matters.

The gold label is a deterministic AND of two planted signals: the tweet
must contain the keyword and the bio must contain the marker. Tweets
alone are therefore ambiguous, which makes the corpus a useful oracle
for the full pipeline: the mock annotation heuristic recovers exactly
the bio marker, so a well-trained dual model can hit near-perfect
validation scores on CPU in minutes.

Run ``python -m reclaimnet.synthetic --out corpus.jsonl`` to write one.
"""

from __future__ import annotations

import argparse
import random
from typing import Sequence

from .corpus import Instance, Label, class_distribution, write_corpus

TWEET_KEYWORD = "fierce"
BIO_MARKER = "pride"

_FILLERS = (
    "the", "a", "river", "music", "night", "city", "coffee", "rain",
    "sunset", "friends", "weekend", "story", "garden", "football", "film",
    "quiet", "loud", "blue", "golden", "tired", "happy", "walking",
    "reading", "dancing", "cooking", "today", "tomorrow", "always",
)


def generate_corpus(
    size: int = 400,
    seed: int = 7,
    language: str = "IT",
    keyword_rate: float = 0.5,
    marker_rate: float = 0.45,
    empty_bio_rate: float = 0.05,
) -> list[Instance]:
    """Generate ``size`` instances with label = keyword-in-tweet AND marker-in-bio."""
    rng = random.Random(seed)
    instances = []
    for i in range(size):
        tweet_words = rng.choices(_FILLERS, k=rng.randint(4, 9))
        has_keyword = rng.random() < keyword_rate
        if has_keyword:
            tweet_words.insert(rng.randrange(len(tweet_words) + 1), TWEET_KEYWORD)

        has_marker = rng.random() < marker_rate
        if has_marker:
            bio_words = rng.choices(_FILLERS, k=rng.randint(2, 6))
            bio_words.insert(rng.randrange(len(bio_words) + 1), BIO_MARKER)
        elif rng.random() < empty_bio_rate:
            bio_words = []
        else:
            bio_words = rng.choices(_FILLERS, k=rng.randint(2, 6))

        label = Label.RECLAMATORY if (has_keyword and has_marker) else Label.NON_RECLAMATORY
        instances.append(
            Instance(
                id=f"syn-{i:04d}",
                tweet=" ".join(tweet_words),
                bio=" ".join(bio_words),
                label=label,
                language=language,
            )
        )
    return instances


def corpus_texts(instances: Sequence[Instance]) -> list[str]:
    """All tweet and bio texts, for vocabulary construction."""
    texts = []
    for inst in instances:
        texts.append(inst.tweet)
        if inst.bio:
            texts.append(inst.bio)
    return texts


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description="Generate a synthetic tweet+bio corpus")
    parser.add_argument("--out", required=True, help="output JSONL path")
    parser.add_argument("--size", type=int, default=400)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--language", choices=["IT", "ES"], default="IT")
    args = parser.parse_args(argv)

    instances = generate_corpus(size=args.size, seed=args.seed, language=args.language)
    write_corpus(instances, args.out)
    for label, (count, fraction) in class_distribution(instances).items():
        print(f"{label.name}: {count} ({fraction:.2%})")
    print(f"wrote {len(instances)} instances to {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
