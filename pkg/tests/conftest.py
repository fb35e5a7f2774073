import pytest
import torch
from hypothesis import HealthCheck, settings
from transformers.utils import logging as hf_logging

from reclaimnet.corpus import Instance, Label
from reclaimnet.encoder import build_tiny_bundle, build_word_vocab
from reclaimnet.synthetic import corpus_texts, generate_corpus

hf_logging.disable_progress_bar()
hf_logging.set_verbosity_error()

settings.register_profile(
    "suite",
    max_examples=50,
    deadline=None,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")


def make_instance(i: int, label: int = 0, tweet: str = "some tweet text", bio: str = "a bio", language: str = "IT") -> Instance:
    return Instance(id=f"inst-{i:05d}", tweet=tweet, bio=bio, label=Label(label), language=language)


def make_labeled_corpus(n_negative: int, n_positive: int, language: str = "IT") -> list[Instance]:
    corpus = [make_instance(i, 0, language=language) for i in range(n_negative)]
    corpus += [make_instance(n_negative + i, 1, language=language) for i in range(n_positive)]
    return corpus


@pytest.fixture(scope="session")
def synthetic_corpus():
    return generate_corpus(size=400, seed=7)


@pytest.fixture(scope="session")
def tiny_vocab(synthetic_corpus):
    return build_word_vocab(corpus_texts(synthetic_corpus))


@pytest.fixture(scope="session")
def tiny_bundle(tiny_vocab):
    """Shared read-only bundle; tests that train must build their own."""
    bundle = build_tiny_bundle(tiny_vocab, hidden_dim=32, num_layers=2, seed=0)
    bundle.eval()
    return bundle


@pytest.fixture()
def tiny_bundle_factory(tiny_vocab):
    def factory(seed: int = 0, hidden_dim: int = 32, num_layers: int = 2, max_sequence_length: int = 64):
        return build_tiny_bundle(
            tiny_vocab,
            hidden_dim=hidden_dim,
            num_layers=num_layers,
            max_sequence_length=max_sequence_length,
            seed=seed,
        )

    return factory


_DEFAULT_THREADS = torch.get_num_threads()


@pytest.fixture(autouse=True)
def _stable_torch_state():
    yield
    # Undo global switches a test may have flipped (deterministic runs).
    torch.use_deterministic_algorithms(False)
    torch.set_num_threads(_DEFAULT_THREADS)
