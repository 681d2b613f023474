import numpy as np
import pytest

from semmtl.config import fixtures_dir
from semmtl.data import build_vocabs
from semmtl.synthetic import correlated_corpus

# small widths used throughout the unit tests
TOY = dict(embed_dim=16, hidden_dim=8, shared_dim=8, mlp_dim=8, label_dim=8)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def fixtures():
    return fixtures_dir()


@pytest.fixture(scope="session")
def corpus():
    return correlated_corpus(12, seed=3)


@pytest.fixture(scope="session")
def vocabs(corpus):
    return build_vocabs(corpus)
