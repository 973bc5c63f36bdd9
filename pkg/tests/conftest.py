import numpy as np
import pytest

from scrl.corpus import GeneratorConfig, generate_paired_corpus


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """Small 3-pair corpus shared by trainer/retrieval/cli tests."""
    out = tmp_path_factory.mktemp("tiny_corpus")
    cfg = GeneratorConfig(seed=11, n_pairs=3, frames_per_video=240)
    manifest = generate_paired_corpus(cfg, out)
    return out, manifest


@pytest.fixture(scope="session")
def desk_corpus(tmp_path_factory):
    """Default-config corpus (10 pairs, 600 frames) for seeded experiments."""
    out = tmp_path_factory.mktemp("desk_corpus")
    manifest = generate_paired_corpus(GeneratorConfig(), out)
    return out, manifest


@pytest.fixture()
def rng():
    return np.random.default_rng(0)


def f64(x, requires_grad=True):
    from scrl.tensor import Tensor
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=requires_grad)
