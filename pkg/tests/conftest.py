import numpy as np
import pytest

from siamsv.augment import AugmentCorpora
from siamsv.corpus import (
    generate_toy_corpus,
    generate_toy_noise_corpus,
    generate_toy_rir_corpus,
)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def mini_corpus(tmp_path_factory):
    """Small shared toy corpus: 4 speakers x 3 utterances of 5 s, plus noise/RIRs."""
    root = tmp_path_factory.mktemp("mini_corpus")
    manifest, labels = generate_toy_corpus(str(root), 4, 3, 5.0, seed=11)
    noise = generate_toy_noise_corpus(str(root / "noise"), 3, 4.0, seed=11)
    rirs = generate_toy_rir_corpus(str(root / "rir"), 3, seed=11)
    return {
        "root": root,
        "manifest": manifest,
        "labels": labels,
        "noise": noise,
        "rirs": rirs,
    }


@pytest.fixture(scope="session")
def mini_corpora(mini_corpus):
    from siamsv.augment import load_augment_corpora

    return load_augment_corpora(mini_corpus["noise"], mini_corpus["rirs"])


@pytest.fixture
def empty_corpora():
    return AugmentCorpora()
