"""Shared fixtures: one small corpus, vocabulary, and frozen tokenizer.

Session-scoped fixtures are read-only; anything a test mutates (models,
optimizers) is built inside the test.
"""

import numpy as np
import pytest
import torch

from vidlang.data import generate_synthetic_corpus
from vidlang.text import build_vocab
from vidlang.vq import train_tokenizer


@pytest.fixture(scope="session")
def corpus():
    return generate_synthetic_corpus(8, 4, 32, seed=7, n_shapes_range=(1, 1))


@pytest.fixture(scope="session")
def vocab(corpus):
    return build_vocab([c.caption for c in corpus], 192)


@pytest.fixture(scope="session")
def tokenizer(corpus):
    frames = np.concatenate([c.frames for c in corpus])
    model, _ = train_tokenizer(frames, 32, 200, seed=3, patch_size=8)
    return model


@pytest.fixture(autouse=True)
def _fixed_torch_seed():
    torch.manual_seed(1234)
