import numpy as np
import pytest

from demix.data import DatasetSpec, generate_split
from demix.model import ModelConfig


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def tiny_spec():
    return DatasetSpec(n_train=240, n_val=120, n_test=120, image_size=32, rho=0.9, seed=11)


@pytest.fixture(scope="session")
def tiny_splits(tiny_spec):
    """One small synthesis shared by everything that just needs plausible data."""
    return {split: generate_split(tiny_spec, split) for split in ("train", "val", "test")}


@pytest.fixture(scope="session")
def small_model_config():
    """Desk architecture shrunk to 32x32 input (block maps 8,8,4,2)."""
    return ModelConfig(image_size=32)


def micro_model_config(**kw):
    """Tiny network for gradient suites: narrow channels, 32x32 input."""
    base = dict(image_size=32, block_channels=(4, 4, 8, 8), expert_embed_dim=8, head_hidden=4)
    base.update(kw)
    return ModelConfig(**base)
