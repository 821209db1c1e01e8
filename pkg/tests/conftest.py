import numpy as np
import pytest

from bornovit.model import ModelConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_config():
    """The reduced configuration used for gradient and training checks."""
    return ModelConfig(image_size=32, patch_size=8, embed_dim=32, depth=2, num_heads=2,
                       mlp_hidden_dim=64, num_classes=3)
