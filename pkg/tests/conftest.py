"""
Shared fixtures for the test suite
"""

import numpy as np
import pytest

from grasp_quality.data import generate_synthetic
from utils.data_models import ModelConfig, SceneParams


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def scene_params():
    return SceneParams(seed=3)


@pytest.fixture(scope="session")
def small_dataset():
    """64 examples: 2 objects of 4 poses with 8 grasps each"""
    return generate_synthetic(SceneParams(seed=3), 64)


@pytest.fixture
def tiny_config():
    return ModelConfig.tiny(init_seed=5)


@pytest.fixture
def tiny32_config():
    """Tiny widths at the production crop size, for pipeline tests with GP noise"""
    return ModelConfig.tiny(image_size=32, init_seed=5)
