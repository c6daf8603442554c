"""Shared fixtures."""

import numpy as np
import pytest

from src.synth.generator import GeneratorParams, generate


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_scenes():
    """Twenty 64x64 scenes, five per subset."""
    return generate(GeneratorParams(), 20, seed=7)
