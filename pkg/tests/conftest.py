import numpy as np
import pytest

from clinkerforge.align import build_aligned_dataset
from clinkerforge.synthgen import GeneratorConfig, generate_history


@pytest.fixture(scope="session")
def history():
    """Default 30-day synthetic history (seed 7) and its ground truth."""
    return generate_history(GeneratorConfig(seed=7))


@pytest.fixture(scope="session")
def aligned(history):
    raw, _ = history
    ds, report = build_aligned_dataset(raw)
    return ds, report


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
