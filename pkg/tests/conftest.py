import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_mask(rng, shape=(64, 64), density=0.5):
    return rng.random(shape) < density


@pytest.fixture
def band_mask():
    """Width-5 solid horizontal band inside a zero background."""
    m = np.zeros((13, 20), dtype=bool)
    m[4:9, :] = True
    return m
