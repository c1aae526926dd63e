import numpy as np
import pytest

from stainkit import preset_matrix
from stainkit.rng import derive_rng


@pytest.fixture
def he_matrix():
    return preset_matrix("h-e")


@pytest.fixture
def rng():
    return derive_rng(1234)


@pytest.fixture
def orthogonal_matrix():
    """Two exactly orthogonal non-negative unit stain vectors."""
    from stainkit import StainMatrix

    v1 = np.array([1.0, 0.0, 0.0])
    v2 = np.array([0.0, 1.0, 0.0])
    return StainMatrix(np.stack([v1, v2]), ("haematoxylin", "secondary"))
