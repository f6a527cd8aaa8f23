import numpy as np
import pytest
from hypothesis import settings

from lscopt.graphs import Graph

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


@pytest.fixture
def triangle():
    w = np.array([[0, 1, 2], [1, 0, 3], [2, 3, 0]], dtype=float)
    return Graph(w)


@pytest.fixture
def unit_square():
    coords = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)
    from lscopt.graphs import pairwise_distances
    return Graph(pairwise_distances(coords), coords)
