import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_simplex(rng, n, k, alpha=1.0):
    p = rng.dirichlet(np.full(k, alpha), size=n)
    p = np.maximum(p, 1e-6)
    return p / p.sum(axis=-1, keepdims=True)
