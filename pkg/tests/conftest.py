import numpy as np
import pytest

from csnln.tensor import Tensor


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def randt(rng, *shape, requires_grad=False):
    return Tensor(rng.standard_normal(shape), requires_grad=requires_grad)


def inner(a, b) -> float:
    a = a.data if isinstance(a, Tensor) else a
    b = b.data if isinstance(b, Tensor) else b
    return float(np.sum(np.asarray(a, dtype=np.float64) * np.asarray(b, dtype=np.float64)))
