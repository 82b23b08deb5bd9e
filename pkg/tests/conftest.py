import numpy as np
import pytest

from manicode.core import make_rng


@pytest.fixture
def rng():
    return make_rng(1234)


def random_atoms(rng, d, k, scale=1.0):
    return scale * rng.normal(size=(d, k))


@pytest.fixture
def atoms_fn():
    return random_atoms


def naive_matmul(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            s = 0.0
            for t in range(a.shape[1]):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out
