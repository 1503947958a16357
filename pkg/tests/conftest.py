import numpy as np
import pytest
import scipy.sparse as sp

# 5 users x 4 items; every user and item has an interaction
TOY_R = np.array([
    [1, 1, 0, 0],
    [0, 1, 1, 0],
    [1, 0, 0, 1],
    [0, 0, 1, 1],
    [1, 1, 1, 0],
], dtype=float)


@pytest.fixture
def toy_R():
    return sp.csr_matrix(TOY_R)


@pytest.fixture
def toy_features():
    rng = np.random.default_rng(0)
    return {"txt": rng.standard_normal((4, 3)), "img": rng.standard_normal((4, 5))}
