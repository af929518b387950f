import random

import numpy as np
import pytest

from conftest import gnp
from docd import _kernels as K


@pytest.mark.parametrize("seed", range(8))
def test_numba_matches_numpy(seed):
    rng = random.Random(seed)
    g = gnp(rng.randint(1, 45), rng.choice([0.05, 0.2, 0.5]), rng)
    indptr, indices = g.csr
    n = g.n
    mask = np.array([rng.random() < 0.6 for _ in range(n)], dtype=bool)
    rows = np.arange(n, dtype=np.int64)
    mem = np.array([[rng.random() < 0.4 for _ in range(3)] for _ in range(n)], dtype=bool).reshape(n, 3)

    np.testing.assert_array_equal(K.masked_link_counts_numba(indptr, indices, mask, rows),
                                  K.masked_link_counts_numpy(indptr, indices, mask, rows))
    np.testing.assert_array_equal(K.union_link_counts_numba(indptr, indices, mem),
                                  K.union_link_counts_numpy(indptr, indices, mem))
    np.testing.assert_array_equal(K.eccentricities_numba(indptr, indices),
                                  K.eccentricities_numpy(indptr, indices))


def test_env_flag_selects_numpy(monkeypatch):
    monkeypatch.setenv("DOCD_NUMBA", "0")
    assert not K._env_wants_numba()
    monkeypatch.setenv("DOCD_NUMBA", "1")
    assert K._env_wants_numba()
