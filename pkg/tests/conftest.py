from __future__ import annotations

import numpy as np
import pytest
from hypothesis import settings

from hte_lab.data import Dataset

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


def make_data(n=60, p=3, seed=0, tau=None, mu=None, pi=0.5, noise=1.0):
    """Small synthetic dataset: ``tau`` and ``mu`` are callables of X."""
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p))
    t = (rng.random(n) < pi).astype(int)
    t[0], t[1] = 1, 0
    m = np.zeros(n) if mu is None else mu(X)
    tv = np.zeros(n) if tau is None else tau(X)
    y = m + (t - 0.5) * tv + noise * rng.normal(size=n)
    return Dataset(X, t, y)


@pytest.fixture
def small():
    return make_data()
