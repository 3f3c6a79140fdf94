"""Shared fixtures: seeded generators and small datasets."""

from pathlib import Path
from typing import Callable

import numpy as np
import pandas as pd
import pytest

from flam.config import get_settings
from flam.models import Dataset


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)


def step_dataset(n: int, p: int, seed: int, noise: float = 0.3) -> Dataset:
    """Two step signals on the first features plus Gaussian noise."""
    gen = np.random.default_rng(seed)
    X = gen.uniform(-2.5, 2.5, size=(n, p))
    mu = np.where(X[:, 0] > 0, 1.0, -1.0)
    if p > 1:
        mu = mu + np.where(X[:, 1] > 1.0, 1.5, 0.0)
    y = mu + noise * gen.standard_normal(n)
    return Dataset.from_arrays(y, X)


@pytest.fixture
def make_data() -> Callable[..., Dataset]:
    return step_dataset


@pytest.fixture
def small_data() -> Dataset:
    return step_dataset(n=40, p=3, seed=7)


@pytest.fixture
def write_csv(tmp_path: Path) -> Callable[..., Path]:
    def write(name: str, columns: dict) -> Path:
        path = tmp_path / name
        pd.DataFrame(columns).to_csv(path, index=False)
        return path

    return write


@pytest.fixture(autouse=True)
def fresh_settings():
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()
