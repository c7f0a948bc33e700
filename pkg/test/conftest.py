"""Shared fixtures: seeded generators and small random datasets."""

import os
import sys

import numpy as np
import pytest

# Add the src directory to the PYTHONPATH
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..", "src")))

from mvcat.design.mvcat_design import CategoryLayout, class_table  # noqa: E402
from mvcat.likelihood.mvcat_likelihood import Dataset, joint_probabilities, make_dataset  # noqa: E402


def random_dataset(
    n: int,
    p: int,
    cardinalities: tuple[int, ...] = (3, 2),
    seed: int = 0,
    signal: float = 1.0,
    standardize: bool = True,
) -> tuple[Dataset, np.ndarray]:
    """
    n rows with p - 1 Gaussian predictors and responses drawn from a random coefficient matrix.

    Returns the dataset and the generating coefficients (p x T, intercept row first).
    """

    layout = CategoryLayout(cardinalities)
    rng = np.random.default_rng(seed)
    raw = rng.standard_normal((n, p - 1))
    beta = signal * rng.standard_normal((p, layout.total_classes))
    X = np.column_stack([np.ones(n), raw])
    P = joint_probabilities(beta, X)
    classes = np.array([rng.choice(layout.total_classes, p=row / row.sum()) for row in P])
    categories = class_table(layout)[classes]
    return make_dataset(raw, categories, layout, standardize=standardize), beta


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def make_data():
    return random_dataset
