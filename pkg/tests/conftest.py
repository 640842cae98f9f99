import os
import sys

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, os.path.dirname(__file__))

from wordmerge.data import HistogramDataset  # noqa: E402

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

ACCEPTANCE_LINES = []


def random_dataset(rng, n_classes=None, n=None, t=None, zero_cols=0, integer=True):
    """Small random dataset: 2-4 classes, n <= 20, t <= 8, every class present."""
    n_classes = n_classes or int(rng.integers(2, 5))
    n = n or int(rng.integers(max(2 * n_classes, 6), 21))
    t = t or int(rng.integers(3, 9))
    labels = np.r_[np.arange(n_classes), rng.integers(0, n_classes, n - n_classes)]
    rng.shuffle(labels)
    rates = rng.gamma(1.5, 2.0, size=(n_classes, t))
    if integer:
        h = rng.poisson(rates[labels]).astype(float)
    else:
        h = rng.gamma(2.0, rates[labels])
    if zero_cols:
        h[:, rng.choice(t, size=zero_cols, replace=False)] = 0.0
    return HistogramDataset(h, labels + 1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
