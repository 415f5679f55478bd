"""Shared fixtures: the frozen digit corpus and a few small slices of it."""

from pathlib import Path

import numpy as np
import pytest

from lyapdetect import ingest

DATA_DIR = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def digit_dataset() -> ingest.Dataset:
    """600 labeled 28x28 grayscale digits, frozen in IDX form."""
    return ingest.parse_idx(
        DATA_DIR / "digits-images-idx3-ubyte",
        DATA_DIR / "digits-labels-idx1-ubyte",
        name="digits",
    )


@pytest.fixture(scope="session")
def digit_images(digit_dataset):
    return digit_dataset.images


@pytest.fixture
def rng():
    return np.random.default_rng(4242)
