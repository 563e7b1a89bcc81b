import gzip
from pathlib import Path

import numpy as np
import pytest

from tacnn.data_io import FILES, idx_images_bytes, idx_labels_bytes

ACCEPTANCE_LINES = []


def synthetic_images(count, size=28, seed=0):
    """Ten separable classes: class k lights up a bar whose position depends on k."""
    rng = np.random.default_rng(seed)
    labels = np.arange(count) % 10
    rng.shuffle(labels)
    images = rng.integers(0, 40, (count, size, size)).astype(np.int64)
    band = max(size // 10, 1)
    for i, k in enumerate(labels):
        if k < 5:
            images[i, k * 2 * band:(k * 2 + 1) * band, :] += 200
        else:
            images[i, :, (k - 5) * 2 * band:((k - 5) * 2 + 1) * band] += 200
    return np.clip(images, 0, 255).astype(np.uint8), labels.astype(np.uint8)


def write_idx_dataset(directory, n_train=200, n_test=100, size=28, compress=True):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for split, count, seed in (("train", n_train, 1), ("test", n_test, 2)):
        images, labels = synthetic_images(count, size, seed)
        for kind, blob in (("images", idx_images_bytes(images)), ("labels", idx_labels_bytes(labels))):
            name = FILES[(split, kind)]
            if compress:
                (directory / (name + ".gz")).write_bytes(gzip.compress(blob))
            else:
                (directory / name).write_bytes(blob)
    return directory


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def synthetic_data_dir(tmp_path_factory):
    return write_idx_dataset(tmp_path_factory.mktemp("fashion"))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
