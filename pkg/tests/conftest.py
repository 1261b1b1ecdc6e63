import numpy as np
import pytest

from masklab import TrainConfig, make_dataset, train_toy


@pytest.fixture(scope="session")
def default_dataset():
    return make_dataset(0, 450)


@pytest.fixture(scope="session")
def train_report(default_dataset):
    return train_toy(default_dataset, TrainConfig(), seed=7)


@pytest.fixture(scope="session")
def trained_model(train_report):
    return train_report.model


@pytest.fixture(scope="session")
def fixture_corpus():
    """Held-out stamped images used as explanation targets."""
    ds = make_dataset(101, 300)
    positives = [i for i in range(len(ds)) if ds.labels[i] == 1]
    return ds, positives


@pytest.fixture(scope="session")
def fixture_image(fixture_corpus):
    ds, positives = fixture_corpus
    return ds.images[positives[0]]
