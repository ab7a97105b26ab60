import numpy as np
import pytest

from fedsim.data import Dataset, synth_generate
from fedsim.model import ModelSpec, TrainSpec, init_params


@pytest.fixture
def tiny_spec():
    return ModelSpec((5, 7, 3))


@pytest.fixture
def tiny_params(tiny_spec):
    return init_params(tiny_spec, 12)


@pytest.fixture
def tiny_data():
    return synth_generate(3, 60, 5, 4)


@pytest.fixture
def fast_train():
    return TrainSpec(learning_rate=0.1, local_epochs=2, batch_size=8, seed=5)


def random_dataset(rng, n, dim, classes):
    return Dataset(rng.standard_normal((n, dim)), rng.integers(0, classes, n), classes)
