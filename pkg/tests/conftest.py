"""Shared fixtures: one small scene dataset and model reused across tests."""

import numpy as np
import pytest

from radaug.core import WeatherTag
from radaug.synth import SceneSpec, TrajectorySpec, generate_dataset
from radaug.train import model_for_dataset

SMALL_DIMS = (32, 32, 3)


@pytest.fixture(scope="session")
def small_dataset():
    spec = SceneSpec(seed=3, trajectory_len=12, image_dims=SMALL_DIMS)
    return generate_dataset(spec, TrajectorySpec(), {WeatherTag.OVERCAST: 1.0}, 3)


@pytest.fixture(scope="session")
def small_model(small_dataset):
    return model_for_dataset(small_dataset, seed=7)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
