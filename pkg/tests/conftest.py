"""Shared fixtures: small grids and datasets reused across test modules."""

import numpy as np
import pytest

from romuq import dataset as ds


@pytest.fixture(scope="session")
def small_bin_grid():
    return ds.BinGrid(n_bins=16)


@pytest.fixture(scope="session")
def small_time_grid():
    return ds.TimeGrid(dt=10.0, n_steps=7)


@pytest.fixture(scope="session")
def constant_kernel():
    return ds.CoalescenceKernel(kind="constant", coefficient=4e-11)


@pytest.fixture(scope="session")
def small_dataset(small_bin_grid, small_time_grid, constant_kernel):
    """30 coarse trajectories; large enough for every split scheme."""
    return ds.generate_dataset(
        30,
        seed=5,
        bin_grid=small_bin_grid,
        time_grid=small_time_grid,
        kernel=constant_kernel,
        ic_params=ds.InitialConditionParams(),
    )


@pytest.fixture(scope="session")
def small_normalized(small_dataset):
    normalized, mass_scale = ds.normalize_dataset(small_dataset.trajectories)
    return normalized, mass_scale


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)
