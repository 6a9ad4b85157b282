"""Proper orthogonal decomposition backend.

The shape encoder is a linear projection onto the leading right-singular
vectors of the mean-centered training snapshots; the decoder is its
transpose plus the mean, followed by the shared clip-and-renormalize step.
Latent dynamics are fitted post hoc with SINDy on the encoded training
trajectories, with finite-difference derivative targets optionally
perturbed by seeded Gaussian noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import dataset as ds
from .. import numerics
from ..errors import DataError
from .base import RomModel
from .sindy import SindyModel, sindy_fit

__all__ = ["PodConfig", "PodRom", "fit_pod_rom"]


@dataclass(frozen=True)
class PodConfig:
    """Hyperparameters of the POD + SINDy reduced-order model."""

    latent_dim: int = 4
    poly_order: int = 2
    sindy_threshold: float = 0.05
    sindy_ridge: float = 1e-6
    sindy_max_iter: int = 20
    derivative_noise: float = 1e-3

    def __post_init__(self):
        if self.latent_dim < 2:
            raise DataError(
                f"latent_dim must be at least 2 (shape + mass), got {self.latent_dim}"
            )
        if self.derivative_noise < 0:
            raise DataError("derivative_noise must be nonnegative")


class PodRom(RomModel):
    """Linear shape encoder/decoder from a truncated SVD basis."""

    backend_name = "pod"

    def __init__(
        self,
        mean: np.ndarray,
        basis: np.ndarray,
        sindy: SindyModel | None,
        bin_grid: ds.BinGrid,
        time_grid: ds.TimeGrid,
        mass_scale: float,
        singular_values: np.ndarray | None = None,
    ):
        mean = np.asarray(mean, dtype=np.float64)
        basis = np.asarray(basis, dtype=np.float64)
        if mean.ndim != 1 or basis.ndim != 2 or basis.shape[0] != mean.shape[0]:
            raise DataError(
                f"inconsistent POD arrays: mean {mean.shape}, basis {basis.shape}"
            )
        if mean.shape[0] != bin_grid.n_bins:
            raise DataError(
                f"POD arrays cover {mean.shape[0]} bins, grid has {bin_grid.n_bins}"
            )
        super().__init__(
            sindy=sindy,
            bin_grid=bin_grid,
            time_grid=time_grid,
            mass_scale=mass_scale,
            latent_dim=basis.shape[1] + 1,
        )
        mean.setflags(write=False)
        basis.setflags(write=False)
        self.mean = mean
        self.basis = basis
        if singular_values is not None:
            singular_values = np.asarray(singular_values, dtype=np.float64)
            singular_values.setflags(write=False)
        self.singular_values = singular_values

    def _encode_rows(self, rows: np.ndarray) -> np.ndarray:
        return (rows - self.mean) @ self.basis

    def _decode_coords(self, coords: np.ndarray) -> np.ndarray:
        return self.mean + coords @ self.basis.T


def fit_pod_rom(
    train: list,
    bin_grid: ds.BinGrid,
    time_grid: ds.TimeGrid,
    mass_scale: float,
    config: PodConfig = PodConfig(),
    rng_seed=0,
) -> PodRom:
    """Fit the POD basis and the latent SINDy dynamics on training data.

    Parameters
    ----------
    train : sequence of NormalizedDsdTrajectory
        Training trajectories, already normalized with ``mass_scale``.
    bin_grid, time_grid
        Grids the data lives on.
    mass_scale : float
        The scale that produced the trajectories' scaled masses.
    config : PodConfig
    rng_seed : int or SeedSequence
        Seed for the derivative-noise draw; ignored when
        ``config.derivative_noise`` is zero.

    Returns
    -------
    PodRom
    """
    if not train:
        raise DataError("training set is empty")
    n_steps = time_grid.n_steps
    for traj in train:
        if traj.n_steps != n_steps or traj.n_bins != bin_grid.n_bins:
            raise DataError(
                "training trajectories disagree with the stated grids"
            )
    snapshots = np.concatenate([traj.shapes for traj in train], axis=0)
    n_shape = config.latent_dim - 1
    basis, singular_values, mean = numerics.truncated_svd(snapshots, n_shape)

    coords = (snapshots - mean) @ basis
    coords_by_traj = coords.reshape(len(train), n_steps, n_shape)
    derivs = np.concatenate(
        [
            numerics.finite_diff_derivative(coords_by_traj[i], time_grid.dt)
            for i in range(len(train))
        ],
        axis=0,
    )
    if config.derivative_noise > 0:
        rng = np.random.default_rng(rng_seed)
        derivs = derivs + rng.normal(0.0, config.derivative_noise, derivs.shape)

    scaled_mass = np.concatenate([traj.scaled_mass for traj in train])
    states = np.column_stack([coords, scaled_mass])
    sindy = sindy_fit(
        states,
        derivs,
        poly_order=config.poly_order,
        threshold=config.sindy_threshold,
        ridge=config.sindy_ridge,
        max_iter=config.sindy_max_iter,
    )
    return PodRom(
        mean=mean,
        basis=basis,
        sindy=sindy,
        bin_grid=bin_grid,
        time_grid=time_grid,
        mass_scale=mass_scale,
        singular_values=singular_values,
    )
