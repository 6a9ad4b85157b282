"""Shared reduced-order-model interface.

A ROM couples a shape encoder/decoder pair (POD or autoencoder) with sparse
latent dynamics.  The latent state has ``latent_dim`` coordinates: the
first ``latent_dim - 1`` describe the DSD shape, the last is the scaled
total mass.  Mass is conserved by the physics, so it bypasses the encoder
entirely and carries no dynamics; its derivative is structurally zero and a
rollout reproduces it exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import dataset as ds
from .. import numerics
from ..errors import DataError, NotFittedError, NumericalError
from .sindy import SindyModel

__all__ = ["LatentState", "LatentTrajectory", "RomModel"]


@dataclass(frozen=True)
class LatentState:
    """One latent state: shape coordinates plus the scaled total mass."""

    shape_coords: np.ndarray
    scaled_mass: float

    def __post_init__(self):
        coords = np.asarray(self.shape_coords, dtype=np.float64)
        coords.setflags(write=False)
        object.__setattr__(self, "shape_coords", coords)
        if coords.ndim != 1:
            raise DataError(
                f"shape_coords must be a vector, got shape {coords.shape}"
            )
        if not np.all(np.isfinite(coords)) or not np.isfinite(self.scaled_mass):
            raise DataError("latent state must be finite")

    @property
    def dim(self) -> int:
        return self.shape_coords.shape[0] + 1

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.shape_coords, [self.scaled_mass]])

    @classmethod
    def from_vector(cls, vector: np.ndarray) -> "LatentState":
        arr = np.asarray(vector, dtype=np.float64)
        if arr.ndim != 1 or arr.shape[0] < 2:
            raise DataError(
                f"latent vector must have at least 2 entries, got shape {arr.shape}"
            )
        return cls(shape_coords=arr[:-1], scaled_mass=float(arr[-1]))


@dataclass(frozen=True)
class LatentTrajectory:
    """Latent states over the time grid, one row per timestep."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)
        if arr.ndim != 2:
            raise DataError(
                f"latent trajectory must be 2-d, got shape {arr.shape}"
            )

    @property
    def n_steps(self) -> int:
        return self.values.shape[0]

    @property
    def latent_dim(self) -> int:
        return self.values.shape[1]

    def state(self, step: int) -> LatentState:
        return LatentState.from_vector(self.values[step])


class RomModel:
    """Encoder/decoder pair with sparse latent dynamics.

    Subclasses implement ``_encode_rows`` and ``_decode_coords`` (both
    batched over rows); everything else, including rollouts and end-to-end
    prediction, is shared.
    """

    backend_name = "abstract"

    def __init__(
        self,
        sindy: SindyModel | None,
        bin_grid: ds.BinGrid,
        time_grid: ds.TimeGrid,
        mass_scale: float,
        latent_dim: int,
    ):
        if latent_dim < 2:
            raise DataError(
                f"latent_dim must be at least 2 (shape + mass), got {latent_dim}"
            )
        if not mass_scale > 0:
            raise DataError("mass_scale must be positive")
        if sindy is not None:
            if sindy.n_state != latent_dim:
                raise DataError(
                    f"dynamics expect state dimension {sindy.n_state}, "
                    f"model has latent_dim {latent_dim}"
                )
            if sindy.n_targets != latent_dim - 1:
                raise DataError(
                    f"dynamics must target the {latent_dim - 1} shape "
                    f"coordinates, got {sindy.n_targets}"
                )
        self.sindy = sindy
        self.bin_grid = bin_grid
        self.time_grid = time_grid
        self.mass_scale = float(mass_scale)
        self.latent_dim = int(latent_dim)

    # Backend hooks ------------------------------------------------------

    def _encode_rows(self, rows: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _decode_coords(self, coords: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    # Encoding / decoding -------------------------------------------------

    def _check_rows(self, rows: np.ndarray) -> np.ndarray:
        arr = np.atleast_2d(np.asarray(rows, dtype=np.float64))
        if arr.shape[1] != self.bin_grid.n_bins:
            raise DataError(
                f"shape rows must have {self.bin_grid.n_bins} bins, "
                f"got {arr.shape[1]}"
            )
        if not np.all(np.isfinite(arr)):
            raise DataError("shape rows must be finite")
        sums = arr.sum(axis=1)
        if np.abs(sums - 1.0).max(initial=0.0) > 1e-6:
            raise DataError(
                "unnormalized input: shape rows must sum to one within 1e-6"
            )
        return arr

    def encode(self, shape_row: np.ndarray, scaled_mass: float) -> LatentState:
        """Map one normalized shape row (plus its mass) to a latent state."""
        rows = self._check_rows(shape_row)
        if rows.shape[0] != 1:
            raise DataError("encode takes a single shape row")
        if not scaled_mass > 0:
            raise DataError("scaled_mass must be positive")
        coords = self._encode_rows(rows)[0]
        return LatentState(shape_coords=coords, scaled_mass=float(scaled_mass))

    def encode_trajectory(
        self, trajectory: ds.NormalizedDsdTrajectory
    ) -> LatentTrajectory:
        """Encode every timestep of a normalized trajectory."""
        coords = self._encode_rows(self._check_rows(trajectory.shapes))
        values = np.column_stack([coords, trajectory.scaled_mass])
        return LatentTrajectory(values=values)

    def decode_batch(self, latent_values: np.ndarray) -> np.ndarray:
        """Decode a batch of latent vectors to normalized shape rows.

        Raw decoder output is clipped at zero and renormalized to unit sum;
        a row with no positive mass anywhere falls back to the uniform
        distribution.
        """
        arr = np.atleast_2d(np.asarray(latent_values, dtype=np.float64))
        if arr.shape[1] != self.latent_dim:
            raise DataError(
                f"latent vectors must have {self.latent_dim} entries, "
                f"got {arr.shape[1]}"
            )
        if not np.all(np.isfinite(arr)):
            raise DataError("latent vectors must be finite")
        raw = self._decode_coords(arr[:, :-1])
        np.maximum(raw, 0.0, out=raw)
        sums = raw.sum(axis=1)
        dead = sums <= 0.0
        if np.any(dead):
            raw[dead] = 1.0
            sums[dead] = self.bin_grid.n_bins
        return raw / sums[:, None]

    def decode(self, latent: LatentState) -> np.ndarray:
        """Decode one latent state to a normalized shape row."""
        return self.decode_batch(latent.as_vector()[None, :])[0]

    # Dynamics -------------------------------------------------------------

    def _require_sindy(self) -> SindyModel:
        if self.sindy is None:
            raise NotFittedError(
                "latent dynamics are not fitted; run the training stage first"
            )
        return self.sindy

    def latent_derivative(self, latent_values: np.ndarray) -> np.ndarray:
        """Time derivative of latent vectors; the mass component is zero."""
        sindy = self._require_sindy()
        arr = np.atleast_2d(np.asarray(latent_values, dtype=np.float64))
        if arr.shape[1] != self.latent_dim:
            raise DataError(
                f"latent vectors must have {self.latent_dim} entries, "
                f"got {arr.shape[1]}"
            )
        shape_rhs = sindy.predict(arr)
        out = np.zeros_like(arr)
        out[:, :-1] = shape_rhs
        return out

    def rollout_batch(self, latent0: np.ndarray):
        """RK4 rollout of a batch of initial latent vectors over the grid.

        Returns
        -------
        values : ndarray, shape (n_steps, n, latent_dim)
        diverged : ndarray of bool, shape (n,)
            Rows that left the finite domain; their states are NaN from the
            failing step onward.
        """
        self._require_sindy()
        return numerics.rk4_rollout(
            self.latent_derivative,
            latent0,
            self.time_grid.dt,
            self.time_grid.n_steps,
        )

    def rollout_latent(self, latent0: LatentState) -> LatentTrajectory:
        """Roll one latent state forward; raises if the dynamics diverge."""
        values, diverged = self.rollout_batch(latent0.as_vector()[None, :])
        if diverged[0]:
            step = int(np.isnan(values[:, 0, 0]).argmax())
            raise NumericalError(f"latent dynamics diverged at step {step}")
        return LatentTrajectory(values=values[:, 0, :])

    def predict_end_to_end(
        self, shape_row0: np.ndarray, scaled_mass: float
    ) -> ds.NormalizedDsdTrajectory:
        """Encode, roll latent dynamics over the grid, decode every step.

        The scaled mass is a passthrough: the output carries the input value
        at every timestep exactly.
        """
        latent = self.encode(shape_row0, scaled_mass)
        rollout = self.rollout_latent(latent)
        shapes = self.decode_batch(rollout.values)
        scaled = np.full(self.time_grid.n_steps, float(scaled_mass))
        return ds.NormalizedDsdTrajectory(shapes=shapes, scaled_mass=scaled)
