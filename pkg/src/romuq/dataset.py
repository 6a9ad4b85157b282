"""Synthetic droplet-coalescence dataset: generation, normalization, splits.

The physical object is a droplet size distribution (DSD) on a logarithmic
radius grid, evolved by binary coalescence.  Mass bookkeeping is exact: the
solver moves mass between bins and never creates or destroys it, so the
total liquid mass of a trajectory is a conserved quantity (to roundoff) and
doubles as an integration self-check.

Trajectories come in two representations.  ``DsdTrajectory`` holds raw mass
densities ``dm/d ln r`` per bin and timestep.  ``NormalizedDsdTrajectory``
separates shape from amount: each row is rescaled to sum to one, and the
conserved total mass is carried alongside as a single scaled scalar.  The
reduced-order models operate on the normalized form; the scaled mass rides
through the latent state untouched.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.special

from . import _kernels, container
from .errors import DataError

__all__ = [
    "BinGrid",
    "TimeGrid",
    "CoalescenceKernel",
    "InitialConditionParams",
    "DsdTrajectory",
    "NormalizedDsdTrajectory",
    "DsdDataset",
    "DatasetSplit",
    "VanillaScheme",
    "SplitScheme",
    "CvPlusScheme",
    "sample_initial_dsd",
    "simulate_coalescence",
    "generate_dataset",
    "filter_by_mass",
    "normalize_dataset",
    "split_dataset",
    "save_dataset",
    "load_dataset",
]

logger = logging.getLogger(__name__)

WATER_DENSITY = 1000.0  # kg m^-3
DEFAULT_MASS_THRESHOLD = 1e-5  # kg of liquid per kg of air
DEFAULT_NUMBER_FRACTION = 0.02  # droplet-number budget per Euler sub-step


def _half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class BinGrid:
    """Uniform grid in ``ln r`` covering droplet radii in micrometers.

    The default spans 1 um to 5000 um with 64 bins, wide enough that
    coalescence over the simulated window never pushes significant mass
    against the upper boundary.
    """

    n_bins: int = 64
    ln_r_min: float = 0.0
    ln_r_max: float = math.log(5000.0)

    def __post_init__(self):
        if self.n_bins < 2:
            raise DataError(f"n_bins must be at least 2, got {self.n_bins}")
        if not self.ln_r_max > self.ln_r_min:
            raise DataError("ln_r_max must exceed ln_r_min")

    @property
    def d_ln_r(self) -> float:
        return (self.ln_r_max - self.ln_r_min) / self.n_bins

    @property
    def edges(self) -> np.ndarray:
        return self.ln_r_min + self.d_ln_r * np.arange(self.n_bins + 1)

    @property
    def centers(self) -> np.ndarray:
        return self.ln_r_min + self.d_ln_r * (np.arange(self.n_bins) + 0.5)

    @property
    def radii_um(self) -> np.ndarray:
        return np.exp(self.centers)

    @property
    def droplet_mass_kg(self) -> np.ndarray:
        """Mass of a single droplet at each bin center."""
        radii_m = self.radii_um * 1e-6
        return (4.0 / 3.0) * math.pi * WATER_DENSITY * radii_m**3

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "BinGrid":
        return cls(**data)


@dataclass(frozen=True)
class TimeGrid:
    """Uniform output time grid, default 0..600 s in 10 s steps."""

    t0: float = 0.0
    dt: float = 10.0
    n_steps: int = 61

    def __post_init__(self):
        if not self.dt > 0:
            raise DataError(f"dt must be positive, got {self.dt!r}")
        if self.n_steps < 2:
            raise DataError(f"n_steps must be at least 2, got {self.n_steps}")

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_steps)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TimeGrid":
        return cls(**data)


@dataclass(frozen=True)
class CoalescenceKernel:
    """Collision kernel specification.

    ``constant`` applies the same rate coefficient to every bin pair (the
    classical analytically solvable case); ``product`` scales the rate with
    the product of droplet volumes, normalized by the volume of a 10 um
    droplet so the coefficient keeps comparable magnitude.
    """

    kind: str = "constant"
    coefficient: float = 4e-11

    def __post_init__(self):
        if self.kind not in ("constant", "product"):
            raise DataError(
                f"kernel kind must be 'constant' or 'product', got {self.kind!r}"
            )
        if not self.coefficient > 0:
            raise DataError("kernel coefficient must be positive")

    def matrix(self, grid: BinGrid) -> np.ndarray:
        """Symmetric rate matrix ``K_ij`` over bin pairs."""
        if self.kind == "constant":
            return np.full((grid.n_bins, grid.n_bins), self.coefficient)
        volumes = (grid.radii_um / 10.0) ** 3
        return self.coefficient * np.outer(volumes, volumes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "CoalescenceKernel":
        return cls(**data)


@dataclass(frozen=True)
class InitialConditionParams:
    """Sampling ranges for initial DSDs (mixtures of lognormal modes).

    Locations and widths are in ``ln r`` units (radii in micrometers);
    the total liquid mass is in kg per kg of air.  Mode locations must lie
    inside the bin grid.
    """

    n_modes: int = 2
    loc_range: tuple = (math.log(8.0), math.log(30.0))
    width_range: tuple = (0.15, 0.45)
    mass_range: tuple = (2e-4, 2e-3)

    def __post_init__(self):
        if self.n_modes < 1:
            raise DataError(f"n_modes must be at least 1, got {self.n_modes}")
        for name in ("loc_range", "width_range", "mass_range"):
            lo, hi = getattr(self, name)
            if not (math.isfinite(lo) and math.isfinite(hi) and lo <= hi):
                raise DataError(f"{name} must be a finite ordered pair")
        if self.width_range[0] <= 0:
            raise DataError("mode widths must be positive")
        if self.mass_range[0] <= 0:
            raise DataError("total mass must be positive")

    def to_dict(self) -> dict:
        return {
            "n_modes": self.n_modes,
            "loc_range": list(self.loc_range),
            "width_range": list(self.width_range),
            "mass_range": list(self.mass_range),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "InitialConditionParams":
        return cls(
            n_modes=data["n_modes"],
            loc_range=tuple(data["loc_range"]),
            width_range=tuple(data["width_range"]),
            mass_range=tuple(data["mass_range"]),
        )


def _frozen(arr: np.ndarray) -> np.ndarray:
    out = np.asarray(arr, dtype=np.float64)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class DsdTrajectory:
    """One simulated DSD trajectory in mass-density form.

    Attributes
    ----------
    masses : ndarray, shape (n_steps, n_bins)
        Mass density ``dm/d ln r`` per bin, nonnegative.
    total_mass : ndarray, shape (n_steps,)
        Bin sums times the grid spacing; conserved along the trajectory.
    """

    masses: np.ndarray
    total_mass: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "masses", _frozen(self.masses))
        object.__setattr__(self, "total_mass", _frozen(self.total_mass))
        if self.masses.ndim != 2:
            raise DataError(
                f"masses must be 2-d (n_steps, n_bins), got shape {self.masses.shape}"
            )
        if self.total_mass.shape != (self.masses.shape[0],):
            raise DataError("total_mass length must match the number of timesteps")
        if not np.all(np.isfinite(self.masses)):
            raise DataError("masses must be finite")
        if self.masses.min(initial=0.0) < 0:
            raise DataError("masses must be nonnegative")
        # total_mass must be the bin sums times one common grid spacing.
        sums = self.masses.sum(axis=1)
        zero = sums == 0.0
        if np.any(self.total_mass[zero] != 0.0):
            raise DataError("total_mass must vanish on all-zero timesteps")
        if not zero.all():
            ratios = self.total_mass[~zero] / sums[~zero]
            if ratios.min(initial=1.0) <= 0 or (
                ratios.max() - ratios.min()
            ) > 1e-10 * ratios.max():
                raise DataError(
                    "total_mass is inconsistent with the bin sums"
                )

    @classmethod
    def from_masses(cls, masses: np.ndarray, grid: BinGrid) -> "DsdTrajectory":
        arr = np.asarray(masses, dtype=np.float64)
        return cls(masses=arr, total_mass=arr.sum(axis=1) * grid.d_ln_r)

    @property
    def n_steps(self) -> int:
        return self.masses.shape[0]

    @property
    def n_bins(self) -> int:
        return self.masses.shape[1]


@dataclass(frozen=True)
class NormalizedDsdTrajectory:
    """Shape/amount decomposition of a trajectory.

    Attributes
    ----------
    shapes : ndarray, shape (n_steps, n_bins)
        Nonnegative rows summing to one.
    scaled_mass : ndarray, shape (n_steps,)
        Total mass divided by the dataset mass scale; positive, and at most
        one on the data that defined the scale.
    """

    shapes: np.ndarray
    scaled_mass: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "shapes", _frozen(self.shapes))
        object.__setattr__(self, "scaled_mass", _frozen(self.scaled_mass))
        if self.shapes.ndim != 2:
            raise DataError(
                f"shapes must be 2-d (n_steps, n_bins), got shape {self.shapes.shape}"
            )
        if self.scaled_mass.shape != (self.shapes.shape[0],):
            raise DataError("scaled_mass length must match the number of timesteps")
        if not np.all(np.isfinite(self.shapes)):
            raise DataError("shapes must be finite")
        if self.shapes.min(initial=0.0) < 0:
            raise DataError("shapes must be nonnegative")
        sums = self.shapes.sum(axis=1)
        if np.abs(sums - 1.0).max(initial=0.0) > 1e-8:
            raise DataError("shape rows must sum to one within 1e-8")
        if self.scaled_mass.min(initial=1.0) <= 0:
            raise DataError("scaled_mass must be positive")

    @property
    def n_steps(self) -> int:
        return self.shapes.shape[0]

    @property
    def n_bins(self) -> int:
        return self.shapes.shape[1]

    def denormalize(self, mass_scale: float, grid: BinGrid) -> DsdTrajectory:
        """Invert the shape/amount decomposition back to mass densities."""
        if not mass_scale > 0:
            raise DataError("mass_scale must be positive")
        totals = self.scaled_mass * mass_scale
        masses = self.shapes * (totals / grid.d_ln_r)[:, None]
        return DsdTrajectory(masses=masses, total_mass=masses.sum(axis=1) * grid.d_ln_r)


def sample_initial_dsd(
    rng_seed, params: InitialConditionParams, grid: BinGrid
) -> np.ndarray:
    """Draw one initial DSD as a mixture of lognormal modes.

    Mode masses are integrated exactly over each bin (via the normal CDF in
    ``ln r``), so a vanishing width concentrates all mass in the bin that
    contains the mode location.  The draw order is fixed (locations, widths,
    weights, total mass) and must not change across versions: datasets are
    reproduced from seeds alone.

    Parameters
    ----------
    rng_seed : int, SeedSequence, or Generator seed material
    params : InitialConditionParams
    grid : BinGrid

    Returns
    -------
    ndarray, shape (n_bins,)
        Mass density ``dm/d ln r`` whose bin sums times ``d_ln_r`` equal the
        sampled total mass.
    """
    if params.loc_range[0] < grid.ln_r_min or params.loc_range[1] > grid.ln_r_max:
        raise DataError(
            "mode locations outside the grid: loc_range "
            f"{params.loc_range} not within [{grid.ln_r_min}, {grid.ln_r_max}]"
        )
    rng = np.random.default_rng(rng_seed)
    locs = rng.uniform(params.loc_range[0], params.loc_range[1], params.n_modes)
    widths = rng.uniform(params.width_range[0], params.width_range[1], params.n_modes)
    weights = rng.uniform(0.2, 1.0, params.n_modes)
    total = rng.uniform(params.mass_range[0], params.mass_range[1])

    weights = weights / weights.sum()
    edges = grid.edges
    bin_mass = np.zeros(grid.n_bins)
    for loc, width, weight in zip(locs, widths, weights):
        cdf = scipy.special.ndtr((edges - loc) / width)
        bin_mass += weight * np.diff(cdf)
    mass_sum = bin_mass.sum()
    if not mass_sum > 0:
        raise DataError("initial condition produced no mass on the grid")
    bin_mass *= total / mass_sum
    return bin_mass / grid.d_ln_r


@dataclass(frozen=True)
class PairTable:
    """Precomputed pair interaction table for one (grid, kernel) pair."""

    kernel_matrix: np.ndarray
    drop_mass: np.ndarray
    pair_i: np.ndarray
    pair_j: np.ndarray
    pair_target: np.ndarray
    pair_kernel: np.ndarray
    pair_mass_sum: np.ndarray


@lru_cache(maxsize=16)
def build_pair_table(grid: BinGrid, kernel: CoalescenceKernel) -> PairTable:
    """Build the upper-triangle pair table the integrator backends consume.

    The deposit bin of a pair is the one whose center is nearest (in
    ``ln r``) to the radius of the coalesced droplet, clamped to the last
    bin at the upper boundary.
    """
    nb = grid.n_bins
    drop_mass = grid.droplet_mass_kg
    kernel_matrix = kernel.matrix(grid)
    pair_i, pair_j = np.triu_indices(nb)
    combined = drop_mass[pair_i] + drop_mass[pair_j]
    # ln of the coalesced radius; droplet mass scales with r^3, so on a grid
    # uniform in ln r the containing bin is also the nearest-center bin.
    combined_ln_r = np.log(
        (combined / ((4.0 / 3.0) * math.pi * WATER_DENSITY)) ** (1.0 / 3.0) * 1e6
    )
    target = np.floor((combined_ln_r - grid.ln_r_min) / grid.d_ln_r).astype(np.int64)
    target = np.clip(target, 0, nb - 1)
    pair_kernel = kernel_matrix[pair_i, pair_j].copy()
    pair_kernel[pair_i == pair_j] *= 0.5
    return PairTable(
        kernel_matrix=kernel_matrix,
        drop_mass=drop_mass,
        pair_i=pair_i.astype(np.int64),
        pair_j=pair_j.astype(np.int64),
        pair_target=target,
        pair_kernel=pair_kernel,
        pair_mass_sum=combined,
    )


def simulate_coalescence(
    initial_dsd: np.ndarray,
    grid: BinGrid,
    kernel: CoalescenceKernel,
    time_grid: TimeGrid,
    backend=None,
    number_fraction: float = DEFAULT_NUMBER_FRACTION,
) -> DsdTrajectory:
    """Evolve one initial DSD over the time grid.

    Parameters
    ----------
    initial_dsd : ndarray, shape (n_bins,)
        Mass density ``dm/d ln r``, nonnegative.
    grid, kernel, time_grid
        Simulation specification.
    backend : module, optional
        A kernel backend from :mod:`romuq._kernels`; default is the
        import-time selection.
    number_fraction : float
        Accuracy cap on the droplet-number fraction consumed per sub-step.

    Returns
    -------
    DsdTrajectory

    Raises
    ------
    NumericalError
        When the sub-step controller underflows or the state turns
        non-finite; the message names the failing output step.
    """
    row = np.asarray(initial_dsd, dtype=np.float64)
    if row.shape != (grid.n_bins,):
        raise DataError(
            f"initial_dsd must have shape ({grid.n_bins},), got {row.shape}"
        )
    if not np.all(np.isfinite(row)):
        raise DataError("initial_dsd must be finite")
    if row.min(initial=0.0) < 0:
        raise DataError("initial_dsd must be nonnegative")
    if not 0 < number_fraction <= 1:
        raise DataError("number_fraction must lie in (0, 1]")
    if backend is None:
        backend = _kernels.default_backend()
    table = build_pair_table(grid, kernel)
    bin_masses = backend.integrate_trajectory(
        np.ascontiguousarray(row * grid.d_ln_r),
        table.kernel_matrix,
        table.drop_mass,
        table.pair_i,
        table.pair_j,
        table.pair_target,
        table.pair_kernel,
        table.pair_mass_sum,
        float(time_grid.dt),
        int(time_grid.n_steps),
        float(number_fraction),
    )
    return DsdTrajectory.from_masses(bin_masses / grid.d_ln_r, grid)


@dataclass(frozen=True)
class DsdDataset:
    """A bundle of simulated trajectories plus everything that produced them."""

    trajectories: tuple
    bin_grid: BinGrid
    time_grid: TimeGrid
    kernel: CoalescenceKernel
    ic_params: InitialConditionParams
    seed: int
    mass_threshold: float = DEFAULT_MASS_THRESHOLD

    @property
    def n_trajectories(self) -> int:
        return len(self.trajectories)

    @property
    def n_below_threshold(self) -> int:
        return sum(
            1
            for traj in self.trajectories
            if traj.total_mass[0] <= self.mass_threshold
        )


def _simulate_sample(args):
    index, seed, ic_params, grid, kernel, time_grid, backend_name, frac = args
    initial = sample_initial_dsd(
        np.random.SeedSequence([seed, index]), ic_params, grid
    )
    traj = simulate_coalescence(
        initial,
        grid,
        kernel,
        time_grid,
        backend=_kernels.get_backend(backend_name),
        number_fraction=frac,
    )
    return index, traj.masses


def generate_dataset(
    n_samples: int,
    seed: int,
    bin_grid: BinGrid = BinGrid(),
    time_grid: TimeGrid = TimeGrid(),
    kernel: CoalescenceKernel = CoalescenceKernel(),
    ic_params: InitialConditionParams = InitialConditionParams(),
    mass_threshold: float = DEFAULT_MASS_THRESHOLD,
    backend=None,
    number_fraction: float = DEFAULT_NUMBER_FRACTION,
    workers: int = 1,
) -> DsdDataset:
    """Simulate a dataset of coalescence trajectories.

    Sample ``i`` is driven by the seed sequence ``[seed, i]``, so any prefix
    of the dataset is reproducible independently of ``n_samples`` and of the
    worker count: parallel results are reassembled by index.

    Parameters
    ----------
    n_samples : int
        Number of trajectories, at least 1.
    seed : int
        Master seed.
    workers : int
        Process count for the embarrassingly parallel simulation loop;
        1 keeps everything in-process.

    Returns
    -------
    DsdDataset
    """
    if n_samples < 1:
        raise DataError(f"n_samples must be at least 1, got {n_samples}")
    backend_name = (backend or _kernels.default_backend()).BACKEND_NAME
    jobs = [
        (i, seed, ic_params, bin_grid, kernel, time_grid, backend_name, number_fraction)
        for i in range(n_samples)
    ]
    rows = [None] * n_samples
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for index, masses in pool.map(_simulate_sample, jobs, chunksize=8):
                rows[index] = masses
    else:
        report_every = max(1, n_samples // 10)
        for job in jobs:
            index, masses = _simulate_sample(job)
            rows[index] = masses
            if (index + 1) % report_every == 0:
                logger.info("simulated %d/%d trajectories", index + 1, n_samples)
    trajectories = tuple(
        DsdTrajectory.from_masses(masses, bin_grid) for masses in rows
    )
    dataset = DsdDataset(
        trajectories=trajectories,
        bin_grid=bin_grid,
        time_grid=time_grid,
        kernel=kernel,
        ic_params=ic_params,
        seed=seed,
        mass_threshold=mass_threshold,
    )
    if dataset.n_below_threshold:
        logger.info(
            "%d of %d trajectories fall below the %g mass threshold",
            dataset.n_below_threshold,
            n_samples,
            mass_threshold,
        )
    return dataset


def filter_by_mass(trajectories, threshold: float = DEFAULT_MASS_THRESHOLD):
    """Trajectories whose initial total mass exceeds the threshold.

    Returns
    -------
    kept : list of DsdTrajectory
    kept_indices : ndarray of int64
        Positions of the kept trajectories in the input sequence.
    """
    kept, kept_indices = [], []
    for i, traj in enumerate(trajectories):
        if traj.total_mass[0] > threshold:
            kept.append(traj)
            kept_indices.append(i)
    return kept, np.asarray(kept_indices, dtype=np.int64)


def normalize_dataset(
    trajectories,
    mass_scale: float | None = None,
    mass_threshold: float = DEFAULT_MASS_THRESHOLD,
):
    """Split trajectories into shape rows and scaled total masses.

    Trajectories at or below the mass threshold are dropped (and the count
    logged); this mirrors the liquid-water filter applied to the raw data
    before any model sees it.  When ``mass_scale`` is not given it is the
    maximum total mass across the retained trajectories, which makes the
    scaled mass of the defining dataset lie in (0, 1].

    Parameters
    ----------
    trajectories : sequence of DsdTrajectory
    mass_scale : float, optional
        Positive scale fixed previously (e.g. from the training split).
    mass_threshold : float
        Initial-mass filter, in the raw mass units.

    Returns
    -------
    normalized : list of NormalizedDsdTrajectory
    mass_scale : float
    """
    kept, kept_indices = filter_by_mass(trajectories, mass_threshold)
    dropped = len(trajectories) - len(kept)
    if dropped:
        logger.info(
            "mass filter dropped %d of %d trajectories", dropped, len(trajectories)
        )
    if not kept:
        raise DataError("no trajectories above the mass threshold")
    if mass_scale is None:
        mass_scale = max(float(traj.total_mass.max()) for traj in kept)
    if not mass_scale > 0:
        raise DataError("mass_scale must be positive")
    normalized = []
    for traj in kept:
        sums = traj.masses.sum(axis=1)
        if sums.min(initial=1.0) <= 0:
            raise DataError("cannot normalize a timestep with zero total mass")
        shapes = traj.masses / sums[:, None]
        normalized.append(
            NormalizedDsdTrajectory(
                shapes=shapes, scaled_mass=traj.total_mass / mass_scale
            )
        )
    return normalized, float(mass_scale)


@dataclass(frozen=True)
class VanillaScheme:
    """Fit and calibrate on the same training split; the rest is test."""

    train_frac: float = 0.8

    name = "vanilla"

    def __post_init__(self):
        if not 0 < self.train_frac < 1:
            raise DataError("train_frac must lie in (0, 1)")


@dataclass(frozen=True)
class SplitScheme:
    """Disjoint train / calibration / test partition."""

    train_frac: float = 0.6
    cal_frac: float = 0.2

    name = "split"

    def __post_init__(self):
        if not 0 < self.train_frac < 1 or not 0 < self.cal_frac < 1:
            raise DataError("fractions must lie in (0, 1)")
        if self.train_frac + self.cal_frac >= 1:
            raise DataError("train_frac + cal_frac must leave room for a test split")


@dataclass(frozen=True)
class CvPlusScheme:
    """K-fold cross calibration on the training split; the rest is test."""

    train_frac: float = 0.8
    k: int = 20

    name = "cv_plus"

    def __post_init__(self):
        if not 0 < self.train_frac < 1:
            raise DataError("train_frac must lie in (0, 1)")
        if self.k < 2:
            raise DataError(f"need at least 2 folds, got {self.k}")


@dataclass(frozen=True)
class DatasetSplit:
    """Index partition of a dataset under one calibration scheme.

    Indices are stored sorted; ``fold_assignments`` (cross-validation only)
    aligns with ``train_indices`` and numbers folds from 1 with sizes
    differing by at most one.
    """

    scheme_name: str
    n_samples: int
    train_indices: np.ndarray
    calibration_indices: np.ndarray
    test_indices: np.ndarray
    fold_assignments: np.ndarray | None = None
    k: int | None = None

    def __post_init__(self):
        for name in ("train_indices", "calibration_indices", "test_indices"):
            arr = np.asarray(getattr(self, name), dtype=np.int64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.fold_assignments is not None:
            arr = np.asarray(self.fold_assignments, dtype=np.int64)
            arr.setflags(write=False)
            object.__setattr__(self, "fold_assignments", arr)
        self._validate()

    def _validate(self):
        train = set(self.train_indices.tolist())
        test = set(self.test_indices.tolist())
        cal = set(self.calibration_indices.tolist())
        if not train or not test:
            raise DataError("train and test splits must be nonempty")
        if train & test:
            raise DataError("train and test splits overlap")
        if cal & test:
            raise DataError("calibration and test splits overlap")
        if self.scheme_name == "split":
            if cal & train:
                raise DataError("calibration and train splits overlap")
            covered = train | cal | test
        else:
            if cal != train:
                raise DataError(
                    f"{self.scheme_name} calibration indices must equal train indices"
                )
            covered = train | test
        if covered != set(range(self.n_samples)):
            raise DataError("splits must cover every sample exactly once")
        if self.scheme_name == "cv_plus":
            if self.fold_assignments is None or self.k is None:
                raise DataError("cv_plus split requires fold assignments")
            if self.fold_assignments.shape != self.train_indices.shape:
                raise DataError("fold assignments must align with train indices")
            counts = np.bincount(self.fold_assignments, minlength=self.k + 1)[1:]
            if len(counts) != self.k or counts.min() < 1:
                raise DataError("every fold must contain at least one sample")
            if counts.max() - counts.min() > 1:
                raise DataError("fold sizes must differ by at most one")

    def fold_indices(self, fold: int) -> np.ndarray:
        """Training-sample indices assigned to one fold (1-based)."""
        if self.fold_assignments is None:
            raise DataError("this split has no folds")
        return self.train_indices[self.fold_assignments == fold]


def split_dataset(n_samples: int, scheme, rng_seed: int) -> DatasetSplit:
    """Partition sample indices under a calibration scheme.

    The same ``(n_samples, scheme, rng_seed)`` triple always produces the
    same split: one shuffled permutation is cut into contiguous blocks,
    block sizes are the half-up-rounded fractions, and cross-validation
    folds are dealt cyclically over the shuffled training block.

    Examples
    --------
    >>> split = split_dataset(10, SplitScheme(0.6, 0.2), rng_seed=7)
    >>> [len(split.train_indices), len(split.calibration_indices),
    ...  len(split.test_indices)]
    [6, 2, 2]
    """
    if n_samples < 2:
        raise DataError(f"need at least 2 samples to split, got {n_samples}")
    perm = np.random.default_rng(rng_seed).permutation(n_samples)
    n_train = _half_up(scheme.train_frac * n_samples)
    if isinstance(scheme, SplitScheme):
        n_cal = _half_up(scheme.cal_frac * n_samples)
        n_test = n_samples - n_train - n_cal
        if n_train < 1 or n_cal < 1 or n_test < 1:
            raise DataError(
                f"split of {n_samples} samples leaves an empty block "
                f"(train {n_train}, calibration {n_cal}, test {n_test})"
            )
        train = np.sort(perm[:n_train])
        cal = np.sort(perm[n_train : n_train + n_cal])
        test = np.sort(perm[n_train + n_cal :])
        return DatasetSplit(
            scheme_name=scheme.name,
            n_samples=n_samples,
            train_indices=train,
            calibration_indices=cal,
            test_indices=test,
        )
    n_test = n_samples - n_train
    if n_train < 1 or n_test < 1:
        raise DataError(
            f"split of {n_samples} samples leaves an empty block "
            f"(train {n_train}, test {n_test})"
        )
    train_perm = perm[:n_train]
    test = np.sort(perm[n_train:])
    if isinstance(scheme, VanillaScheme):
        train = np.sort(train_perm)
        return DatasetSplit(
            scheme_name=scheme.name,
            n_samples=n_samples,
            train_indices=train,
            calibration_indices=train,
            test_indices=test,
        )
    if isinstance(scheme, CvPlusScheme):
        if scheme.k > n_train:
            raise DataError(
                f"cannot cut {n_train} training samples into {scheme.k} folds"
            )
        folds_perm = np.arange(n_train, dtype=np.int64) % scheme.k + 1
        order = np.argsort(train_perm)
        train = train_perm[order]
        folds = folds_perm[order]
        return DatasetSplit(
            scheme_name=scheme.name,
            n_samples=n_samples,
            train_indices=train,
            calibration_indices=train,
            test_indices=test,
            fold_assignments=folds,
            k=scheme.k,
        )
    raise DataError(f"unknown split scheme {scheme!r}")


def save_dataset(dataset: DsdDataset, path) -> str:
    """Write a dataset container; returns its SHA-256 digest."""
    masses = np.stack([traj.masses for traj in dataset.trajectories])
    meta = {
        "bin_grid": dataset.bin_grid.to_dict(),
        "time_grid": dataset.time_grid.to_dict(),
        "kernel": dataset.kernel.to_dict(),
        "ic_params": dataset.ic_params.to_dict(),
        "seed": dataset.seed,
        "mass_threshold": dataset.mass_threshold,
        "n_trajectories": dataset.n_trajectories,
        "n_below_threshold": dataset.n_below_threshold,
    }
    return container.write_container(path, "dataset", meta, {"masses": masses})


def load_dataset(path) -> DsdDataset:
    """Read a dataset container written by :func:`save_dataset`."""
    _, meta, arrays = container.read_container(path, expected_kind="dataset")
    try:
        grid = BinGrid.from_dict(meta["bin_grid"])
        time_grid = TimeGrid.from_dict(meta["time_grid"])
        kernel = CoalescenceKernel.from_dict(meta["kernel"])
        ic_params = InitialConditionParams.from_dict(meta["ic_params"])
        seed = int(meta["seed"])
        mass_threshold = float(meta["mass_threshold"])
        masses = arrays["masses"]
    except KeyError as exc:
        raise DataError(f"dataset container is missing field {exc}") from exc
    if masses.ndim != 3:
        raise DataError(
            f"dataset masses must be 3-d, got shape {masses.shape}"
        )
    trajectories = tuple(
        DsdTrajectory.from_masses(masses[i], grid) for i in range(masses.shape[0])
    )
    return DsdDataset(
        trajectories=trajectories,
        bin_grid=grid,
        time_grid=time_grid,
        kernel=kernel,
        ic_params=ic_params,
        seed=seed,
        mass_threshold=mass_threshold,
    )
