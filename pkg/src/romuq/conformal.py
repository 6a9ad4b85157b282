"""Post hoc conformal calibration of reduced-order-model predictions.

Three nonconformity targets are supported, each calibrated independently
per timestep (and per bin where applicable):

- ``reconstruction``: signed per-bin error of encode-then-decode,
- ``end_to_end``: signed per-bin error of the full encode/rollout/decode
  pipeline against the true shapes,
- ``latent_dynamics``: latent-space error of the rollout against the
  encoded truth, scored with a Mahalanobis norm under a per-timestep
  Ledoit-Wolf covariance.

Band targets use tailwise signed-residual quantiles: the band at level
``1 - alpha`` spans the conservative ``alpha/2`` and ``1 - alpha/2``
empirical quantiles of the calibration residuals, so asymmetric error
distributions get asymmetric bands.  All prediction sets are closed:
boundary points count as covered.

Calibration methods are vanilla (calibrate on the training data itself; no
guarantee, included as the baseline), split (held-out calibration data;
finite-sample marginal coverage), and a cross-validation scheme that pools
out-of-fold residuals from k fold models and pairs them with a final model
refitted on the full training split.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass

import numpy as np

from . import container
from . import dataset as ds
from . import numerics
from .dataset import CvPlusScheme, SplitScheme, VanillaScheme
from .errors import DataError
from .rom import PodConfig, fit_pod_rom
from .rom.base import RomModel

__all__ = [
    "UqTarget",
    "Vanilla",
    "Split",
    "CvPlus",
    "ResidualSet",
    "CalibrationBand",
    "CalibrationEllipsoid",
    "CpResult",
    "compute_residuals",
    "calibrate_band",
    "calibrate_ellipsoid",
    "run_cp_pipeline",
    "save_calibration",
    "load_calibration",
]

# The calibration method fixes both the data split and the calibration
# semantics, so the method types are the split schemes.
Vanilla = VanillaScheme
Split = SplitScheme
CvPlus = CvPlusScheme


class UqTarget(str, enum.Enum):
    """What the uncertainty statement is about."""

    RECONSTRUCTION = "reconstruction"
    LATENT_DYNAMICS = "latent_dynamics"
    END_TO_END = "end_to_end"


@dataclass(frozen=True)
class ResidualSet:
    """Signed residuals of one target on one set of trajectories.

    Attributes
    ----------
    target : UqTarget
    values : ndarray, shape (n_kept, n_steps, width)
        Per-sample residual trajectories; ``width`` is the bin count for
        band targets and the latent dimension for the latent target.
    excluded : tuple of int
        Positions (within the input trajectory sequence) whose rollout
        diverged; their residuals are not in ``values``.
    """

    target: UqTarget
    values: np.ndarray
    excluded: tuple = ()

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)
        object.__setattr__(self, "target", UqTarget(self.target))
        if arr.ndim != 3:
            raise DataError(
                f"residual values must be 3-d (samples, steps, width), "
                f"got shape {arr.shape}"
            )
        if not np.all(np.isfinite(arr)):
            raise DataError("residual values must be finite")

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    @property
    def n_steps(self) -> int:
        return self.values.shape[1]

    def per_timestep(self, step: int) -> np.ndarray:
        """Residual matrix (samples x width) at one timestep."""
        return self.values[:, step, :]


def _stack_trajectories(trajectories):
    if not trajectories:
        raise DataError("no trajectories given")
    shapes = np.stack([traj.shapes for traj in trajectories])
    scaled = np.stack([traj.scaled_mass for traj in trajectories])
    return shapes, scaled


def compute_residuals(
    model: RomModel, trajectories, target: UqTarget
) -> ResidualSet:
    """Signed residuals of the model on normalized trajectories.

    Rollout-based targets drop samples whose latent dynamics diverge; the
    dropped positions are recorded on the result and a warning is issued.

    Parameters
    ----------
    model : RomModel
    trajectories : sequence of NormalizedDsdTrajectory
    target : UqTarget or str

    Returns
    -------
    ResidualSet
    """
    target = UqTarget(target)
    shapes, scaled = _stack_trajectories(trajectories)
    n, n_steps, n_bins = shapes.shape
    if n_steps != model.time_grid.n_steps:
        raise DataError(
            f"trajectories have {n_steps} steps, model expects "
            f"{model.time_grid.n_steps}"
        )
    flat_rows = shapes.reshape(n * n_steps, n_bins)
    coords = model._encode_rows(model._check_rows(flat_rows))
    latent_true = np.concatenate(
        [coords, scaled.reshape(n * n_steps, 1)], axis=1
    )

    if target is UqTarget.RECONSTRUCTION:
        decoded = model.decode_batch(latent_true)
        values = (flat_rows - decoded).reshape(n, n_steps, n_bins)
        return ResidualSet(target=target, values=values)

    latent_0 = latent_true.reshape(n, n_steps, -1)[:, 0, :]
    rolled, diverged = model.rollout_batch(latent_0)  # (steps, n, dim)
    kept = ~diverged
    excluded = tuple(int(i) for i in np.flatnonzero(diverged))
    if excluded:
        warnings.warn(
            f"{len(excluded)} of {n} rollouts diverged and were excluded "
            f"from the {target.value} residual set",
            stacklevel=2,
        )
        if not kept.any():
            raise DataError("every rollout diverged; no residuals to return")

    if target is UqTarget.LATENT_DYNAMICS:
        pred = rolled.transpose(1, 0, 2)[kept]
        true = latent_true.reshape(n, n_steps, -1)[kept]
        return ResidualSet(target=target, values=true - pred, excluded=excluded)

    # End to end: decode the rollout and compare against the true shapes.
    rolled_kept = rolled[:, kept, :]
    n_kept = int(kept.sum())
    decoded = model.decode_batch(
        rolled_kept.reshape(n_steps * n_kept, -1)
    ).reshape(n_steps, n_kept, n_bins)
    values = shapes[kept] - decoded.transpose(1, 0, 2)
    return ResidualSet(target=target, values=values, excluded=excluded)


@dataclass(frozen=True)
class CalibrationBand:
    """Per-(timestep, bin) closed residual band.

    A prediction set at one cell is
    ``[prediction + lower_offsets, prediction + upper_offsets]``; offsets
    are the tailwise conformal quantiles of the calibration residuals.
    """

    target: UqTarget
    method: str
    alpha: float
    n_calibration: int
    lower_offsets: np.ndarray
    upper_offsets: np.ndarray
    n_excluded: int = 0

    def __post_init__(self):
        lower = np.asarray(self.lower_offsets, dtype=np.float64)
        upper = np.asarray(self.upper_offsets, dtype=np.float64)
        lower.setflags(write=False)
        upper.setflags(write=False)
        object.__setattr__(self, "lower_offsets", lower)
        object.__setattr__(self, "upper_offsets", upper)
        object.__setattr__(self, "target", UqTarget(self.target))
        if not 0 < self.alpha < 1:
            raise DataError(f"alpha must lie in (0, 1), got {self.alpha!r}")
        if self.n_calibration < 1:
            raise DataError("empty calibration set")
        if lower.shape != upper.shape or lower.ndim != 2:
            raise DataError("offset matrices must be equal-shape and 2-d")
        if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
            raise DataError("offsets must be finite")
        if np.any(lower > upper):
            raise DataError("lower offsets must not exceed upper offsets")

    @property
    def n_steps(self) -> int:
        return self.lower_offsets.shape[0]

    def covers(self, residuals: np.ndarray) -> np.ndarray:
        """Closed-interval membership of residuals, per cell.

        Parameters
        ----------
        residuals : ndarray, shape (..., n_steps, width)

        Returns
        -------
        ndarray of bool, same shape
        """
        arr = np.asarray(residuals, dtype=np.float64)
        if arr.shape[-2:] != self.lower_offsets.shape:
            raise DataError(
                f"residuals of shape {arr.shape} do not match offsets of "
                f"shape {self.lower_offsets.shape}"
            )
        return (arr >= self.lower_offsets) & (arr <= self.upper_offsets)

    def contains(
        self, prediction: np.ndarray, truth: np.ndarray, step: int
    ) -> np.ndarray:
        """Per-bin membership of one truth row at one timestep (closed)."""
        if not 0 <= step < self.n_steps:
            raise DataError(f"timestep {step} outside 0..{self.n_steps - 1}")
        residual = np.asarray(truth, dtype=np.float64) - np.asarray(
            prediction, dtype=np.float64
        )
        if residual.shape != (self.lower_offsets.shape[1],):
            raise DataError(
                f"prediction/truth rows must have shape "
                f"({self.lower_offsets.shape[1]},), got {residual.shape}"
            )
        return (residual >= self.lower_offsets[step]) & (
            residual <= self.upper_offsets[step]
        )


@dataclass(frozen=True)
class CalibrationEllipsoid:
    """Per-timestep Mahalanobis ball for latent residuals.

    The set at timestep ``t`` is
    ``{z : (z - prediction)^T inv(Sigma_t) (z - prediction) <= threshold_t}``
    with ``Sigma_t`` a Ledoit-Wolf covariance of the calibration residuals
    and the threshold their conformal score quantile (closed set).
    """

    target: UqTarget
    method: str
    alpha: float
    n_calibration: int
    covariances: tuple
    thresholds: np.ndarray
    n_excluded: int = 0

    def __post_init__(self):
        thresholds = np.asarray(self.thresholds, dtype=np.float64)
        thresholds.setflags(write=False)
        object.__setattr__(self, "thresholds", thresholds)
        object.__setattr__(self, "covariances", tuple(self.covariances))
        object.__setattr__(self, "target", UqTarget(self.target))
        if not 0 < self.alpha < 1:
            raise DataError(f"alpha must lie in (0, 1), got {self.alpha!r}")
        if self.n_calibration < 2:
            raise DataError("need at least two calibration samples")
        if thresholds.ndim != 1 or len(self.covariances) != thresholds.shape[0]:
            raise DataError("one covariance and threshold per timestep required")
        if not np.all(np.isfinite(thresholds)) or thresholds.min(initial=0.0) < 0:
            raise DataError("thresholds must be finite and nonnegative")

    @property
    def n_steps(self) -> int:
        return self.thresholds.shape[0]

    @property
    def latent_dim(self) -> int:
        return self.covariances[0].dim

    def scores(self, residuals: np.ndarray) -> np.ndarray:
        """Mahalanobis scores of residuals, per (sample, timestep).

        Parameters
        ----------
        residuals : ndarray, shape (n, n_steps, latent_dim)

        Returns
        -------
        ndarray, shape (n, n_steps)
        """
        arr = np.asarray(residuals, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[1] != self.n_steps or arr.shape[2] != self.latent_dim:
            raise DataError(
                f"residuals must have shape (n, {self.n_steps}, "
                f"{self.latent_dim}), got {arr.shape}"
            )
        out = np.empty(arr.shape[:2])
        for t, cov in enumerate(self.covariances):
            out[:, t] = numerics.mahalanobis_sq_many(arr[:, t, :], cov)
        return out

    def covers(self, residuals: np.ndarray) -> np.ndarray:
        """Closed-set membership per (sample, timestep)."""
        return self.scores(residuals) <= self.thresholds

    def contains(
        self, prediction: np.ndarray, truth: np.ndarray, step: int
    ) -> bool:
        """Whether one latent truth lies in the set at one timestep."""
        if not 0 <= step < self.n_steps:
            raise DataError(f"timestep {step} outside 0..{self.n_steps - 1}")
        residual = np.asarray(truth, dtype=np.float64) - np.asarray(
            prediction, dtype=np.float64
        )
        score = numerics.mahalanobis_sq(residual, self.covariances[step])
        return bool(score <= self.thresholds[step])


def _residual_values(residuals) -> tuple:
    if isinstance(residuals, ResidualSet):
        return residuals.values, residuals.target, len(residuals.excluded)
    arr = np.asarray(residuals, dtype=np.float64)
    if arr.ndim != 3:
        raise DataError(
            f"residuals must be 3-d (samples, steps, width), got shape {arr.shape}"
        )
    if not np.all(np.isfinite(arr)):
        raise DataError("residuals must be finite")
    return arr, None, 0


def calibrate_band(
    residuals, alpha: float, method: str = "split", target=None
) -> CalibrationBand:
    """Tailwise conformal band from signed residuals.

    Per (timestep, coordinate) cell, the offsets are the conservative
    empirical quantiles of the calibration residuals at levels ``alpha/2``
    (lower tail) and ``1 - alpha/2`` (upper tail), using ranks of ``n + 1``.

    Parameters
    ----------
    residuals : ResidualSet or ndarray, shape (n, n_steps, width)
    alpha : float
        Miscoverage level in (0, 1).
    method : str
        Label recorded on the output.

    Returns
    -------
    CalibrationBand
    """
    values, set_target, n_excluded = _residual_values(residuals)
    if target is None:
        target = set_target if set_target is not None else UqTarget.RECONSTRUCTION
    if not 0 < alpha < 1:
        raise DataError(f"alpha must lie in (0, 1), got {alpha!r}")
    n = values.shape[0]
    if n < 1:
        raise DataError("empty calibration set")
    lower_rank = numerics.conformal_quantile_rank(n, alpha / 2.0)
    upper_rank = numerics.conformal_quantile_rank(n, 1.0 - alpha / 2.0)
    ordered = np.sort(values, axis=0)
    return CalibrationBand(
        target=target,
        method=method,
        alpha=float(alpha),
        n_calibration=n,
        lower_offsets=ordered[lower_rank - 1],
        upper_offsets=ordered[upper_rank - 1],
        n_excluded=n_excluded,
    )


def calibrate_ellipsoid(
    residuals, alpha: float, method: str = "split", target=None
) -> CalibrationEllipsoid:
    """Per-timestep Mahalanobis calibration of latent residuals.

    For each timestep, estimates a Ledoit-Wolf covariance of the residual
    rows (sorted into a canonical order first, so the result is bitwise
    independent of sample order), scores every calibration row, and takes
    the conformal ``1 - alpha`` quantile of the scores as the threshold.

    Parameters
    ----------
    residuals : ResidualSet or ndarray, shape (n, n_steps, latent_dim)
    alpha : float
    method : str

    Returns
    -------
    CalibrationEllipsoid
    """
    values, set_target, n_excluded = _residual_values(residuals)
    if target is None:
        target = set_target if set_target is not None else UqTarget.LATENT_DYNAMICS
    if not 0 < alpha < 1:
        raise DataError(f"alpha must lie in (0, 1), got {alpha!r}")
    n, n_steps, dim = values.shape
    if n < 2:
        raise DataError("need at least two calibration samples")
    covariances = []
    thresholds = np.empty(n_steps)
    for t in range(n_steps):
        rows = values[:, t, :]
        canonical = rows[np.lexsort(rows.T[::-1])]
        cov = numerics.ledoit_wolf(canonical)
        scores = numerics.mahalanobis_sq_many(canonical, cov)
        thresholds[t] = numerics.conformal_quantile(scores, 1.0 - alpha)
        covariances.append(cov)
    return CalibrationEllipsoid(
        target=target,
        method=method,
        alpha=float(alpha),
        n_calibration=n,
        covariances=tuple(covariances),
        thresholds=thresholds,
        n_excluded=n_excluded,
    )


def calibrate(residuals, alpha: float, method: str = "split"):
    """Band or ellipsoid calibration, chosen by the residual target."""
    if not isinstance(residuals, ResidualSet):
        raise DataError("calibrate needs a ResidualSet to pick the set shape")
    if residuals.target is UqTarget.LATENT_DYNAMICS:
        return calibrate_ellipsoid(residuals, alpha, method=method)
    return calibrate_band(residuals, alpha, method=method)


# --------------------------------------------------------------------------
# Pipeline: split, fit, residuals, calibrate
# --------------------------------------------------------------------------

# Fixed stream labels hung off the run seed; never renumber these, or saved
# artifacts stop being reproducible from their recorded configuration.
_STREAM_SPLIT = 1
_STREAM_FIT = 2


def split_seed(seed: int) -> np.random.SeedSequence:
    """Seed stream that drives the dataset split for run seed ``seed``."""
    return np.random.SeedSequence([int(seed), _STREAM_SPLIT])


def fit_seed(seed: int, fold: int = 0) -> np.random.SeedSequence:
    """Seed stream for fitting; fold 0 is the full-train model."""
    return np.random.SeedSequence([int(seed), _STREAM_FIT, int(fold)])


@dataclass(frozen=True)
class CpResult:
    """Everything one (method, target) calibration run produced."""

    method: str
    target: UqTarget
    model: RomModel
    fold_models: tuple
    split: ds.DatasetSplit
    mass_scale: float
    calibration_residuals: ResidualSet
    calibrations: dict

    def calibration_for(self, alpha: float):
        try:
            return self.calibrations[alpha]
        except KeyError:
            raise DataError(
                f"no calibration at alpha={alpha!r}; "
                f"available: {sorted(self.calibrations)}"
            ) from None


def _fit_backend(backend, train_norm, bin_grid, time_grid, mass_scale,
                 rom_config, seed):
    if backend == "pod":
        return fit_pod_rom(
            train_norm,
            bin_grid,
            time_grid,
            mass_scale,
            config=rom_config if rom_config is not None else PodConfig(),
            rng_seed=seed,
        )
    if backend == "ae":
        from .rom import ae

        return ae.fit_ae_rom(
            train_norm,
            bin_grid,
            time_grid,
            mass_scale,
            config=rom_config if rom_config is not None else ae.AeConfig(),
            rng_seed=seed,
        )
    raise DataError(f"unknown model backend {backend!r}")


def _fit_fold_job(args):
    (fold, backend, train_norm, bin_grid, time_grid, mass_scale,
     rom_config, seed) = args
    model = _fit_backend(
        backend, train_norm, bin_grid, time_grid, mass_scale, rom_config,
        fit_seed(seed, fold),
    )
    return fold, model


def fit_models(
    normalized,
    split: ds.DatasetSplit,
    bin_grid: ds.BinGrid,
    time_grid: ds.TimeGrid,
    mass_scale: float,
    backend: str = "pod",
    rom_config=None,
    seed: int = 0,
    workers: int = 1,
):
    """Fit the full-train model plus, for cross calibration, one per fold.

    Returns
    -------
    model : RomModel
    fold_models : dict mapping fold id (1-based) to RomModel
    """
    train_norm = [normalized[i] for i in split.train_indices]
    model = _fit_backend(
        backend, train_norm, bin_grid, time_grid, mass_scale, rom_config,
        fit_seed(seed, 0),
    )
    fold_models = {}
    if split.scheme_name == "cv_plus":
        jobs = []
        for fold in range(1, split.k + 1):
            keep = split.fold_assignments != fold
            fold_train = [normalized[i] for i in split.train_indices[keep]]
            jobs.append(
                (fold, backend, fold_train, bin_grid, time_grid, mass_scale,
                 rom_config, seed)
            )
        if workers > 1:
            from concurrent.futures import ProcessPoolExecutor

            with ProcessPoolExecutor(max_workers=workers) as pool:
                for fold, fitted in pool.map(_fit_fold_job, jobs):
                    fold_models[fold] = fitted
        else:
            for job in jobs:
                fold, fitted = _fit_fold_job(job)
                fold_models[fold] = fitted
    return model, fold_models


def pooled_fold_residuals(
    normalized, split: ds.DatasetSplit, fold_models: dict, target: UqTarget
) -> ResidualSet:
    """Out-of-fold residuals pooled over all folds, in sample-index order."""
    target = UqTarget(target)
    rows = []
    excluded = []
    for fold in range(1, split.k + 1):
        fold_idx = split.fold_indices(fold)
        fold_trajs = [normalized[i] for i in fold_idx]
        res = compute_residuals(fold_models[fold], fold_trajs, target)
        kept_local = np.delete(np.arange(len(fold_trajs)), list(res.excluded))
        for row, local in enumerate(kept_local):
            rows.append((int(fold_idx[local]), res.values[row]))
        excluded.extend(int(fold_idx[e]) for e in res.excluded)
    rows.sort(key=lambda pair: pair[0])
    values = np.stack([value for _, value in rows])
    return ResidualSet(
        target=target, values=values, excluded=tuple(sorted(excluded))
    )


def run_cp_pipeline(
    dsd_dataset: ds.DsdDataset,
    target: UqTarget,
    method,
    alphas,
    rom_config=None,
    backend: str = "pod",
    seed: int = 0,
    workers: int = 1,
) -> CpResult:
    """Full calibration pipeline on one dataset.

    Filters low-mass trajectories, splits by the method's scheme, fixes the
    mass scale on the training split, fits the model(s), computes
    calibration residuals per the method, and calibrates a prediction set
    for every requested alpha.

    Parameters
    ----------
    dsd_dataset : DsdDataset
    target : UqTarget or str
    method : Vanilla, Split, or CvPlus instance, or one of their names
    alphas : float or iterable of float
    rom_config : PodConfig or AeConfig, optional
    backend : "pod" or "ae"
    seed : int
        Run seed; the split and fit streams are derived from it.
    workers : int
        Process count for fold fitting.

    Returns
    -------
    CpResult
    """
    target = UqTarget(target)
    if isinstance(method, str):
        by_name = {s.name: s for s in (Vanilla, Split, CvPlus)}
        if method not in by_name:
            raise DataError(f"unknown conformal method {method!r}")
        method = by_name[method]()
    if isinstance(alphas, float):
        alphas = (alphas,)
    alphas = tuple(float(a) for a in alphas)
    if not alphas:
        raise DataError("need at least one alpha")

    kept, _ = ds.filter_by_mass(
        dsd_dataset.trajectories, dsd_dataset.mass_threshold
    )
    if len(kept) < 2:
        raise DataError("fewer than two trajectories above the mass threshold")
    split = ds.split_dataset(len(kept), method, split_seed(seed))
    train_raw = [kept[i] for i in split.train_indices]
    _, mass_scale = ds.normalize_dataset(
        train_raw, mass_threshold=dsd_dataset.mass_threshold
    )
    normalized, _ = ds.normalize_dataset(
        kept, mass_scale=mass_scale, mass_threshold=dsd_dataset.mass_threshold
    )

    model, fold_models = fit_models(
        normalized, split, dsd_dataset.bin_grid, dsd_dataset.time_grid,
        mass_scale, backend=backend, rom_config=rom_config, seed=seed,
        workers=workers,
    )

    if split.scheme_name == "cv_plus":
        residuals = pooled_fold_residuals(normalized, split, fold_models, target)
    else:
        cal_trajs = [normalized[i] for i in split.calibration_indices]
        residuals = compute_residuals(model, cal_trajs, target)

    calibrations = {
        alpha: calibrate(residuals, alpha, method=split.scheme_name)
        for alpha in alphas
    }
    return CpResult(
        method=split.scheme_name,
        target=target,
        model=model,
        fold_models=tuple(fold_models[f] for f in sorted(fold_models)),
        split=split,
        mass_scale=mass_scale,
        calibration_residuals=residuals,
        calibrations=calibrations,
    )


# --------------------------------------------------------------------------
# Serialization
# --------------------------------------------------------------------------


def save_calibration(calibration, path, extra_meta: dict | None = None) -> str:
    """Write a calibration container; returns its SHA-256 digest."""
    meta = {
        "target": calibration.target.value,
        "method": calibration.method,
        "alpha": calibration.alpha,
        "n_calibration": calibration.n_calibration,
        "n_excluded": calibration.n_excluded,
    }
    if extra_meta:
        meta.update(extra_meta)
    if isinstance(calibration, CalibrationBand):
        meta["set_shape"] = "band"
        arrays = {
            "lower_offsets": calibration.lower_offsets,
            "upper_offsets": calibration.upper_offsets,
        }
    elif isinstance(calibration, CalibrationEllipsoid):
        meta["set_shape"] = "ellipsoid"
        meta["shrinkage_intensities"] = [
            cov.shrinkage_intensity for cov in calibration.covariances
        ]
        meta["jittered"] = [bool(cov.jittered) for cov in calibration.covariances]
        arrays = {
            "covariances": np.stack(
                [cov.matrix for cov in calibration.covariances]
            ),
            "thresholds": calibration.thresholds,
        }
    else:
        raise DataError(f"cannot serialize calibration {type(calibration)!r}")
    return container.write_container(path, "calibration", meta, arrays)


def load_calibration(path):
    """Read a calibration container written by :func:`save_calibration`."""
    _, meta, arrays = container.read_container(path, expected_kind="calibration")
    try:
        shape = meta["set_shape"]
        common = {
            "target": UqTarget(meta["target"]),
            "method": meta["method"],
            "alpha": float(meta["alpha"]),
            "n_calibration": int(meta["n_calibration"]),
            "n_excluded": int(meta.get("n_excluded", 0)),
        }
        if shape == "band":
            return CalibrationBand(
                lower_offsets=arrays["lower_offsets"],
                upper_offsets=arrays["upper_offsets"],
                **common,
            )
        if shape == "ellipsoid":
            matrices = arrays["covariances"]
            covariances = tuple(
                numerics.ShrunkCovariance.from_matrix(
                    matrices[t],
                    meta["shrinkage_intensities"][t],
                    meta["jittered"][t],
                )
                for t in range(matrices.shape[0])
            )
            return CalibrationEllipsoid(
                covariances=covariances,
                thresholds=arrays["thresholds"],
                **common,
            )
    except KeyError as exc:
        raise DataError(f"calibration container is missing field {exc}") from exc
    raise DataError(f"unknown calibration set shape {shape!r}")
