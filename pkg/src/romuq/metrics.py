"""Coverage and sharpness metrics, plus CSV/SVG export.

Coverage is evaluated per calibration cell: per (timestep, bin) for band
targets and per timestep for the latent ellipsoid.  Summary statistics
(mean, population standard deviation, median over cells) are recomputed
from the per-cell table on demand, never stored, so the two can not drift
apart.

Sharpness is a width-versus-time series: the integral of the band height
over the grid for band targets, and the ellipsoid volume (or its
covariance-free scale factor) for the latent target.

CSV files are written with 17 significant digits so that reading them back
reproduces the doubles exactly.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import dataset as ds
from . import svg
from .conformal import (
    CalibrationBand,
    CalibrationEllipsoid,
    ResidualSet,
    UqTarget,
    compute_residuals,
)
from .errors import DataError

__all__ = [
    "CoverageReport",
    "WidthSeries",
    "empirical_coverage",
    "coverage_from_residuals",
    "band_width_integral",
    "ellipsoid_volume",
    "ellipsoid_geometry",
    "write_coverage_csv",
    "write_summary_csv",
    "write_width_csv",
    "write_width_chart",
]

COVERAGE_COLUMNS = ("method", "target", "alpha", "timestep_s", "coordinate", "coverage")
SUMMARY_COLUMNS = ("method", "target", "alpha", "mean", "std", "median")
WIDTH_COLUMNS = ("method", "target", "alpha", "timestep_s", "width_kind", "width")

# The coordinate column is the bin index for band targets; -1 marks a joint
# set over all latent coordinates (the ellipsoid has one cell per timestep).
JOINT_COORDINATE = -1


def _fmt(value: float) -> str:
    return f"{value:.17g}"


@dataclass(frozen=True)
class CoverageReport:
    """Per-cell empirical coverage of one calibrated set on test data."""

    target: UqTarget
    method: str
    alpha: float
    n_test: int
    cell_coverage: np.ndarray
    n_excluded: int = 0

    def __post_init__(self):
        arr = np.asarray(self.cell_coverage, dtype=np.float64)
        arr.setflags(write=False)
        object.__setattr__(self, "cell_coverage", arr)
        object.__setattr__(self, "target", UqTarget(self.target))
        if arr.ndim != 2:
            raise DataError(
                f"cell_coverage must be 2-d (steps, cells), got shape {arr.shape}"
            )
        if self.n_test < 1:
            raise DataError("empty test set")
        if arr.min(initial=0.0) < 0 or arr.max(initial=1.0) > 1:
            raise DataError("coverage values must lie in [0, 1]")

    @property
    def n_steps(self) -> int:
        return self.cell_coverage.shape[0]

    @property
    def mean(self) -> float:
        return float(self.cell_coverage.mean())

    @property
    def std(self) -> float:
        return float(self.cell_coverage.std())

    @property
    def median(self) -> float:
        return float(np.median(self.cell_coverage))


@dataclass(frozen=True)
class WidthSeries:
    """One sharpness measure over time."""

    target: UqTarget
    method: str
    alpha: float
    width_kind: str
    widths: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.widths, dtype=np.float64)
        arr.setflags(write=False)
        object.__setattr__(self, "widths", arr)
        object.__setattr__(self, "target", UqTarget(self.target))
        if arr.ndim != 1:
            raise DataError(f"widths must be a vector, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise DataError("widths must be finite")
        if arr.min(initial=0.0) < 0:
            raise DataError("widths must be nonnegative")


def coverage_from_residuals(calibration, residuals: ResidualSet) -> CoverageReport:
    """Empirical coverage of precomputed test residuals."""
    if residuals.target is not calibration.target:
        raise DataError(
            f"calibration targets {calibration.target.value}, residuals are "
            f"{residuals.target.value}"
        )
    if residuals.n_samples < 1:
        raise DataError("empty test set")
    covered = calibration.covers(residuals.values)
    if covered.ndim == 3:
        cells = covered.mean(axis=0)
    else:
        cells = covered.mean(axis=0)[:, None]
    return CoverageReport(
        target=calibration.target,
        method=calibration.method,
        alpha=calibration.alpha,
        n_test=residuals.n_samples,
        cell_coverage=cells,
        n_excluded=len(residuals.excluded),
    )


def empirical_coverage(calibration, model, test_trajectories) -> CoverageReport:
    """Per-cell coverage of a calibrated set on normalized test trajectories.

    Divergent test rollouts are excluded from the evaluation and counted in
    the report, mirroring how calibration residuals are assembled.

    Parameters
    ----------
    calibration : CalibrationBand or CalibrationEllipsoid
    model : RomModel
    test_trajectories : sequence of NormalizedDsdTrajectory

    Returns
    -------
    CoverageReport
    """
    residuals = compute_residuals(model, test_trajectories, calibration.target)
    return coverage_from_residuals(calibration, residuals)


def band_width_integral(
    band: CalibrationBand,
    grid: ds.BinGrid,
    reference_scaled_mass: np.ndarray | None = None,
) -> WidthSeries:
    """Integral of the band height over the radius grid, per timestep.

    With ``reference_scaled_mass`` (test-set scaled masses, shape (n, steps)
    or (steps,)), the integral is divided by the mean scaled mass at each
    timestep, yielding the mass-relative variant.
    """
    if not isinstance(band, CalibrationBand):
        raise DataError("band_width_integral needs a CalibrationBand")
    if band.lower_offsets.shape[1] != grid.n_bins:
        raise DataError(
            f"band covers {band.lower_offsets.shape[1]} bins, grid has {grid.n_bins}"
        )
    widths = (band.upper_offsets - band.lower_offsets).sum(axis=1) * grid.d_ln_r
    kind = "band_integral"
    if reference_scaled_mass is not None:
        ref = np.asarray(reference_scaled_mass, dtype=np.float64)
        if ref.ndim == 2:
            ref = ref.mean(axis=0)
        if ref.shape != (band.n_steps,):
            raise DataError(
                f"reference masses must have {band.n_steps} steps, got {ref.shape}"
            )
        if ref.min(initial=1.0) <= 0:
            raise DataError("reference masses must be positive")
        widths = widths / ref
        kind = "band_integral_mass_scaled"
    return WidthSeries(
        target=band.target,
        method=band.method,
        alpha=band.alpha,
        width_kind=kind,
        widths=widths,
    )


def _unit_ball_volume(dim: int) -> float:
    return math.pi ** (dim / 2.0) / math.gamma(dim / 2.0 + 1.0)


def ellipsoid_volume(ellipsoid: CalibrationEllipsoid) -> WidthSeries:
    """Volume of the latent prediction ellipsoid per timestep.

    ``V_m * q^{m/2} * sqrt(det Sigma)`` with ``V_m`` the unit-ball volume,
    ``q`` the score threshold, and ``Sigma`` the calibration covariance.
    """
    if not isinstance(ellipsoid, CalibrationEllipsoid):
        raise DataError("ellipsoid_volume needs a CalibrationEllipsoid")
    dim = ellipsoid.latent_dim
    unit = _unit_ball_volume(dim)
    widths = np.empty(ellipsoid.n_steps)
    for t, cov in enumerate(ellipsoid.covariances):
        sign, logdet = np.linalg.slogdet(cov.matrix)
        if sign <= 0:
            raise DataError(f"covariance at step {t} is not positive definite")
        widths[t] = (
            unit
            * ellipsoid.thresholds[t] ** (dim / 2.0)
            * math.exp(0.5 * logdet)
        )
    return WidthSeries(
        target=ellipsoid.target,
        method=ellipsoid.method,
        alpha=ellipsoid.alpha,
        width_kind="ellipsoid_volume",
        widths=widths,
    )


def ellipsoid_geometry(ellipsoid: CalibrationEllipsoid) -> WidthSeries:
    """Covariance-free ellipsoid scale factor ``q^{m/2}`` per timestep.

    Isolates how the conformal threshold inflates the set, independent of
    how the covariance stretches it.
    """
    if not isinstance(ellipsoid, CalibrationEllipsoid):
        raise DataError("ellipsoid_geometry needs a CalibrationEllipsoid")
    dim = ellipsoid.latent_dim
    widths = ellipsoid.thresholds ** (dim / 2.0)
    return WidthSeries(
        target=ellipsoid.target,
        method=ellipsoid.method,
        alpha=ellipsoid.alpha,
        width_kind="ellipsoid_geometry",
        widths=widths,
    )


def _open_csv(path):
    return open(path, "w", newline="", encoding="utf-8")


def write_coverage_csv(reports, time_grid: ds.TimeGrid, path) -> None:
    """Per-cell coverage rows: method,target,alpha,timestep_s,coordinate,coverage."""
    with _open_csv(path) as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(COVERAGE_COLUMNS)
        for report in reports:
            times = time_grid.times
            joint = report.cell_coverage.shape[1] == 1 and report.target is (
                UqTarget.LATENT_DYNAMICS
            )
            for t in range(report.n_steps):
                for c in range(report.cell_coverage.shape[1]):
                    coordinate = JOINT_COORDINATE if joint else c
                    writer.writerow(
                        [
                            report.method,
                            report.target.value,
                            _fmt(report.alpha),
                            _fmt(times[t]),
                            coordinate,
                            _fmt(report.cell_coverage[t, c]),
                        ]
                    )


def write_summary_csv(reports, path) -> None:
    """Summary rows: method,target,alpha,mean,std,median."""
    with _open_csv(path) as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SUMMARY_COLUMNS)
        for report in reports:
            writer.writerow(
                [
                    report.method,
                    report.target.value,
                    _fmt(report.alpha),
                    _fmt(report.mean),
                    _fmt(report.std),
                    _fmt(report.median),
                ]
            )


def write_width_csv(series_list, time_grid: ds.TimeGrid, path) -> None:
    """Width rows: method,target,alpha,timestep_s,width_kind,width."""
    with _open_csv(path) as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(WIDTH_COLUMNS)
        for series in series_list:
            times = time_grid.times
            if series.widths.shape[0] != times.shape[0]:
                raise DataError(
                    "width series length disagrees with the time grid"
                )
            for t in range(series.widths.shape[0]):
                writer.writerow(
                    [
                        series.method,
                        series.target.value,
                        _fmt(series.alpha),
                        _fmt(times[t]),
                        series.width_kind,
                        _fmt(series.widths[t]),
                    ]
                )


def write_width_chart(series_list, time_grid: ds.TimeGrid, title: str, path,
                      normalize: bool = False) -> None:
    """Width-versus-time SVG chart for a set of series.

    With ``normalize`` each series is scaled to peak 1, which keeps series
    of very different magnitudes (band integrals versus ellipsoid volumes)
    readable in one panel; the legend marks the scaling.
    """
    chart_series = []
    for series in series_list:
        label = f"{series.target.value} a={series.alpha:g}"
        values = series.widths
        if normalize:
            peak = values.max()
            if peak > 0:
                values = values / peak
        chart_series.append((label, time_grid.times, values))
    y_label = "width (peak-normalized)" if normalize else "width"
    document = svg.line_chart(chart_series, title, "time [s]", y_label)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(document)
