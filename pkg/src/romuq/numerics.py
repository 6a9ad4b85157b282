"""Deterministic numerical primitives shared by the ROM and conformal layers.

This module collects the small, heavily reused pieces of numerics the rest
of the package is built on: finite-sample conformal quantiles, shrinkage
covariance estimation, Mahalanobis distances, truncated SVD for proper
orthogonal decomposition, finite-difference time derivatives, and a
fixed-step fourth-order Runge-Kutta integrator.

Everything here is pure numpy, seeded by the caller where randomness is
involved (it never is inside this module), and deterministic for fixed
inputs on a fixed platform.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import DataError, NumericalError

__all__ = [
    "ShrunkCovariance",
    "conformal_quantile",
    "conformal_quantile_rank",
    "ledoit_wolf",
    "mahalanobis_sq",
    "truncated_svd",
    "finite_diff_derivative",
    "rk4_step",
    "rk4_rollout",
]

# Absolute jitter added to a covariance that is identically zero, and the
# relative eigenvalue floor applied when a nonzero estimate is numerically
# singular.  The relative floor caps the condition number near 1e7 so the
# inverse stays trustworthy to well below the documented 1e-8 tolerance.
_ZERO_JITTER = 1e-12
_RELATIVE_EIG_FLOOR = 1e-7


def conformal_quantile_rank(n: int, level: float) -> int:
    """Order-statistic rank (1-based) of the finite-sample conformal quantile.

    For ``level >= 0.5`` the rank is ``ceil((n + 1) * level)`` clamped to
    ``n``; for lower-tail levels (``level < 0.5``) it is
    ``floor((n + 1) * level)`` clamped up to 1.  The asymmetry keeps both
    one-sided coverage guarantees conservative under exchangeability.

    Parameters
    ----------
    n : int
        Number of calibration scores, at least 1.
    level : float
        Quantile level in the open interval (0, 1).

    Returns
    -------
    int
        Rank k in ``1..n``; the quantile is the k-th smallest score.
    """
    if n < 1:
        raise DataError("empty calibration set: need at least one score")
    if not 0.0 < level < 1.0:
        raise DataError(f"quantile level must lie in (0, 1), got {level!r}")
    if level >= 0.5:
        rank = math.ceil((n + 1) * level)
        return min(rank, n)
    rank = math.floor((n + 1) * level)
    return max(rank, 1)


def conformal_quantile(scores: np.ndarray, level: float) -> float:
    """Finite-sample-adjusted empirical quantile of nonconformity scores.

    Returns the order statistic selected by :func:`conformal_quantile_rank`,
    always an element of ``scores``.  Using ranks of ``n + 1`` rather than
    ``n`` prices in the as-yet-unseen test point, which is what turns the
    empirical quantile into a coverage guarantee.

    Parameters
    ----------
    scores : array_like, shape (n,)
        Finite calibration scores, in any order.
    level : float
        Quantile level in (0, 1).

    Returns
    -------
    float
        The selected order statistic.

    Examples
    --------
    >>> conformal_quantile(np.arange(1.0, 10.0), 0.9)
    9.0
    """
    arr = np.asarray(scores, dtype=np.float64)
    if arr.ndim != 1:
        raise DataError(f"scores must be one-dimensional, got shape {arr.shape}")
    if arr.size == 0:
        raise DataError("empty calibration set: need at least one score")
    if not np.all(np.isfinite(arr)):
        raise DataError("scores must be finite")
    rank = conformal_quantile_rank(arr.size, level)
    return float(np.sort(arr)[rank - 1])


def _as_residual_matrix(residuals: np.ndarray, min_rows: int = 2) -> np.ndarray:
    arr = np.asarray(residuals, dtype=np.float64)
    if arr.ndim != 2:
        raise DataError(
            f"residuals must be a 2-d matrix (samples x coordinates), got shape {arr.shape}"
        )
    if arr.shape[0] < min_rows:
        raise DataError(
            f"need at least {min_rows} residual rows, got {arr.shape[0]}"
        )
    if not np.all(np.isfinite(arr)):
        raise DataError("residuals must be finite")
    return arr


@dataclass(frozen=True)
class ShrunkCovariance:
    """Shrinkage covariance estimate with its precomputed inverse.

    Attributes
    ----------
    matrix : ndarray, shape (d, d)
        Symmetric positive-definite covariance estimate.
    shrinkage_intensity : float
        Convex weight in [0, 1] placed on the scaled-identity target.
    inverse : ndarray, shape (d, d)
        Inverse of ``matrix``, computed once via Cholesky.
    jittered : bool
        True when the raw estimate was numerically singular and an
        eigenvalue floor was applied to restore positive definiteness.
    """

    matrix: np.ndarray
    shrinkage_intensity: float
    inverse: np.ndarray
    jittered: bool
    _cho_lower: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        for name in ("matrix", "inverse", "_cho_lower"):
            arr = getattr(self, name)
            if arr is not None:
                arr.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def from_matrix(
        cls, matrix: np.ndarray, shrinkage_intensity: float, jittered: bool
    ) -> "ShrunkCovariance":
        """Rebuild the derived fields (inverse, Cholesky) from a stored matrix."""
        arr = np.array(matrix, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise DataError(f"covariance must be square, got shape {arr.shape}")
        cho = _strict_cholesky(arr)
        if cho is None:
            raise DataError("stored covariance is not positive definite")
        inverse = scipy.linalg.cho_solve((cho, True), np.eye(arr.shape[0]))
        inverse = (inverse + inverse.T) / 2.0
        return cls(
            matrix=arr,
            shrinkage_intensity=float(shrinkage_intensity),
            inverse=inverse,
            jittered=bool(jittered),
            _cho_lower=cho,
        )


def _strict_cholesky(matrix: np.ndarray):
    """Lower Cholesky factor, or None when the matrix is not safely PD.

    Rejects factorizations whose pivot ratio implies a condition number
    beyond ~1e12, where a nominally successful factorization of a singular
    matrix would yield a useless inverse.
    """
    try:
        cho = scipy.linalg.cholesky(matrix, lower=True)
    except scipy.linalg.LinAlgError:
        return None
    pivots = np.diag(cho)
    if pivots.min() <= 0 or (pivots.min() / pivots.max()) ** 2 < 1e-12:
        return None
    return cho


def ledoit_wolf(residuals: np.ndarray) -> ShrunkCovariance:
    """Ledoit-Wolf shrinkage covariance of centered residual rows.

    Implements the analytic optimal shrinkage toward a scaled identity:
    with population covariance ``S`` of the centered rows, shrinkage target
    ``mu * I`` where ``mu = tr(S) / d``, the intensity is
    ``rho = min(beta2, delta2) / delta2`` with
    ``delta2 = ||S - mu I||_F^2 / d`` and ``beta2`` the usual average
    squared Frobenius distance between per-sample outer products and ``S``.
    The estimate is ``rho * mu * I + (1 - rho) * S``.

    A covariance that is identically zero (all residual rows equal) is
    replaced by ``1e-12 * I`` with the ``jittered`` flag set; a nonzero but
    numerically singular estimate gets its eigenvalues floored at a small
    fraction of the largest one instead, also flagged.

    Parameters
    ----------
    residuals : array_like, shape (n, d)
        At least two rows of finite residuals.

    Returns
    -------
    ShrunkCovariance
    """
    arr = _as_residual_matrix(residuals)
    n, d = arr.shape
    centered = arr - arr.mean(axis=0)
    emp = centered.T @ centered / n
    emp = (emp + emp.T) / 2.0

    mu = np.trace(emp) / d
    flat_delta = emp.copy()
    flat_delta.flat[:: d + 1] -= mu
    delta2 = float((flat_delta ** 2).sum()) / d
    sq = centered ** 2
    beta2 = float((sq.T @ sq).sum()) / n - float((emp ** 2).sum())
    beta2 /= d * n
    if delta2 == 0.0:
        rho = 0.0
    else:
        rho = min(max(beta2, 0.0), delta2) / delta2

    shrunk = (1.0 - rho) * emp
    shrunk.flat[:: d + 1] += rho * mu
    shrunk = (shrunk + shrunk.T) / 2.0

    jittered = False
    if not shrunk.any():
        shrunk = np.eye(d) * _ZERO_JITTER
        jittered = True
    cho = _strict_cholesky(shrunk)
    if cho is None:
        # Floor the spectrum instead of failing: keeps the matrix usable
        # while the flag tells callers the data did not support a full-rank
        # estimate.
        eigvals, eigvecs = np.linalg.eigh(shrunk)
        floor = max(_ZERO_JITTER, _RELATIVE_EIG_FLOOR * float(eigvals[-1]))
        eigvals = np.maximum(eigvals, floor)
        shrunk = (eigvecs * eigvals) @ eigvecs.T
        shrunk = (shrunk + shrunk.T) / 2.0
        cho = scipy.linalg.cholesky(shrunk, lower=True)
        jittered = True

    inverse = scipy.linalg.cho_solve((cho, True), np.eye(d))
    inverse = (inverse + inverse.T) / 2.0
    return ShrunkCovariance(
        matrix=shrunk,
        shrinkage_intensity=float(rho),
        inverse=inverse,
        jittered=jittered,
        _cho_lower=cho,
    )


def mahalanobis_sq(residual: np.ndarray, cov: ShrunkCovariance) -> float:
    """Squared Mahalanobis distance of one residual vector.

    Solves against the stored Cholesky factor rather than multiplying by the
    inverse, which keeps the result exactly zero for a zero residual and
    nonnegative in general.

    Parameters
    ----------
    residual : array_like, shape (d,)
        Finite residual vector matching ``cov.dim``.
    cov : ShrunkCovariance

    Returns
    -------
    float
    """
    r = np.asarray(residual, dtype=np.float64)
    if r.ndim != 1 or r.shape[0] != cov.dim:
        raise DataError(
            f"residual has shape {r.shape}, expected ({cov.dim},)"
        )
    if not np.all(np.isfinite(r)):
        raise DataError("residual must be finite")
    y = scipy.linalg.solve_triangular(_cho_of(cov), r, lower=True)
    return float(y @ y)


def _cho_of(cov: ShrunkCovariance) -> np.ndarray:
    if cov._cho_lower is not None:
        return cov._cho_lower
    cho = _strict_cholesky(cov.matrix)
    if cho is None:
        raise DataError("covariance matrix is not positive definite")
    return cho


def mahalanobis_sq_many(residuals: np.ndarray, cov: ShrunkCovariance) -> np.ndarray:
    """Squared Mahalanobis distances for a batch of residual rows."""
    arr = np.asarray(residuals, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != cov.dim:
        raise DataError(
            f"residuals have shape {arr.shape}, expected (n, {cov.dim})"
        )
    if not np.all(np.isfinite(arr)):
        raise DataError("residuals must be finite")
    y = scipy.linalg.solve_triangular(_cho_of(cov), arr.T, lower=True)
    return np.einsum("ij,ij->j", y, y)


def truncated_svd(data: np.ndarray, rank: int):
    """Mean-centered truncated SVD basis of snapshot rows.

    Parameters
    ----------
    data : array_like, shape (n, d)
        Snapshot matrix, one sample per row.
    rank : int
        Number of leading right-singular vectors to keep,
        ``1 <= rank <= min(n, d)``.

    Returns
    -------
    basis : ndarray, shape (d, rank)
        Orthonormal columns spanning the leading subspace, each column
        sign-fixed so its largest-magnitude entry is positive.
    singular_values : ndarray, shape (min(n, d),)
        All singular values of the centered data, descending.
    mean : ndarray, shape (d,)
        Row mean that was subtracted.
    """
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 2:
        raise DataError(f"data must be a 2-d matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DataError("data must be finite")
    max_rank = min(arr.shape)
    if not 1 <= rank <= max_rank:
        raise DataError(
            f"rank must lie in 1..{max_rank} for data of shape {arr.shape}, got {rank}"
        )
    mean = arr.mean(axis=0)
    _, svals, vt = np.linalg.svd(arr - mean, full_matrices=False)
    basis = vt[:rank].T.copy()
    # Deterministic sign convention: largest-magnitude entry of each mode
    # is positive, with ties broken by the earliest index (argmax).
    for j in range(rank):
        pivot = np.argmax(np.abs(basis[:, j]))
        if basis[pivot, j] < 0:
            basis[:, j] = -basis[:, j]
    return basis, svals, mean


def finite_diff_derivative(trajectory: np.ndarray, dt: float) -> np.ndarray:
    """Time derivative of a sampled trajectory by finite differences.

    Central differences in the interior, first-order one-sided differences
    at both endpoints; this is numpy's ``gradient`` with ``edge_order=1``.

    Parameters
    ----------
    trajectory : array_like, shape (n_steps, ...) with n_steps >= 2
        Uniformly sampled values; time along the first axis.
    dt : float
        Positive step between consecutive rows.

    Returns
    -------
    ndarray
        Same shape as ``trajectory``.
    """
    arr = np.asarray(trajectory, dtype=np.float64)
    if arr.shape[0] < 2:
        raise DataError("need at least two timesteps to differentiate")
    if not dt > 0:
        raise DataError(f"dt must be positive, got {dt!r}")
    if not np.all(np.isfinite(arr)):
        raise DataError("trajectory must be finite")
    return np.gradient(arr, dt, axis=0, edge_order=1)


def rk4_step(func, state: np.ndarray, dt: float) -> np.ndarray:
    """One classical fourth-order Runge-Kutta step of ``dz/dt = func(z)``.

    Parameters
    ----------
    func : callable
        Maps a state array to its time derivative, same shape.
    state : array_like
        Current state.
    dt : float
        Positive step size.

    Returns
    -------
    ndarray
        The advanced state.

    Raises
    ------
    NumericalError
        If the advanced state contains non-finite entries.
    """
    z = np.asarray(state, dtype=np.float64)
    if not dt > 0:
        raise DataError(f"dt must be positive, got {dt!r}")
    k1 = np.asarray(func(z))
    k2 = np.asarray(func(z + 0.5 * dt * k1))
    k3 = np.asarray(func(z + 0.5 * dt * k2))
    k4 = np.asarray(func(z + dt * k3))
    out = z + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise NumericalError("integration step produced non-finite state")
    return out


def rk4_rollout(func, state0: np.ndarray, dt: float, n_steps: int):
    """Fixed-step RK4 rollout that tolerates divergence of individual rows.

    Integrates a batch of initial states for ``n_steps - 1`` steps.  Rows
    whose state turns non-finite are frozen (their remaining entries are set
    to NaN) and reported through the returned mask instead of aborting the
    whole batch.

    Parameters
    ----------
    func : callable
        Batched vector field mapping (n, d) states to (n, d) derivatives.
    state0 : array_like, shape (n, d)
        Initial states.
    dt : float
        Positive step size.
    n_steps : int
        Total number of stored states including the initial one, >= 1.

    Returns
    -------
    states : ndarray, shape (n_steps, n, d)
    diverged : ndarray of bool, shape (n,)
        True for rows that left the finite domain at some step.
    """
    z0 = np.atleast_2d(np.asarray(state0, dtype=np.float64))
    if not dt > 0:
        raise DataError(f"dt must be positive, got {dt!r}")
    if n_steps < 1:
        raise DataError(f"n_steps must be at least 1, got {n_steps}")
    n, d = z0.shape
    out = np.full((n_steps, n, d), np.nan)
    out[0] = z0
    alive = np.all(np.isfinite(z0), axis=1)
    z = np.where(alive[:, None], z0, 0.0)
    # Divergence is detected, not avoided: rows are allowed to overflow to
    # inf/nan and are then frozen, so those warnings carry no information.
    with np.errstate(over="ignore", invalid="ignore"):
        for step in range(1, n_steps):
            k1 = np.asarray(func(z))
            k2 = np.asarray(func(z + 0.5 * dt * k1))
            k3 = np.asarray(func(z + 0.5 * dt * k2))
            k4 = np.asarray(func(z + dt * k3))
            z_next = z + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            ok = np.all(np.isfinite(z_next), axis=1)
            alive = alive & ok
            z = np.where(alive[:, None], z_next, 0.0)
            out[step, alive] = z_next[alive]
    return out, ~alive
