"""Sparse polynomial regression of latent dynamics (SINDy with STLSQ).

Fits ``dz/dt = Theta(z) Xi`` where ``Theta`` is a polynomial feature library
over the latent coordinates and ``Xi`` is made sparse by sequentially
thresholded least squares: alternate hard-thresholding of small
coefficients with a refit on the surviving support until the support stops
changing.  Coefficients below the threshold are exactly zero in the result,
never merely small.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from ..errors import DataError, NumericalError

__all__ = [
    "SindyModel",
    "sindy_fit",
    "polynomial_features",
    "polynomial_feature_names",
    "n_polynomial_features",
]


def n_polynomial_features(n_state: int, poly_order: int) -> int:
    """Size of the polynomial library: C(n_state + poly_order, poly_order)."""
    if n_state < 1 or poly_order < 0:
        raise DataError("need n_state >= 1 and poly_order >= 0")
    return math.comb(n_state + poly_order, poly_order)


def _exponent_tuples(n_state: int, poly_order: int):
    """Monomial index tuples in graded lexicographic order."""
    for degree in range(poly_order + 1):
        yield from itertools.combinations_with_replacement(range(n_state), degree)


def polynomial_features(states: np.ndarray, poly_order: int) -> np.ndarray:
    """Evaluate the polynomial library on a batch of state vectors.

    Features appear in graded lexicographic order: the constant, then the
    coordinates, then products of pairs ``z_i z_j`` with ``i <= j``, and so
    on up to ``poly_order``.

    Parameters
    ----------
    states : array_like, shape (n, m) or (m,)
    poly_order : int

    Returns
    -------
    ndarray, shape (n, C(m + poly_order, poly_order))
    """
    arr = np.atleast_2d(np.asarray(states, dtype=np.float64))
    if arr.ndim != 2:
        raise DataError(f"states must be at most 2-d, got shape {arr.shape}")
    n, m = arr.shape
    columns = np.empty((n, n_polynomial_features(m, poly_order)))
    for col, combo in enumerate(_exponent_tuples(m, poly_order)):
        value = np.ones(n)
        for idx in combo:
            value = value * arr[:, idx]
        columns[:, col] = value
    return columns


def polynomial_feature_names(n_state: int, poly_order: int) -> tuple:
    """Human-readable names matching :func:`polynomial_features` columns."""
    names = []
    for combo in _exponent_tuples(n_state, poly_order):
        if not combo:
            names.append("1")
            continue
        parts = []
        for idx, repeat in sorted(
            {i: combo.count(i) for i in combo}.items()
        ):
            parts.append(f"z{idx + 1}" if repeat == 1 else f"z{idx + 1}^{repeat}")
        names.append("*".join(parts))
    return tuple(names)


@dataclass(frozen=True)
class SindyModel:
    """Fitted sparse polynomial dynamics.

    Attributes
    ----------
    coefficients : ndarray, shape (n_features, n_targets)
        Library coefficients ``Xi``; entries smaller in magnitude than
        ``threshold`` are exactly zero.
    n_state : int
        Dimension of the state the library is evaluated on.
    poly_order, threshold, ridge : hyperparameters used in the fit.
    """

    coefficients: np.ndarray
    n_state: int
    poly_order: int
    threshold: float
    ridge: float
    feature_names: tuple = field(default=())

    def __post_init__(self):
        coef = np.asarray(self.coefficients, dtype=np.float64)
        coef.setflags(write=False)
        object.__setattr__(self, "coefficients", coef)
        expected = n_polynomial_features(self.n_state, self.poly_order)
        if coef.ndim != 2 or coef.shape[0] != expected:
            raise DataError(
                f"coefficients must have {expected} rows for n_state="
                f"{self.n_state}, poly_order={self.poly_order}; got shape {coef.shape}"
            )
        if not np.all(np.isfinite(coef)):
            raise DataError("coefficients must be finite")
        nonzero = coef[coef != 0.0]
        if nonzero.size and np.abs(nonzero).min() < self.threshold:
            raise DataError(
                "coefficients below the sparsity threshold must be exactly zero"
            )
        if not self.feature_names:
            object.__setattr__(
                self,
                "feature_names",
                polynomial_feature_names(self.n_state, self.poly_order),
            )

    @property
    def n_features(self) -> int:
        return self.coefficients.shape[0]

    @property
    def n_targets(self) -> int:
        return self.coefficients.shape[1]

    @property
    def complexity(self) -> int:
        """Number of active (nonzero) coefficients."""
        return int(np.count_nonzero(self.coefficients))

    def predict(self, states: np.ndarray) -> np.ndarray:
        """Evaluate the fitted right-hand side on a batch of states."""
        arr = np.atleast_2d(np.asarray(states, dtype=np.float64))
        if arr.shape[1] != self.n_state:
            raise DataError(
                f"states must have {self.n_state} columns, got {arr.shape[1]}"
            )
        return polynomial_features(arr, self.poly_order) @ self.coefficients

    def equations(self, precision: int = 4) -> tuple:
        """Printable right-hand sides, one string per target."""
        lines = []
        for t in range(self.n_targets):
            terms = [
                f"{coef:.{precision}g} {name}" if name != "1" else f"{coef:.{precision}g}"
                for coef, name in zip(self.coefficients[:, t], self.feature_names)
                if coef != 0.0
            ]
            lines.append(" + ".join(terms) if terms else "0")
        return tuple(lines)


def _ridge_solve(theta: np.ndarray, targets: np.ndarray, ridge: float) -> np.ndarray:
    if ridge > 0.0:
        gram = theta.T @ theta
        gram.flat[:: gram.shape[0] + 1] += ridge
        return np.linalg.solve(gram, theta.T @ targets)
    solution, _, rank, _ = np.linalg.lstsq(theta, targets, rcond=None)
    if rank < theta.shape[1]:
        raise NumericalError(
            "design matrix is rank-deficient with ridge=0; "
            "set ridge > 0 to regularize"
        )
    return solution


def sindy_fit(
    states: np.ndarray,
    derivatives: np.ndarray,
    poly_order: int = 2,
    threshold: float = 0.05,
    ridge: float = 1e-6,
    max_iter: int = 20,
) -> SindyModel:
    """Fit sparse polynomial dynamics by sequentially thresholded least squares.

    Parameters
    ----------
    states : array_like, shape (n, m)
        Latent states (rows are samples).
    derivatives : array_like, shape (n, q)
        Time-derivative targets aligned with ``states``.
    poly_order : int
        Library degree, at least 1.
    threshold : float
        Sparsity threshold; coefficients below it (in magnitude) are pruned.
    ridge : float
        Tikhonov regularization of each least-squares solve; with 0 a
        rank-deficient library raises instead of silently regularizing.
    max_iter : int
        Upper bound on threshold/refit rounds.

    Returns
    -------
    SindyModel
    """
    Z = np.asarray(states, dtype=np.float64)
    dZ = np.asarray(derivatives, dtype=np.float64)
    if Z.ndim != 2 or dZ.ndim != 2:
        raise DataError("states and derivatives must be 2-d matrices")
    if Z.shape[0] != dZ.shape[0]:
        raise DataError(
            f"states and derivatives disagree on sample count: "
            f"{Z.shape[0]} vs {dZ.shape[0]}"
        )
    if not (np.all(np.isfinite(Z)) and np.all(np.isfinite(dZ))):
        raise DataError("states and derivatives must be finite")
    if poly_order < 1:
        raise DataError(f"poly_order must be at least 1, got {poly_order}")
    if threshold < 0 or ridge < 0:
        raise DataError("threshold and ridge must be nonnegative")
    n, m = Z.shape
    theta = polynomial_features(Z, poly_order)
    n_features = theta.shape[1]
    if n < n_features:
        warnings.warn(
            f"only {n} samples for {n_features} library features; "
            "the fit is underdetermined",
            stacklevel=2,
        )
    coefficients = np.zeros((n_features, dZ.shape[1]))
    for t in range(dZ.shape[1]):
        beta = _ridge_solve(theta, dZ[:, t], ridge)
        previous_support = None
        for _ in range(max_iter):
            support = np.abs(beta) >= threshold
            if previous_support is not None and np.array_equal(
                support, previous_support
            ):
                break
            previous_support = support
            beta = np.zeros(n_features)
            if not support.any():
                break
            beta[support] = _ridge_solve(theta[:, support], dZ[:, t], ridge)
        beta[np.abs(beta) < threshold] = 0.0
        coefficients[:, t] = beta
    return SindyModel(
        coefficients=coefficients,
        n_state=m,
        poly_order=poly_order,
        threshold=threshold,
        ridge=ridge,
    )
