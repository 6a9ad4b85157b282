"""Pure-numpy coagulation integrator.

This is the fallback backend for :mod:`romuq._kernels` and the semantic
reference for the compiled one: both advance the same mass-ledger ODE with
forward Euler under the same sub-step controller, so they agree to roundoff.

State is the vector of per-bin liquid masses ``M`` (kg per kg of air).
With number mixing ratios ``n_i = M_i / m_i`` (``m_i`` the droplet mass of
bin ``i``), each unordered bin pair ``(i, j)`` collides at rate
``K_ij n_i n_j`` (half that on the diagonal), removing one droplet from each
partner bin and depositing the combined mass ``m_i + m_j`` into the
precomputed target bin whose droplet volume is nearest the coalesced volume.
Mass is conserved identically by this bookkeeping.

Sub-step control: each macro step of ``dt`` is covered by Euler sub-steps
sized so that at most ``number_fraction`` of the current droplet number is
consumed per sub-step, halved further until no bin goes negative.
"""

import numpy as np

from ..errors import NumericalError

BACKEND_NAME = "python"

_MAX_HALVINGS = 64
_MAX_SUBSTEPS = 1_000_000


def integrate_trajectory(
    m0,
    kernel_matrix,
    drop_mass,
    pair_i,
    pair_j,
    pair_target,
    pair_kernel,
    pair_mass_sum,
    dt,
    n_steps,
    number_fraction,
):
    """Integrate bin masses over a uniform time grid.

    Parameters
    ----------
    m0 : ndarray, shape (nb,)
        Initial bin masses, nonnegative.
    kernel_matrix : ndarray, shape (nb, nb)
        Symmetric collision kernel ``K_ij``.
    drop_mass : ndarray, shape (nb,)
        Droplet mass of each bin, positive.
    pair_i, pair_j, pair_target : ndarray of int64, shape (np,)
        Upper-triangle pair indices (``i <= j``) and the deposit bin of each
        pair.
    pair_kernel : ndarray, shape (np,)
        ``K_ij`` per pair, pre-halved on diagonal pairs.
    pair_mass_sum : ndarray, shape (np,)
        ``m_i + m_j`` per pair.
    dt : float
        Macro step, positive.
    n_steps : int
        Number of stored states including the initial one.
    number_fraction : float
        Accuracy cap on the fraction of total droplet number consumed per
        Euler sub-step.

    Returns
    -------
    ndarray, shape (n_steps, nb)
        Bin masses at each macro step.
    """
    nb = m0.shape[0]
    out = np.empty((n_steps, nb))
    state = m0.astype(np.float64, copy=True)
    out[0] = state
    neg_floor = -1e-16 * float(state.sum())
    for step in range(1, n_steps):
        remaining = dt
        substeps = 0
        while remaining > 0.0:
            substeps += 1
            if substeps > _MAX_SUBSTEPS:
                raise NumericalError(
                    f"coalescence integration stalled at output step {step}"
                )
            number = state / drop_mass
            loss = state * (kernel_matrix @ number)
            pair_rate = pair_kernel * number[pair_i] * number[pair_j]
            event_rate = float(pair_rate.sum())
            gain = np.bincount(
                pair_target, weights=pair_mass_sum * pair_rate, minlength=nb
            )
            delta = gain - loss
            if event_rate > 0.0:
                h = min(
                    remaining,
                    number_fraction * float(number.sum()) / event_rate,
                )
            else:
                h = remaining
            for _ in range(_MAX_HALVINGS):
                trial = state + h * delta
                if trial.min() >= neg_floor:
                    break
                h *= 0.5
            else:
                raise NumericalError(
                    f"coalescence integration diverged at output step {step}"
                )
            np.maximum(trial, 0.0, out=trial)
            if not np.all(np.isfinite(trial)):
                raise NumericalError(
                    f"coalescence integration produced non-finite masses at output step {step}"
                )
            state = trial
            remaining -= h
        out[step] = state
    return out
