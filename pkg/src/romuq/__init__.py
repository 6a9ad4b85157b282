"""Conformal-prediction uncertainty quantification for latent-space ROMs.

The package generates a synthetic droplet-coalescence dataset, fits a
reduced-order model (POD or autoencoder shape coding plus SINDy latent
dynamics), and wraps the model's predictions in distribution-free
prediction sets: per-bin residual bands for reconstruction and end-to-end
forecasts, and per-timestep Mahalanobis ellipsoids for the latent state.

Typical library use::

    from romuq import conformal, dataset, metrics

    data = dataset.generate_dataset(n_samples=618, seed=7)
    result = conformal.run_cp_pipeline(
        data, "end_to_end", conformal.Split(), alphas=(0.1, 0.05))
    band = result.calibration_for(0.1)

The ``romuq`` command line drives the same pipeline in stages
(generate, train, calibrate, evaluate, report) with file artifacts.
"""

from . import conformal, container, dataset, metrics, numerics, rom
from .errors import DataError, NotFittedError, NumericalError, UsageError

__version__ = "0.1.0"

__all__ = [
    "conformal",
    "container",
    "dataset",
    "metrics",
    "numerics",
    "rom",
    "DataError",
    "NotFittedError",
    "NumericalError",
    "UsageError",
    "__version__",
]
