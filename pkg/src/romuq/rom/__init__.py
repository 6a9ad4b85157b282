"""Reduced-order models: POD or autoencoder shape coding + SINDy dynamics.

The autoencoder trainer lives in :mod:`romuq.rom.ae` and needs torch
(install the ``ae`` extra); fitted autoencoder artifacts load and evaluate
without it.
"""

from .base import LatentState, LatentTrajectory, RomModel
from .mlp import AeRom
from .pod import PodConfig, PodRom, fit_pod_rom
from .serialize import load_model, save_model
from .sindy import (
    SindyModel,
    n_polynomial_features,
    polynomial_feature_names,
    polynomial_features,
    sindy_fit,
)

__all__ = [
    "LatentState",
    "LatentTrajectory",
    "RomModel",
    "PodConfig",
    "PodRom",
    "AeRom",
    "fit_pod_rom",
    "SindyModel",
    "sindy_fit",
    "polynomial_features",
    "polynomial_feature_names",
    "n_polynomial_features",
    "load_model",
    "save_model",
    "ae_available",
]


def ae_available() -> bool:
    """Whether the torch-based autoencoder trainer can be imported."""
    try:
        import torch  # noqa: F401
    except ImportError:
        return False
    return True
