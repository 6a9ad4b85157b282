"""Autoencoder ROM inference in plain numpy.

Training the autoencoder backend needs torch (see :mod:`romuq.rom.ae`), but
a fitted model is just a stack of dense layers; this module evaluates it
with numpy so saved autoencoder artifacts work on installs without the
``ae`` extra.  Hidden layers use ReLU; the decoder ends in a softmax, which
makes its raw output already nonnegative with unit sum.
"""

from __future__ import annotations

import numpy as np

from .. import dataset as ds
from ..errors import DataError
from .base import RomModel
from .sindy import SindyModel

__all__ = ["AeRom", "relu_mlp_forward", "softmax"]


def softmax(values: np.ndarray) -> np.ndarray:
    """Row-wise softmax, stabilized by the row maximum."""
    arr = np.asarray(values, dtype=np.float64)
    shifted = arr - arr.max(axis=-1, keepdims=True)
    out = np.exp(shifted)
    return out / out.sum(axis=-1, keepdims=True)


def relu_mlp_forward(rows: np.ndarray, layers) -> np.ndarray:
    """Apply dense layers with ReLU between them (none after the last).

    ``layers`` is a sequence of ``(weight, bias)`` pairs with torch-style
    ``(out_features, in_features)`` weights.
    """
    h = np.asarray(rows, dtype=np.float64)
    last = len(layers) - 1
    for i, (weight, bias) in enumerate(layers):
        h = h @ weight.T + bias
        if i != last:
            np.maximum(h, 0.0, out=h)
    return h


def _check_layers(layers, n_in: int, n_out: int, label: str):
    if not layers:
        raise DataError(f"{label} must have at least one layer")
    current = n_in
    checked = []
    for weight, bias in layers:
        weight = np.asarray(weight, dtype=np.float64)
        bias = np.asarray(bias, dtype=np.float64)
        if weight.ndim != 2 or bias.shape != (weight.shape[0],):
            raise DataError(f"{label} layer arrays are malformed")
        if weight.shape[1] != current:
            raise DataError(
                f"{label} layer expects {weight.shape[1]} inputs, got {current}"
            )
        if not (np.all(np.isfinite(weight)) and np.all(np.isfinite(bias))):
            raise DataError(f"{label} weights must be finite")
        weight.setflags(write=False)
        bias.setflags(write=False)
        checked.append((weight, bias))
        current = weight.shape[0]
    if current != n_out:
        raise DataError(f"{label} produces {current} outputs, expected {n_out}")
    return tuple(checked)


class AeRom(RomModel):
    """Fitted autoencoder ROM evaluated with numpy."""

    backend_name = "ae"

    def __init__(
        self,
        encoder_layers,
        decoder_layers,
        sindy: SindyModel | None,
        bin_grid: ds.BinGrid,
        time_grid: ds.TimeGrid,
        mass_scale: float,
    ):
        latent_dim = np.asarray(encoder_layers[-1][0]).shape[0] + 1
        super().__init__(
            sindy=sindy,
            bin_grid=bin_grid,
            time_grid=time_grid,
            mass_scale=mass_scale,
            latent_dim=latent_dim,
        )
        self.encoder_layers = _check_layers(
            encoder_layers, bin_grid.n_bins, latent_dim - 1, "encoder"
        )
        self.decoder_layers = _check_layers(
            decoder_layers, latent_dim - 1, bin_grid.n_bins, "decoder"
        )

    def _encode_rows(self, rows: np.ndarray) -> np.ndarray:
        return relu_mlp_forward(rows, self.encoder_layers)

    def _decode_coords(self, coords: np.ndarray) -> np.ndarray:
        return softmax(relu_mlp_forward(coords, self.decoder_layers))
