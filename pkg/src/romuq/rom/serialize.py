"""Model artifact serialization.

Round trips are bit-exact: arrays are written as-is and every derived
quantity is rebuilt deterministically from them on load.
"""

from __future__ import annotations

import numpy as np

from .. import container
from .. import dataset as ds
from ..errors import DataError
from .base import RomModel
from .mlp import AeRom
from .pod import PodRom
from .sindy import SindyModel

__all__ = ["save_model", "load_model"]


def save_model(model: RomModel, path, extra_meta: dict | None = None) -> str:
    """Write a fitted model container; returns its SHA-256 digest."""
    sindy = model.sindy
    meta = {
        "backend": model.backend_name,
        "latent_dim": model.latent_dim,
        "mass_scale": model.mass_scale,
        "bin_grid": model.bin_grid.to_dict(),
        "time_grid": model.time_grid.to_dict(),
        "sindy": None
        if sindy is None
        else {
            "poly_order": sindy.poly_order,
            "threshold": sindy.threshold,
            "ridge": sindy.ridge,
            "n_state": sindy.n_state,
        },
    }
    if extra_meta:
        meta.update(extra_meta)
    arrays = {}
    if sindy is not None:
        arrays["sindy_coefficients"] = sindy.coefficients
    if isinstance(model, PodRom):
        arrays["mean"] = model.mean
        arrays["basis"] = model.basis
        if model.singular_values is not None:
            arrays["singular_values"] = model.singular_values
    elif isinstance(model, AeRom):
        meta["n_encoder_layers"] = len(model.encoder_layers)
        meta["n_decoder_layers"] = len(model.decoder_layers)
        for i, (weight, bias) in enumerate(model.encoder_layers):
            arrays[f"enc_w_{i}"] = weight
            arrays[f"enc_b_{i}"] = bias
        for i, (weight, bias) in enumerate(model.decoder_layers):
            arrays[f"dec_w_{i}"] = weight
            arrays[f"dec_b_{i}"] = bias
    else:
        raise DataError(
            f"cannot serialize model backend {model.backend_name!r}"
        )
    return container.write_container(path, "model", meta, arrays)


def _load_sindy(meta: dict, arrays: dict) -> SindyModel | None:
    spec = meta.get("sindy")
    if spec is None:
        return None
    try:
        return SindyModel(
            coefficients=arrays["sindy_coefficients"],
            n_state=int(spec["n_state"]),
            poly_order=int(spec["poly_order"]),
            threshold=float(spec["threshold"]),
            ridge=float(spec["ridge"]),
        )
    except KeyError as exc:
        raise DataError(f"model container is missing field {exc}") from exc


def load_model(path) -> RomModel:
    """Read a model container written by :func:`save_model`."""
    _, meta, arrays = container.read_container(path, expected_kind="model")
    try:
        backend = meta["backend"]
        bin_grid = ds.BinGrid.from_dict(meta["bin_grid"])
        time_grid = ds.TimeGrid.from_dict(meta["time_grid"])
        mass_scale = float(meta["mass_scale"])
        sindy = _load_sindy(meta, arrays)
        if backend == "pod":
            return PodRom(
                mean=arrays["mean"],
                basis=arrays["basis"],
                sindy=sindy,
                bin_grid=bin_grid,
                time_grid=time_grid,
                mass_scale=mass_scale,
                singular_values=arrays.get("singular_values"),
            )
        if backend == "ae":
            encoder = [
                (arrays[f"enc_w_{i}"], arrays[f"enc_b_{i}"])
                for i in range(int(meta["n_encoder_layers"]))
            ]
            decoder = [
                (arrays[f"dec_w_{i}"], arrays[f"dec_b_{i}"])
                for i in range(int(meta["n_decoder_layers"]))
            ]
            return AeRom(
                encoder_layers=encoder,
                decoder_layers=decoder,
                sindy=sindy,
                bin_grid=bin_grid,
                time_grid=time_grid,
                mass_scale=mass_scale,
            )
    except KeyError as exc:
        raise DataError(f"model container is missing field {exc}") from exc
    raise DataError(f"unknown model backend {backend!r}")
