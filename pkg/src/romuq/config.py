"""Run configuration: defaults, INI-file parsing, and validation.

A run is fully described by one :class:`RunConfig`.  Config files use the
INI format read by :mod:`configparser` with the sections ``[dataset]``,
``[rom]``, ``[conformal]`` and ``[output]``; every key has a default, so an
empty file (or none at all) is a valid full configuration.  Unknown
sections or keys are rejected rather than ignored: a typo should fail
loudly, not silently run the defaults.
"""

from __future__ import annotations

import configparser
import dataclasses
import math
from dataclasses import dataclass

from .errors import UsageError

__all__ = ["RunConfig", "load_config", "config_to_dict"]

_METHODS = ("vanilla", "split", "cv_plus")
_TARGETS = ("reconstruction", "latent_dynamics", "end_to_end")
_BACKENDS = ("pod", "ae")


@dataclass(frozen=True)
class RunConfig:
    """Everything a pipeline run needs, with paper-faithful defaults."""

    # [dataset]
    n_samples: int = 618
    seed: int = 20260819
    n_bins: int = 64
    r_min_um: float = 1.0
    r_max_um: float = 5000.0
    t_end_s: float = 600.0
    dt_s: float = 10.0
    kernel_kind: str = "constant"
    kernel_coefficient: float = 4e-11
    n_modes: int = 2
    loc_min_um: float = 8.0
    loc_max_um: float = 30.0
    width_min: float = 0.15
    width_max: float = 0.45
    mass_min: float = 2e-4
    mass_max: float = 2e-3
    mass_threshold: float = 1e-5

    # [rom]
    backend: str = "pod"
    latent_dim: int = 4
    poly_order: int = 2
    sindy_threshold: float = 0.05
    sindy_ridge: float = 1e-6
    derivative_noise: float = 1e-3

    # [conformal]
    methods: tuple = ("vanilla", "split", "cv_plus")
    targets: tuple = ("reconstruction", "latent_dynamics", "end_to_end")
    alphas: tuple = (0.1, 0.05, 0.02, 0.01)
    train_frac: float = 0.8
    split_train_frac: float = 0.6
    split_cal_frac: float = 0.2
    cv_folds: int = 20

    # [output]
    out_dir: str = "romuq_out"

    def __post_init__(self):
        if self.n_samples < 2:
            raise UsageError("n_samples must be at least 2")
        if self.n_bins < 2:
            raise UsageError("n_bins must be at least 2")
        if not 0 < self.r_min_um < self.r_max_um:
            raise UsageError("need 0 < r_min_um < r_max_um")
        if not self.dt_s > 0 or not self.t_end_s >= self.dt_s:
            raise UsageError("need dt_s > 0 and t_end_s >= dt_s")
        steps = self.t_end_s / self.dt_s
        if abs(steps - round(steps)) > 1e-9:
            raise UsageError("t_end_s must be an integer multiple of dt_s")
        if self.kernel_kind not in ("constant", "product"):
            raise UsageError("kernel_kind must be 'constant' or 'product'")
        if self.backend not in _BACKENDS:
            raise UsageError(f"backend must be one of {_BACKENDS}")
        for method in self.methods:
            if method not in _METHODS:
                raise UsageError(f"unknown method {method!r}; choose from {_METHODS}")
        for target in self.targets:
            if target not in _TARGETS:
                raise UsageError(f"unknown target {target!r}; choose from {_TARGETS}")
        if not self.alphas:
            raise UsageError("need at least one alpha")
        for alpha in self.alphas:
            if not 0 < alpha < 1:
                raise UsageError(f"alpha must lie in (0, 1), got {alpha!r}")
        if len(set(self.methods)) != len(self.methods):
            raise UsageError("duplicate methods in configuration")
        if len(set(self.alphas)) != len(self.alphas):
            raise UsageError("duplicate alphas in configuration")

    # Derived simulation objects -----------------------------------------

    def bin_grid(self):
        from . import dataset as ds

        return ds.BinGrid(
            n_bins=self.n_bins,
            ln_r_min=math.log(self.r_min_um),
            ln_r_max=math.log(self.r_max_um),
        )

    def time_grid(self):
        from . import dataset as ds

        return ds.TimeGrid(
            t0=0.0, dt=self.dt_s, n_steps=int(round(self.t_end_s / self.dt_s)) + 1
        )

    def kernel(self):
        from . import dataset as ds

        return ds.CoalescenceKernel(
            kind=self.kernel_kind, coefficient=self.kernel_coefficient
        )

    def ic_params(self):
        from . import dataset as ds

        return ds.InitialConditionParams(
            n_modes=self.n_modes,
            loc_range=(math.log(self.loc_min_um), math.log(self.loc_max_um)),
            width_range=(self.width_min, self.width_max),
            mass_range=(self.mass_min, self.mass_max),
        )

    def method_scheme(self, name: str):
        from . import conformal as cp

        if name == "vanilla":
            return cp.Vanilla(train_frac=self.train_frac)
        if name == "split":
            return cp.Split(
                train_frac=self.split_train_frac, cal_frac=self.split_cal_frac
            )
        if name == "cv_plus":
            return cp.CvPlus(train_frac=self.train_frac, k=self.cv_folds)
        raise UsageError(f"unknown method {name!r}")

    def rom_config(self):
        if self.backend == "pod":
            from .rom import PodConfig

            return PodConfig(
                latent_dim=self.latent_dim,
                poly_order=self.poly_order,
                sindy_threshold=self.sindy_threshold,
                sindy_ridge=self.sindy_ridge,
                derivative_noise=self.derivative_noise,
            )
        from .rom import ae

        return ae.AeConfig(
            latent_dim=self.latent_dim,
            poly_order=self.poly_order,
            sindy_threshold=self.sindy_threshold,
        )


_SECTIONS = {
    "dataset": (
        "n_samples", "seed", "n_bins", "r_min_um", "r_max_um", "t_end_s",
        "dt_s", "kernel_kind", "kernel_coefficient", "n_modes", "loc_min_um",
        "loc_max_um", "width_min", "width_max", "mass_min", "mass_max",
        "mass_threshold",
    ),
    "rom": (
        "backend", "latent_dim", "poly_order", "sindy_threshold",
        "sindy_ridge", "derivative_noise",
    ),
    "conformal": (
        "methods", "targets", "alphas", "train_frac", "split_train_frac",
        "split_cal_frac", "cv_folds",
    ),
    "output": ("out_dir",),
}

def _coerce(name: str, raw: str):
    default = getattr(RunConfig, name)
    kind = type(default)
    raw = raw.strip()
    try:
        if kind is bool:
            return raw.lower() in ("1", "true", "yes", "on")
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is tuple:
            items = [item.strip() for item in raw.split(",") if item.strip()]
            if all(isinstance(v, float) for v in default):
                return tuple(float(item) for item in items)
            return tuple(items)
        return raw
    except ValueError as exc:
        raise UsageError(f"config key {name!r}: cannot parse {raw!r}") from exc


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Build a RunConfig from an optional INI file plus overrides.

    Parameters
    ----------
    path : path-like, optional
        INI file; missing file is a usage error, no file at all means
        defaults.
    overrides : dict, optional
        Field overrides applied after the file (CLI flags).

    Returns
    -------
    RunConfig
    """
    values = {}
    if path is not None:
        parser = configparser.ConfigParser()
        try:
            with open(path, "r", encoding="utf-8") as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise UsageError(f"cannot read config file {path}: {exc}") from exc
        except configparser.Error as exc:
            raise UsageError(f"malformed config file {path}: {exc}") from exc
        for section in parser.sections():
            if section not in _SECTIONS:
                raise UsageError(
                    f"unknown config section [{section}]; "
                    f"expected one of {sorted(_SECTIONS)}"
                )
            for key, raw in parser.items(section):
                if key not in _SECTIONS[section]:
                    raise UsageError(
                        f"unknown key {key!r} in section [{section}]"
                    )
                values[key] = _coerce(key, raw)
    if overrides:
        values.update(overrides)
    return RunConfig(**values)


def config_to_dict(config: RunConfig) -> dict:
    """JSON-ready mapping of the full configuration (for artifact headers)."""
    out = dataclasses.asdict(config)
    for key, value in out.items():
        if isinstance(value, tuple):
            out[key] = list(value)
    return out
