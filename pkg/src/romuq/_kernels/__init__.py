"""Coagulation integrator backends.

The hot loop of dataset generation lives here in two interchangeable
implementations: a compiled Cython extension and a pure-numpy fallback.
Import-time selection prefers the compiled module when it is present and
silently drops to numpy otherwise, so a source-only install works
everywhere.  The environment variable ``ROMUQ_KERNEL`` (``"cython"`` or
``"python"``) overrides the choice; requesting the compiled backend when it
is not built raises immediately rather than degrading quietly.

``benchmarks/bench_kernels.py`` in the repository compares the two.
"""

import os

from . import reference

__all__ = ["available_backends", "get_backend", "default_backend", "BACKEND"]

_BACKENDS = {"python": reference}

try:
    from . import _coagulation

    _BACKENDS["cython"] = _coagulation
except ImportError:
    _coagulation = None


def available_backends() -> tuple:
    """Names of the importable backends, fastest first."""
    names = []
    if "cython" in _BACKENDS:
        names.append("cython")
    names.append("python")
    return tuple(names)


def get_backend(name: str):
    """Return the backend module registered under ``name``."""
    try:
        return _BACKENDS[name]
    except KeyError:
        if name == "cython":
            raise RuntimeError(
                "the compiled coagulation kernel is not built; "
                "reinstall with a C compiler or use ROMUQ_KERNEL=python"
            ) from None
        raise ValueError(
            f"unknown kernel backend {name!r}; choose from {sorted(_BACKENDS)}"
        ) from None


def default_backend():
    """Backend selected at import time, honoring ``ROMUQ_KERNEL``."""
    forced = os.environ.get("ROMUQ_KERNEL")
    if forced:
        return get_backend(forced)
    return _BACKENDS["cython"] if "cython" in _BACKENDS else reference


BACKEND = default_backend().BACKEND_NAME
