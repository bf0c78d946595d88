"""Kernel backend selection.

Hot convolution kernels exist twice: a numba @njit implementation
(kernels_numba) and a pure-numpy one (kernels_numpy). The active backend is
chosen once at import from the FPNET_KERNELS environment variable
("numba" | "numpy"; default numba when importable) and can be switched at
runtime with set_backend(), which the unit tests and the benchmark use to
compare both paths.

FPNET_THREADS caps the numba thread pool; results are value-identical at any
thread count because every output element is owned by exactly one worker.
"""

from __future__ import annotations

import os

from .errors import ConfigError

_BACKENDS = ("numba", "numpy")
_active: str | None = None
_module = None


def _load(name: str):
    if name == "numpy":
        from . import kernels_numpy
        return kernels_numpy
    from . import kernels_numba
    threads = os.environ.get("FPNET_THREADS", "").strip()
    if threads:
        import numba
        numba.set_num_threads(max(1, int(threads)))
    return kernels_numba


def set_backend(name: str) -> None:
    global _active, _module
    if name not in _BACKENDS:
        raise ConfigError(f"unknown kernel backend {name!r}; expected one of {_BACKENDS}")
    _module = _load(name)
    _active = name


def get_backend():
    """Return the active kernel module, resolving it on first use."""
    global _active, _module
    if _module is None:
        requested = os.environ.get("FPNET_KERNELS", "").strip().lower()
        if requested and requested not in _BACKENDS:
            raise ConfigError(
                f"FPNET_KERNELS={requested!r} not understood; expected one of {_BACKENDS}")
        if requested:
            set_backend(requested)
        else:
            try:
                set_backend("numba")
            except ImportError:  # pragma: no cover - numba is a hard dep in practice
                set_backend("numpy")
    return _module


def backend_name() -> str:
    get_backend()
    return _active
