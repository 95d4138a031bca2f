"""Scan-kernel backend selection.

Two interchangeable implementations of the same recurrence live here:
``scan_numba`` (compiled, default) and ``scan_numpy`` (pure numpy
fallback). The ``MCIT_BACKEND`` environment variable picks one at first
use; :func:`set_backend` overrides it programmatically (used by tests and
the benchmark). If numba is unavailable the numpy path is used silently.
"""

from __future__ import annotations

import importlib
import os

from ..errors import ConfigError

VALID_BACKENDS = ("numba", "numpy")

_active_name: str | None = None
_active_mod = None


def _load(name: str):
    if name == "numba":
        try:
            return "numba", importlib.import_module(".scan_numba", __package__)
        except ImportError:
            return "numpy", importlib.import_module(".scan_numpy", __package__)
    return "numpy", importlib.import_module(".scan_numpy", __package__)


def _ensure_loaded():
    global _active_name, _active_mod
    if _active_mod is None:
        name = os.environ.get("MCIT_BACKEND", "numba").strip().lower() or "numba"
        if name not in VALID_BACKENDS:
            raise ConfigError(
                f"MCIT_BACKEND must be one of {VALID_BACKENDS}, got {name!r}")
        _active_name, _active_mod = _load(name)
    return _active_mod


def set_backend(name: str) -> str:
    """Force a backend; returns the name actually in effect."""
    global _active_name, _active_mod
    if name not in VALID_BACKENDS:
        raise ConfigError(
            f"backend must be one of {VALID_BACKENDS}, got {name!r}")
    _active_name, _active_mod = _load(name)
    return _active_name


def get_backend() -> str:
    _ensure_loaded()
    return _active_name


def scan_forward(u, delta, A, B, C, h0):
    return _ensure_loaded().scan_forward(u, delta, A, B, C, h0)


def scan_backward(gy, gh_final, u, delta, A, B, C, h_hist):
    return _ensure_loaded().scan_backward(gy, gh_final, u, delta, A, B, C,
                                          h_hist)
