"""Kernel backend selection: compiled extension if importable, else NumPy."""
from __future__ import annotations

import os

try:
    if os.environ.get("CONTACT_STOKES_PURE"):
        raise ImportError
    from ._core import local_stokes, mode_sum  # type: ignore[attr-defined]

    BACKEND = "cython"
except ImportError:  # pragma: no cover - depends on build
    from ._core_py import local_stokes, mode_sum

    BACKEND = "python"

__all__ = ["BACKEND", "local_stokes", "mode_sum"]
