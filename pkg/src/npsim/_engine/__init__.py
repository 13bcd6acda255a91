"""Propagation engine selection.

Imports the compiled Cython core when available, otherwise falls back to the
pure-NumPy implementation.  Set ``NPSIM_PURE_PYTHON=1`` to force the
fallback (used by tests and the engine benchmark).
"""
from __future__ import annotations

import os

from . import _fallback

if os.environ.get("NPSIM_PURE_PYTHON", "").strip() not in ("", "0"):
    _impl = _fallback
else:
    try:
        from . import _core as _impl  # type: ignore[attr-defined]
    except ImportError:  # pragma: no cover - depends on build environment
        _impl = _fallback

IMPLEMENTATION: str = _impl.IMPLEMENTATION
rk4_sigma_chunk = _impl.rk4_sigma_chunk

__all__ = ["IMPLEMENTATION", "rk4_sigma_chunk", "available_implementations"]


def available_implementations() -> dict[str, object]:
    """Name -> chunk-stepper for every importable engine (for benchmarks)."""
    impls: dict[str, object] = {"numpy": _fallback.rk4_sigma_chunk}
    try:
        from . import _core

        impls["cython"] = _core.rk4_sigma_chunk
    except ImportError:
        pass
    return impls
