"""Kernel selection.

The compiled extension is used when importable; ``SODA_OOD_BACKEND=python``
forces the numpy fallback.
"""
from __future__ import annotations

import os

from soda_ood import _fallback

try:
    from soda_ood import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

BACKENDS = {"python": _fallback}
if _compiled is not None:
    BACKENDS["cython"] = _compiled

_threads = os.cpu_count() or 1


def _select():
    want = os.environ.get("SODA_OOD_BACKEND", "").strip().lower()
    if want:
        if want not in BACKENDS:
            raise ImportError(f"SODA_OOD_BACKEND={want!r} is not available (have {sorted(BACKENDS)})")
        return want
    return "cython" if "cython" in BACKENDS else "python"


_name = _select()
kernels = BACKENDS[_name]


def backend_name() -> str:
    return _name


def use_backend(name: str) -> None:
    global _name, kernels
    if name not in BACKENDS:
        raise ValueError(f"unknown backend {name!r}; available: {sorted(BACKENDS)}")
    _name = name
    kernels = BACKENDS[name]


def get_num_threads() -> int:
    return _threads


def set_num_threads(n: int | None) -> None:
    global _threads
    _threads = max(1, int(n)) if n else (os.cpu_count() or 1)
