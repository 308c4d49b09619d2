"""Kernel backend selection.

The compiled extension ``megh._core`` is used when it imports; otherwise,
or when the environment variable ``MEGH_BACKEND=python`` is set, the
pure-Python twin ``megh._core_py`` is used.
"""

from __future__ import annotations

import contextlib
import os

from . import _core_py

try:
    from . import _core as _compiled
except ImportError:  # extension not built
    _compiled = None

_BACKENDS = {"python": _core_py}
if _compiled is not None:
    _BACKENDS["compiled"] = _compiled


def _default() -> str:
    requested = os.environ.get("MEGH_BACKEND", "").strip().lower()
    if requested:
        if requested not in ("python", "compiled"):
            raise ValueError(f"MEGH_BACKEND must be 'python' or 'compiled', got {requested!r}")
        if requested == "compiled" and _compiled is None:
            raise ImportError("MEGH_BACKEND=compiled but megh._core is not built")
        return requested
    return "compiled" if _compiled is not None else "python"


_active = _default()


def available() -> tuple[str, ...]:
    return tuple(_BACKENDS)


def active() -> str:
    return _active


def kernels():
    return _BACKENDS[_active]


def set_backend(name: str) -> None:
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"backend {name!r} not available (have {available()})")
    _active = name


@contextlib.contextmanager
def use_backend(name: str):
    previous = _active
    set_backend(name)
    try:
        yield
    finally:
        set_backend(previous)
