"""Kernel backend selection.

The compiled ``_em`` extension is used when it was built; otherwise the
numpy fallback.  Set ``MIXEDLQ_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _em_py

_BACKENDS = {"python": _em_py.em_chunk}

try:
    from . import _em  # type: ignore[attr-defined]
except ImportError:  # extension not built
    _em = None
else:
    _BACKENDS["cython"] = _em.em_chunk

if _em is not None and os.environ.get("MIXEDLQ_PURE_PYTHON", "") in ("", "0"):
    BACKEND = "cython"
else:
    BACKEND = "python"


def available():
    return sorted(_BACKENDS)


def get_kernel(name=None):
    name = name or BACKEND
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ValueError(f"unknown or unavailable kernel backend {name!r}") from None
