"""Backend selection for the hot loops.

The compiled extension is used when it was built; otherwise, or when the
environment variable ``CHAINREC_PURE_PYTHON`` is set to a non-empty value other
than ``0``, the numpy/Python fallback is used. Both expose ``enumerate_edges``
and ``tarjan_scc`` with identical outputs.
"""

from __future__ import annotations

import os

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def _want_pure() -> bool:
    return os.environ.get("CHAINREC_PURE_PYTHON", "") not in ("", "0")


BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    BACKENDS["compiled"] = _ckernels

BACKEND = "python" if (_ckernels is None or _want_pure()) else "compiled"
_impl = BACKENDS[BACKEND]


def get_backend(name: str | None = None):
    """Kernel module by name (``"compiled"`` or ``"python"``); default is the active one."""
    if name is None:
        return _impl
    if name not in BACKENDS:
        raise ValueError(f"kernel backend {name!r} not available (have {sorted(BACKENDS)})")
    return BACKENDS[name]


def enumerate_edges(*args, backend: str | None = None):
    return get_backend(backend).enumerate_edges(*args)


def tarjan_scc(indptr, indices, backend: str | None = None):
    return get_backend(backend).tarjan_scc(indptr, indices)
