"""Kernel backend selection.

The compiled extension is preferred when it imports cleanly; otherwise the
pure-NumPy kernels are used.  ``GRAPHEM_BACKEND=pure`` (or ``compiled``)
forces the choice, the latter raising if the extension is missing.
"""
from __future__ import annotations

import os

from . import _pykernels

_FORCED = os.environ.get("GRAPHEM_BACKEND", "").strip().lower()

if _FORCED == "pure":
    _kernels = _pykernels
elif _FORCED == "compiled":
    from . import _sskernels as _kernels  # noqa: F401
else:
    try:
        from . import _sskernels as _kernels  # type: ignore[no-redef]
    except ImportError:
        _kernels = _pykernels


def backend_name() -> str:
    """Name of the kernel backend in use ('compiled' or 'pure')."""
    return _kernels.BACKEND_NAME


def kernels():
    """The active kernel module."""
    return _kernels


def available_backends() -> dict:
    """All importable kernel modules, keyed by name."""
    out = {"pure": _pykernels}
    try:
        from . import _sskernels

        out["compiled"] = _sskernels
    except ImportError:
        pass
    return out
