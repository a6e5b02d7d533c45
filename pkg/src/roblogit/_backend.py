"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy
fallback is used.  Setting ``ROBLOGIT_PURE_PYTHON=1`` forces the fallback.
"""

import os

from . import _kernels_py

BACKEND = "python"
kernels = _kernels_py

if os.environ.get("ROBLOGIT_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        pass
    else:
        kernels = _compiled
        BACKEND = "compiled"


def get_kernels(name=None):
    """Return a kernel module by name (``"python"``, ``"compiled"``) or the active one."""
    if name is None:
        return kernels
    if name == "python":
        return _kernels_py
    if name == "compiled":
        from . import _kernels

        return _kernels
    raise ValueError(f"unknown backend {name!r}")
