"""Backend selection for the hot kernels.

The compiled extension is used when it imports; otherwise the numpy
fallback is used. Set ``ZONETRAP_BACKEND=python`` to force the fallback.
"""
import logging
import os

from . import _kernels_py

logger = logging.getLogger(__name__)

_compiled = None
if os.environ.get("ZONETRAP_BACKEND", "").lower() != "python":
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        logger.debug("compiled kernels unavailable, using numpy fallback")

_impl = _compiled if _compiled is not None else _kernels_py
BACKEND = "compiled" if _compiled is not None else "python"

patch_eval = _impl.patch_eval
verlet_axial = _impl.verlet_axial
probe_scan = _impl.probe_scan
axial_profile = _impl.axial_profile


def get_backend(name):
    """Return the kernel module for ``"compiled"`` or ``"python"``."""
    if name == "python":
        return _kernels_py
    if name == "compiled":
        if _compiled is None:
            raise ImportError("compiled kernels are not built")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")
