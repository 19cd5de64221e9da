"""Kernel backend selection.

The compiled extension is used when importable; setting
``PANODEPTH_PURE_PYTHON=1`` forces the numpy fallback.
"""

import logging
import os

log = logging.getLogger(__name__)

if os.environ.get("PANODEPTH_PURE_PYTHON", "") not in ("", "0"):
    from panodepth import _kernels_py as _impl
else:
    try:
        from panodepth import _kernels as _impl
    except ImportError:  # extension not built
        log.debug("compiled kernels unavailable, using numpy fallback")
        from panodepth import _kernels_py as _impl

BACKEND = _impl.BACKEND
depth_pass = _impl.depth_pass
label_segments = _impl.label_segments
pair_counts = _impl.pair_counts


def available_backends():
    """Return {name: module} for every importable kernel backend."""
    from panodepth import _kernels_py

    out = {"python": _kernels_py}
    try:
        from panodepth import _kernels

        out["cython"] = _kernels
    except ImportError:
        pass
    return out
