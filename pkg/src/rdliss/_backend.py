"""Kernel selection.

The compiled extension is used when it imports; ``RDLISS_KERNELS=python``
forces the numpy fallback.
"""

import os

from . import _pykernels

ckernels = None
if os.environ.get("RDLISS_KERNELS", "").lower() != "python":
    try:
        from . import _ckernels as ckernels
    except ImportError:  # pragma: no cover - depends on the build
        ckernels = None

BACKEND = "compiled" if ckernels is not None else "python"


def nearest(cloud, queries, start=0):
    """Brute-force exact nearest rows: ``(dist, idx)``."""
    if ckernels is not None:
        return ckernels.nearest(cloud, queries, int(start))
    return _pykernels.nearest(cloud, queries, start)
