"""Backend selection for the clipping kernels.

The compiled extension is used when it was built; set ``CRACKTIP_NO_EXT=1``
to force the pure-Python implementation.
"""

import os

import numpy as np

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("CRACKTIP_NO_EXT") != "1":
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels


def _prep(verts, tris):
    return (
        np.ascontiguousarray(verts, dtype=np.float64),
        np.ascontiguousarray(tris, dtype=np.int64),
    )


def tri_disk_areas(verts, tris, center, r, impl=None):
    """Area of each triangle intersected with the disk B(center, r)."""
    v, t = _prep(verts, tris)
    if len(t) == 0:
        return np.zeros(0)
    return (impl or _impl).tri_disk_areas(v, t, float(center[0]), float(center[1]), float(r))


def tri_circle_arcs(verts, tris, center, r, impl=None):
    """Arcs of the circle ∂B(center, r) inside each triangle.

    Returns ``(owner, phi0, phi1)``: triangle index and angular interval of
    every arc piece, ``phi0 in (-pi, pi]`` and ``phi1 > phi0``.
    """
    v, t = _prep(verts, tris)
    if len(t) == 0:
        empty = np.zeros(0)
        return np.zeros(0, dtype=np.int64), empty, empty
    return (impl or _impl).tri_circle_arcs(v, t, float(center[0]), float(center[1]), float(r))


def implementations():
    """All importable kernel implementations keyed by name."""
    out = {"python": _pykernels}
    try:
        from . import _ckernels

        out["cython"] = _ckernels
    except ImportError:
        pass
    return out
