"""Backend selection for the compute kernels.

The compiled extension is preferred when importable; the numpy fallback
is always available. Set PUNAVS_BACKEND=numpy or =cython to force one
(the benchmark and the parity tests do).
"""

from __future__ import annotations

import os

_requested = os.environ.get("PUNAVS_BACKEND", "").strip().lower()

if _requested == "numpy":
    from . import _kernels_np as _impl

    BACKEND = "numpy"
elif _requested == "cython":
    from . import _kernels as _impl  # ImportError here means no built extension

    BACKEND = "cython"
elif _requested:
    raise ImportError(f"unknown PUNAVS_BACKEND value {_requested!r}")
else:
    try:
        from . import _kernels as _impl

        BACKEND = "cython"
    except ImportError:
        from . import _kernels_np as _impl

        BACKEND = "numpy"

ray_triangle_hits = _impl.ray_triangle_hits
march_grid = _impl.march_grid
point_tri_dists = _impl.point_tri_dists
