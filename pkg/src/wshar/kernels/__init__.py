"""Hot kernels with a compiled backend and a numpy fallback.

The compiled extension is used when it was built and ``WSHAR_PURE_PYTHON``
is not set; ``BACKEND`` names the active implementation.
"""
import os

from . import _pykernels as python_backend

compiled_backend = None
if os.environ.get("WSHAR_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as compiled_backend
    except ImportError:  # extension not built
        compiled_backend = None

_active = compiled_backend if compiled_backend is not None else python_backend
BACKEND = "cython" if compiled_backend is not None else "python"

window_stats = _active.window_stats
knn = _active.knn
nearest_centroid = _active.nearest_centroid

__all__ = ["BACKEND", "knn", "nearest_centroid", "window_stats", "python_backend", "compiled_backend"]
