"""Hot kernels, compiled when available.

The Cython extension is picked up at import; otherwise (or when the
``BEV_PURE_PYTHON`` environment variable is set to a non-empty value other
than ``0``) the numpy implementations are used. ``BACKEND`` names the choice.
"""
import os

from . import _kernels_py as python_backend

compiled_backend = None
if os.environ.get("BEV_PURE_PYTHON", "") in ("", "0"):
    try:
        from . import _kernels_cy as compiled_backend
    except ImportError:
        compiled_backend = None

_active = compiled_backend if compiled_backend is not None else python_backend
BACKEND = "cython" if compiled_backend is not None else "python"

gaussian_splat_max = _active.gaussian_splat_max
local_maxima_3d = _active.local_maxima_3d
depth_layer_loss_batch = _active.depth_layer_loss_batch

__all__ = [
    "BACKEND",
    "compiled_backend",
    "python_backend",
    "gaussian_splat_max",
    "local_maxima_3d",
    "depth_layer_loss_batch",
]
