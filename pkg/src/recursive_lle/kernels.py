"""Backend selection for the pixel kernels.

The compiled ``_kernels`` extension is used when it imports; otherwise the
numpy fallback in ``_kernels_py``. Setting ``RECURSIVE_LLE_PURE=1`` forces the
fallback. ``BACKEND`` names the active one.
"""
import os

from . import _kernels_py as py

if os.environ.get("RECURSIVE_LLE_PURE", "") not in ("", "0"):
    _impl = py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]
        BACKEND = "cython"
    except ImportError:
        _impl = py
        BACKEND = "python"

v_channel = _impl.v_channel
histogram256 = _impl.histogram256
patch_means = _impl.patch_means
haar_decompose = _impl.haar_decompose
haar_reconstruct = _impl.haar_reconstruct
eme_blocks = _impl.eme_blocks
loe_mean_rd = _impl.loe_mean_rd

__all__ = [
    "BACKEND", "v_channel", "histogram256", "patch_means", "haar_decompose",
    "haar_reconstruct", "eme_blocks", "loe_mean_rd",
]
