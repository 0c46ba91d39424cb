"""Hot-kernel dispatch: compiled extension when built, NumPy fallback otherwise.

Set MVSEG_PURE=1 to force the fallback. The active backend name is exported
as BACKEND ("cython" or "python").
"""
import os

if os.environ.get("MVSEG_PURE"):
    from . import _fallback as _impl
else:
    try:
        from . import _core as _impl  # type: ignore[attr-defined]
    except ImportError:
        from . import _fallback as _impl

block_search = _impl.block_search
bilinear_warp = _impl.bilinear_warp
BACKEND = "python" if _impl.__name__.endswith("_fallback") else "cython"

__all__ = ["block_search", "bilinear_warp", "BACKEND"]
