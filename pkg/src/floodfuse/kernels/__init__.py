"""Hot numerical kernels with a compiled fast path.

The Cython extension is used when it was built and ``FLOODFUSE_PURE_PYTHON``
is unset; otherwise the numpy implementations are loaded. Both backends
return identical results, so the choice only affects speed.
"""
import os

from . import _pykernels as pure

compiled = None
if not os.environ.get("FLOODFUSE_PURE_PYTHON"):
    try:
        from . import _ckernels as compiled
    except ImportError:  # extension not built
        compiled = None

_impl = compiled if compiled is not None else pure

BACKEND = _impl.BACKEND
im2col = _impl.im2col
col2im = _impl.col2im
box_mean = _impl.box_mean
fill_evenodd = _impl.fill_evenodd

__all__ = ["BACKEND", "im2col", "col2im", "box_mean", "fill_evenodd", "pure", "compiled"]
