"""Kernel dispatch: compiled extension if it imports, numpy otherwise.

Set ``DATASOUPS_PURE_PYTHON=1`` to force the numpy path.
"""
import os

from . import _pykernels

MODE_CONSTANT = _pykernels.MODE_CONSTANT
MODE_EDGE = _pykernels.MODE_EDGE
MODE_REFLECT = _pykernels.MODE_REFLECT

_impl = _pykernels
BACKEND = "python"
if os.environ.get("DATASOUPS_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels

affine_sample = _impl.affine_sample
perplexity_search = _impl.perplexity_search
tsne_grad = _impl.tsne_grad
