"""Hot kernels with a compiled backend and a pure-Python fallback.

The compiled module is used when it imports and ``SPDLAB_PURE_PYTHON`` is not
set; ``BACKEND`` names the active choice. Both backends are importable as
``compiled`` (possibly ``None``) and ``python`` for side-by-side checks.
"""

import os

from . import _pykernels as python

try:
    from . import _ckernels as compiled
except ImportError:  # extension not built
    compiled = None

if compiled is not None and not os.environ.get("SPDLAB_PURE_PYTHON"):
    _impl = compiled
    BACKEND = "cython"
else:
    _impl = python
    BACKEND = "python"

top_p_filter = _impl.top_p_filter
residual = _impl.residual
sample_index = _impl.sample_index
lcs_length = _impl.lcs_length
suffix_match = _impl.suffix_match

__all__ = ["BACKEND", "compiled", "lcs_length", "python", "residual", "sample_index", "suffix_match", "top_p_filter"]
