"""Hot text kernels with a compiled core and a pure-Python fallback.

The compiled extension (``_native``, built from Cython) is selected at import
when present; set ``HNREFINE_PURE_KERNELS=1`` to force the fallback. Both
implementations are kept behaviourally identical and are cross-checked by the
test suite.
"""

from __future__ import annotations

import os

from . import _pure

if os.environ.get("HNREFINE_PURE_KERNELS") == "1":
    _impl = _pure
    IMPLEMENTATION = "pure"
else:
    try:
        from . import _native as _impl  # type: ignore[no-redef]

        IMPLEMENTATION = "native"
    except ImportError:
        _impl = _pure
        IMPLEMENTATION = "pure"

collapse_ws_map = _impl.collapse_ws_map
word_prefix_end = _impl.word_prefix_end

__all__ = ["collapse_ws_map", "word_prefix_end", "IMPLEMENTATION"]
