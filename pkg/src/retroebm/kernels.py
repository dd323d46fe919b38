"""Hot graph kernels, compiled when available.

``BACKEND`` is ``"cython"`` when the ``_ckernels`` extension imported and
``"python"`` otherwise. Set ``RETROEBM_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import os

from . import _kernels_py

if os.environ.get("RETROEBM_PURE_PYTHON"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"

fnv1a64 = _impl.fnv1a64
rooted_code = _impl.rooted_code
canonical_code = _impl.canonical_code
environment_hashes = _impl.environment_hashes
centroids = _impl.centroids

__all__ = [
    "BACKEND",
    "fnv1a64",
    "rooted_code",
    "canonical_code",
    "environment_hashes",
    "centroids",
]
