"""Kernel backend selection.

The compiled Cython extension is used when it has been built; otherwise the
numpy fallback in ``_kernels_py`` is used. Setting ``FUNMED_PURE_PYTHON=1``
forces the fallback. ``BACKEND`` names the active implementation.
"""
from __future__ import annotations

import os

from . import _kernels_py

if os.environ.get("FUNMED_PURE_PYTHON", "").strip() not in ("", "0"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"

bspline_design = _impl.bspline_design
cluster_gram = _impl.cluster_gram
cluster_score_sums = _impl.cluster_score_sums

__all__ = ["BACKEND", "bspline_design", "cluster_gram", "cluster_score_sums"]
