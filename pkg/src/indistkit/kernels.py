"""Kernel dispatch: compiled extension when available, NumPy fallback otherwise.

Set ``INDISTKIT_PURE_PYTHON=1`` to force the fallback (used by the tests and
the benchmark to compare both paths).
"""

from __future__ import annotations

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("INDISTKIT_PURE_PYTHON") != "1":
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py

masked_cov = _impl.masked_cov
cell_covariances = _impl.cell_covariances
complete_linkage = _impl.complete_linkage
chebyshev_matrix = _impl.chebyshev_matrix
best_split = _impl.best_split

__all__ = ["BACKEND", "masked_cov", "cell_covariances", "complete_linkage", "chebyshev_matrix", "best_split"]
