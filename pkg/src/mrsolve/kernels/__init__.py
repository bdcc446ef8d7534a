"""Kernel backend selection.

The compiled extension is preferred; the numpy reference backend is the
fallback when the extension was not built.  ``MRSOLVE_KERNELS=python``
(or ``cython``) forces a backend, which the backend-comparison
benchmark relies on.
"""

from __future__ import annotations

import os

from . import python_ref

_forced = os.environ.get("MRSOLVE_KERNELS", "").lower()

if _forced == "python":
    _impl = python_ref
else:
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]
    except ImportError:
        if _forced == "cython":
            raise
        _impl = python_ref

BACKEND = _impl.BACKEND

MODE_ASSIGN = _impl.MODE_ASSIGN
MODE_ADD = _impl.MODE_ADD
MODE_SUB = _impl.MODE_SUB
MODE_RSUB = _impl.MODE_RSUB

csr_spmv = _impl.csr_spmv
gs_sweep = _impl.gs_sweep
axpby = _impl.axpby
add2_scaled = _impl.add2_scaled
dot_partial = _impl.dot_partial
fused_update_dot = _impl.fused_update_dot
fused_paired_update = _impl.fused_paired_update
fused_update_dot2 = _impl.fused_update_dot2


def get_backend(name: str):
    """Return a specific backend module ('python' or 'cython')."""
    if name == "python":
        return python_ref
    if name == "cython":
        from . import _ckernels

        return _ckernels
    raise ValueError(f"unknown kernel backend {name!r}")
