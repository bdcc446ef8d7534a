"""Pure-python (numpy) reference implementations of the hot kernels.

This backend is selected at import time when the compiled extension is
unavailable (see ``mrsolve.kernels``).  Every function here mirrors the
signature and semantics of its compiled twin in ``_ckernels``.

Conventions shared by both backends:

* vectors are C-contiguous float64 arrays of shape (n, m), all m
  right-hand-side values of a row stored contiguously;
* matrix values may be float32 or float64; multiply-accumulate always
  happens in float64;
* per-column accumulation order depends only on the row count, never on
  m, so a joint m-RHS call reproduces m single-RHS calls bit-for-bit.
"""

from __future__ import annotations

import numpy as np

BACKEND = "python"

# csr_spmv accumulation modes
MODE_ASSIGN = 0  # y := A x
MODE_ADD = 1     # y += A x
MODE_SUB = 2     # y -= A x
MODE_RSUB = 3    # y := b - A x (fused residual)


def csr_spmv(row_ptr, col_idx, values, x, y, mode, b=None):
    # Accumulate into y in entry order, one entry position at a time
    # across all rows, so every (row, column) scalar sees the exact
    # additions in the exact order of the compiled backend.  Numpy's
    # segment reductions (reduceat, add.reduce) reassociate sums and
    # would break the bitwise contract.
    if mode == MODE_ASSIGN:
        y[:] = 0.0
    elif mode == MODE_RSUB:
        y[:] = b
    elif mode not in (MODE_ADD, MODE_SUB):
        raise ValueError(f"unknown spmv mode {mode}")
    row_ptr = np.asarray(row_ptr)
    starts = row_ptr[:-1]
    lens = row_ptr[1:] - starts
    vals = values.astype(np.float64, copy=False)
    add = mode in (MODE_ASSIGN, MODE_ADD)
    for k in range(int(lens.max(initial=0))):
        rows = np.flatnonzero(lens > k)
        pos = (starts[rows] + k).astype(np.intp)
        contrib = vals[pos, None] * x[col_idx[pos].astype(np.intp), :]
        if add:
            y[rows] += contrib
        else:
            y[rows] -= contrib


def gs_sweep(row_ptr, col_idx, values, diag_pos, b, c, x, forward):
    """One Gauss-Seidel sweep over the local block, in place.

    ``c`` carries the frozen off-diagonal contribution (may be the zero
    array for a single-leaf block).  Within the block the sweep is true
    Gauss-Seidel: the in-place update uses new values for already
    visited rows.
    """
    nrows = len(row_ptr) - 1
    order = range(nrows) if forward else range(nrows - 1, -1, -1)
    for i in order:
        lo, hi = int(row_ptr[i]), int(row_ptr[i + 1])
        dp = int(diag_pos[i])
        d = np.float64(values[dp])
        # entry-order accumulation, skipping the diagonal, to stay
        # bit-compatible with the compiled backend
        s = b[i] - c[i]
        for k in range(lo, hi):
            if k != dp:
                s = s - np.float64(values[k]) * x[int(col_idx[k])]
        x[i] = s / d


def axpby(a, x, b, y):
    """y := a*x + b*y, columnwise scalars a, b of shape (m,)."""
    y *= b
    y += a * x


def add2_scaled(y, a, u, b, v):
    """y += a*u + b*v, columnwise scalars."""
    y += a * u
    y += b * v


def dot_partial(x, y):
    """Per-column inner products over the given rows, float64."""
    if x.shape[0] == 0:
        return np.zeros(x.shape[1])
    # cumsum is a strict left-to-right fold per column, matching the
    # compiled backend's scalar accumulation order for any m
    return np.cumsum(x * y, axis=0)[-1].copy()


def fused_update_dot(a, x, b, y):
    """y := a*x + b*y; return per-column dot(y, y)."""
    axpby(a, x, b, y)
    return dot_partial(y, y)


def fused_paired_update(y1, a, u, b, s, y2, c, w):
    """y1 += a*u + b*s;  y2 := s - c*w  (single shared pass over s)."""
    add2_scaled(y1, a, u, b, s)
    np.multiply(w, -c, out=y2)
    y2 += s


def fused_update_dot2(y, u, c, w, z):
    """y := u - c*w; return (dot(z, y), dot(y, y)) per column."""
    # temp keeps the update correct when y aliases u or w
    y[:] = u - c * w
    return dot_partial(z, y), dot_partial(y, y)
