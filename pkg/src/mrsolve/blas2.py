"""Sparse matrix–block-vector products and smoother sweeps.

All operations take a :class:`SegmentedMatrix` and run per leaf worker:
the diagonal block multiplies the local row range directly, the
off-diagonal blocks multiply halo fragments gathered through the
exchange plan.  The inner loop of every kernel runs over the m RHS
columns of contiguous data.
"""

from __future__ import annotations

import numpy as np

from . import kernels as K
from .blas import TeamScope
from .core import BlockVector, SegmentedMatrix, check_same_shape
from .errors import InvalidArgumentError, ShapeMismatchError, SingularDiagonalError
from .instrument import counters
from .parallel import WorkerTeam, halo_exchange

__all__ = ["spmv", "residual", "sgs_sweep", "jacobi_sweep", "extract_diag", "matrix_scope"]


def matrix_scope(A: SegmentedMatrix, team: WorkerTeam | None = None) -> TeamScope:
    return TeamScope(team, A.part)


def _check_system(A: SegmentedMatrix, *vecs: BlockVector):
    for v in vecs:
        if v.nrows != A.nrows:
            raise ShapeMismatchError(
                f"vector has {v.nrows} rows, matrix has {A.nrows}"
            )
    if len({v.nrhs for v in vecs}) > 1:
        raise ShapeMismatchError("operand RHS counts differ")


def _offdiag_apply(A: SegmentedMatrix, frags, leaf: int, out: np.ndarray, mode: int):
    """Accumulate all off-diagonal products of one leaf into ``out``."""
    mb = A.blocks[leaf]
    plan = A.exchange_plan()
    for peer in sorted(mb.offdiag):
        blk = mb.offdiag[peer]
        compact = plan.compact_cols[(leaf, peer)]
        frag = frags.fragment(leaf, peer)
        K.csr_spmv(blk.row_ptr, compact, blk.values, frag, out, mode)


def spmv(A: SegmentedMatrix, x: BlockVector, y: BlockVector,
         team: WorkerTeam | None = None):
    """y := A x per column (generalized multi-RHS product)."""
    _check_system(A, x, y)
    check_same_shape(x, y)
    if not x.flags.initialized:
        raise InvalidArgumentError("spmv input vector is not initialized")
    if x.data is y.data:
        raise InvalidArgumentError("spmv output must not alias the input")
    if x.flags.zero:
        y.set_zero()
        counters.record_skip("spmv")
        return
    frags = halo_exchange(A.exchange_plan(), x, team)
    scope = matrix_scope(A, team)

    def local(leaf, lo, hi):
        mb = A.blocks[leaf]
        K.csr_spmv(mb.diag.row_ptr, mb.diag.col_idx, mb.diag.values,
                   x.data[lo:hi], y.data[lo:hi], K.MODE_ASSIGN)
        _offdiag_apply(A, frags, leaf, y.data[lo:hi], K.MODE_ADD)

    scope.run(local)
    counters.record("spmv", reads=1, writes=1, flops=2 * A.nnz * x.nrhs)
    y.mark_written()


def residual(A: SegmentedMatrix, x: BlockVector, b: BlockVector, r: BlockVector,
             team: WorkerTeam | None = None):
    """r := b - A x, fused subtraction in the matrix pass."""
    _check_system(A, x, b, r)
    check_same_shape(b, r)
    if not b.flags.initialized:
        raise InvalidArgumentError("residual needs an initialized right-hand side")
    if x.flags.zero:
        r.data[:] = b.data
        r.flags.zero = b.flags.zero
        r.flags.initialized = True
        counters.record_skip("spmv")
        counters.record("residual_copy", reads=1, writes=1)
        return
    if not x.flags.initialized:
        raise InvalidArgumentError("residual input vector is not initialized")
    frags = halo_exchange(A.exchange_plan(), x, team)
    scope = matrix_scope(A, team)

    def local(leaf, lo, hi):
        mb = A.blocks[leaf]
        K.csr_spmv(mb.diag.row_ptr, mb.diag.col_idx, mb.diag.values,
                   x.data[lo:hi], r.data[lo:hi], K.MODE_RSUB, b=b.data[lo:hi])
        _offdiag_apply(A, frags, leaf, r.data[lo:hi], K.MODE_SUB)

    scope.run(local)
    counters.record("residual", reads=2, writes=1, flops=2 * A.nnz * x.nrhs + x.data.size)
    r.mark_written()


def _checked_diag(A: SegmentedMatrix) -> np.ndarray:
    d = A.diagonal()
    if np.any(d == 0.0):
        raise SingularDiagonalError("matrix has zero diagonal entries")
    return d


def sgs_sweep(A: SegmentedMatrix, b: BlockVector, x: BlockVector,
              direction: str = "symmetric", team: WorkerTeam | None = None):
    """Hybrid Gauss-Seidel sweep, in place on x.

    True Gauss-Seidel ordering inside each leaf's diagonal block;
    couplings to other leaves use the pre-sweep iterate.  ``symmetric``
    runs a forward then a backward half-sweep (fragments are refreshed
    between the halves).
    """
    _check_system(A, b, x)
    check_same_shape(b, x)
    if direction not in ("forward", "backward", "symmetric"):
        raise InvalidArgumentError(f"unknown sweep direction {direction!r}")
    if not x.flags.initialized:
        raise InvalidArgumentError("sweep needs an initialized iterate")
    _checked_diag(A)
    scope = matrix_scope(A, team)
    halves = ("forward", "backward") if direction == "symmetric" else (direction,)
    m = x.nrhs
    zero_c = {}

    for half in halves:
        frags = halo_exchange(A.exchange_plan(), x, team)
        ctmp = [None] * A.nleaves

        def gather_offdiag(leaf, lo, hi):
            mb = A.blocks[leaf]
            if not mb.offdiag:
                if leaf not in zero_c:
                    zero_c[leaf] = np.zeros((hi - lo, m))
                ctmp[leaf] = zero_c[leaf]
                return
            c = np.zeros((hi - lo, m))
            _offdiag_apply(A, frags, leaf, c, K.MODE_ADD)
            ctmp[leaf] = c

        scope.run(gather_offdiag)

        def sweep(leaf, lo, hi, fwd=(half == "forward")):
            mb = A.blocks[leaf]
            if hi == lo:
                return
            K.gs_sweep(mb.diag.row_ptr, mb.diag.col_idx, mb.diag.values,
                       A.diag_positions(leaf), b.data[lo:hi], ctmp[leaf],
                       x.data[lo:hi], fwd)

        scope.run(sweep)
        counters.record("sgs_sweep", reads=2, writes=1,
                        flops=2 * A.nnz * m + x.data.size)
    x.mark_written()


def jacobi_sweep(A: SegmentedMatrix, b: BlockVector, x: BlockVector,
                 weight: float = 1.0, team: WorkerTeam | None = None):
    """x := x + weight * D^(-1) (b - A x), in place."""
    _check_system(A, b, x)
    check_same_shape(b, x)
    if not x.flags.initialized:
        raise InvalidArgumentError("sweep needs an initialized iterate")
    d = _checked_diag(A)
    if weight == 0.0:
        counters.record_skip("jacobi_sweep")
        return
    r = BlockVector.uninitialized(x.nrows, x.nrhs)
    residual(A, x, b, r, team)
    scope = matrix_scope(A, team)

    def local(leaf, lo, hi):
        x.data[lo:hi] += weight * (r.data[lo:hi] / d[lo:hi, None])

    scope.run(local)
    counters.record("jacobi_sweep", reads=3, writes=1, flops=3 * x.data.size)
    x.mark_written()


def extract_diag(A: SegmentedMatrix) -> BlockVector:
    """Global diagonal entries in owner order, as a single-column vector."""
    d = A.diagonal()  # raises on structurally missing diagonal
    return BlockVector.from_array(d)
