"""Algebraic-multigrid setup phase.

Classical Ruge-Stüben-style construction: negative-coupling strength
rule, index-ordered greedy C/F splitting (optionally distance-2
"aggressive" on the first levels), direct interpolation, and the
Galerkin triple product.  The produced hierarchy is immutable and shared
read-only by the worker team during the solve phase.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .core import CsrBlock, PrecisionTag, SegmentedMatrix
from .errors import InvalidArgumentError, SetupDegeneracyError

__all__ = [
    "AmgParams",
    "Level",
    "Hierarchy",
    "strength_graph",
    "coarsen",
    "interpolate",
    "galerkin",
    "setup",
]

UNASSIGNED, CPOINT, FPOINT = 0, 1, 2


@dataclass(frozen=True)
class AmgParams:
    strength_threshold: float = 0.25
    agg_num_levels: int = 0
    num_paths: int = 1
    coarse_matrix_size: int = 500
    max_levels: int = 25
    #: coarsening-stall cutoff: stop when coarse/fine row ratio exceeds this
    stall_ratio: float = 0.9

    def __post_init__(self):
        if not (0.0 < self.strength_threshold < 1.0):
            raise InvalidArgumentError("strength_threshold must be in (0, 1)")
        if self.coarse_matrix_size < 1:
            raise InvalidArgumentError("coarse_matrix_size must be >= 1")
        if self.max_levels < 2:
            raise InvalidArgumentError("max_levels must be >= 2")
        if self.num_paths < 1:
            raise InvalidArgumentError("num_paths must be >= 1")


def strength_graph(A, theta: float) -> sp.csr_matrix:
    """Boolean strength-of-connection matrix (classical negative coupling).

    S[i, j] is set iff j != i and -a_ij >= theta * max_k(-a_ik), the max
    taken over off-diagonal entries of row i.  Rows without negative
    off-diagonal entries come out empty.
    """
    A = _as_csr(A)
    if A.shape[0] != A.shape[1]:
        raise InvalidArgumentError("strength_graph requires a square matrix")
    n = A.shape[0]
    coo = A.tocoo()
    off = coo.row != coo.col
    rows, cols, vals = coo.row[off], coo.col[off], coo.data[off]
    neg = -vals
    rowmax = np.zeros(n)
    np.maximum.at(rowmax, rows, neg)
    strong = (rowmax[rows] > 0) & (neg >= theta * rowmax[rows])
    S = sp.csr_matrix(
        (np.ones(int(strong.sum()), dtype=bool), (rows[strong], cols[strong])),
        shape=(n, n),
    )
    S.sort_indices()
    return S


def _as_csr(A) -> sp.csr_matrix:
    if isinstance(A, CsrBlock):
        return A.to_scipy()
    if isinstance(A, SegmentedMatrix):
        return A.to_global().to_scipy()
    return sp.csr_matrix(A)


def coarsen(S: sp.csr_matrix, mode: str = "standard", num_paths: int = 1) -> np.ndarray:
    """C/F splitting from a strength graph.

    Index-ordered greedy sweep (lowest index wins): each still-unassigned
    point becomes C and every unassigned point strongly depending on it
    becomes F.  In "aggressive" mode points reachable through at least
    ``num_paths`` distinct strong length-2 paths are also marked F, which
    coarsens roughly one step further.  Isolated points become C.
    """
    if mode not in ("standard", "aggressive"):
        raise InvalidArgumentError(f"unknown coarsening mode {mode!r}")
    n = S.shape[0]
    ST = S.T.tocsr()
    ST.sort_indices()
    state = np.full(n, UNASSIGNED, dtype=np.int8)
    st_indptr, st_indices = ST.indptr, ST.indices
    for i in range(n):
        if state[i] != UNASSIGNED:
            continue
        state[i] = CPOINT
        dep = st_indices[st_indptr[i]:st_indptr[i + 1]]
        direct = dep[state[dep] == UNASSIGNED]
        state[direct] = FPOINT
        if mode == "aggressive":
            if len(dep) == 0:
                continue
            # distinct length-2 strong paths j -> k -> i, counted per j
            two_hop = np.concatenate(
                [st_indices[st_indptr[k]:st_indptr[k + 1]] for k in dep]
            )
            if len(two_hop) == 0:
                continue
            cand, counts = np.unique(two_hop, return_counts=True)
            ok = cand[(counts >= num_paths) & (state[cand] == UNASSIGNED) & (cand != i)]
            state[ok] = FPOINT
    return state


def interpolate(A, S: sp.csr_matrix, splitting: np.ndarray) -> CsrBlock:
    """Direct interpolation operator P.

    C-rows are unit rows.  An F-row i distributes over its strong
    C-neighbors j with weights

        w_ij = -(a_ij / a_ii) * (sum of all off-diagonal a_ik
                                 / sum of a_ik over strong C-neighbors)

    For a zero-row-sum M-matrix each F-row of P sums to one.
    """
    A = _as_csr(A)
    n = A.shape[0]
    cpoints = np.flatnonzero(splitting == CPOINT)
    cmap = np.full(n, -1, dtype=np.int64)
    cmap[cpoints] = np.arange(len(cpoints))

    indptr, indices, data = A.indptr, A.indices, A.data
    s_indptr, s_indices = S.indptr, S.indices

    rows, cols, vals = [], [], []
    bad_rows = []
    for i in range(n):
        if splitting[i] == CPOINT:
            rows.append(i)
            cols.append(cmap[i])
            vals.append(1.0)
            continue
        lo, hi = indptr[i], indptr[i + 1]
        ci = indices[lo:hi]
        vi = data[lo:hi]
        diag_mask = ci == i
        a_ii = vi[diag_mask].sum()
        off_sum = vi[~diag_mask].sum()
        strong = set(s_indices[s_indptr[i]:s_indptr[i + 1]].tolist())
        sel = np.fromiter(
            ((c in strong and splitting[c] == CPOINT) for c in ci),
            dtype=bool, count=len(ci),
        )
        if not sel.any():
            bad_rows.append(i)
            continue
        strong_sum = vi[sel].sum()
        w = -(vi[sel] / a_ii) * (off_sum / strong_sum)
        rows.extend([i] * int(sel.sum()))
        cols.extend(cmap[ci[sel]].tolist())
        vals.extend(w.tolist())
    if bad_rows:
        err = SetupDegeneracyError(
            f"{len(bad_rows)} F-points have no strong C-neighbor"
        )
        err.rows = bad_rows
        raise err
    P = sp.csr_matrix((vals, (rows, cols)), shape=(n, len(cpoints)))
    P.sort_indices()
    return CsrBlock.from_scipy(P)


def galerkin(R: CsrBlock, A, P: CsrBlock) -> CsrBlock:
    """Coarse operator R * A * P (sparse triple product)."""
    As = _as_csr(A)
    Rs, Ps = R.to_scipy(), P.to_scipy()
    if Rs.shape[1] != As.shape[0] or As.shape[1] != Ps.shape[0]:
        raise InvalidArgumentError(
            f"dimension chain broken: R {Rs.shape} A {As.shape} P {Ps.shape}"
        )
    Ac = (Rs @ As @ Ps).tocsr()
    Ac.sum_duplicates()
    Ac.sort_indices()
    return CsrBlock.from_scipy(Ac)


@dataclass
class Level:
    """One hierarchy level: operator, transfer pair, smoother state."""

    A: SegmentedMatrix
    precision: PrecisionTag = PrecisionTag.FULL
    P: CsrBlock | None = None   # absent on the coarsest level
    R: CsrBlock | None = None   # transpose of P, stored explicitly
    eig_bounds: tuple[float, float] | None = None
    lu: object = None           # dense factorization, coarsest level only

    @property
    def nrows(self) -> int:
        return self.A.nrows


@dataclass
class Hierarchy:
    levels: list[Level] = field(default_factory=list)
    params: AmgParams | None = None
    mixed_precision: bool = False

    @property
    def nlevels(self) -> int:
        return len(self.levels)

    @property
    def coarsest(self) -> Level:
        return self.levels[-1]

    def operator_complexity(self) -> float:
        return sum(lv.A.nnz for lv in self.levels) / self.levels[0].A.nnz

    def stats_report(self) -> str:
        lines = ["level        rows          nnz  precision"]
        for i, lv in enumerate(self.levels):
            lines.append(
                f"{i:>5} {lv.nrows:>11} {lv.A.nnz:>12}  {lv.precision.value}"
            )
        lines.append(f"operator complexity: {self.operator_complexity():.3f}")
        return "\n".join(lines)


def _coarsen_with_retry(As, S, mode, num_paths):
    """Coarsen + interpolate, flipping degenerate F-rows to C once."""
    splitting = coarsen(S, mode, num_paths)
    try:
        P = interpolate(As, S, splitting)
    except SetupDegeneracyError as err:
        splitting = splitting.copy()
        splitting[np.asarray(err.rows, dtype=np.int64)] = CPOINT
        P = interpolate(As, S, splitting)  # second failure propagates
    return splitting, P


def setup(
    A_fine: CsrBlock,
    params: AmgParams | None = None,
    mixed_precision: bool = False,
    topology: tuple[int, int] = (1, 1),
) -> Hierarchy:
    """Build the level hierarchy for A_fine.

    Coarsening loops strength -> split -> interpolate -> Galerkin until
    the operator is at most ``coarse_matrix_size`` rows, ``max_levels``
    is reached, or coarsening stalls.  Aggressive coarsening is applied
    on the first ``agg_num_levels`` levels.  With ``mixed_precision``,
    every level but the finest stores its operator and transfer
    operators at reduced precision.
    """
    if A_fine.nrows != A_fine.ncols:
        raise InvalidArgumentError("AMG setup requires a square matrix")
    params = params or AmgParams()

    chain: list[sp.csr_matrix] = [A_fine.to_scipy()]
    transfers: list[CsrBlock] = []
    while (
        chain[-1].shape[0] > params.coarse_matrix_size
        and len(chain) < params.max_levels
    ):
        As = chain[-1]
        S = strength_graph(As, params.strength_threshold)
        mode = "aggressive" if len(chain) - 1 < params.agg_num_levels else "standard"
        splitting, P = _coarsen_with_retry(As, S, mode, params.num_paths)
        ncoarse = P.ncols
        if ncoarse == 0 or ncoarse > params.stall_ratio * As.shape[0]:
            break  # coarsening stalled; truncate the hierarchy here
        R = CsrBlock.from_scipy(P.to_scipy().T.tocsr())
        Ac = galerkin(R, As, P)
        transfers.append(P)
        chain.append(Ac.to_scipy())

    levels: list[Level] = []
    for l, As in enumerate(chain):
        precision = (
            PrecisionTag.REDUCED if (mixed_precision and l > 0) else PrecisionTag.FULL
        )
        block = CsrBlock.from_scipy(As, precision)
        seg = SegmentedMatrix.from_global(block, topology)
        lv = Level(A=seg, precision=precision)
        if l < len(transfers):
            P = transfers[l]
            R = CsrBlock.from_scipy(P.to_scipy().T.tocsr())
            if precision is PrecisionTag.REDUCED:
                # transfer operators stored on a reduced level follow it
                P = P.with_precision(PrecisionTag.REDUCED)
                R = R.with_precision(PrecisionTag.REDUCED)
            lv.P, lv.R = P, R
        levels.append(lv)
    return Hierarchy(levels=levels, params=params, mixed_precision=mixed_precision)
