"""Iterative solvers: CG, three BiCGStab formulations, multigrid.

All solvers run every right-hand-side column through the same iteration
jointly, with one scalar set per column.  Design rules shared by the
Krylov drivers:

* convergence is judged per column against ``rel_tolerance`` times the
  right-hand-side norm (columns with a zero right-hand side use the
  absolute residual norm);
* converged columns keep iterating alongside the others -- their
  coefficients collapse to zero instead of being masked out;
* breakdown (a vanishing denominator while the column's residual is
  still nonzero) raises :class:`~mrsolve.errors.BreakdownError` naming
  the offending column;
* the final relative residual reported in :class:`SolveStats` is always
  recomputed from a true residual, never from a recurrence.

The reordered and pipelined BiCGStab formulations trade extra vector
work and recurrence-based scalars for fewer global reductions per
iteration (two and two-overlappable respectively, against three in the
classical method).  They are exact-arithmetic equivalent to the
classical method; in floating point their iterate sequences drift apart
slowly, which is why variant-equivalence is a tolerance statement and
not a bitwise one.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import kernels as K
from .amg import AmgParams, Hierarchy, setup as amg_setup
from .blas import add2_scaled, axpby, dot, dot_many, norm2, paired_update, \
    update_dot, update_dot2
from .blas2 import jacobi_sweep, matrix_scope, residual, sgs_sweep, spmv
from .core import BlockVector, CsrBlock, SegmentedMatrix
from .errors import (
    BreakdownError,
    ConfigurationError,
    InstabilityError,
    InvalidArgumentError,
    SingularMatrixError,
)
from .instrument import counters
from .params import METHOD_FAMILIES, ParamTree

__all__ = [
    "SolverRole",
    "SolveStats",
    "cg_solve",
    "bicgstab_solve",
    "MultiGrid",
    "multigrid_solve",
    "chebyshev_apply",
    "estimate_eig_bounds",
    "direct_solve",
    "prepare",
    "ConfiguredSolver",
    "solve",
]

#: pipelined-recurrence safeguard: recomputed-over-recursive residual
#: norm ratios beyond this indicate the recurrences have drifted.
DRIFT_LIMIT = 1e3


class SolverRole(enum.Enum):
    """Roles a method instance can fill in a composed solver."""

    SOLVER = "solver"
    PRECONDITIONER = "preconditioner"
    PRE_SMOOTHER = "pre_smoother"
    POST_SMOOTHER = "post_smoother"


@dataclass
class SolveStats:
    """Outcome of one solve: per-column where per-column makes sense."""

    iterations: int
    converged: np.ndarray            # (m,) bool
    final_rel_residual: np.ndarray   # (m,) from a recomputed true residual
    residual_history: list = field(default_factory=list)
    method: str = ""

    @property
    def all_converged(self) -> bool:
        return bool(np.all(self.converged))


# ---------------------------------------------------------------------------
# shared helpers
# ---------------------------------------------------------------------------

def _copy_into(dst: BlockVector, src: BlockVector):
    dst.data[:] = src.data
    dst.flags.zero = src.flags.zero
    dst.flags.initialized = True
    counters.record("copy", reads=1, writes=1)


def _b_scale(bnorm: np.ndarray) -> np.ndarray:
    # zero right-hand-side columns switch to an absolute criterion
    return np.where(bnorm > 0.0, bnorm, 1.0)


def _coef(num: np.ndarray, den: np.ndarray, rnorm: np.ndarray,
          what: str) -> np.ndarray:
    """num/den per column; zero denominator on an unconverged column is
    a breakdown, on a fully converged column the coefficient is zero."""
    den = np.asarray(den, dtype=np.float64)
    num = np.asarray(num, dtype=np.float64)
    bad = (den == 0.0) & (rnorm > 0.0)
    if bad.any():
        raise BreakdownError(what, column=int(np.argmax(bad)))
    out = np.zeros_like(num)
    nz = den != 0.0
    out[nz] = num[nz] / den[nz]
    return out


def _true_rel_residual(A, X, B, team, bscale):
    r = BlockVector.uninitialized(B.nrows, B.nrhs)
    residual(A, X, B, r, team)
    scope = matrix_scope(A, team)
    return norm2(r, scope) / bscale


def _finish(A, X, B, team, bscale, tol, iterations, history, method) -> SolveStats:
    rel = _true_rel_residual(A, X, B, team, bscale)
    return SolveStats(
        iterations=iterations,
        converged=rel <= tol,
        final_rel_residual=rel,
        residual_history=history,
        method=method,
    )


def _apply_precond(precond, r: BlockVector) -> BlockVector:
    return r if precond is None else precond.apply(r)


# ---------------------------------------------------------------------------
# conjugate gradients
# ---------------------------------------------------------------------------

def cg_solve(A: SegmentedMatrix, B: BlockVector, X: BlockVector,
             precond=None, rel_tolerance: float = 1e-8,
             max_iters: int = 100, team=None) -> SolveStats:
    """Preconditioned conjugate gradients (SPD systems)."""
    scope = matrix_scope(A, team)
    n, m = B.nrows, B.nrhs
    bscale = _b_scale(norm2(B, scope))

    r = BlockVector.uninitialized(n, m)
    q = BlockVector.uninitialized(n, m)
    residual(A, X, B, r, team)
    rnorm = norm2(r, scope)
    history = [rnorm / bscale]

    z = _apply_precond(precond, r)
    rho = dot(r, z, scope)
    p = z.copy()

    it = 0
    while it < max_iters and not np.all(rnorm <= rel_tolerance * bscale):
        it += 1
        spmv(A, p, q, team)
        pq = dot(p, q, scope)
        alpha = _coef(rho, pq, rnorm, "CG search-direction curvature vanished")
        axpby(alpha, p, 1.0, X, scope)
        axpby(-alpha, q, 1.0, r, scope)
        rnorm = norm2(r, scope)
        history.append(rnorm / bscale)
        if np.all(rnorm <= rel_tolerance * bscale):
            break
        z = _apply_precond(precond, r)
        rho_new = dot(r, z, scope)
        beta = _coef(rho_new, rho, rnorm, "CG rho vanished")
        axpby(1.0, z, beta, p, scope)
        rho = rho_new

    return _finish(A, X, B, team, bscale, rel_tolerance, it, history, "CG")


# ---------------------------------------------------------------------------
# BiCGStab family
# ---------------------------------------------------------------------------

_VARIANTS = ("classical", "reordered", "pipelined")


def bicgstab_solve(A: SegmentedMatrix, B: BlockVector, X: BlockVector,
                   variant: str = "classical", precond=None,
                   merged: bool = False, rel_tolerance: float = 1e-8,
                   max_iters: int = 100, team=None) -> SolveStats:
    """BiCGStab in one of three reduction-scheduling formulations.

    ``merged`` routes the vector updates through the fused kernels
    (same arithmetic per element, fewer memory passes).
    """
    if variant not in _VARIANTS:
        raise InvalidArgumentError(
            f"unknown BiCGStab variant {variant!r}; expected one of {_VARIANTS}"
        )
    fn = {
        "classical": _bicgstab_classical,
        "reordered": _bicgstab_reordered,
        "pipelined": _bicgstab_pipelined,
    }[variant]
    return fn(A, B, X, precond, merged, rel_tolerance, max_iters, team)


def _bicgstab_classical(A, B, X, precond, merged, tol, max_iters, team):
    scope = matrix_scope(A, team)
    n, m = B.nrows, B.nrhs
    bscale = _b_scale(norm2(B, scope))
    threshold = tol * bscale

    r = BlockVector.uninitialized(n, m)
    residual(A, X, B, r, team)
    r0 = r.copy()
    rnorm = norm2(r, scope)
    history = [rnorm / bscale]

    p = BlockVector.uninitialized(n, m)
    v = BlockVector.uninitialized(n, m)
    s = BlockVector.uninitialized(n, m)
    t = BlockVector.uninitialized(n, m)
    ph = BlockVector.uninitialized(n, m) if precond is not None else p
    rho = alpha = omega = None
    rho_next = None

    it = 0
    while it < max_iters and not np.all(rnorm <= threshold):
        it += 1
        if it == 1:
            rho = dot(r0, r, scope)
            _copy_into(p, r)
        else:
            rho_prev, rho = rho, (rho_next if rho_next is not None
                                  else dot(r0, r, scope))
            beta = _coef(rho, rho_prev, rnorm, "BiCGStab rho vanished") \
                * _coef(alpha, omega, rnorm, "BiCGStab omega vanished")
            axpby(-omega, v, 1.0, p, scope)     # p -= omega * v
            axpby(1.0, r, beta, p, scope)       # p  = r + beta * p
        if precond is not None:
            _copy_into(ph, precond.apply(p))
        spmv(A, ph, v, team)
        rv = dot(r0, v, scope)
        alpha = _coef(rho, rv, rnorm, "BiCGStab (r0, Ap) vanished")

        if merged:
            _copy_into(s, v)
            ss = update_dot(1.0, r, -alpha, s, scope)    # s := r - alpha v
        else:
            _copy_into(s, r)
            axpby(-alpha, v, 1.0, s, scope)
            ss = None
        sh = precond.apply(s) if precond is not None else s
        spmv(A, sh, t, team)
        if merged:
            # identity update on t piggybacks both dots on one pass
            ts, tt = update_dot2(t, t, 0.0, t, s, scope)
        else:
            ts, tt = dot_many([(t, s), (t, t)], scope)
        if ss is None:
            ss = dot(s, s, scope) if np.any(tt == 0.0) else None
        snorm = np.sqrt(ss) if ss is not None else rnorm
        omega = _coef(ts, tt, snorm, "BiCGStab stabilization step vanished")

        if merged and precond is None:
            # X += alpha p + omega s; r := s - omega t  (shared pass over s)
            paired_update(X, alpha, p, omega, s, r, omega, t, scope)
            rho_next, rr = dot_many([(r0, r), (r, r)], scope)
        elif merged:
            add2_scaled(X, alpha, ph, omega, sh, scope)
            rho_next, rr = update_dot2(r, s, omega, t, r0, scope)
        else:
            add2_scaled(X, alpha, ph, omega, sh, scope)
            _copy_into(r, s)
            axpby(-omega, t, 1.0, r, scope)
            rho_next, rr = dot_many([(r0, r), (r, r)], scope)
        rnorm = np.sqrt(np.maximum(rr, 0.0))
        history.append(rnorm / bscale)

    name = "BiCGStab" + ("/merged" if merged else "")
    return _finish(A, X, B, team, bscale, tol, it, history, name)


def _bicgstab_reordered(A, B, X, precond, merged, tol, max_iters, team):
    """Classical recurrences with the scalars regrouped into two
    reductions per iteration; rho and the residual norm come from the
    linear relations rho' = (r0,s) - omega (r0,t) and
    ||r'||^2 = (s,s) - 2 omega (t,s) + omega^2 (t,t)."""
    scope = matrix_scope(A, team)
    n, m = B.nrows, B.nrhs
    bscale = _b_scale(norm2(B, scope))
    threshold = tol * bscale

    r = BlockVector.uninitialized(n, m)
    residual(A, X, B, r, team)
    r0 = r.copy()
    rnorm = norm2(r, scope)
    history = [rnorm / bscale]
    rho = dot(r0, r, scope)

    p = BlockVector.uninitialized(n, m)
    v = BlockVector.uninitialized(n, m)
    s = BlockVector.uninitialized(n, m)
    t = BlockVector.uninitialized(n, m)
    ph = BlockVector.uninitialized(n, m) if precond is not None else p
    alpha = omega = None

    it = 0
    while it < max_iters and not np.all(rnorm <= threshold):
        it += 1
        if it == 1:
            _copy_into(p, r)
        if precond is not None:
            _copy_into(ph, precond.apply(p))
        spmv(A, ph, v, team)
        rv = dot(r0, v, scope)                           # reduction group 1
        alpha = _coef(rho, rv, rnorm, "BiCGStab (r0, Ap) vanished")

        if merged:
            _copy_into(s, v)
            update_dot(1.0, r, -alpha, s, scope)
        else:
            _copy_into(s, r)
            axpby(-alpha, v, 1.0, s, scope)
        sh = precond.apply(s) if precond is not None else s
        spmv(A, sh, t, team)

        ts, tt, r0s, r0t, ss = dot_many(                  # reduction group 2
            [(t, s), (t, t), (r0, s), (r0, t), (s, s)], scope
        )
        omega = _coef(ts, tt, np.sqrt(ss), "BiCGStab stabilization step vanished")
        rho_new = r0s - omega * r0t
        rr = np.maximum(ss - 2.0 * omega * ts + omega * omega * tt, 0.0)

        if merged and precond is None:
            paired_update(X, alpha, p, omega, s, r, omega, t, scope)
        else:
            add2_scaled(X, alpha, ph, omega, sh, scope)
            _copy_into(r, s)
            axpby(-omega, t, 1.0, r, scope)
        rnorm = np.sqrt(rr)
        history.append(rnorm / bscale)
        if np.all(rnorm <= threshold):
            break
        beta = _coef(rho_new, rho, rnorm, "BiCGStab rho vanished") \
            * _coef(alpha, omega, rnorm, "BiCGStab omega vanished")
        axpby(-omega, v, 1.0, p, scope)
        axpby(1.0, r, beta, p, scope)
        rho = rho_new

    name = "RBiCGStab" + ("/merged" if merged else "")
    return _finish(A, X, B, team, bscale, tol, it, history, name)


def _bicgstab_pipelined(A, B, X, precond, merged, tol, max_iters, team):
    """Pipelined formulation: per iteration two matrix products and two
    reduction groups, each overlappable with the neighbouring product.

    Preconditioning composes the operator (op = A o M) and the solver
    runs in the preconditioned variable; the accumulated correction is
    mapped back through M once at the end.  The recurrence-based
    residual is cross-checked against a recomputed one and a divergence
    beyond :data:`DRIFT_LIMIT` raises InstabilityError.
    """
    scope = matrix_scope(A, team)
    n, m = B.nrows, B.nrhs
    bscale = _b_scale(norm2(B, scope))
    threshold = tol * bscale

    def op(xv: BlockVector, out: BlockVector):
        if precond is None:
            spmv(A, xv, out, team)
        else:
            spmv(A, precond.apply(xv), out, team)

    # true residual of the incoming iterate; the recurrences then solve
    # op(zacc) = r_init from a zero initial guess
    r_init = BlockVector.uninitialized(n, m)
    residual(A, X, B, r_init, team)
    r = r_init.copy()
    r0 = r_init.copy()
    zacc = BlockVector.zeros(n, m)

    rnorm = norm2(r, scope)
    history = [rnorm / bscale]

    w = BlockVector.uninitialized(n, m)
    t = BlockVector.uninitialized(n, m)
    op(r, w)
    op(w, t)
    rho, r0w = dot_many([(r0, r), (r0, w)], scope)
    alpha = _coef(rho, r0w, rnorm, "BiCGStab (r0, Ar) vanished")

    p = BlockVector.uninitialized(n, m)
    s = BlockVector.uninitialized(n, m)
    z = BlockVector.uninitialized(n, m)
    q = BlockVector.uninitialized(n, m)
    y = BlockVector.uninitialized(n, m)
    v = BlockVector.uninitialized(n, m)
    chk = BlockVector.uninitialized(n, m)
    omega = np.zeros(m)

    def drift_check():
        op(zacc, chk)                       # chk := op(zacc)
        axpby(1.0, r_init, -1.0, chk, scope)  # chk := r_init - op(zacc)
        true_norm = norm2(chk, scope)
        rec = np.maximum(rnorm, np.finfo(np.float64).tiny)
        if np.any(true_norm / rec > DRIFT_LIMIT):
            raise InstabilityError(
                "pipelined residual recurrences drifted from the true residual"
            )

    it = 0
    while it < max_iters and not np.all(rnorm <= threshold):
        it += 1
        if it == 1:
            _copy_into(p, r)
            _copy_into(s, w)
            _copy_into(z, t)
        else:
            axpby(-omega, s, 1.0, p, scope)   # p = r + beta (p - omega s)
            axpby(1.0, r, beta, p, scope)
            axpby(-omega, z, 1.0, s, scope)   # s = w + beta (s - omega z)
            axpby(1.0, w, beta, s, scope)
            axpby(-omega, v, 1.0, z, scope)   # z = t + beta (z - omega v)
            axpby(1.0, t, beta, z, scope)
        _copy_into(q, r)
        axpby(-alpha, s, 1.0, q, scope)       # q = r - alpha s
        _copy_into(y, w)
        axpby(-alpha, z, 1.0, y, scope)       # y = w - alpha z

        qy, yy = dot_many([(q, y), (y, y)], scope)   # reduction group 1
        op(z, v)                                     # matrix product 1
        omega = _coef(qy, yy, rnorm, "BiCGStab stabilization step vanished")

        if merged:
            # zacc += alpha p + omega q; r := q - omega y (shared pass)
            paired_update(zacc, alpha, p, omega, q, r, omega, y, scope)
        else:
            add2_scaled(zacc, alpha, p, omega, q, scope)
            _copy_into(r, q)
            axpby(-omega, y, 1.0, r, scope)
        # w = y - omega (t - alpha v)
        axpby(-alpha, v, 1.0, t, scope)       # t := t - alpha v (consumed)
        _copy_into(w, y)
        axpby(-omega, t, 1.0, w, scope)
        op(w, t)                                     # matrix product 2

        rho_new, r0w, r0s, r0z, rr = dot_many(       # reduction group 2
            [(r0, r), (r0, w), (r0, s), (r0, z), (r, r)], scope
        )
        rnorm = np.sqrt(np.maximum(rr, 0.0))
        history.append(rnorm / bscale)
        beta = _coef(rho_new, rho, rnorm, "BiCGStab rho vanished") \
            * _coef(alpha, omega, rnorm, "BiCGStab omega vanished")
        r0s_next = r0w + beta * (r0s - omega * r0z)
        alpha = _coef(rho_new, r0s_next, rnorm, "BiCGStab (r0, s) vanished")
        rho = rho_new
        if it % 20 == 0 or np.all(rnorm <= threshold):
            drift_check()

    if precond is None:
        axpby(1.0, zacc, 1.0, X, scope)
    else:
        axpby(1.0, precond.apply(zacc), 1.0, X, scope)
    name = "PBiCGStab" + ("/merged" if merged else "")
    return _finish(A, X, B, team, bscale, tol, it, history, name)


# ---------------------------------------------------------------------------
# Chebyshev polynomial smoothing
# ---------------------------------------------------------------------------

def estimate_eig_bounds(A: SegmentedMatrix, team=None, iterations: int = 10,
                        seed: int = 12345) -> tuple[float, float]:
    """Spectral bounds for the Jacobi-scaled operator D^(-1) A.

    Ten power iterations estimate the largest eigenvalue; the upper
    bound is that estimate with a 10% safety margin, the lower bound a
    fixed 1/30 fraction of the upper.  Deterministic (fixed seed).
    """
    d = A.diagonal()
    if np.any(d == 0.0):
        from .errors import SingularDiagonalError
        raise SingularDiagonalError("eigenvalue estimation needs a nonzero diagonal")
    rng = np.random.default_rng(seed)
    vec = BlockVector.from_array(rng.standard_normal(A.nrows))
    w = BlockVector.uninitialized(A.nrows, 1)
    scope = matrix_scope(A, team)
    lam = 1.0
    for _ in range(iterations):
        spmv(A, vec, w, team)
        scope.run(lambda leaf, lo, hi: np.divide(
            w.data[lo:hi], d[lo:hi, None], out=w.data[lo:hi]))
        num = dot(vec, w, scope)[0]
        den = dot(vec, vec, scope)[0]
        lam = num / den
        wn = norm2(w, scope)[0]
        if wn == 0.0:
            break
        scope.run(lambda leaf, lo, hi: np.divide(
            w.data[lo:hi], wn, out=vec.data[lo:hi]))
        vec.mark_written()
    lam_max = 1.1 * abs(lam)
    return (lam_max / 30.0, lam_max)


def chebyshev_apply(A: SegmentedMatrix, b: BlockVector, x: BlockVector,
                    polynomial_order: int = 2,
                    eig_bounds: tuple[float, float] | None = None,
                    team=None):
    """One Chebyshev smoothing application on D^(-1) A, in place on x.

    Fixed flop count for a given order; contains no inner products, so
    it adds no synchronization points.
    """
    if polynomial_order < 1:
        raise InvalidArgumentError("polynomial_order must be >= 1")
    if eig_bounds is None:
        eig_bounds = estimate_eig_bounds(A, team)
    lmin, lmax = eig_bounds
    if not (0.0 < lmin < lmax):
        raise InvalidArgumentError(
            f"eigenvalue bounds must satisfy 0 < lmin < lmax, got {eig_bounds}"
        )
    d = A.diagonal()
    scope = matrix_scope(A, team)
    theta = 0.5 * (lmax + lmin)
    delta = 0.5 * (lmax - lmin)
    sigma = theta / delta
    rho = 1.0 / sigma

    n, m = b.nrows, b.nrhs
    r = BlockVector.uninitialized(n, m)
    residual(A, x, b, r, team)      # skips the product for a certified-zero x
    dv = BlockVector.uninitialized(n, m)

    def first(leaf, lo, hi):
        np.divide(r.data[lo:hi], d[lo:hi, None] * theta, out=dv.data[lo:hi])

    scope.run(first)
    dv.mark_written()
    counters.record("cheb_scale", reads=2, writes=1, flops=dv.data.size)
    axpby(1.0, dv, 1.0, x, scope)

    tmp = BlockVector.uninitialized(n, m) if polynomial_order > 1 else None
    for _ in range(polynomial_order - 1):
        spmv(A, dv, tmp, team)
        axpby(-1.0, tmp, 1.0, r, scope)       # r -= A dv
        rho_new = 1.0 / (2.0 * sigma - rho)

        def recur(leaf, lo, hi, c1=rho_new * rho, c2=2.0 * rho_new / delta):
            dv.data[lo:hi] *= c1
            dv.data[lo:hi] += c2 * (r.data[lo:hi] / d[lo:hi, None])

        scope.run(recur)
        counters.record("cheb_scale", reads=3, writes=1, flops=4 * dv.data.size)
        axpby(1.0, dv, 1.0, x, scope)
        rho = rho_new


# ---------------------------------------------------------------------------
# direct (dense) coarse solver
# ---------------------------------------------------------------------------

def _dense_lu(block: CsrBlock):
    dense = block.to_dense().astype(np.float64)
    lu, piv = scipy.linalg.lu_factor(dense, check_finite=False)
    udiag = np.abs(np.diag(lu))
    scale = max(np.abs(dense).max(), 1.0)
    if udiag.size and udiag.min() <= 1e-14 * scale:
        raise SingularMatrixError("matrix is singular to working precision")
    return lu, piv


def direct_solve(A, B: BlockVector, X: BlockVector, lu=None) -> SolveStats:
    """Dense LU solve (intended for coarse-level / small systems)."""
    block = A.to_global() if isinstance(A, SegmentedMatrix) else A
    if lu is None:
        lu = _dense_lu(block)
    X.data[:] = scipy.linalg.lu_solve(lu, B.data, check_finite=False)
    X.mark_written()
    counters.record("direct_solve", reads=1, writes=1,
                    flops=2 * block.nrows * block.nrows * B.nrhs)
    bnorm = np.sqrt(np.add.reduce(B.data * B.data, axis=0))
    rdat = B.data - block.to_dense().astype(np.float64) @ X.data
    rel = np.sqrt(np.add.reduce(rdat * rdat, axis=0)) / _b_scale(bnorm)
    return SolveStats(iterations=1, converged=rel <= 1e-8,
                      final_rel_residual=rel, residual_history=[rel],
                      method="Direct")


# ---------------------------------------------------------------------------
# multigrid
# ---------------------------------------------------------------------------

def _default_smoother_factory(level, team):
    def smooth(b, x):
        sgs_sweep(level.A, b, x, "symmetric", team)
    return smooth


class MultiGrid:
    """V-cycle driver over an algebraic hierarchy.

    Smoother factories are ``factory(level, team) -> smooth(b, x)``;
    the default is one hybrid symmetric Gauss-Seidel sweep.  The
    coarsest level is solved directly (dense LU, cached).
    """

    def __init__(self, hierarchy: Hierarchy, pre_smoother=None,
                 post_smoother=None, team=None, cycles: int = 1):
        if hierarchy.nlevels < 1:
            raise InvalidArgumentError("empty hierarchy")
        self.h = hierarchy
        self.team = team
        self.cycles = max(int(cycles), 1)
        pre = pre_smoother or _default_smoother_factory
        post = post_smoother or _default_smoother_factory
        fine_levels = hierarchy.levels[:-1]
        self.pre = [pre(lv, team) for lv in fine_levels]
        self.post = [post(lv, team) for lv in fine_levels]

    # -- transfers (sequential whole-vector products) --------------------
    @staticmethod
    def _transfer(op: CsrBlock, x: BlockVector, out: BlockVector, mode: int):
        K.csr_spmv(op.row_ptr, op.col_idx, op.values, x.data, out.data, mode)
        out.mark_written()
        counters.record("transfer", reads=1, writes=1,
                        flops=2 * op.nnz * x.nrhs)

    def _coarse_solve(self, level, b: BlockVector, x: BlockVector):
        if level.lu is None:
            level.lu = _dense_lu(level.A.to_global())
        x.data[:] = scipy.linalg.lu_solve(level.lu, b.data, check_finite=False)
        x.mark_written()
        counters.record("direct_solve", reads=1, writes=1)

    def _vcycle(self, l: int, b: BlockVector, x: BlockVector):
        level = self.h.levels[l]
        if l == self.h.nlevels - 1:
            self._coarse_solve(level, b, x)
            return
        self.pre[l](b, x)
        r = BlockVector.uninitialized(b.nrows, b.nrhs)
        residual(level.A, x, b, r, self.team)
        rc = BlockVector.uninitialized(level.R.nrows, b.nrhs)
        self._transfer(level.R, r, rc, K.MODE_ASSIGN)
        xc = BlockVector.zeros(level.R.nrows, b.nrhs)
        self._vcycle(l + 1, rc, xc)
        self._transfer(level.P, xc, x, K.MODE_ADD)   # x += P xc
        self.post[l](b, x)

    def cycle(self, b: BlockVector, x: BlockVector):
        """One V-cycle on the finest level, in place on x."""
        self._vcycle(0, b, x)

    def apply(self, r: BlockVector) -> BlockVector:
        """Preconditioner interface: cycles from a zero initial guess."""
        z = BlockVector.zeros(r.nrows, r.nrhs)
        for _ in range(self.cycles):
            self.cycle(r, z)
        return z

    def solve(self, B: BlockVector, X: BlockVector,
              rel_tolerance: float = 1e-8, max_iters: int = 100) -> SolveStats:
        return multigrid_solve(self, B, X, rel_tolerance=rel_tolerance,
                               max_iters=max_iters)


def multigrid_solve(hierarchy, B: BlockVector, X: BlockVector,
                    cycle: str = "V", pre_smoother=None, post_smoother=None,
                    rel_tolerance: float = 1e-8, max_iters: int = 100,
                    team=None) -> SolveStats:
    """Standalone multigrid: repeat V-cycles until the true residual on
    the finest level meets the tolerance."""
    if cycle != "V":
        raise InvalidArgumentError("only the V cycle is implemented")
    mg = (hierarchy if isinstance(hierarchy, MultiGrid)
          else MultiGrid(hierarchy, pre_smoother, post_smoother, team))
    A = mg.h.levels[0].A
    scope = matrix_scope(A, mg.team)
    bscale = _b_scale(norm2(B, scope))
    r = BlockVector.uninitialized(B.nrows, B.nrhs)
    residual(A, X, B, r, mg.team)    # skipped product for certified-zero X
    rel = norm2(r, scope) / bscale
    history = [rel]
    it = 0
    while it < max_iters and not np.all(rel <= rel_tolerance):
        it += 1
        mg.cycle(B, X)
        residual(A, X, B, r, mg.team)
        rel = norm2(r, scope) / bscale
        history.append(rel)
    return SolveStats(iterations=it, converged=rel <= rel_tolerance,
                      final_rel_residual=rel, residual_history=history,
                      method="MultiGrid")


# ---------------------------------------------------------------------------
# configured composition
# ---------------------------------------------------------------------------

class _SweepPrecond:
    """Stationary-sweep preconditioner: k sweeps from a zero guess."""

    def __init__(self, step, n: int):
        self._step = step
        self._n = n

    def apply(self, r: BlockVector) -> BlockVector:
        z = BlockVector.zeros(r.nrows, r.nrhs)
        self._step(r, z)
        return z


_VARIANT_OF = {"BiCGStab": "classical", "RBiCGStab": "reordered",
               "PBiCGStab": "pipelined"}


def _smoother_factory_from(plist, team):
    method = plist.method
    sweeps = plist.get_int("max_iters")
    if method == "Jacobi":
        weight = plist.get_float("weight")

        def factory(level, team=team):
            def smooth(b, x):
                for _ in range(sweeps):
                    jacobi_sweep(level.A, b, x, weight, team)
            return smooth
        return factory
    if method == "Gauss-Seidel":
        direction = plist.get_str("direction")

        def factory(level, team=team):
            def smooth(b, x):
                for _ in range(sweeps):
                    sgs_sweep(level.A, b, x, direction, team)
            return smooth
        return factory
    if method == "Chebyshev":
        order = plist.get_int("polynomial_order")

        def factory(level, team=team):
            def smooth(b, x):
                if level.eig_bounds is None:
                    level.eig_bounds = estimate_eig_bounds(level.A, team)
                chebyshev_apply(level.A, b, x, order, level.eig_bounds, team)
            return smooth
        return factory
    if method in _VARIANT_OF:
        variant = _VARIANT_OF[method]
        merged = bool(plist.get_int("merged"))

        def factory(level, team=team):
            def smooth(b, x):
                bicgstab_solve(level.A, b, x, variant, merged=merged,
                               rel_tolerance=0.0, max_iters=sweeps, team=team)
            return smooth
        return factory
    raise ConfigurationError(f"method {method!r} cannot act as a smoother")


def _build_preconditioner(plist, A_seg, A_global, tree, team):
    if plist is None:
        return None
    method = plist.method
    iters = plist.get_int("max_iters")
    if method == "Jacobi":
        weight = plist.get_float("weight")

        def step(r, z):
            for _ in range(iters):
                jacobi_sweep(A_seg, r, z, weight, team)
        return _SweepPrecond(step, iters)
    if method == "Gauss-Seidel":
        direction = plist.get_str("direction")

        def step(r, z):
            for _ in range(iters):
                sgs_sweep(A_seg, r, z, direction, team)
        return _SweepPrecond(step, iters)
    if method == "Chebyshev":
        order = plist.get_int("polynomial_order")
        bounds = estimate_eig_bounds(A_seg, team)

        def step(r, z):
            chebyshev_apply(A_seg, r, z, order, bounds, team)
        return _SweepPrecond(step, 1)
    if method in _VARIANT_OF:
        variant = _VARIANT_OF[method]
        merged = bool(plist.get_int("merged"))
        tol = plist.get_float("rel_tolerance")

        def step(r, z):
            bicgstab_solve(A_seg, r, z, variant, merged=merged,
                           rel_tolerance=tol, max_iters=iters, team=team)
        return _SweepPrecond(step, 1)
    if method == "MultiGrid":
        mg = _build_multigrid(plist, A_global, tree, team, cycles=iters)
        return mg
    raise ConfigurationError(f"method {method!r} cannot act as a preconditioner")


def _amg_params_from(plist) -> AmgParams:
    return AmgParams(
        strength_threshold=plist.get_float("mg_strength_threshold"),
        agg_num_levels=plist.get_int("mg_agg_num_levels"),
        num_paths=plist.get_int("mg_num_paths"),
        coarse_matrix_size=plist.get_int("mg_coarse_matrix_size"),
        max_levels=plist.get_int("mg_max_levels"),
    )


def _build_multigrid(plist, A_global: CsrBlock, tree: ParamTree, team,
                     cycles: int = 1) -> MultiGrid:
    if plist.get_str("mg_cycle") != "V":
        raise ConfigurationError("only the V cycle is implemented")
    topology = (team.topology.nnumas, team.topology.ncores) if team else (1, 1)
    hierarchy = amg_setup(
        A_global,
        _amg_params_from(plist),
        mixed_precision=bool(plist.get_int("mg_mixed_precision")),
        topology=topology,
    )
    pre = tree.role("pre_smoother")
    post = tree.role("post_smoother")
    return MultiGrid(
        hierarchy,
        pre_smoother=_smoother_factory_from(pre, team) if pre else None,
        post_smoother=_smoother_factory_from(post, team) if post else None,
        team=team,
        cycles=cycles,
    )


@dataclass
class ConfiguredSolver:
    """A validated, fully constructed method composition.

    Setup work (validation, AMG hierarchy construction, eigenvalue
    estimation, dense factorizations where eager) happens in
    :func:`prepare`; ``run`` only executes the solve phase.
    """

    method: str
    run: object                       # callable(B, X) -> SolveStats
    hierarchy: Hierarchy | None = None


def prepare(config: ParamTree, A, team=None) -> ConfiguredSolver:
    """Build the solver combination described by a parameter tree.

    ``A`` may be a global :class:`CsrBlock` or an already segmented
    matrix; segmentation follows the team topology.
    """
    if not config.finalized:
        config.set_defaults()
    violations = config.validate()
    if violations:
        raise ConfigurationError("; ".join(violations))

    if isinstance(A, SegmentedMatrix):
        A_seg, A_global = A, None
    else:
        topology = (team.topology.nnumas, team.topology.ncores) if team else (1, 1)
        A_seg = SegmentedMatrix.from_global(A, topology)
        A_global = A

    sp = config.role("solver")
    method = sp.method
    family = METHOD_FAMILIES[method]
    precond_list = config.role("preconditioner")

    def global_block() -> CsrBlock:
        return A_global if A_global is not None else A_seg.to_global()

    if family == "Direct":
        lu = _dense_lu(global_block())

        def run_direct(B, X):
            stats = direct_solve(A_seg, B, X, lu=lu)
            stats.method = method
            return stats
        return ConfiguredSolver(method, run_direct)

    tol = sp.get_float("rel_tolerance")
    iters = sp.get_int("max_iters")

    if family == "MultiGrid":
        if precond_list is not None:
            raise ConfigurationError("MultiGrid solver takes no preconditioner")
        mg = _build_multigrid(sp, global_block(), config, team)
        return ConfiguredSolver(
            method, lambda B, X: mg.solve(B, X, tol, iters), mg.h
        )

    precond = _build_preconditioner(precond_list, A_seg, global_block()
                                    if precond_list is not None
                                    and precond_list.method == "MultiGrid"
                                    else A_global, config, team)
    hierarchy = precond.h if isinstance(precond, MultiGrid) else None

    if family == "CG":
        return ConfiguredSolver(
            method,
            lambda B, X: cg_solve(A_seg, B, X, precond, tol, iters, team),
            hierarchy,
        )
    if family == "BiCGStab":
        variant = _VARIANT_OF[method]
        merged = bool(sp.get_int("merged"))
        return ConfiguredSolver(
            method,
            lambda B, X: bicgstab_solve(A_seg, B, X, variant, precond,
                                        merged=merged, rel_tolerance=tol,
                                        max_iters=iters, team=team),
            hierarchy,
        )
    if family == "Jacobi":
        weight = sp.get_float("weight")

        def jstep(b, x):
            jacobi_sweep(A_seg, b, x, weight, team)
        return ConfiguredSolver(
            method,
            lambda B, X: _stationary_solve(A_seg, B, X, jstep, tol, iters,
                                           team, method),
        )
    if family == "Gauss-Seidel":
        direction = sp.get_str("direction")

        def gstep(b, x):
            sgs_sweep(A_seg, b, x, direction, team)
        return ConfiguredSolver(
            method,
            lambda B, X: _stationary_solve(A_seg, B, X, gstep, tol, iters,
                                           team, method),
        )
    raise ConfigurationError(f"method {method!r} cannot act as a solver")


def solve(config: ParamTree, A, B: BlockVector, X: BlockVector,
          team=None) -> SolveStats:
    """Prepare and run the solver combination described by ``config``."""
    return prepare(config, A, team).run(B, X)


def _stationary_solve(A, B, X, step, tol, max_iters, team, method) -> SolveStats:
    scope = matrix_scope(A, team)
    bscale = _b_scale(norm2(B, scope))
    r = BlockVector.uninitialized(B.nrows, B.nrhs)
    residual(A, X, B, r, team)
    rel = norm2(r, scope) / bscale
    history = [rel]
    it = 0
    while it < max_iters and not np.all(rel <= tol):
        it += 1
        step(B, X)
        residual(A, X, B, r, team)
        rel = norm2(r, scope) / bscale
        history.append(rel)
    return SolveStats(iterations=it, converged=rel <= tol,
                      final_rel_residual=rel, residual_history=history,
                      method=method)
