"""Level-1 multi-RHS vector kernels, plus the closed set of fused kernels.

All operations are collective over a :class:`TeamScope` (worker team +
row partition): each leaf processes its own row range and dot products
finish with the fixed-order hierarchical reduction.  Without a scope
they run over the whole row range inline, which produces the same
result as a 1x1 topology.

Per-RHS iteration coefficients are plain float64 arrays of shape (m,)
("RhsScalars"); scalar inputs broadcast.

Fused kernel patterns (closed set, derived from what the merged
CG/BiCGStab formulations need):

* ``update_dot``      y := a*x + b*y, returning dot(y, y)
* ``paired_update``   y1 += a*u + b*s and y2 := s - c*w in one shared pass
* ``update_dot2``     y := u - c*w, returning (dot(z, y), dot(y, y))
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels as K
from .core import BlockVector, Partition, check_same_shape
from .errors import InvalidArgumentError
from .instrument import counters
from .parallel import WorkerTeam, staged_sum

__all__ = [
    "TeamScope",
    "as_scalars",
    "axpby",
    "add2_scaled",
    "dot",
    "dot_many",
    "norm2",
    "update_dot",
    "paired_update",
    "update_dot2",
    "merged_update_dot",
    "FUSION_PATTERNS",
]


@dataclass
class TeamScope:
    """Execution scope for collective kernels."""

    team: WorkerTeam | None
    part: Partition

    @property
    def nleaves(self) -> int:
        return self.part.nleaves

    def ranges(self):
        return self.part.leaf_ranges

    def run(self, fn):
        """fn(leaf, begin, end) on every leaf; returns per-leaf results."""
        if self.team is not None and self.team.nleaves > 1:
            return self.team.collective(
                lambda ctx: fn(ctx.leaf_id, *self.part.leaf_range(ctx.leaf_id))
            )
        return [fn(leaf, b, e) for leaf, (b, e) in enumerate(self.ranges())]

    def reduce(self, partials: list[np.ndarray]) -> np.ndarray:
        from .parallel import Topology

        topo = (
            self.team.topology
            if self.team is not None
            else Topology(self.part.nnumas, self.part.ncores)
        )
        return staged_sum(np.stack(partials), topo)


def _whole(x: BlockVector) -> TeamScope:
    from .core import make_partition

    return TeamScope(None, make_partition(x.nrows, (1, 1)))


def as_scalars(a, m: int) -> np.ndarray:
    """Coerce a scalar or length-m sequence to an (m,) float64 array."""
    arr = np.asarray(a, dtype=np.float64).reshape(-1)
    if arr.size == 1:
        arr = np.full(m, arr[0])
    if arr.size != m:
        raise InvalidArgumentError(f"expected {m} per-RHS scalars, got {arr.size}")
    return arr


def _require_init(*vecs: BlockVector):
    for v in vecs:
        if not v.flags.initialized:
            raise InvalidArgumentError("operand vector is not initialized")


# ---------------------------------------------------------------------------
# axpby and friends
# ---------------------------------------------------------------------------

def axpby(a, x: BlockVector, b, y: BlockVector, scope: TeamScope | None = None):
    """y := a*x + b*y columnwise. Honors certified-zero flags."""
    check_same_shape(x, y)
    m = y.nrhs
    a = as_scalars(a, m)
    b = as_scalars(b, m)
    if scope is None:
        scope = _whole(y)

    a_zero = not a.any()
    b_zero = not b.any()
    x_zero = x.flags.zero or a_zero
    y_zero = y.flags.zero or b_zero
    if not x_zero:
        _require_init(x)
    if not b_zero:
        _require_init(y)

    if x_zero and y_zero:
        y.set_zero()
        counters.record_skip("axpby")
        return
    if x_zero:
        if np.all(b == 1.0):
            counters.record_skip("axpby")  # y unchanged, kernel body skipped
            return
        zero = np.zeros(m)
        scope.run(lambda leaf, lo, hi: K.axpby(zero, y.data[lo:hi], b, y.data[lo:hi]))
        counters.record("axpby", reads=1, writes=1, flops=y.data.size)
        y.mark_written()
        return
    if y_zero:
        zero = np.zeros(m)
        scope.run(lambda leaf, lo, hi: K.axpby(a, x.data[lo:hi], zero, y.data[lo:hi]))
        counters.record("axpby", reads=1, writes=1, flops=y.data.size)
        y.mark_written()
        return
    scope.run(lambda leaf, lo, hi: K.axpby(a, x.data[lo:hi], b, y.data[lo:hi]))
    counters.record("axpby", reads=2, writes=1, flops=3 * y.data.size)
    y.mark_written()


def add2_scaled(y: BlockVector, a, u: BlockVector, b, v: BlockVector,
                scope: TeamScope | None = None):
    """y += a*u + b*v columnwise (three-operand linear update)."""
    check_same_shape(u, y)
    check_same_shape(v, y)
    _require_init(y, u, v)
    m = y.nrhs
    a = as_scalars(a, m)
    b = as_scalars(b, m)
    if scope is None:
        scope = _whole(y)
    scope.run(
        lambda leaf, lo, hi: K.add2_scaled(
            y.data[lo:hi], a, u.data[lo:hi], b, v.data[lo:hi]
        )
    )
    counters.record("add2_scaled", reads=3, writes=1, flops=4 * y.data.size)
    y.mark_written()


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def dot(x: BlockVector, y: BlockVector, scope: TeamScope | None = None) -> np.ndarray:
    """Per-column inner products, full-precision staged reduction."""
    check_same_shape(x, y)
    if x.flags.zero or y.flags.zero:
        counters.record_skip("dot")
        return np.zeros(x.nrhs)
    _require_init(x, y)
    if scope is None:
        scope = _whole(x)
    partials = scope.run(
        lambda leaf, lo, hi: K.dot_partial(x.data[lo:hi], y.data[lo:hi])
    )
    counters.record("dot", reads=2, flops=2 * x.data.size)
    return scope.reduce(partials)


def norm2(x: BlockVector, scope: TeamScope | None = None) -> np.ndarray:
    """Per-column Euclidean norms."""
    return np.sqrt(dot(x, x, scope))


def dot_many(pairs, scope: TeamScope | None = None) -> list[np.ndarray]:
    """Several inner products finished by one grouped reduction.

    ``pairs`` is a sequence of (x, y) vector pairs; the per-leaf partial
    results are concatenated so a single staged reduction (one
    synchronization point) finishes all of them.
    """
    if not pairs:
        return []
    x0 = pairs[0][0]
    m = x0.nrhs
    for x, y in pairs:
        check_same_shape(x, x0)
        check_same_shape(y, x0)
        _require_init(x, y)
    if scope is None:
        scope = _whole(x0)

    def local(leaf, lo, hi):
        return np.concatenate(
            [K.dot_partial(x.data[lo:hi], y.data[lo:hi]) for x, y in pairs]
        )

    partials = scope.run(local)
    counters.record("dot", reads=2 * len(pairs),
                    flops=2 * x0.data.size * len(pairs))
    flat = scope.reduce(partials)
    return [flat[i * m:(i + 1) * m] for i in range(len(pairs))]


# ---------------------------------------------------------------------------
# fused kernels
# ---------------------------------------------------------------------------

def update_dot(a, x: BlockVector, b, y: BlockVector,
               scope: TeamScope | None = None) -> np.ndarray:
    """Fused y := a*x + b*y followed by dot(y, y) in the same pass."""
    check_same_shape(x, y)
    _require_init(x, y)
    m = y.nrhs
    a = as_scalars(a, m)
    b = as_scalars(b, m)
    if scope is None:
        scope = _whole(y)
    partials = scope.run(
        lambda leaf, lo, hi: K.fused_update_dot(a, x.data[lo:hi], b, y.data[lo:hi])
    )
    counters.record("update_dot", reads=2, writes=1, flops=5 * y.data.size)
    y.mark_written()
    return scope.reduce(partials)


def paired_update(y1: BlockVector, a, u: BlockVector, b, s: BlockVector,
                  y2: BlockVector, c, w: BlockVector,
                  scope: TeamScope | None = None):
    """Fused pair sharing one read pass over s:

    y1 += a*u + b*s;   y2 := s - c*w
    """
    for v in (u, s, y2, w):
        check_same_shape(v, y1)
    _require_init(y1, u, s, w)
    m = y1.nrhs
    a = as_scalars(a, m)
    b = as_scalars(b, m)
    c = as_scalars(c, m)
    if scope is None:
        scope = _whole(y1)
    scope.run(
        lambda leaf, lo, hi: K.fused_paired_update(
            y1.data[lo:hi], a, u.data[lo:hi], b, s.data[lo:hi],
            y2.data[lo:hi], c, w.data[lo:hi],
        )
    )
    counters.record("paired_update", reads=4, writes=2, flops=6 * y1.data.size)
    y1.mark_written()
    y2.mark_written()


def update_dot2(y: BlockVector, u: BlockVector, c, w: BlockVector,
                z: BlockVector, scope: TeamScope | None = None):
    """Fused y := u - c*w with (dot(z, y), dot(y, y)) in the same pass."""
    for v in (u, w, z):
        check_same_shape(v, y)
    _require_init(u, w, z)
    m = y.nrhs
    c = as_scalars(c, m)
    if scope is None:
        scope = _whole(y)
    partials = scope.run(
        lambda leaf, lo, hi: K.fused_update_dot2(
            y.data[lo:hi], u.data[lo:hi], c, w.data[lo:hi], z.data[lo:hi]
        )
    )
    counters.record("update_dot2", reads=3, writes=1, flops=6 * y.data.size)
    y.mark_written()
    d1 = scope.reduce([p[0] for p in partials])
    d2 = scope.reduce([p[1] for p in partials])
    return d1, d2


FUSION_PATTERNS = ("update_dot", "paired_update", "update_dot2")


def merged_update_dot(pattern: str, scope: TeamScope | None = None, **operands):
    """Dispatch one of the enumerated fusion patterns by name.

    Results are exact-arithmetic-equal to the unfused composition; the
    fused form makes strictly fewer memory passes (see counters).
    """
    if pattern == "update_dot":
        return update_dot(operands["a"], operands["x"], operands["b"],
                          operands["y"], scope)
    if pattern == "paired_update":
        return paired_update(operands["y1"], operands["a"], operands["u"],
                             operands["b"], operands["s"], operands["y2"],
                             operands["c"], operands["w"], scope)
    if pattern == "update_dot2":
        return update_dot2(operands["y"], operands["u"], operands["c"],
                           operands["w"], operands["z"], scope)
    raise InvalidArgumentError(f"unknown fusion pattern {pattern!r}")
