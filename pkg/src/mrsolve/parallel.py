"""Hierarchical worker topology, synchronization, and halo exchange.

A single-process worker team stands in for the node/numa/core rank
hierarchy: every leaf worker is a thread pinned to a (numa, core)
coordinate, data lives in shared numpy buffers, and collectives are
bulk-synchronous.  Reductions run in a fixed core -> numa -> node stage
order with ascending ids inside each stage, which makes every collective
bitwise deterministic for a fixed topology.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from .core import BlockVector, Partition, SegmentedMatrix
from .errors import InvalidArgumentError, ShapeMismatchError

__all__ = [
    "Topology",
    "WorkerTeam",
    "WorkerCtx",
    "ExchangePlan",
    "HaloFragments",
    "init",
    "parse_topology",
    "build_exchange_plan",
    "halo_exchange",
    "staged_sum",
]

_COLLECTIVE_TIMEOUT = 600.0  # seconds; misuse guard, not a tuning knob


@dataclass(frozen=True)
class Topology:
    """Worker hierarchy: one node, nnumas NUMA groups, ncores per group."""

    nnumas: int
    ncores: int
    nnodes: int = 1

    def __post_init__(self):
        if self.nnumas < 1 or self.ncores < 1 or self.nnodes != 1:
            raise InvalidArgumentError(
                f"invalid topology (nnumas={self.nnumas}, ncores={self.ncores})"
            )

    @property
    def nleaves(self) -> int:
        return self.nnumas * self.ncores

    def numa_of(self, leaf: int) -> int:
        return leaf // self.ncores

    def core_of(self, leaf: int) -> int:
        return leaf % self.ncores

    def as_tuple(self) -> tuple[int, int]:
        return (self.nnumas, self.ncores)


def parse_topology(spec: str) -> Topology:
    """Parse a "nnumas=N:ncores=M" colon-separated key=value string."""
    values = {"nnumas": 1, "ncores": 1}
    if spec.strip():
        for item in spec.split(":"):
            if "=" not in item:
                raise InvalidArgumentError(f"malformed topology item {item!r}")
            key, _, val = item.partition("=")
            key = key.strip()
            if key not in values:
                raise InvalidArgumentError(f"unknown topology key {key!r}")
            try:
                values[key] = int(val)
            except ValueError as exc:
                raise InvalidArgumentError(f"non-integer topology value {val!r}") from exc
    return Topology(values["nnumas"], values["ncores"])


def staged_sum(partials: np.ndarray, topology: Topology) -> np.ndarray:
    """Fixed-order hierarchical sum of per-leaf partial vectors.

    Stage 1 folds each NUMA group's cores in ascending core id, stage 2
    folds the NUMA results in ascending numa id (the node stage is
    trivial at desk scale).  The fold order is the determinism contract.
    """
    partials = np.asarray(partials, dtype=np.float64)
    m = partials.shape[1]
    numa_totals = []
    for u in range(topology.nnumas):
        acc = np.zeros(m)
        for c in range(topology.ncores):
            acc = acc + partials[u * topology.ncores + c]
        numa_totals.append(acc)
    total = np.zeros(m)
    for u in range(topology.nnumas):
        total = total + numa_totals[u]
    return total


class WorkerCtx:
    """Per-worker view of the team inside a collective."""

    __slots__ = ("team", "leaf_id", "numa_id", "core_id")

    def __init__(self, team: "WorkerTeam", leaf_id: int):
        self.team = team
        self.leaf_id = leaf_id
        self.numa_id = team.topology.numa_of(leaf_id)
        self.core_id = team.topology.core_of(leaf_id)

    def barrier(self, scope: str = "team"):
        """Block until every member of the scope arrives.

        Scopes: "team" (all leaves), "numa-group" (leaves sharing this
        worker's NUMA id), "core-group" (the single leaf itself; no-op).
        """
        if scope == "team":
            if self.team.topology.nleaves > 1:
                self.team._team_barrier.wait(timeout=_COLLECTIVE_TIMEOUT)
        elif scope == "numa-group":
            if self.team.topology.ncores > 1:
                self.team._numa_barriers[self.numa_id].wait(timeout=_COLLECTIVE_TIMEOUT)
        elif scope == "core-group":
            pass
        else:
            raise InvalidArgumentError(f"unknown barrier scope {scope!r}")

    def allreduce_sum(self, values: np.ndarray, scope: str = "team") -> np.ndarray:
        """Staged deterministic sum; every scope member gets the same result.

        Each worker deposits its contribution, then independently folds
        the deposits in the fixed stage order, so all returned arrays
        are bitwise identical.
        """
        values = np.asarray(values, dtype=np.float64).reshape(-1)
        topo = self.team.topology
        slots = self.team._reduce_slots
        slots[self.leaf_id] = values
        self.barrier("team" if scope == "team" else "numa-group")
        if scope == "team":
            result = staged_sum(np.stack([slots[i] for i in range(topo.nleaves)]), topo)
        elif scope == "numa-group":
            base = self.numa_id * topo.ncores
            acc = np.zeros(len(values))
            for c in range(topo.ncores):
                acc = acc + slots[base + c]
            result = acc
        else:
            raise InvalidArgumentError(f"unknown reduction scope {scope!r}")
        # keep deposits alive until every member has read them
        self.barrier("team" if scope == "team" else "numa-group")
        return result


class WorkerTeam:
    """Persistent team of leaf-worker threads executing collectives.

    Every collective is SPMD: the same callable runs on each worker with
    its own :class:`WorkerCtx`.  With a single leaf the call runs inline.
    """

    def __init__(self, topology: Topology):
        self.topology = topology
        n = topology.nleaves
        self._team_barrier = threading.Barrier(n)
        self._numa_barriers = [
            threading.Barrier(topology.ncores) for _ in range(topology.nnumas)
        ]
        self._reduce_slots: list = [None] * n
        self._closed = False
        self._job = None
        self._generation = 0
        self._pending = 0
        self._cond = threading.Condition()
        self._results: list = [None] * n
        self._errors: list = [None] * n
        self._threads: list[threading.Thread] = []
        if n > 1:
            for leaf in range(n):
                t = threading.Thread(
                    target=self._worker_loop, args=(leaf,), daemon=True,
                    name=f"mrsolve-worker-{leaf}",
                )
                t.start()
                self._threads.append(t)

    @property
    def nleaves(self) -> int:
        return self.topology.nleaves

    def _worker_loop(self, leaf: int):
        ctx = WorkerCtx(self, leaf)
        seen = 0
        while True:
            with self._cond:
                while self._generation == seen and not self._closed:
                    self._cond.wait()
                if self._closed:
                    return
                seen = self._generation
                job, args, kwargs = self._job
            try:
                self._results[leaf] = job(ctx, *args, **kwargs)
            except BaseException as exc:  # propagated to the caller
                self._errors[leaf] = exc
            with self._cond:
                self._pending -= 1
                if self._pending == 0:
                    self._cond.notify_all()

    def collective(self, fn, *args, **kwargs) -> list:
        """Run ``fn(ctx, *args, **kwargs)`` on every leaf; return all results."""
        n = self.nleaves
        if n == 1:
            return [fn(WorkerCtx(self, 0), *args, **kwargs)]
        with self._cond:
            self._results = [None] * n
            self._errors = [None] * n
            self._job = (fn, args, kwargs)
            self._pending = n
            self._generation += 1
            self._cond.notify_all()
            while self._pending > 0:
                self._cond.wait(timeout=_COLLECTIVE_TIMEOUT)
        for err in self._errors:
            if err is not None:
                raise err
        return self._results

    def close(self):
        if self._closed:
            return
        with self._cond:
            self._closed = True
            self._cond.notify_all()
        for t in self._threads:
            t.join(timeout=10.0)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def init(topology_spec: str = "nnumas=1:ncores=1") -> WorkerTeam:
    """Create the worker team from a "nnumas=N:ncores=M" string."""
    return WorkerTeam(parse_topology(topology_spec))


# ---------------------------------------------------------------------------
# Halo exchange
# ---------------------------------------------------------------------------

class ExchangePlan:
    """Per-(owner, peer) import row lists plus compacted column maps.

    ``imports[(owner, peer)]`` holds the sorted unique peer-local rows
    the owner's off-diagonal block references; ``compact_cols`` remaps
    that block's column indices into positions of the import list so the
    product can run on the gathered fragment alone.
    """

    def __init__(self, part: Partition):
        self.part = part
        self.imports: dict[tuple[int, int], np.ndarray] = {}
        self.compact_cols: dict[tuple[int, int], np.ndarray] = {}

    def import_rows(self, owner: int, peer: int) -> np.ndarray:
        if (owner, peer) not in self.imports:
            raise InvalidArgumentError(
                f"leaf {owner} imports nothing from peer {peer}"
            )
        return self.imports[(owner, peer)]

    def export_rows(self, owner: int, reader: int) -> np.ndarray:
        """Rows of ``owner`` that ``reader`` imports (mutual-consistency view)."""
        return self.import_rows(reader, owner)

    def peers_of(self, owner: int) -> list[int]:
        return sorted(p for (o, p) in self.imports if o == owner)


def build_exchange_plan(matrix: SegmentedMatrix) -> ExchangePlan:
    """Minimal import lists: exactly the referenced columns, sorted, deduplicated."""
    plan = ExchangePlan(matrix.part)
    for mb in matrix.blocks:
        for peer, blk in sorted(mb.offdiag.items()):
            cols = np.unique(blk.col_idx.astype(np.int64))
            plan.imports[(mb.owner, peer)] = cols
            compact = np.searchsorted(cols, blk.col_idx.astype(np.int64))
            from .core import choose_width

            width = choose_width(max(len(cols), 1))
            plan.compact_cols[(mb.owner, peer)] = compact.astype(width.dtype)
    return plan


class HaloFragments:
    """Gathered remote rows, restricted to what the plan imports."""

    def __init__(self, plan: ExchangePlan):
        self.plan = plan
        self._frags: dict[tuple[int, int], np.ndarray] = {}

    def fragment(self, owner: int, peer: int) -> np.ndarray:
        if (owner, peer) not in self._frags:
            raise InvalidArgumentError(
                f"no planned fragment for owner {owner}, peer {peer}"
            )
        return self._frags[(owner, peer)]

    def row(self, owner: int, peer: int, peer_local_row: int) -> np.ndarray:
        """One imported row; raises for rows outside the plan."""
        rows = self.plan.import_rows(owner, peer)
        pos = int(np.searchsorted(rows, peer_local_row))
        if pos >= len(rows) or rows[pos] != peer_local_row:
            raise InvalidArgumentError(
                f"row {peer_local_row} of peer {peer} is not in leaf {owner}'s plan"
            )
        return self.fragment(owner, peer)[pos]


def halo_exchange(plan: ExchangePlan, x: BlockVector,
                  team: WorkerTeam | None = None) -> HaloFragments:
    """Publish local fragments and gather every planned remote row.

    With a team this is a collective (internal publish barrier); the
    shared-buffer copy itself is identical either way.
    """
    if x.nrows != plan.part.nrows_global:
        raise ShapeMismatchError(
            f"vector has {x.nrows} rows, plan expects {plan.part.nrows_global}"
        )
    frags = HaloFragments(plan)

    def gather(owner_keys):
        for (owner, peer) in owner_keys:
            pb, _ = plan.part.leaf_range(peer)
            rows = plan.imports[(owner, peer)]
            frags._frags[(owner, peer)] = x.data[pb + rows]

    if team is not None and team.nleaves > 1:
        def spmd(ctx):
            ctx.barrier("team")  # publish point
            gather([k for k in plan.imports if k[0] == ctx.leaf_id])

        team.collective(spmd)
    else:
        gather(list(plan.imports))
    return frags
