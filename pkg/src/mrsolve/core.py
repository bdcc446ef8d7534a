"""Matrix/vector storage formats, hierarchical partitioning, index compression.

Central types:

* :class:`CsrBlock` -- one CSR block with a configurable column-index
  width (8/16/32 bit) and value precision (float64/float32);
* :class:`BlockVector` -- an n-by-m dense block of m right-hand-side or
  solution columns, RHS-interleaved, with certified status flags;
* :class:`Partition` -- three-layer (node/numa/core) contiguous row
  partition;
* :class:`MultiBlockMatrix` -- one leaf worker's row slice, split into a
  local-dependency diagonal block and per-peer off-diagonal blocks.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import CapacityError, InvalidArgumentError, ShapeMismatchError

__all__ = [
    "IndexWidth",
    "PrecisionTag",
    "VectorFlags",
    "BlockVector",
    "CsrBlock",
    "Partition",
    "MultiBlockMatrix",
    "SegmentedMatrix",
    "choose_width",
    "compress_indices",
    "make_partition",
    "segment_matrix",
]

#: RHS counts the configuration layer accepts (any m >= 1 works at the
#: library level; this mirrors a fixed instantiation set).
SUPPORTED_NRHS = (1, 2, 4, 8, 16, 32, 64)


class IndexWidth(enum.IntEnum):
    """Column-index storage width in bits."""

    W8 = 8
    W16 = 16
    W32 = 32

    @property
    def dtype(self):
        return {8: np.uint8, 16: np.uint16, 32: np.uint32}[self.value]

    @property
    def capacity(self) -> int:
        return 1 << self.value


class PrecisionTag(enum.Enum):
    """Floating-point storage precision of matrix values."""

    FULL = "full"      # float64
    REDUCED = "reduced"  # float32

    @property
    def dtype(self):
        return np.float64 if self is PrecisionTag.FULL else np.float32


def choose_width(ncols: int) -> IndexWidth:
    """Smallest index width whose capacity covers ``ncols`` columns."""
    if ncols < 1:
        raise InvalidArgumentError(f"ncols must be >= 1, got {ncols}")
    for w in (IndexWidth.W8, IndexWidth.W16, IndexWidth.W32):
        if ncols <= w.capacity:
            return w
    raise CapacityError(f"no index width can represent {ncols} columns")


@dataclass
class VectorFlags:
    """Certified status flags. ``zero`` is a guarantee, never a guess."""

    zero: bool = False
    initialized: bool = False

    def __post_init__(self):
        if self.zero and not self.initialized:
            raise InvalidArgumentError("zero flag implies initialized")


class BlockVector:
    """Dense block of m vectors, shape (nrows, m), RHS-interleaved."""

    __slots__ = ("data", "flags")

    def __init__(self, data: np.ndarray, flags: VectorFlags | None = None):
        data = np.ascontiguousarray(data, dtype=np.float64)
        if data.ndim != 2:
            raise InvalidArgumentError("BlockVector data must be 2-D (nrows, m)")
        self.data = data
        self.flags = flags if flags is not None else VectorFlags(initialized=True)

    @classmethod
    def zeros(cls, nrows: int, nrhs: int) -> "BlockVector":
        if nrows < 1 or nrhs < 1:
            raise InvalidArgumentError("nrows and nrhs must be >= 1")
        return cls(np.zeros((nrows, nrhs)), VectorFlags(zero=True, initialized=True))

    @classmethod
    def uninitialized(cls, nrows: int, nrhs: int) -> "BlockVector":
        v = cls(np.empty((nrows, nrhs)))
        v.flags = VectorFlags(zero=False, initialized=False)
        return v

    @classmethod
    def from_array(cls, arr) -> "BlockVector":
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr[:, None]
        return cls(arr.copy())

    @property
    def nrows(self) -> int:
        return self.data.shape[0]

    @property
    def nrhs(self) -> int:
        return self.data.shape[1]

    def copy(self) -> "BlockVector":
        return BlockVector(self.data.copy(), VectorFlags(self.flags.zero, self.flags.initialized))

    def set_zero(self):
        self.data[:] = 0.0
        self.flags.zero = True
        self.flags.initialized = True

    def mark_written(self):
        self.flags.zero = False
        self.flags.initialized = True


class CsrBlock:
    """One CSR-format matrix block.

    ``row_ptr`` is int64; ``col_idx`` carries the block's IndexWidth;
    ``values`` carry its PrecisionTag.  Column indices are sorted
    ascending within each row.
    """

    __slots__ = ("nrows", "ncols", "row_ptr", "col_idx", "values")

    def __init__(self, nrows, ncols, row_ptr, col_idx, values, validate=True):
        self.nrows = int(nrows)
        self.ncols = int(ncols)
        self.row_ptr = np.ascontiguousarray(row_ptr, dtype=np.int64)
        col_idx = np.ascontiguousarray(col_idx)
        if col_idx.dtype not in (np.uint8, np.uint16, np.uint32):
            col_idx = col_idx.astype(np.uint32)
        self.col_idx = col_idx
        values = np.ascontiguousarray(values)
        if values.dtype not in (np.float32, np.float64):
            values = values.astype(np.float64)
        self.values = values
        if validate:
            self.validate()

    # -- invariants ----------------------------------------------------
    def validate(self):
        rp = self.row_ptr
        if self.nrows < 0 or self.ncols < 0:
            raise InvalidArgumentError("negative dimensions")
        if rp.shape[0] != self.nrows + 1:
            raise InvalidArgumentError("row_ptr length must be nrows + 1")
        if rp[0] != 0 or rp[-1] != len(self.col_idx):
            raise InvalidArgumentError("row_ptr must start at 0 and end at nnz")
        if np.any(np.diff(rp) < 0):
            raise InvalidArgumentError("row_ptr must be non-decreasing")
        if len(self.col_idx) != len(self.values):
            raise InvalidArgumentError("col_idx and values length mismatch")
        if self.ncols > self.index_width.capacity:
            raise CapacityError(
                f"{self.ncols} columns exceed {self.index_width.name} capacity"
            )
        if len(self.col_idx) and int(self.col_idx.max()) >= self.ncols:
            raise InvalidArgumentError("column index out of range")
        # strictly increasing columns within each row
        d = np.diff(self.col_idx.astype(np.int64))
        row_starts = rp[1:-1]
        inner = np.ones(len(d), dtype=bool)
        inner[row_starts[(row_starts > 0) & (row_starts < len(self.col_idx))] - 1] = False
        if np.any(d[inner] <= 0):
            raise InvalidArgumentError("column indices must be strictly increasing per row")

    # -- properties ----------------------------------------------------
    @property
    def nnz(self) -> int:
        return int(self.row_ptr[-1])

    @property
    def index_width(self) -> IndexWidth:
        return IndexWidth(self.col_idx.dtype.itemsize * 8)

    @property
    def precision(self) -> PrecisionTag:
        return PrecisionTag.FULL if self.values.dtype == np.float64 else PrecisionTag.REDUCED

    # -- conversions ---------------------------------------------------
    @classmethod
    def from_scipy(cls, mat, precision: PrecisionTag = PrecisionTag.FULL) -> "CsrBlock":
        mat = sp.csr_matrix(mat)
        mat.sort_indices()
        mat.sum_duplicates()
        width = choose_width(max(mat.shape[1], 1))
        return cls(
            mat.shape[0],
            mat.shape[1],
            mat.indptr.astype(np.int64),
            mat.indices.astype(width.dtype),
            mat.data.astype(precision.dtype),
        )

    @classmethod
    def from_dense(cls, arr, precision: PrecisionTag = PrecisionTag.FULL) -> "CsrBlock":
        return cls.from_scipy(sp.csr_matrix(np.asarray(arr, dtype=np.float64)), precision)

    def to_scipy(self) -> sp.csr_matrix:
        return sp.csr_matrix(
            (self.values.astype(np.float64), self.col_idx.astype(np.int64), self.row_ptr),
            shape=(self.nrows, self.ncols),
        )

    def to_dense(self) -> np.ndarray:
        return self.to_scipy().toarray()

    def with_precision(self, precision: PrecisionTag) -> "CsrBlock":
        return CsrBlock(
            self.nrows, self.ncols, self.row_ptr, self.col_idx,
            self.values.astype(precision.dtype), validate=False,
        )

    def same_structure_and_values(self, other: "CsrBlock") -> bool:
        return (
            self.nrows == other.nrows
            and self.ncols == other.ncols
            and np.array_equal(self.row_ptr, other.row_ptr)
            and np.array_equal(
                self.col_idx.astype(np.int64), other.col_idx.astype(np.int64)
            )
            and np.array_equal(self.values, other.values)
        )


def compress_indices(block: CsrBlock, width: IndexWidth) -> CsrBlock:
    """Re-store column indices at the given width; values untouched.

    Raises :class:`CapacityError` when the block has more columns than
    the width can address (the caller falls back to a wider type).
    """
    if block.ncols > width.capacity:
        raise CapacityError(
            f"block with {block.ncols} columns does not fit {width.name}"
        )
    return CsrBlock(
        block.nrows, block.ncols, block.row_ptr,
        block.col_idx.astype(width.dtype), block.values, validate=False,
    )


# ---------------------------------------------------------------------------
# Partitioning
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Partition:
    """Three-layer contiguous row partition (node -> numa -> core).

    Leaf ranges are numa-major: leaf ``id = numa * ncores + core``.
    """

    nrows_global: int
    nnumas: int
    ncores: int
    leaf_ranges: tuple[tuple[int, int], ...]
    numa_ranges: tuple[tuple[int, int], ...]

    @property
    def nleaves(self) -> int:
        return self.nnumas * self.ncores

    @property
    def node_range(self) -> tuple[int, int]:
        return (0, self.nrows_global)

    def leaf_range(self, leaf: int) -> tuple[int, int]:
        return self.leaf_ranges[leaf]

    def leaf_nrows(self, leaf: int) -> int:
        b, e = self.leaf_ranges[leaf]
        return e - b

    def owner_of(self, row: int) -> int:
        begins = np.fromiter((b for b, _ in self.leaf_ranges), dtype=np.int64)
        return int(np.searchsorted(begins, row, side="right") - 1)


def make_partition(
    nrows_global: int,
    topology: tuple[int, int],
    allow_empty: bool = False,
) -> Partition:
    """Split rows as evenly as possible over nnumas*ncores leaf workers.

    With ``nrows = q*L + r``, the first r leaves get q+1 rows.
    ``allow_empty`` lifts the nrows >= nleaves precondition (used
    internally for coarse-grid operators smaller than the team).
    """
    nnumas, ncores = topology
    if nnumas < 1 or ncores < 1:
        raise InvalidArgumentError("topology counts must be >= 1")
    nleaves = nnumas * ncores
    if nrows_global < 1:
        raise InvalidArgumentError("nrows_global must be >= 1")
    if nrows_global < nleaves and not allow_empty:
        raise InvalidArgumentError(
            f"{nrows_global} rows cannot feed {nleaves} leaf workers"
        )
    q, r = divmod(nrows_global, nleaves)
    leaf_ranges = []
    begin = 0
    for leaf in range(nleaves):
        size = q + (1 if leaf < r else 0)
        leaf_ranges.append((begin, begin + size))
        begin += size
    numa_ranges = [
        (leaf_ranges[i * ncores][0], leaf_ranges[(i + 1) * ncores - 1][1])
        for i in range(nnumas)
    ]
    return Partition(
        nrows_global, nnumas, ncores, tuple(leaf_ranges), tuple(numa_ranges)
    )


# ---------------------------------------------------------------------------
# Multi-block segmentation
# ---------------------------------------------------------------------------

@dataclass
class MultiBlockMatrix:
    """One leaf worker's row slice: local diag block + per-peer off-diag.

    ``diag`` columns are reindexed into the owner's range; each
    off-diagonal block's columns into the respective peer's range.
    """

    owner: int
    diag: CsrBlock
    offdiag: dict[int, CsrBlock] = field(default_factory=dict)


def segment_matrix(global_block: CsrBlock, part: Partition) -> list[MultiBlockMatrix]:
    """Split a square CSR matrix into per-leaf multi-block form.

    Off-diagonal blocks for peers with no coupling are omitted.
    Reassembling diag and offdiag blocks with global offsets reproduces
    the owner's row slice exactly.
    """
    if global_block.nrows != global_block.ncols:
        raise InvalidArgumentError("segment_matrix requires a square matrix")
    if part.nrows_global != global_block.nrows:
        raise InvalidArgumentError("partition does not cover the matrix")

    gs = global_block.to_scipy()
    out = []
    for leaf in range(part.nleaves):
        b, e = part.leaf_range(leaf)
        rows = gs[b:e]
        blocks: dict[int, CsrBlock] = {}
        diag = None
        for peer in range(part.nleaves):
            pb, pe = part.leaf_range(peer)
            sub = rows[:, pb:pe]
            sub.sort_indices()
            if peer != leaf and sub.nnz == 0:
                continue
            blk = CsrBlock(
                sub.shape[0],
                sub.shape[1],
                sub.indptr.astype(np.int64),
                sub.indices.astype(np.uint32),
                sub.data.astype(global_block.values.dtype),
                validate=False,
            )
            if blk.ncols:
                blk = compress_indices(blk, choose_width(max(blk.ncols, 1)))
            if peer == leaf:
                diag = blk
            else:
                blocks[peer] = blk
        out.append(MultiBlockMatrix(leaf, diag, blocks))
    return out


def reassemble(blocks: list[MultiBlockMatrix], part: Partition) -> CsrBlock:
    """Inverse of :func:`segment_matrix` (structure and values exactly)."""
    n = part.nrows_global
    mats = []
    for mb in blocks:
        row = []
        for peer in range(part.nleaves):
            pb, pe = part.leaf_range(peer)
            if peer == mb.owner:
                row.append(mb.diag.to_scipy())
            elif peer in mb.offdiag:
                row.append(mb.offdiag[peer].to_scipy())
            else:
                row.append(sp.csr_matrix((part.leaf_nrows(mb.owner), pe - pb)))
        mats.append(sp.hstack(row, format="csr"))
    full = sp.vstack(mats, format="csr")
    full.sort_indices()
    assert full.shape == (n, n)
    return CsrBlock.from_scipy(full)


class SegmentedMatrix:
    """A segmented square matrix plus derived solve-phase caches.

    Holds the per-leaf :class:`MultiBlockMatrix` set, the partition, and
    lazily built caches: the halo-exchange plan with compacted
    off-diagonal column indices, per-leaf diagonal positions, and the
    assembled global diagonal.
    """

    def __init__(self, part: Partition, blocks: list[MultiBlockMatrix]):
        self.part = part
        self.blocks = blocks
        self._plan = None
        self._diag_pos: list[np.ndarray | None] = [None] * part.nleaves
        self._diag_vec: np.ndarray | None = None

    # -- constructors ----------------------------------------------------
    @classmethod
    def from_global(
        cls,
        global_block: CsrBlock,
        topology: tuple[int, int] = (1, 1),
        part: Partition | None = None,
    ) -> "SegmentedMatrix":
        if part is None:
            part = make_partition(global_block.nrows, topology, allow_empty=True)
        return cls(part, segment_matrix(global_block, part))

    @property
    def nrows(self) -> int:
        return self.part.nrows_global

    @property
    def nleaves(self) -> int:
        return self.part.nleaves

    @property
    def nnz(self) -> int:
        total = 0
        for mb in self.blocks:
            total += mb.diag.nnz + sum(b.nnz for b in mb.offdiag.values())
        return total

    @property
    def precision(self) -> PrecisionTag:
        return self.blocks[0].diag.precision

    def to_global(self) -> CsrBlock:
        return reassemble(self.blocks, self.part)

    # -- caches ------------------------------------------------------------
    def diag_positions(self, leaf: int) -> np.ndarray:
        """Index into diag-block values of each local row's diagonal entry."""
        from .errors import SingularDiagonalError

        if self._diag_pos[leaf] is None:
            mb = self.blocks[leaf]
            blk = mb.diag
            pos = np.full(blk.nrows, -1, dtype=np.int64)
            ci = blk.col_idx.astype(np.int64)
            for i in range(blk.nrows):
                lo, hi = int(blk.row_ptr[i]), int(blk.row_ptr[i + 1])
                hit = np.searchsorted(ci[lo:hi], i)
                if hit < hi - lo and ci[lo + hit] == i:
                    pos[i] = lo + hit
                else:
                    raise SingularDiagonalError(
                        f"row {i} of leaf {leaf} has no structural diagonal entry"
                    )
            self._diag_pos[leaf] = pos
        return self._diag_pos[leaf]

    def diagonal(self) -> np.ndarray:
        """Global diagonal entries in owner order (full precision)."""
        if self._diag_vec is None:
            parts = []
            for leaf in range(self.nleaves):
                mb = self.blocks[leaf]
                pos = self.diag_positions(leaf)
                parts.append(mb.diag.values.astype(np.float64)[pos]
                             if len(pos) else np.zeros(0))
            self._diag_vec = np.concatenate(parts) if parts else np.zeros(0)
        return self._diag_vec

    def exchange_plan(self):
        if self._plan is None:
            from .parallel import build_exchange_plan

            self._plan = build_exchange_plan(self)
        return self._plan

    def with_precision(self, precision: PrecisionTag) -> "SegmentedMatrix":
        blocks = [
            MultiBlockMatrix(
                mb.owner,
                mb.diag.with_precision(precision),
                {p: b.with_precision(precision) for p, b in mb.offdiag.items()},
            )
            for mb in self.blocks
        ]
        return SegmentedMatrix(self.part, blocks)


def check_same_shape(x: BlockVector, y: BlockVector):
    if x.data.shape != y.data.shape:
        raise ShapeMismatchError(
            f"block vector shapes differ: {x.data.shape} vs {y.data.shape}"
        )
