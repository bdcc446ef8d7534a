"""Binary system files, test-matrix generators, run-configuration files.

Binary format (little-endian throughout):

========  =======================  =========================================
offset    field                    type
========  =======================  =========================================
0         magic                    8 bytes, ``b"XAMGBIN1"``
8         nrows, ncols, nnz, nrhs  u64 each
40        flags                    u8 (bit 0: RHS present, bit 1: guess)
41        row_ptr                  u64[nrows + 1]
...       col_idx                  u64[nnz]
...       values                   f64[nnz]
...       rhs (optional)           f64[nrows * nrhs], row-major
...       guess (optional)         f64[nrows * nrhs], row-major
========  =======================  =========================================

On-disk index types are intentionally wide; index compression is an
in-memory concern.  Matrices ingest through the full CsrBlock
validation (rows are sorted if the file stores them unsorted).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import yaml

from .core import BlockVector, CsrBlock
from .errors import ConfigurationError, FormatError, InvalidArgumentError
from .params import ParamTree, ROLES

__all__ = [
    "MAGIC",
    "read_system",
    "write_system",
    "gen_poisson3d",
    "SystemSpec",
    "BenchmarkSpec",
    "parse_run_config",
]

MAGIC = b"XAMGBIN1"
_HEADER = struct.Struct("<8sQQQQB")   # magic, nrows, ncols, nnz, nrhs, flags


def write_system(path, matrix: CsrBlock, rhs: BlockVector | None = None,
                 guess: BlockVector | None = None):
    """Serialize a system; inverse of :func:`read_system`."""
    if matrix.nrows == 0:
        raise InvalidArgumentError("refusing to write an empty (0-row) matrix")
    nrhs = 0
    for vec in (rhs, guess):
        if vec is None:
            continue
        if vec.nrows != matrix.nrows:
            raise InvalidArgumentError("vector length does not match the matrix")
        if nrhs and vec.nrhs != nrhs:
            raise InvalidArgumentError("rhs and guess column counts differ")
        nrhs = vec.nrhs
    flags = (1 if rhs is not None else 0) | (2 if guess is not None else 0)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, matrix.nrows, matrix.ncols,
                              matrix.nnz, nrhs, flags))
        fh.write(np.ascontiguousarray(matrix.row_ptr, dtype="<u8").tobytes())
        fh.write(np.ascontiguousarray(matrix.col_idx, dtype="<u8").tobytes())
        fh.write(np.ascontiguousarray(matrix.values, dtype="<f8").tobytes())
        if rhs is not None:
            fh.write(np.ascontiguousarray(rhs.data, dtype="<f8").tobytes())
        if guess is not None:
            fh.write(np.ascontiguousarray(guess.data, dtype="<f8").tobytes())


def _take(buf: bytes, offset: int, dtype, count: int, what: str) -> np.ndarray:
    arr_dtype = np.dtype(dtype)
    nbytes = arr_dtype.itemsize * count
    if offset + nbytes > len(buf):
        raise FormatError(
            f"truncated payload: {what} needs {nbytes} bytes, "
            f"{len(buf) - offset} remain", offset=offset)
    return np.frombuffer(buf, dtype=arr_dtype, count=count, offset=offset)


def read_system(path):
    """Read (matrix, rhs-or-None, guess-or-None) from a system file."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < _HEADER.size:
        raise FormatError("file shorter than the fixed header", offset=0)
    magic, nrows, ncols, nnz, nrhs, flags = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", offset=0)
    if flags & ~0x3:
        raise FormatError(f"unknown flag bits 0x{flags:02x}", offset=40)
    if (flags & 0x3) and nrhs == 0:
        raise FormatError("vector sections present but nrhs is 0", offset=32)

    off = _HEADER.size
    row_ptr = _take(buf, off, "<u8", nrows + 1, "row_ptr")
    if nrows and row_ptr[-1] != nnz:
        raise FormatError(
            f"row_ptr[{nrows}] = {int(row_ptr[-1])} does not equal nnz = {nnz}",
            offset=off + 8 * nrows)
    bad = np.nonzero(np.diff(row_ptr.astype(np.int64)) < 0)[0]
    if bad.size:
        raise FormatError("row_ptr is not non-decreasing",
                          offset=off + 8 * (int(bad[0]) + 1))
    off += 8 * (nrows + 1)
    col_idx = _take(buf, off, "<u8", nnz, "col_idx")
    oob = np.nonzero(col_idx >= ncols)[0]
    if oob.size:
        raise FormatError(
            f"column index {int(col_idx[oob[0]])} out of range (ncols={ncols})",
            offset=off + 8 * int(oob[0]))
    off += 8 * nnz
    values = _take(buf, off, "<f8", nnz, "values")
    off += 8 * nnz

    # ingest through scipy so unsorted rows get sorted before validation
    mat = sp.csr_matrix(
        (values.astype(np.float64), col_idx.astype(np.int64),
         row_ptr.astype(np.int64)),
        shape=(nrows, ncols),
    )
    mat.sort_indices()
    try:
        block = CsrBlock.from_scipy(mat)
    except InvalidArgumentError as exc:
        raise FormatError(f"matrix payload violates CSR invariants: {exc}",
                          offset=_HEADER.size) from exc

    rhs = guess = None
    if flags & 1:
        data = _take(buf, off, "<f8", nrows * nrhs, "rhs")
        rhs = BlockVector.from_array(
            data.astype(np.float64).reshape(nrows, nrhs))
        off += 8 * nrows * nrhs
    if flags & 2:
        data = _take(buf, off, "<f8", nrows * nrhs, "guess")
        guess = BlockVector.from_array(
            data.astype(np.float64).reshape(nrows, nrhs))
        off += 8 * nrows * nrhs
    if off != len(buf):
        raise FormatError(f"{len(buf) - off} trailing bytes after payload",
                          offset=off)
    return block, rhs, guess


def gen_poisson3d(nx: int, ny: int, nz: int):
    """7-point Poisson operator on an nx*ny*nz grid, plus manufactured RHS.

    Unit spacing, Dirichlet boundaries eliminated: every row keeps the
    constant diagonal 6 and couples with -1 to each existing neighbor,
    which makes the operator a symmetric positive definite M-matrix.
    Row ordering is lexicographic with x fastest.  The right-hand side
    is A times the all-ones vector, so the exact solution is known.
    """
    if nx < 1 or ny < 1 or nz < 1:
        raise InvalidArgumentError("grid dimensions must be >= 1")

    def neighbor(k):
        return sp.diags([np.ones(k - 1), np.ones(k - 1)], [-1, 1]) \
            if k > 1 else sp.csr_matrix((1, 1))

    ix, iy, iz = sp.identity(nx), sp.identity(ny), sp.identity(nz)
    coupling = (
        sp.kron(iz, sp.kron(iy, neighbor(nx)))
        + sp.kron(iz, sp.kron(neighbor(ny), ix))
        + sp.kron(neighbor(nz), sp.kron(iy, ix))
    )
    n = nx * ny * nz
    mat = (6.0 * sp.identity(n) - coupling).tocsr()
    mat.sort_indices()
    block = CsrBlock.from_scipy(mat)
    rhs = BlockVector.from_array(mat @ np.ones(n))
    return block, rhs


# ---------------------------------------------------------------------------
# run-configuration files
# ---------------------------------------------------------------------------

@dataclass
class SystemSpec:
    """Where the linear system comes from: a generator or a file."""

    kind: str                 # "poisson" | "file"
    dims: tuple[int, int, int] | None = None
    path: str | None = None


@dataclass
class BenchmarkSpec:
    m_list: list[int] = field(default_factory=lambda: [1])
    repetitions: int = 3
    mode: str = "solve"


_TOP_KEYS = set(ROLES) | {"system", "benchmark"}


def parse_run_config(path):
    """Parse a YAML run configuration.

    Returns ``(ParamTree, SystemSpec, BenchmarkSpec)``; the tree is
    finalized (defaults applied), matching what the equivalent
    programmatic add/add_map/set_defaults sequence produces.
    """
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    if not isinstance(raw, dict):
        raise ConfigurationError(f"{path}: top level must be a mapping")
    for key in raw:
        if key not in _TOP_KEYS:
            raise ConfigurationError(
                f"{path}: unknown top-level key {key!r}; "
                f"expected one of {sorted(_TOP_KEYS)}")

    tree = ParamTree()
    for role in ROLES:
        if role not in raw:
            continue
        section = raw[role]
        if not isinstance(section, dict):
            raise ConfigurationError(f"{path}: {role}: must be a mapping")
        try:
            tree.add_map(role, section)
        except ConfigurationError as exc:
            raise ConfigurationError(f"{path}: {role}: {exc}") from exc
    try:
        tree.set_defaults()
    except ConfigurationError as exc:
        raise ConfigurationError(f"{path}: {exc}") from exc

    if "system" not in raw:
        raise ConfigurationError(f"{path}: missing required section 'system'")
    system = raw["system"]
    if not isinstance(system, dict) or len(system) != 1:
        raise ConfigurationError(
            f"{path}: system: must be a mapping with exactly one of "
            "'poisson' or 'file'")
    if "poisson" in system:
        dims = system["poisson"]
        if (not isinstance(dims, (list, tuple)) or len(dims) != 3
                or not all(isinstance(d, int) and d >= 1 for d in dims)):
            raise ConfigurationError(
                f"{path}: system/poisson: expected three positive integers")
        sys_spec = SystemSpec("poisson", dims=tuple(dims))
    elif "file" in system:
        sys_spec = SystemSpec("file", path=str(system["file"]))
    else:
        raise ConfigurationError(
            f"{path}: system: unknown source {list(system)[0]!r}")

    bench = BenchmarkSpec()
    if "benchmark" in raw:
        section = raw["benchmark"]
        if not isinstance(section, dict):
            raise ConfigurationError(f"{path}: benchmark: must be a mapping")
        known = {"m", "repetitions", "mode"}
        for key in section:
            if key not in known:
                raise ConfigurationError(
                    f"{path}: benchmark/{key}: unknown key")
        if "m" in section:
            mval = section["m"]
            mlist = [mval] if isinstance(mval, int) else list(mval)
            if not all(isinstance(m, int) and m >= 1 for m in mlist):
                raise ConfigurationError(
                    f"{path}: benchmark/m: expected positive integers")
            bench.m_list = mlist
        if "repetitions" in section:
            reps = section["repetitions"]
            if not isinstance(reps, int) or reps < 1:
                raise ConfigurationError(
                    f"{path}: benchmark/repetitions: expected a positive integer")
            bench.repetitions = reps
        if "mode" in section:
            bench.mode = str(section["mode"])
    return tree, sys_spec, bench
