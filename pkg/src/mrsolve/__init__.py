"""mrsolve: sparse linear solvers optimized for multiple right-hand sides.

Solves A X = B for m right-hand-side columns simultaneously, amortizing
matrix reads across columns.  Krylov methods (CG, three BiCGStab
formulations with optional fused kernels), a classical algebraic
multigrid preconditioner, hybrid Gauss-Seidel / Jacobi / Chebyshev
smoothing, index-compressed multi-block matrix storage with optional
reduced-precision hierarchy levels, and a hierarchical (numa x core)
worker team with deterministic staged reductions.
"""

from . import amg, blas, blas2, cli, core, io, kernels, parallel, params, solvers
from .core import (
    SUPPORTED_NRHS,
    BlockVector,
    CsrBlock,
    IndexWidth,
    Partition,
    PrecisionTag,
    SegmentedMatrix,
    VectorFlags,
    make_partition,
)
from .errors import (
    BreakdownError,
    CapacityError,
    ConfigurationError,
    FormatError,
    InstabilityError,
    InvalidArgumentError,
    MrSolveError,
    SetupDegeneracyError,
    ShapeMismatchError,
    SingularDiagonalError,
    SingularMatrixError,
)
from .instrument import counters
from .io import gen_poisson3d, parse_run_config, read_system, write_system
from .parallel import Topology, WorkerTeam, init, parse_topology
from .params import ParamList, ParamTree
from .solvers import (
    MultiGrid,
    SolveStats,
    SolverRole,
    bicgstab_solve,
    cg_solve,
    chebyshev_apply,
    direct_solve,
    estimate_eig_bounds,
    multigrid_solve,
    prepare,
    solve,
)

__version__ = "0.1.0"
