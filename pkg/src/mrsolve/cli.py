"""Batch driver: run configured solves, report convergence and timing.

Exit codes: 0 all runs converged, 1 convergence failure, 2 configuration
or input errors.  Timing covers the solve phase only; setup (AMG
hierarchy construction, factorizations, eigenvalue estimation) is
reported in its own column.
"""

from __future__ import annotations

import argparse
import csv
import statistics
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from . import io as sysio
from .core import BlockVector, SUPPORTED_NRHS
from .errors import ConfigurationError, FormatError, InvalidArgumentError, \
    MrSolveError
from .instrument import counters
from .parallel import WorkerTeam, init, parse_topology
from .params import schema_report
from .solvers import SolveStats, prepare

__all__ = ["BenchRow", "BenchReport", "perf_gain", "speedup", "efficiency",
           "bench_gain", "run", "report_stats", "main"]

CSV_COLUMNS = ("method", "m", "nnumas", "ncores", "iters",
               "max_rel_residual", "t_solve_s", "t_setup_s", "P_m")


def perf_gain(m: int, t1: float, tm: float) -> float:
    """Multi-RHS performance gain P_m = m * T1 / Tm."""
    return m * t1 / tm


def speedup(t1_ref: float, tp: float) -> float:
    """Speedup against a named reference run, S_p = T1_ref / T_p."""
    return t1_ref / tp


def efficiency(t1: float, p: int, tp: float) -> float:
    """Parallel efficiency E_p = T1 / (p * T_p)."""
    return t1 / (p * tp)


@dataclass
class BenchRow:
    method: str
    m: int
    nnumas: int
    ncores: int
    iters: int
    max_rel_residual: float
    t_solve_s: float
    t_setup_s: float
    p_m: float | None = None
    converged: bool = True

    def as_csv(self) -> list:
        return [self.method, self.m, self.nnumas, self.ncores, self.iters,
                f"{self.max_rel_residual:.6e}", f"{self.t_solve_s:.6f}",
                f"{self.t_setup_s:.6f}",
                "" if self.p_m is None else f"{self.p_m:.4f}"]


@dataclass
class BenchReport:
    rows: list[BenchRow] = field(default_factory=list)

    @property
    def all_converged(self) -> bool:
        return all(row.converged for row in self.rows)

    def fill_gains(self):
        """Compute P_m for every row whose m=1 baseline exists."""
        base = {(r.method, r.nnumas, r.ncores): r.t_solve_s
                for r in self.rows if r.m == 1}
        for row in self.rows:
            t1 = base.get((row.method, row.nnumas, row.ncores))
            if t1 is not None:
                row.p_m = perf_gain(row.m, t1, row.t_solve_s)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_COLUMNS)
            for row in self.rows:
                writer.writerow(row.as_csv())

    def summary(self) -> str:
        lines = ["  ".join(f"{c:>16}" for c in CSV_COLUMNS)]
        for row in self.rows:
            lines.append("  ".join(f"{str(v):>16}" for v in row.as_csv()))
        return "\n".join(lines)


def _expand_rhs(rhs: BlockVector, m: int) -> BlockVector:
    """Base column replicated with distinct per-column scalings."""
    if rhs.nrhs == m:
        return rhs
    base = rhs.data[:, :1]
    scales = 1.0 + np.arange(m, dtype=np.float64)
    return BlockVector.from_array(base * scales)


def bench_gain(config, matrix, rhs, m_list, repetitions: int = 3,
               team: WorkerTeam | None = None) -> BenchReport:
    """Run the same configuration per m; report medians and P_m."""
    if 1 not in m_list:
        raise ConfigurationError("benchmark m list must include 1 (baseline)")
    bad = [m for m in m_list if m not in SUPPORTED_NRHS]
    if bad:
        raise ConfigurationError(
            f"unsupported RHS counts {bad}; supported: {list(SUPPORTED_NRHS)}")
    if repetitions < 1:
        raise ConfigurationError("repetitions must be >= 1")
    topo = team.topology if team is not None else parse_topology("nnumas=1:ncores=1")

    t0 = time.perf_counter()
    cs = prepare(config, matrix, team)
    t_setup = time.perf_counter() - t0

    report = BenchReport()
    for m in m_list:
        B = _expand_rhs(rhs, m)
        times = []
        stats: SolveStats | None = None
        for _ in range(repetitions):
            X = BlockVector.zeros(matrix.nrows, m)
            t0 = time.perf_counter()
            stats = cs.run(B, X)
            times.append(time.perf_counter() - t0)
        report.rows.append(BenchRow(
            method=cs.method, m=m, nnumas=topo.nnumas, ncores=topo.ncores,
            iters=stats.iterations,
            max_rel_residual=float(np.max(stats.final_rel_residual)),
            t_solve_s=statistics.median(times), t_setup_s=t_setup,
            converged=stats.all_converged,
        ))
    report.fill_gains()
    return report


def report_stats(stats: SolveStats, hierarchy=None,
                 instrumentation=None) -> str:
    """Human-readable run summary: convergence, hierarchy, counters."""
    rel = np.asarray(stats.final_rel_residual)
    lines = [
        f"method: {stats.method}",
        f"iterations: {stats.iterations}",
        f"converged: {'yes' if stats.all_converged else 'NO'} "
        f"({int(np.count_nonzero(stats.converged))}/{rel.size} columns)",
        f"max relative residual: {rel.max():.6e}",
    ]
    if stats.residual_history:
        tail = np.max(np.asarray(stats.residual_history), axis=1)
        shown = ", ".join(f"{v:.3e}" for v in tail[-6:])
        lines.append(f"residual history (max over columns, last 6): {shown}")
    if hierarchy is not None:
        lines.append("")
        lines.append(hierarchy.stats_report())
    if instrumentation is not None:
        lines.append("")
        lines.append(instrumentation.report())
    return "\n".join(lines)


def _load_system(spec: sysio.SystemSpec):
    if spec.kind == "poisson":
        matrix, rhs = sysio.gen_poisson3d(*spec.dims)
        return matrix, rhs
    matrix, rhs, _guess = sysio.read_system(spec.path)
    if rhs is None:
        rhs = BlockVector.from_array(matrix.to_scipy() @ np.ones(matrix.nrows))
    return matrix, rhs


def run(config_path, topology_str: str = "nnumas=1:ncores=1",
        m_list=None, repetitions=None, csv_path=None,
        out=sys.stdout) -> int:
    """Execute one configuration; returns the process exit code."""
    try:
        tree, sys_spec, bench = sysio.parse_run_config(config_path)
        topo = parse_topology(topology_str)
        matrix, rhs = _load_system(sys_spec)
        mlist = list(m_list) if m_list else list(bench.m_list)
        reps = repetitions if repetitions else bench.repetitions
        counters.reset()
        with init(topology_str) as team:
            report = bench_gain(tree, matrix, rhs, mlist, reps, team)
    except (ConfigurationError, FormatError, InvalidArgumentError,
            FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except MrSolveError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return 1
    print(report.summary(), file=out)
    if csv_path:
        report.write_csv(csv_path)
    return 0 if report.all_converged else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="mrsolve",
        description="Sparse iterative solves with multiple right-hand sides.",
    )
    parser.add_argument("--config", help="YAML run configuration")
    parser.add_argument("--topology", default="nnumas=1:ncores=1",
                        help='worker layout, e.g. "nnumas=2:ncores=4"')
    parser.add_argument("--bench-gain", metavar="M_LIST",
                        help="comma-separated RHS counts, e.g. 1,4,16")
    parser.add_argument("--reps", type=int, default=None,
                        help="timing repetitions (median is reported)")
    parser.add_argument("--csv", help="write the machine-readable report here")
    parser.add_argument("--help-methods", action="store_true",
                        help="print every method's parameters and exit")
    args = parser.parse_args(argv)

    if args.help_methods:
        print(schema_report())
        return 0
    if not args.config:
        parser.print_usage(sys.stderr)
        print("error: --config is required", file=sys.stderr)
        return 2
    m_list = None
    if args.bench_gain:
        try:
            m_list = [int(tok) for tok in args.bench_gain.split(",") if tok]
        except ValueError:
            print(f"error: cannot parse --bench-gain {args.bench_gain!r}",
                  file=sys.stderr)
            return 2
    return run(args.config, args.topology, m_list, args.reps, args.csv)


if __name__ == "__main__":
    sys.exit(main())
