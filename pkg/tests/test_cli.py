"""Command-line driver: metric formulas, exit codes, CSV output."""

import csv
import io

import numpy as np
import pytest

from mrsolve.cli import (CSV_COLUMNS, BenchReport, BenchRow, bench_gain,
                         efficiency, main, perf_gain, report_stats, run,
                         speedup)
from mrsolve.errors import ConfigurationError
from mrsolve.io import gen_poisson3d
from mrsolve.params import ParamTree
from mrsolve.solvers import SolveStats


class TestFormulas:
    def test_perf_gain(self):
        assert perf_gain(16, 2.0, 4.0) == 8.0
        assert perf_gain(1, 3.0, 3.0) == 1.0

    def test_speedup(self):
        assert speedup(10.0, 2.5) == 4.0

    def test_efficiency(self):
        assert efficiency(12.0, 4, 3.0) == 1.0
        assert efficiency(12.0, 4, 6.0) == 0.5


def write_config(tmp_path, text):
    p = tmp_path / "run.yml"
    p.write_text(text)
    return str(p)


GOOD = """
solver:
  method: CG
  rel_tolerance: 1e-8
system:
  poisson: [8, 8, 8]
benchmark:
  repetitions: 1
"""

NONCONVERGENT = """
solver:
  method: Jacobi
  max_iters: 3
system:
  poisson: [8, 8, 8]
benchmark:
  repetitions: 1
"""

ILLEGAL_ROLE = """
solver:
  method: Chebyshev
system:
  poisson: [4, 4, 4]
"""


class TestExitCodes:
    def test_converged_returns_zero(self, tmp_path):
        out = io.StringIO()
        assert run(write_config(tmp_path, GOOD), out=out) == 0
        assert "CG" in out.getvalue()

    def test_convergence_failure_returns_one(self, tmp_path):
        assert run(write_config(tmp_path, NONCONVERGENT), out=io.StringIO()) == 1

    def test_config_error_returns_two(self, tmp_path):
        assert run(write_config(tmp_path, ILLEGAL_ROLE), out=io.StringIO()) == 2

    def test_missing_file_returns_two(self):
        assert run("/nonexistent/run.yml", out=io.StringIO()) == 2

    def test_bad_topology_returns_two(self, tmp_path):
        assert run(write_config(tmp_path, GOOD), topology_str="sockets=2",
                   out=io.StringIO()) == 2

    def test_main_entrypoint(self, tmp_path, capsys):
        cfg = write_config(tmp_path, GOOD)
        assert main(["--config", cfg]) == 0
        assert main([]) == 2
        assert main(["--config", cfg, "--bench-gain", "1,banana"]) == 2

    def test_help_methods(self, capsys):
        assert main(["--help-methods"]) == 0
        text = capsys.readouterr().out
        assert "MultiGrid" in text and "PBiCGStab" in text


class TestBenchGain:
    @pytest.fixture(scope="class")
    @staticmethod
    def report():
        matrix, rhs = gen_poisson3d(8, 8, 8)
        tree = ParamTree()
        tree.add_map("solver", {"method": "BiCGStab",
                                "rel_tolerance": "1e-8"})
        tree.set_defaults()
        return bench_gain(tree, matrix, rhs, [1, 2, 4], repetitions=2)

    def test_rows_and_baseline(self, report):
        assert [r.m for r in report.rows] == [1, 2, 4]
        base = report.rows[0]
        assert base.p_m == pytest.approx(1.0)
        for row in report.rows:
            assert row.converged
            assert row.max_rel_residual <= 1e-8
            assert row.t_solve_s > 0.0
            assert row.t_setup_s >= 0.0
            assert row.p_m is not None

    def test_m_list_must_include_baseline(self):
        matrix, rhs = gen_poisson3d(4, 4, 4)
        tree = ParamTree()
        tree.add_map("solver", {"method": "CG"})
        tree.set_defaults()
        with pytest.raises(ConfigurationError):
            bench_gain(tree, matrix, rhs, [2, 4])

    def test_unsupported_m_rejected(self):
        matrix, rhs = gen_poisson3d(4, 4, 4)
        tree = ParamTree()
        tree.add_map("solver", {"method": "CG"})
        tree.set_defaults()
        with pytest.raises(ConfigurationError, match="unsupported"):
            bench_gain(tree, matrix, rhs, [1, 3])

    def test_csv_structure(self, report, tmp_path):
        path = tmp_path / "bench.csv"
        report.write_csv(path)
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == list(CSV_COLUMNS)
        assert len(rows) == 1 + len(report.rows)
        for raw in rows[1:]:
            assert len(raw) == len(CSV_COLUMNS)
            assert int(raw[1]) in (1, 2, 4)
            float(raw[5]), float(raw[6]), float(raw[7]), float(raw[8])

    def test_summary_contains_header_and_rows(self, report):
        text = report.summary()
        for col in CSV_COLUMNS:
            assert col in text
        assert text.count("\n") == len(report.rows)


class TestFillGains:
    def test_missing_baseline_leaves_blank(self):
        rows = [BenchRow("CG", 4, 1, 1, 10, 1e-9, 2.0, 0.1)]
        report = BenchReport(rows)
        report.fill_gains()
        assert rows[0].p_m is None
        assert rows[0].as_csv()[-1] == ""

    def test_gains_keyed_by_topology(self):
        rows = [
            BenchRow("CG", 1, 1, 1, 10, 1e-9, 2.0, 0.1),
            BenchRow("CG", 4, 1, 1, 10, 1e-9, 4.0, 0.1),
            BenchRow("CG", 1, 2, 2, 10, 1e-9, 1.0, 0.1),
            BenchRow("CG", 4, 2, 2, 10, 1e-9, 1.0, 0.1),
        ]
        report = BenchReport(rows)
        report.fill_gains()
        assert rows[1].p_m == pytest.approx(2.0)   # 4 * 2.0 / 4.0
        assert rows[3].p_m == pytest.approx(4.0)   # 4 * 1.0 / 1.0


class TestReportStats:
    def make_stats(self):
        return SolveStats(iterations=7,
                          converged=np.array([True, True]),
                          final_rel_residual=np.array([1e-9, 2e-9]),
                          residual_history=[np.array([1.0, 1.0]),
                                            np.array([1e-9, 2e-9])],
                          method="CG")

    def test_basic_lines(self):
        text = report_stats(self.make_stats())
        assert "method: CG" in text
        assert "iterations: 7" in text
        assert "converged: yes (2/2 columns)" in text
        assert "2.000000e-09" in text
        assert "level" not in text

    def test_hierarchy_section_present_when_given(self, poisson8):
        from mrsolve.amg import AmgParams, setup
        A, _ = poisson8
        h = setup(A, AmgParams(coarse_matrix_size=50))
        text = report_stats(self.make_stats(), hierarchy=h)
        assert "operator complexity" in text

    def test_instrumentation_section(self):
        from mrsolve.instrument import Counters
        c = Counters()
        c.record("spmv", reads=1, writes=1)
        text = report_stats(self.make_stats(), instrumentation=c)
        assert "spmv" in text


class TestEndToEndCsv:
    def test_run_writes_csv(self, tmp_path):
        cfg = write_config(tmp_path, GOOD + "  m: [1, 2]\n")
        csv_path = tmp_path / "out.csv"
        code = run(cfg, csv_path=str(csv_path), out=io.StringIO())
        assert code == 0
        with open(csv_path, newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == list(CSV_COLUMNS)
        assert [r[0] for r in rows[1:]] == ["CG", "CG"]
        assert [int(r[1]) for r in rows[1:]] == [1, 2]
        # P_4 style column: baseline row reports exactly m * t1/t1 = 1
        assert float(rows[1][-1]) == pytest.approx(1.0)

    def test_topology_recorded_in_rows(self, tmp_path):
        cfg = write_config(tmp_path, GOOD)
        csv_path = tmp_path / "topo.csv"
        code = run(cfg, topology_str="nnumas=2:ncores=2",
                   csv_path=str(csv_path), out=io.StringIO())
        assert code == 0
        with open(csv_path, newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[1][2] == "2" and rows[1][3] == "2"
