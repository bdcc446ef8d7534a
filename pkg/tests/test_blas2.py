"""Matrix-level operations against dense numpy oracles, across topologies."""

import numpy as np
import pytest

from mrsolve.blas2 import (extract_diag, jacobi_sweep, residual, sgs_sweep,
                           spmv)
from mrsolve.core import BlockVector
from mrsolve.errors import (InvalidArgumentError, ShapeMismatchError,
                            SingularDiagonalError)
from mrsolve.instrument import counters
from mrsolve.parallel import Topology, WorkerTeam
from tests.conftest import bvec, random_diag_dominant, to_seg

TOPOLOGIES = [(1, 1), (1, 4), (2, 3)]


@pytest.fixture(autouse=True)
def fresh_counters():
    counters.reset()
    yield
    counters.reset()


class TestSpmv:
    @pytest.mark.parametrize("topo", TOPOLOGIES)
    @pytest.mark.parametrize("m", [1, 4])
    def test_dense_oracle(self, rng, topo, m):
        a = random_diag_dominant(31, rng, density=0.3)
        seg = to_seg(a, topo)
        x = bvec(rng.standard_normal((31, m)))
        y = BlockVector.uninitialized(31, m)
        spmv(seg, x, y)
        np.testing.assert_allclose(y.data, a @ x.data, rtol=1e-13, atol=1e-13)

    def test_threaded_matches_serial_bitwise(self, rng):
        a = random_diag_dominant(40, rng, density=0.3)
        seg = to_seg(a, (2, 2))
        x = bvec(rng.standard_normal((40, 2)))
        y1 = BlockVector.uninitialized(40, 2)
        y2 = BlockVector.uninitialized(40, 2)
        spmv(seg, x, y1)
        with WorkerTeam(Topology(2, 2)) as team:
            spmv(seg, x, y2, team)
        np.testing.assert_array_equal(y1.data, y2.data)

    def test_zero_input_certified_skip(self, rng):
        seg = to_seg(random_diag_dominant(12, rng), (1, 2))
        x = BlockVector.zeros(12, 2)
        y = BlockVector.uninitialized(12, 2)
        spmv(seg, x, y)
        assert y.flags.zero
        np.testing.assert_array_equal(y.data, 0.0)
        assert counters.get("spmv").skips == 1

    def test_alias_rejected(self, rng):
        seg = to_seg(random_diag_dominant(12, rng), (1, 1))
        x = bvec(np.ones((12, 1)))
        with pytest.raises(InvalidArgumentError):
            spmv(seg, x, x)

    def test_shape_mismatch(self, rng):
        seg = to_seg(random_diag_dominant(12, rng), (1, 1))
        with pytest.raises(ShapeMismatchError):
            spmv(seg, bvec(np.ones((13, 1))), BlockVector.uninitialized(12, 1))


class TestResidual:
    @pytest.mark.parametrize("topo", TOPOLOGIES)
    def test_dense_oracle(self, rng, topo):
        a = random_diag_dominant(29, rng, density=0.3)
        seg = to_seg(a, topo)
        x = bvec(rng.standard_normal((29, 3)))
        b = bvec(rng.standard_normal((29, 3)))
        r = BlockVector.uninitialized(29, 3)
        residual(seg, x, b, r)
        np.testing.assert_allclose(r.data, b.data - a @ x.data,
                                   rtol=1e-13, atol=1e-13)

    def test_zero_guess_copies_rhs_without_spmv(self, rng):
        seg = to_seg(random_diag_dominant(15, rng), (1, 2))
        x = BlockVector.zeros(15, 2)
        b = bvec(rng.standard_normal((15, 2)))
        r = BlockVector.uninitialized(15, 2)
        residual(seg, x, b, r)
        np.testing.assert_array_equal(r.data, b.data)
        assert counters.get("spmv").skips == 1
        assert counters.get("residual").calls == 0

    def test_fused_single_matrix_pass(self, rng):
        """residual is one matrix kernel, not spmv followed by axpby."""
        seg = to_seg(random_diag_dominant(15, rng), (1, 1))
        x = bvec(rng.standard_normal((15, 1)))
        b = bvec(rng.standard_normal((15, 1)))
        r = BlockVector.uninitialized(15, 1)
        counters.reset()
        residual(seg, x, b, r)
        assert counters.get("residual").calls == 1
        assert counters.get("spmv").calls == 0
        assert counters.get("axpby").calls == 0


def dense_sgs_oracle(a, b, x, direction):
    """Single-leaf symmetric Gauss-Seidel reference, plain loops."""
    n = a.shape[0]
    x = x.copy()
    orders = {"forward": [range(n)], "backward": [range(n - 1, -1, -1)],
              "symmetric": [range(n), range(n - 1, -1, -1)]}[direction]
    for order in orders:
        for i in order:
            s = b[i] - a[i] @ x + a[i, i] * x[i]
            x[i] = s / a[i, i]
    return x


class TestSweeps:
    @pytest.mark.parametrize("direction", ["forward", "backward", "symmetric"])
    def test_gs_single_leaf_matches_dense(self, rng, direction):
        a = random_diag_dominant(20, rng, density=0.4)
        seg = to_seg(a, (1, 1))
        b = rng.standard_normal((20, 2))
        x0 = rng.standard_normal((20, 2))
        x = bvec(x0)
        sgs_sweep(seg, bvec(b), x, direction)
        expected = np.column_stack([
            dense_sgs_oracle(a, b[:, j], x0[:, j], direction) for j in range(2)
        ])
        np.testing.assert_allclose(x.data, expected, rtol=1e-12, atol=1e-13)

    @pytest.mark.parametrize("topo", [(1, 2), (2, 2)])
    def test_gs_converges_on_any_topology(self, rng, topo):
        # multi-leaf sweeps freeze cross-leaf couplings, so they are not
        # identical to the single-leaf sweep; they must still contract
        a = random_diag_dominant(24, rng, density=0.3)
        seg = to_seg(a, topo)
        xs = rng.standard_normal(24)
        b = a @ xs
        x = bvec(np.zeros(24))
        for _ in range(60):
            sgs_sweep(seg, bvec(b), x, "symmetric")
        np.testing.assert_allclose(x.data[:, 0], xs, rtol=1e-8, atol=1e-8)

    def test_gs_topology_reproducible(self, rng):
        a = random_diag_dominant(24, rng, density=0.3)
        seg = to_seg(a, (2, 2))
        b = bvec(rng.standard_normal(24))
        x1 = bvec(np.zeros(24))
        sgs_sweep(seg, b, x1, "symmetric")
        x2 = bvec(np.zeros(24))
        with WorkerTeam(Topology(2, 2)) as team:
            sgs_sweep(seg, b, x2, "symmetric", team)
        np.testing.assert_array_equal(x1.data, x2.data)

    @pytest.mark.parametrize("topo", TOPOLOGIES)
    def test_jacobi_oracle(self, rng, topo):
        a = random_diag_dominant(22, rng, density=0.3)
        seg = to_seg(a, topo)
        b = rng.standard_normal((22, 2))
        x0 = rng.standard_normal((22, 2))
        x = bvec(x0)
        w = 0.8
        jacobi_sweep(seg, bvec(b), x, weight=w)
        d = np.diag(a)[:, None]
        expected = x0 + w * (b - a @ x0) / d
        np.testing.assert_allclose(x.data, expected, rtol=1e-13, atol=1e-13)

    def test_invalid_direction(self, rng):
        seg = to_seg(random_diag_dominant(8, rng), (1, 1))
        with pytest.raises(InvalidArgumentError):
            sgs_sweep(seg, bvec(np.ones(8)), bvec(np.zeros(8)), "up")

    def test_zero_diagonal_rejected(self):
        a = np.array([[0.0, 1.0], [1.0, 2.0]])
        seg = to_seg(a, (1, 1))
        with pytest.raises(SingularDiagonalError):
            sgs_sweep(seg, bvec(np.ones(2)), bvec(np.zeros(2)))
        with pytest.raises(SingularDiagonalError):
            jacobi_sweep(seg, bvec(np.ones(2)), bvec(np.zeros(2)))


class TestExtractDiag:
    def test_values(self, rng):
        a = random_diag_dominant(18, rng)
        seg = to_seg(a, (2, 2))
        np.testing.assert_array_equal(extract_diag(seg).data[:, 0], np.diag(a))

    def test_poisson(self, poisson8):
        A, _ = poisson8
        from mrsolve.core import SegmentedMatrix
        seg = SegmentedMatrix.from_global(A, (1, 2))
        np.testing.assert_array_equal(extract_diag(seg).data[:, 0],
                                      np.full(512, 6.0))
