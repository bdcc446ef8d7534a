"""Vector-level operations: numeric oracles, zero-flag skip behaviour,
and the pass-count advantage of fused kernels."""

import numpy as np
import pytest

from mrsolve import blas
from mrsolve.blas import (TeamScope, add2_scaled, as_scalars, axpby, dot,
                          dot_many, merged_update_dot, norm2, paired_update,
                          update_dot, update_dot2)
from mrsolve.core import BlockVector, make_partition
from mrsolve.errors import InvalidArgumentError, ShapeMismatchError
from mrsolve.instrument import counters
from mrsolve.parallel import Topology, WorkerTeam
from tests.conftest import bvec


@pytest.fixture(autouse=True)
def fresh_counters():
    counters.reset()
    yield
    counters.reset()


def vecs(rng, n=37, m=3, k=1):
    out = [bvec(rng.standard_normal((n, m))) for _ in range(k)]
    return out[0] if k == 1 else out


class TestAsScalars:
    def test_broadcast_scalar(self):
        np.testing.assert_array_equal(as_scalars(2.5, 3), [2.5, 2.5, 2.5])

    def test_sequence_kept(self):
        np.testing.assert_array_equal(as_scalars([1, 2], 2), [1.0, 2.0])

    def test_wrong_length(self):
        with pytest.raises(InvalidArgumentError):
            as_scalars([1.0, 2.0], 3)


class TestAxpby:
    def test_oracle(self, rng):
        x, y = vecs(rng, k=2)
        a = np.array([2.0, -1.0, 0.5])
        b = np.array([1.0, 3.0, 0.0])
        expected = a * x.data + b * y.data
        axpby(a, x, b, y)
        np.testing.assert_allclose(y.data, expected, rtol=1e-15)

    def test_scalar_coefficients(self, rng):
        x, y = vecs(rng, k=2)
        expected = 2.0 * x.data - y.data
        axpby(2.0, x, -1.0, y)
        np.testing.assert_allclose(y.data, expected, rtol=1e-15)

    def test_shape_mismatch(self, rng):
        with pytest.raises(ShapeMismatchError):
            axpby(1.0, bvec(np.zeros((4, 1))), 1.0, bvec(np.zeros((5, 1))))

    def test_uninitialized_operand_rejected(self):
        x = BlockVector.uninitialized(6, 2)
        y = bvec(np.ones((6, 2)))
        with pytest.raises(InvalidArgumentError):
            axpby(1.0, x, 1.0, y)

    def test_zero_flag_skips_kernel(self, rng):
        x = BlockVector.uninitialized(20, 2)
        x.set_zero()
        y = vecs(rng, n=20, m=2)
        before = y.data.copy()
        axpby(3.0, x, 1.0, y)  # y += 3*0 is a certified no-op
        np.testing.assert_array_equal(y.data, before)
        assert counters.get("axpby").skips == 1

    def test_zero_y_becomes_scaled_x(self, rng):
        x = vecs(rng, n=20, m=2)
        y = BlockVector.uninitialized(20, 2)
        y.set_zero()
        axpby(2.0, x, 1.0, y)
        np.testing.assert_allclose(y.data, 2.0 * x.data, rtol=1e-15)
        assert not y.flags.zero

    def test_both_zero_certifies_result(self):
        x = BlockVector.uninitialized(8, 1)
        x.set_zero()
        y = BlockVector.uninitialized(8, 1)
        y.set_zero()
        axpby(1.0, x, 1.0, y)
        assert y.flags.zero
        assert counters.get("axpby").skips == 1


class TestAdd2Scaled:
    def test_oracle(self, rng):
        y, u, v = vecs(rng, k=3)
        a, b = np.array([1.5, 0.0, -2.0]), np.array([0.25, 1.0, 1.0])
        expected = y.data + a * u.data + b * v.data
        add2_scaled(y, a, u, b, v)
        np.testing.assert_allclose(y.data, expected, rtol=1e-15)


class TestDots:
    def test_dot_oracle(self, rng):
        x, y = vecs(rng, k=2)
        np.testing.assert_allclose(dot(x, y), np.sum(x.data * y.data, axis=0),
                                   rtol=1e-13)

    def test_norm2_oracle(self, rng):
        x = vecs(rng)
        np.testing.assert_allclose(norm2(x), np.linalg.norm(x.data, axis=0),
                                   rtol=1e-13)

    def test_zero_flag_short_circuits(self, rng):
        x = BlockVector.uninitialized(10, 2)
        x.set_zero()
        y = vecs(rng, n=10, m=2)
        np.testing.assert_array_equal(dot(x, y), [0.0, 0.0])
        assert counters.get("dot").skips == 1

    def test_dot_many_matches_separate(self, rng):
        x, y, u, v = vecs(rng, k=4)
        grouped = dot_many([(x, y), (u, v), (x, x)])
        singles = [dot(x, y), dot(u, v), dot(x, x)]
        for g, s in zip(grouped, singles):
            np.testing.assert_array_equal(g, s)

    def test_dot_many_single_reduction(self, rng):
        """Three grouped dots cost one dot call entry with 6 reads."""
        x, y, u, v = vecs(rng, k=4)
        counters.reset()
        dot_many([(x, y), (u, v), (x, x)])
        c = counters.get("dot")
        assert c.calls == 1
        assert c.vector_reads == 6

    def test_dot_many_empty(self):
        assert dot_many([]) == []


class TestDistributedAgreesWithSerial:
    """The same op over a worker team matches the single-leaf run bitwise."""

    @pytest.mark.parametrize("topo", [(1, 3), (2, 2)])
    def test_dot_cross_topology_value(self, rng, topo):
        x, y = vecs(rng, n=64, k=2)
        serial = dot(x, y)
        part = make_partition(64, topo)
        with WorkerTeam(Topology(*topo)) as team:
            d = dot(x, y, TeamScope(team, part))
        # staged fold order differs from the single-leaf fold, so only
        # closeness is promised across topologies
        np.testing.assert_allclose(d, serial, rtol=1e-13)

    def test_same_topology_with_and_without_team_bitwise(self, rng):
        x, y = vecs(rng, n=64, k=2)
        part = make_partition(64, (2, 2))
        with WorkerTeam(Topology(2, 2)) as team:
            threaded = dot(x, y, TeamScope(team, part))
        serial_4leaf = dot(x, y, TeamScope(None, part))
        np.testing.assert_array_equal(threaded, serial_4leaf)

    def test_axpby_team_bitwise(self, rng):
        x, y = vecs(rng, n=64, k=2)
        y2 = bvec(y.data.copy())
        axpby(1.25, x, -0.5, y)
        part = make_partition(64, (2, 2))
        with WorkerTeam(Topology(2, 2)) as team:
            axpby(1.25, x, -0.5, y2, TeamScope(team, part))
        np.testing.assert_array_equal(y.data, y2.data)


class TestFusedKernels:
    def test_update_dot_matches_unfused(self, rng):
        x, y = vecs(rng, k=2)
        y_ref = bvec(y.data.copy())
        d = update_dot(0.7, x, -1.2, y)
        axpby(0.7, x, -1.2, y_ref)
        np.testing.assert_array_equal(y.data, y_ref.data)
        np.testing.assert_array_equal(d, dot(y_ref, y_ref))

    def test_paired_update_matches_unfused(self, rng):
        y1, u, s, y2, w = vecs(rng, k=5)
        y1_ref = bvec(y1.data.copy())
        y2_ref = bvec(np.empty_like(y2.data))
        paired_update(y1, 0.3, u, -0.8, s, y2, 1.7, w)
        add2_scaled(y1_ref, 0.3, u, -0.8, s)
        axpby(1.0, s, 0.0, y2_ref)
        axpby(-1.7, w, 1.0, y2_ref)
        np.testing.assert_array_equal(y1.data, y1_ref.data)
        np.testing.assert_allclose(y2.data, y2_ref.data, rtol=1e-15)

    def test_update_dot2_matches_unfused(self, rng):
        y, u, w, z = vecs(rng, k=4)
        d1, d2 = update_dot2(y, u, 0.9, w, z)
        ref = u.data - 0.9 * w.data
        np.testing.assert_array_equal(y.data, ref)
        np.testing.assert_array_equal(d1, dot(z, y))
        np.testing.assert_array_equal(d2, dot(y, y))

    def test_fused_fewer_passes(self, rng):
        """update_dot: 3 logical passes versus 5 for axpby + dot."""
        x, y = vecs(rng, k=2)
        counters.reset()
        update_dot(1.0, x, 1.0, y)
        fused = counters.total("vector_reads") + counters.total("vector_writes")
        counters.reset()
        axpby(1.0, x, 1.0, y)
        dot(y, y)
        unfused = counters.total("vector_reads") + counters.total("vector_writes")
        assert fused == 3
        assert unfused == 5
        assert fused < unfused

    def test_paired_update_fewer_passes(self, rng):
        y1, u, s, y2, w = vecs(rng, k=5)
        counters.reset()
        paired_update(y1, 1.0, u, 1.0, s, y2, 1.0, w)
        fused = counters.total("vector_reads") + counters.total("vector_writes")
        counters.reset()
        add2_scaled(y1, 1.0, u, 1.0, s)          # 3 reads + 1 write
        axpby(1.0, s, 0.0, y2)                   # s pass re-read
        axpby(-1.0, w, 1.0, y2)
        unfused = counters.total("vector_reads") + counters.total("vector_writes")
        assert fused == 6
        assert fused < unfused

    def test_merged_dispatch(self, rng):
        x, y = vecs(rng, k=2)
        y2 = bvec(y.data.copy())
        d_named = merged_update_dot("update_dot", a=0.5, x=x, b=2.0, y=y)
        d_plain = update_dot(0.5, x, 2.0, y2)
        np.testing.assert_array_equal(y.data, y2.data)
        np.testing.assert_array_equal(d_named, d_plain)
        with pytest.raises(InvalidArgumentError):
            merged_update_dot("triple_dot", x=x)

    def test_fusion_pattern_registry(self):
        assert set(blas.FUSION_PATTERNS) == {"update_dot", "paired_update",
                                             "update_dot2"}
