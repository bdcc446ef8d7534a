"""Kernel backends: correctness oracles and cross-backend bit parity.

The compiled and pure-python backends must produce bitwise-identical
results; accumulation order per column must not depend on the number of
right-hand sides (the basis for joint-vs-single solve equality).
"""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mrsolve import kernels
from mrsolve.core import CsrBlock, IndexWidth, compress_indices
from mrsolve.kernels import python_ref

cython_backend = pytest.importorskip("mrsolve.kernels._ckernels")

BACKENDS = [python_ref, cython_backend]


def random_csr(rng, n=17, ncols=13, density=0.35):
    a = rng.standard_normal((n, ncols)) * (rng.random((n, ncols)) < density)
    return CsrBlock.from_dense(a)


def spmv_args(blk, dtype=np.float64):
    return blk.row_ptr, blk.col_idx, blk.values.astype(dtype)


class TestSpmvOracle:
    @pytest.mark.parametrize("backend", BACKENDS, ids=["python", "cython"])
    @pytest.mark.parametrize("m", [1, 2, 4])
    def test_assign_matches_dense(self, backend, m, rng):
        blk = random_csr(rng)
        x = rng.standard_normal((blk.ncols, m))
        y = np.empty((blk.nrows, m))
        backend.csr_spmv(*spmv_args(blk), x, y, kernels.MODE_ASSIGN)
        np.testing.assert_allclose(y, blk.to_dense() @ x, rtol=1e-13, atol=1e-13)

    @pytest.mark.parametrize("backend", BACKENDS, ids=["python", "cython"])
    def test_modes(self, backend, rng):
        blk = random_csr(rng)
        x = rng.standard_normal((blk.ncols, 2))
        b = rng.standard_normal((blk.nrows, 2))
        ax = blk.to_dense() @ x

        y = b.copy()
        backend.csr_spmv(*spmv_args(blk), x, y, kernels.MODE_ADD)
        np.testing.assert_allclose(y, b + ax, rtol=1e-13, atol=1e-13)

        y = b.copy()
        backend.csr_spmv(*spmv_args(blk), x, y, kernels.MODE_SUB)
        np.testing.assert_allclose(y, b - ax, rtol=1e-13, atol=1e-13)

        y = np.empty_like(b)
        backend.csr_spmv(*spmv_args(blk), x, y, kernels.MODE_RSUB, b=b)
        np.testing.assert_allclose(y, b - ax, rtol=1e-13, atol=1e-13)

    @pytest.mark.parametrize("backend", BACKENDS, ids=["python", "cython"])
    def test_empty_rows(self, backend):
        a = np.zeros((4, 4))
        a[1, 2] = 3.0
        blk = CsrBlock.from_dense(a)
        x = np.ones((4, 1))
        y = np.full((4, 1), 7.0)
        backend.csr_spmv(*spmv_args(blk), x, y, kernels.MODE_ASSIGN)
        np.testing.assert_array_equal(y[:, 0], [0.0, 3.0, 0.0, 0.0])


class TestBackendParity:
    """Compiled and reference kernels agree bitwise."""

    @given(seed=st.integers(0, 2 ** 31), m=st.sampled_from([1, 2, 4, 8]),
           width=st.sampled_from(list(IndexWidth)),
           reduced=st.booleans())
    @settings(max_examples=40, deadline=None)
    def test_spmv_bitwise(self, seed, m, width, reduced):
        rng = np.random.default_rng(seed)
        blk = compress_indices(random_csr(rng), width)
        dtype = np.float32 if reduced else np.float64
        x = rng.standard_normal((blk.ncols, m))
        outs = []
        for backend in BACKENDS:
            y = np.full((blk.nrows, m), np.nan)
            backend.csr_spmv(blk.row_ptr, blk.col_idx,
                             blk.values.astype(dtype), x, y,
                             kernels.MODE_ASSIGN)
            outs.append(y)
        np.testing.assert_array_equal(outs[0], outs[1])

    @given(seed=st.integers(0, 2 ** 31), m=st.sampled_from([1, 2, 4]))
    @settings(max_examples=25, deadline=None)
    def test_gs_sweep_bitwise(self, seed, m):
        rng = np.random.default_rng(seed)
        n = 12
        a = rng.standard_normal((n, n)) * (rng.random((n, n)) < 0.4)
        np.fill_diagonal(a, np.abs(a).sum(axis=1) + 1.0)
        blk = CsrBlock.from_dense(a)
        dp = np.array([
            np.searchsorted(blk.col_idx[blk.row_ptr[i]:blk.row_ptr[i + 1]], i)
            + blk.row_ptr[i] for i in range(n)
        ], dtype=np.int64)
        b = rng.standard_normal((n, m))
        c = rng.standard_normal((n, m))
        x0 = rng.standard_normal((n, m))
        for forward in (True, False):
            outs = []
            for backend in BACKENDS:
                x = x0.copy()
                backend.gs_sweep(blk.row_ptr, blk.col_idx, blk.values, dp,
                                 b, c, x, forward)
                outs.append(x)
            np.testing.assert_array_equal(outs[0], outs[1])

    @given(seed=st.integers(0, 2 ** 31), m=st.sampled_from([1, 3, 4]))
    @settings(max_examples=25, deadline=None)
    def test_vector_kernels_bitwise(self, seed, m):
        rng = np.random.default_rng(seed)
        n = 33
        mk = lambda: rng.standard_normal((n, m))
        a, b, c = (rng.standard_normal(m) for _ in range(3))
        x, y, u, s, w, z = (mk() for _ in range(6))

        for name, args, out_idx in [
            ("axpby", lambda: (a, x.copy(), b, y.copy()), 3),
            ("add2_scaled", lambda: (y.copy(), a, u, b, s), 0),
            ("fused_update_dot", lambda: (a, x, b, y.copy()), 3),
            ("fused_paired_update",
             lambda: (y.copy(), a, u, b, s, z.copy(), c, w), None),
            ("fused_update_dot2", lambda: (y.copy(), u, c, w, z), 0),
            ("dot_partial", lambda: (x, y), None),
        ]:
            results = []
            for backend in BACKENDS:
                call = args()
                ret = getattr(backend, name)(*call)
                results.append((ret, call))
            r0, c0 = results[0]
            r1, c1 = results[1]
            if r0 is not None:
                np.testing.assert_array_equal(np.asarray(r0), np.asarray(r1))
            for a0, a1 in zip(c0, c1):
                np.testing.assert_array_equal(np.asarray(a0), np.asarray(a1))


class TestRhsCountIndependence:
    """Column j of an m-RHS kernel run equals the 1-RHS run bitwise."""

    @pytest.mark.parametrize("backend", BACKENDS, ids=["python", "cython"])
    def test_spmv_column_independence(self, backend, rng):
        blk = random_csr(rng, n=40, ncols=40, density=0.2)
        x = rng.standard_normal((40, 8))
        y = np.empty((40, 8))
        backend.csr_spmv(*spmv_args(blk), x, y, kernels.MODE_ASSIGN)
        for j in range(8):
            yj = np.empty((40, 1))
            backend.csr_spmv(*spmv_args(blk),
                             np.ascontiguousarray(x[:, j:j + 1]), yj,
                             kernels.MODE_ASSIGN)
            np.testing.assert_array_equal(y[:, j], yj[:, 0])

    @pytest.mark.parametrize("backend", BACKENDS, ids=["python", "cython"])
    def test_dot_column_independence(self, backend, rng):
        x = rng.standard_normal((257, 8))
        y = rng.standard_normal((257, 8))
        d = backend.dot_partial(x, y)
        for j in range(8):
            dj = backend.dot_partial(np.ascontiguousarray(x[:, j:j + 1]),
                                     np.ascontiguousarray(y[:, j:j + 1]))
            assert d[j] == dj[0]


class TestFusedEqualsUnfused:
    @pytest.mark.parametrize("backend", BACKENDS, ids=["python", "cython"])
    def test_update_dot(self, backend, rng):
        m = 4
        a, b = rng.standard_normal(m), rng.standard_normal(m)
        x, y = rng.standard_normal((31, m)), rng.standard_normal((31, m))
        y_fused = y.copy()
        d = backend.fused_update_dot(a, x, b, y_fused)
        y_ref = y.copy()
        backend.axpby(a, x, b, y_ref)
        np.testing.assert_array_equal(y_fused, y_ref)
        np.testing.assert_array_equal(d, backend.dot_partial(y_ref, y_ref))

    @pytest.mark.parametrize("backend", BACKENDS, ids=["python", "cython"])
    def test_paired_update(self, backend, rng):
        m = 2
        a, b, c = (rng.standard_normal(m) for _ in range(3))
        y1, u, s, y2, w = (rng.standard_normal((23, m)) for _ in range(5))
        y1f, y2f = y1.copy(), y2.copy()
        backend.fused_paired_update(y1f, a, u, b, s, y2f, c, w)
        y1r = y1.copy()
        backend.add2_scaled(y1r, a, u, b, s)
        np.testing.assert_array_equal(y1f, y1r)
        np.testing.assert_array_equal(y2f, s - c * w)

    @pytest.mark.parametrize("backend", BACKENDS, ids=["python", "cython"])
    def test_update_dot2(self, backend, rng):
        m = 3
        c = rng.standard_normal(m)
        u, w, z = (rng.standard_normal((29, m)) for _ in range(3))
        y = np.empty((29, m))
        d1, d2 = backend.fused_update_dot2(y, u, c, w, z)
        ref = u - c * w
        np.testing.assert_array_equal(y, ref)
        np.testing.assert_array_equal(d1, backend.dot_partial(z, ref))
        np.testing.assert_array_equal(d2, backend.dot_partial(ref, ref))

    @pytest.mark.parametrize("backend", BACKENDS, ids=["python", "cython"])
    def test_update_dot2_aliasing_identity(self, backend, rng):
        # y aliasing u with c=0 is the dot-pair idiom used by the solvers
        m = 2
        t = rng.standard_normal((19, m))
        s = rng.standard_normal((19, m))
        y = t.copy()
        d1, d2 = backend.fused_update_dot2(y, y, np.zeros(m), y, s)
        np.testing.assert_array_equal(y, t)
        np.testing.assert_array_equal(d1, backend.dot_partial(s, t))
        np.testing.assert_array_equal(d2, backend.dot_partial(t, t))


class TestBackendSelection:
    def test_active_backend_exposes_all_names(self):
        for name in ("csr_spmv", "gs_sweep", "axpby", "add2_scaled",
                     "dot_partial", "fused_update_dot", "fused_paired_update",
                     "fused_update_dot2"):
            assert hasattr(kernels, name)

    def test_get_backend(self):
        assert kernels.get_backend("python") is python_ref
        assert kernels.get_backend("cython") is cython_backend
        with pytest.raises(Exception):
            kernels.get_backend("fortran")
