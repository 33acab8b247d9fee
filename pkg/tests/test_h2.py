"""Interpolation bases, H^2 assembly and the fast matrix-vector product."""

import math
import threading

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from h2field.cluster import build_block_tree, build_cluster_tree
from h2field.errors import DimensionError
from h2field.h2 import (
    ChebBasis,
    assemble,
    chebyshev_nodes,
    frobenius_error,
    lagrange_eval,
    nested_basis_defect,
    stats,
)
from h2field.kernels import CustomKernel, MaternKernel, assemble_dense
from h2field.oracle import h2_explicit_matvec
from h2field.pointset import PointSet, generate_grid, generate_lowdiscrepancy


def build(ps, kernel, p, c_leaf=20, eta=1.0):
    return assemble(kernel, build_block_tree(build_cluster_tree(ps, c_leaf), eta), p)


@pytest.fixture(scope="module")
def exp_1d():
    ps = PointSet(np.random.default_rng(5).random(512))
    return build(ps, MaternKernel(mu=0.5), p=4, c_leaf=8)


@pytest.fixture(scope="module")
def gauss_grid():
    ps = generate_grid(16, 2)
    return ps, assemble_dense(MaternKernel(mu="inf"), ps)


class TestChebyshevNodes:
    def test_p1_is_midpoint(self):
        np.testing.assert_array_equal(chebyshev_nodes([0.0], [2.0], 1), [[1.0]])

    def test_p2_reference_interval(self):
        nodes = np.sort(chebyshev_nodes([-1.0], [1.0], 2)[:, 0])
        np.testing.assert_allclose(nodes, [-math.sqrt(0.5), math.sqrt(0.5)], rtol=1e-15)

    def test_tensor_grid(self):
        nodes = chebyshev_nodes([0, 0], [1, 1], 2)
        assert nodes.shape == (4, 2)
        assert len({tuple(q) for q in nodes}) == 4

    def test_flat_axis_collapses(self):
        nodes = chebyshev_nodes([0.0, 3.0], [1.0, 3.0], 3)
        np.testing.assert_array_equal(nodes[:, 1], 3.0)

    @given(st.integers(1, 8), st.floats(-5, 5), st.floats(0.01, 5))
    def test_inside_box(self, p, a, w):
        nodes = chebyshev_nodes([a], [a + w], p)
        assert np.all((nodes >= a) & (nodes <= a + w))


class TestLagrange:
    @pytest.mark.parametrize("p", [1, 2, 3, 5])
    def test_interpolation_property(self, p):
        b = ChebBasis(np.array([0.0, -1.0]), np.array([2.0, 1.0]), p)
        np.testing.assert_allclose(b.eval(b.nodes), np.eye(p * p), atol=1e-14)

    def test_symmetric_pair_at_centre(self):
        b = ChebBasis(np.array([-1.0]), np.array([1.0]), 2)
        assert lagrange_eval(b, 0, [0.0]) == pytest.approx(0.5)
        assert lagrange_eval(b, 1, [0.0]) == pytest.approx(0.5)

    @given(st.integers(1, 7), st.lists(st.floats(0, 1), min_size=3, max_size=3))
    def test_partition_of_unity(self, p, x):
        b = ChebBasis(np.zeros(3), np.array([1.0, 2.0, 0.5]), p)
        x = np.array(x) * [1.0, 2.0, 0.5]
        assert abs(b.eval(x[None, :]).sum() - 1.0) <= 1e-12


class TestAssembly:
    def test_single_leaf_is_dense(self, rng):
        ps = PointSet(rng.random((15, 2)))
        k = MaternKernel(mu=1.5)
        h = build(ps, k, p=3)
        C = assemble_dense(k, ps)
        np.testing.assert_array_equal(h.to_dense(), C)
        z = rng.standard_normal(15)
        np.testing.assert_allclose(h.matvec(z), C @ z, rtol=1e-14, atol=1e-14)
        assert frobenius_error(h, C) == 0.0

    def test_polynomial_kernel_exact(self):
        ps = PointSet(np.linspace(0.5, 1.5, 200))
        k = CustomKernel(lambda x, y: x[..., 0] * y[..., 0], dim=1, vectorized=True)
        for p in (2, 3):
            h = build(ps, k, p=p, c_leaf=4)
            assert len(h.bct.far) > 0
            C = assemble_dense(k, ps)
            assert frobenius_error(h, C) <= 1e-12 * np.linalg.norm(C)

    def test_coupling_transpose_symmetry(self):
        h = build(generate_lowdiscrepancy(9, 2), MaternKernel(mu=0.5), p=3)
        index = {tuple(b): i for i, b in enumerate(h.bct.far.tolist())}
        for (x, y), i in index.items():
            np.testing.assert_array_equal(h.coupling(i), h.coupling(index[(y, x)]).T)

    def test_nested_basis(self):
        h = build(generate_lowdiscrepancy(10, 2), MaternKernel(mu=0.5), p=4)
        assert nested_basis_defect(h) <= 1e-12

    def test_nested_basis_3d(self):
        pts = np.random.default_rng(2).random((600, 3))
        h = build(PointSet(pts), MaternKernel(mu=0.5), p=3)
        assert nested_basis_defect(h) <= 1e-12

    def test_gaussian_error_halves_per_order(self, gauss_grid):
        ps, C = gauss_grid
        errs = [frobenius_error(build(ps, MaternKernel(mu="inf"), p), C) for p in range(2, 7)]
        ratios = np.array(errs[1:]) / np.array(errs[:-1])
        assert np.all(ratios <= 0.5), errs

    def test_gaussian_log_error_geometric(self, gauss_grid):
        """Log error falls at a uniform geometric rate; steps alternate with the parity of p."""
        ps, C = gauss_grid
        orders = np.arange(2, 7)
        errs = [frobenius_error(build(ps, MaternKernel(mu="inf"), p, eta=0.7), C) for p in orders]
        logs = np.log(errs)
        assert np.all(np.diff(logs) <= -2.0)
        slope, icpt = np.polyfit(orders, logs, 1)
        assert np.abs(logs - (slope * orders + icpt)).max() <= 1.5

    def test_frobenius_size_mismatch(self, exp_1d):
        with pytest.raises(DimensionError):
            frobenius_error(exp_1d, np.eye(3))


class TestMatvec:
    def test_zero(self, exp_1d):
        assert np.all(exp_1d.matvec(np.zeros(exp_1d.n)) == 0)

    def test_length_mismatch(self, exp_1d):
        with pytest.raises(DimensionError):
            exp_1d.matvec(np.ones(exp_1d.n + 1))

    def test_matches_explicit_blocks(self, exp_1d):
        rng = np.random.default_rng(7)
        for _ in range(10):
            z = rng.standard_normal(exp_1d.n)
            diff = exp_1d.matvec(z) - h2_explicit_matvec(exp_1d, z)
            assert np.linalg.norm(diff) <= 1e-12 * np.linalg.norm(z)

    @given(st.integers(0, 2**31), st.integers(2, 400), st.integers(1, 3))
    def test_matches_explicit_blocks_on_ragged_trees(self, seed, n, d):
        """Leaves at different depths must still see their own points."""
        pts = np.unique(np.random.default_rng(seed).random((n, d)) ** 3, axis=0)
        h = build(PointSet(pts), MaternKernel(mu=0.5), p=2, c_leaf=3)
        z = np.random.default_rng(seed + 1).standard_normal(h.n)
        diff = h.matvec(z) - h2_explicit_matvec(h, z)
        assert np.linalg.norm(diff) <= 1e-12 * np.linalg.norm(z) * h.n

    def test_matches_to_dense(self):
        h = build(generate_lowdiscrepancy(9, 2), MaternKernel(mu=2.5), p=4)
        z = np.random.default_rng(0).standard_normal((h.n, 3))
        np.testing.assert_allclose(h.matvec(z), h.to_dense() @ z, rtol=1e-12, atol=1e-12)

    @given(st.integers(0, 2**31))
    def test_operator_symmetry(self, seed):
        h = build(generate_lowdiscrepancy(9, 2), MaternKernel(mu=0.5), p=3)
        rng = np.random.default_rng(seed)
        z, w = rng.standard_normal((2, h.n))
        gap = abs(z @ h.matvec(w) - w @ h.matvec(z))
        assert gap <= 1e-11 * np.linalg.norm(z) * np.linalg.norm(w)

    def test_concurrent_calls_with_own_buffers(self, exp_1d):
        rng = np.random.default_rng(3)
        zs = rng.standard_normal((4, exp_1d.n))
        expected = [exp_1d.matvec(z) for z in zs]
        outs = [np.empty(exp_1d.n) for _ in zs]
        threads = [threading.Thread(target=exp_1d.matvec, args=(z,), kwargs={"out": o})
                   for z, o in zip(zs, outs)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        for o, e in zip(outs, expected):
            np.testing.assert_array_equal(o, e)


class TestStorage:
    def test_counts(self, exp_1d):
        st_ = exp_1d.storage()
        assert st_["total"] == sum(v for k, v in st_.items() if k != "total")
        assert st_["coupling"] == len(exp_1d.bct.far) * exp_1d.rank ** 2

    def test_linear_in_n(self):
        """Entries per point stay under a pinned multiple of p^(2d) and level off."""
        p, per_n = 4, {}
        for m in range(9, 16):
            h = build(generate_lowdiscrepancy(m, 2), MaternKernel(mu=0.5), p)
            per_n[m] = h.storage()["total"] / h.n
        # bound pinned from a run up to N = 2^18, where the ratio reached 4.7
        assert max(per_n.values()) <= 6.0 * p ** 4
        # the odd/even level structure alternates; compare like with like
        steps = [per_n[m + 2] - per_n[m] for m in (10, 12)]
        assert steps[1] < steps[0]

    def test_stats_keys(self, exp_1d):
        s = stats(exp_1d)
        for key in ("depth", "C_sparse", "near_count", "far_count", "storage", "storage_per_n"):
            assert key in s
