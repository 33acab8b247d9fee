"""Covariance functions and dense assembly."""

import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from h2field.errors import KernelError, SizeError
from h2field.kernels import (
    AdmissibilityWarning,
    AnisotropyClampWarning,
    CustomKernel,
    MaternKernel,
    NonStationaryKernel,
    assemble_dense,
    check_admissibility_guidance,
    eval as keval,
    example_anisotropy,
    parse_mu,
)
from h2field.pointset import PointSet, generate_lowdiscrepancy

MUS = ["1/2", "3/2", "5/2", "inf"]
coord = st.floats(-5, 5, allow_nan=False)


class TestMatern:
    def test_diagonal_is_variance(self):
        assert keval(MaternKernel(mu=0.5), [0.3, 0.1], [0.3, 0.1]) == 1.0
        assert keval(MaternKernel(sigma=2, mu="inf"), [0.0], [0.0]) == 4.0

    def test_exponential_at_unit_distance(self):
        assert keval(MaternKernel(mu=0.5), [0.0, 0.0], [1.0, 0.0]) == pytest.approx(
            0.36787944117144233, rel=1e-15)

    @pytest.mark.parametrize("mu,expected", [
        ("3/2", (1 + math.sqrt(3)) * math.exp(-math.sqrt(3))),
        ("5/2", (1 + math.sqrt(5) + 5 / 3) * math.exp(-math.sqrt(5))),
        ("inf", math.exp(-0.5)),
    ])
    def test_closed_forms_at_unit_distance(self, mu, expected):
        assert keval(MaternKernel(mu=mu), [0.0], [1.0]) == pytest.approx(expected, rel=1e-14)

    def test_pnorm(self):
        k1 = MaternKernel(mu=0.5, pnorm=1)
        assert keval(k1, [0, 0], [1, 1]) == pytest.approx(math.exp(-2))
        k3 = MaternKernel(mu=0.5, pnorm=3)
        assert keval(k3, [0, 0], [1, 1]) == pytest.approx(math.exp(-2 ** (1 / 3)))

    def test_unsupported_mu_names_set(self):
        with pytest.raises(KernelError, match="1/2, 3/2, 5/2, inf"):
            MaternKernel(mu=0.7)
        assert parse_mu("5/2") == 2.5
        assert parse_mu("infinity") == math.inf

    def test_invalid_parameters(self):
        with pytest.raises(KernelError):
            MaternKernel(sigma=0)
        with pytest.raises(KernelError):
            MaternKernel(lam=-1)
        with pytest.raises(KernelError):
            MaternKernel(pnorm=0)

    @pytest.mark.parametrize("mu", MUS)
    @given(r1=st.floats(0, 10), r2=st.floats(0, 10))
    def test_monotone_in_distance(self, mu, r1, r2):
        k = MaternKernel(mu=mu)
        lo, hi = sorted((r1, r2))
        assert k.of_distance(lo) >= k.of_distance(hi)

    @pytest.mark.parametrize("mu", MUS)
    @given(x=st.lists(coord, min_size=2, max_size=2), y=st.lists(coord, min_size=2, max_size=2),
           s=st.floats(0.1, 10))
    def test_symmetry_and_variance_scaling(self, mu, x, y, s):
        k1, ks = MaternKernel(1.0, 0.7, mu), MaternKernel(s, 0.7, mu)
        assert abs(keval(k1, x, y) - keval(k1, y, x)) <= 1e-15
        assert keval(ks, x, y) == pytest.approx(s * s * keval(k1, x, y), rel=1e-14)


class TestNonStationary:
    def test_identity_anisotropy_diagonal(self):
        k = NonStationaryKernel(sigma_map=lambda x: np.broadcast_to(np.eye(2), x.shape[:-1] + (2, 2)))
        assert keval(k, [0.2, 0.3], [0.2, 0.3]) == pytest.approx(1 / (2 * math.sqrt(2)), rel=1e-14)

    def test_example_map(self):
        np.testing.assert_array_equal(example_anisotropy([1.0, 0.0]), np.eye(2))
        np.testing.assert_array_equal(example_anisotropy([3.0, 4.0]), 25 * np.eye(2))
        with pytest.warns(AnisotropyClampWarning):
            np.testing.assert_array_equal(example_anisotropy([0.0, 0.0]), 1e-8 * np.eye(2))

    @given(x=st.lists(st.floats(0.1, 2), min_size=2, max_size=2),
           y=st.lists(st.floats(0.1, 2), min_size=2, max_size=2))
    def test_symmetry(self, x, y):
        k = NonStationaryKernel()
        assert abs(keval(k, x, y) - keval(k, y, x)) <= 1e-15 * keval(k, x, x)

    def test_positive_semidefinite(self):
        ps = PointSet(generate_lowdiscrepancy(6, 2).coords + 0.1)
        C = assemble_dense(NonStationaryKernel(), ps)
        assert np.linalg.eigvalsh(C).min() > -1e-8 * C.shape[0]

    def test_check_map(self):
        NonStationaryKernel().check_map(np.random.default_rng(0).random((10, 2)) + 0.1)
        bad = NonStationaryKernel(sigma_map=lambda x: -example_anisotropy(x))
        with pytest.raises(KernelError):
            bad.check_map(np.ones((3, 2)))


class TestCustom:
    def test_scalar_callback(self):
        k = CustomKernel(lambda a, b: math.exp(-abs(a[0] - b[0])), dim=1)
        assert keval(k, [0.0], [1.0]) == pytest.approx(math.exp(-1))

    def test_asymmetric_rejected(self):
        with pytest.raises(KernelError, match="symmetry"):
            CustomKernel(lambda a, b: 1.0 + a[0] - 0.5 * b[0] + 2.0, dim=1)


class TestDense:
    def test_single_point(self):
        np.testing.assert_array_equal(assemble_dense(MaternKernel(sigma=3), PointSet([[0.5, 0.5]])), [[9.0]])

    def test_two_points(self):
        C = assemble_dense(MaternKernel(mu=0.5), PointSet([[0.0, 0.0], [1.0, 0.0]]))
        np.testing.assert_allclose(C, [[1, math.exp(-1)], [math.exp(-1), 1]], rtol=1e-15)

    @pytest.mark.parametrize("mu", MUS)
    def test_exactly_symmetric_and_matches_eval(self, mu):
        ps = generate_lowdiscrepancy(5, 2)
        k = MaternKernel(mu=mu, lam=0.3)
        C = assemble_dense(k, ps)
        assert np.array_equal(C, C.T)
        np.testing.assert_array_equal(np.diag(C), 1.0)
        assert C[3, 17] == keval(k, ps.coords[3], ps.coords[17])

    def test_exponential_is_positive_definite(self):
        C = assemble_dense(MaternKernel(mu=0.5), generate_lowdiscrepancy(6, 2))
        assert np.linalg.eigvalsh(C).min() > 0

    def test_cap(self):
        with pytest.raises(SizeError):
            assemble_dense(MaternKernel(), generate_lowdiscrepancy(4, 2), cap=8)


def test_admissibility_guidance():
    with pytest.warns(AdmissibilityWarning, match="not checked"):
        check_admissibility_guidance(MaternKernel(), 1.0)
    with pytest.warns(AdmissibilityWarning, match="not guaranteed"):
        check_admissibility_guidance(MaternKernel(smoothness_scale_c2=0.2), 1.0)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        check_admissibility_guidance(MaternKernel(smoothness_scale_c2=1.0), 1.0)
