"""Krylov and Schulz square-root iterations, spectral estimates and scaling."""

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from h2field.errors import (
    ConfigError,
    CostGuardError,
    DivergenceError,
    NotPositiveDefiniteError,
)
from h2field.oracle import dense_sqrt, random_spd, schulz_dense
from h2field.sqrt_iter import (
    SchulzWorkspace,
    SpectralEstimate,
    choose_scaling,
    contraction_factor,
    estimate_lambda_max,
    estimate_lambda_min,
    sqrt_apply_krylov,
    sqrt_apply_schulz,
    sqrt_dense_small,
)

S3 = math.sqrt(3)
SQRT_2x2 = np.array([[S3 + 1, S3 - 1], [S3 - 1, S3 + 1]]) / 2


def krylov_iterates(M, z, k_max):
    """All intermediate approximations y_1..y_k0 of one Krylov run."""
    res = sqrt_apply_krylov(M, z, k_max=k_max, keep_basis=True, history=True)
    return [res.Q[:, :c.size] @ c for c in res.coefficients], res


class TestSpectralEstimates:
    def test_identity(self):
        est = estimate_lambda_max(lambda v: v, 50)
        assert est.lambda_max_est == pytest.approx(1.0, abs=1e-12)

    def test_diagonal(self):
        est = estimate_lambda_max(np.diag([1.0, 2.0, 3.0]), 3, iters=100)
        assert est.lambda_max_est == pytest.approx(3.0, abs=1e-6)
        assert est.iterations_used <= 100

    @given(st.integers(0, 2**31), st.integers(2, 40))
    def test_rayleigh_quotient_below_true_max(self, seed, n):
        M = random_spd(n, 0.1, 10.0, seed)
        est = estimate_lambda_max(M, n, iters=20, seed=seed)
        assert est.lambda_max_est <= np.linalg.eigvalsh(M)[-1] * (1 + 1e-12)

    def test_lambda_min(self):
        M = random_spd(30, 0.5, 4.0, seed=3)
        est = estimate_lambda_min(M, 30, lambda_max=4.0, iters=2000)
        assert est.lambda_min_est == pytest.approx(0.5, rel=1e-3)
        assert est.lambda_min_est <= est.lambda_max_est

    def test_zero_operator(self):
        with pytest.raises(Exception):
            estimate_lambda_max(lambda v: 0 * v, 5)

    def test_rejects_zero_iterations(self):
        with pytest.raises(ConfigError):
            estimate_lambda_max(np.eye(2), 2, iters=0)


class TestScaling:
    def test_safe(self):
        assert choose_scaling(SpectralEstimate(1.0, None, 1, 0.0), "safe") == 1.0

    def test_optimal(self):
        s = choose_scaling(SpectralEstimate(4.0, 2.0, 1, 0.0), "optimal")
        assert s == pytest.approx(1 / 3)
        assert contraction_factor(s, 2.0, 4.0) == pytest.approx(1 / 3)

    def test_optimal_on_identity_multiple(self):
        s = choose_scaling(SpectralEstimate(2.5, 2.5, 1, 0.0), "optimal")
        assert s == pytest.approx(0.4)
        assert contraction_factor(s, 2.5, 2.5) == pytest.approx(0.0, abs=1e-15)

    def test_optimal_without_lambda_min_falls_back(self):
        with pytest.warns(RuntimeWarning):
            assert choose_scaling(SpectralEstimate(4.0, None, 1, 0.0), "optimal") == 0.25

    def test_unknown_policy(self):
        with pytest.raises(ConfigError):
            choose_scaling(SpectralEstimate(1.0, None, 1, 0.0), "fast")


class TestDenseSmall:
    def test_identity(self):
        np.testing.assert_array_equal(sqrt_dense_small(np.eye(4)), np.eye(4))

    def test_diagonal(self):
        np.testing.assert_allclose(sqrt_dense_small(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]),
                                   rtol=1e-15)

    def test_two_by_two(self):
        np.testing.assert_allclose(sqrt_dense_small(np.array([[2.0, 1.0], [1.0, 2.0]])),
                                   SQRT_2x2, rtol=1e-14)

    def test_indefinite(self):
        with pytest.raises(NotPositiveDefiniteError):
            sqrt_dense_small(np.diag([1.0, -0.1]))

    def test_tiny_negative_is_clamped(self):
        out = sqrt_dense_small(np.diag([1.0, -1e-13]))
        assert np.all(np.isfinite(out)) and out[1, 1] == pytest.approx(1e-7, rel=1e-6)

    def test_cap(self):
        with pytest.raises(CostGuardError):
            sqrt_dense_small(np.eye(6), max_size=5)


class TestKrylovExamples:
    @pytest.mark.parametrize("n", [1, 7, 100])
    def test_identity_breaks_down_at_once(self, n, rng):
        z = rng.standard_normal(n)
        res = sqrt_apply_krylov(lambda v: v, z, k_max=5)
        assert res.k0 == 1 and (res.breakdown or n == 1)
        np.testing.assert_allclose(res.y, z, rtol=1e-15)

    def test_scaled_identity(self, rng):
        z = rng.standard_normal(30)
        np.testing.assert_allclose(sqrt_apply_krylov(4 * np.eye(30), z, k_max=10).y, 2 * z,
                                   rtol=1e-12)

    def test_two_by_two_full_space(self):
        M = np.array([[2.0, 1.0], [1.0, 2.0]])
        res = sqrt_apply_krylov(M, np.array([1.0, 0.0]), k_max=2)
        np.testing.assert_allclose(res.y, SQRT_2x2[:, 0], atol=1e-10)

    def test_rejects_zero_vector(self):
        with pytest.raises(ConfigError):
            sqrt_apply_krylov(np.eye(3), np.zeros(3))

    def test_indefinite_operator_names_order(self, rng):
        M = np.diag(np.linspace(-1.0, 1.0, 20))
        with pytest.raises(NotPositiveDefiniteError, match="interpolation order p"):
            sqrt_apply_krylov(M, rng.standard_normal(20), k_max=20)

    def test_non_finite_operator(self):
        with pytest.raises(DivergenceError):
            sqrt_apply_krylov(lambda v: v * np.nan, np.ones(4))

    def test_block_matches_columns(self, rng):
        M = random_spd(80, 0.5, 5.0, seed=2)
        Z = rng.standard_normal((80, 3))
        block = sqrt_apply_krylov(M, Z, k_max=25)
        for c in range(3):
            single = sqrt_apply_krylov(M, Z[:, c], k_max=25)
            np.testing.assert_allclose(block[c].y, single.y, rtol=1e-11, atol=1e-11)

    def test_tolerance_stop(self, rng):
        M = random_spd(200, 1.0, 4.0, seed=5)
        z = rng.standard_normal(200)
        res = sqrt_apply_krylov(M, z, k_max=200, tol=1e-10)
        assert res.converged and res.k0 < 60
        assert np.linalg.norm(res.y - dense_sqrt(M) @ z) <= 1e-8 * np.linalg.norm(z)


class TestKrylovProperties:
    @given(st.integers(0, 2**31), st.integers(5, 120))
    def test_orthogonality(self, seed, n):
        M = random_spd(n, 1e-3, 1.0, seed)
        z = np.random.default_rng(seed).standard_normal(n)
        res = sqrt_apply_krylov(M, z, k_max=n)
        assert res.orthogonality_defect <= 1e-10

    def test_prefix_stability(self, rng):
        M = random_spd(60, 0.1, 3.0, seed=9)
        z = rng.standard_normal(60)
        short = sqrt_apply_krylov(M, z, k_max=12, keep_basis=True).Q
        long = sqrt_apply_krylov(M, z, k_max=13, keep_basis=True).Q
        np.testing.assert_allclose(long[:, :12], short, atol=1e-13)

    @pytest.mark.parametrize("seed", range(4))
    def test_monotone_error(self, seed):
        M = random_spd(256, 1e-2, 1.0, seed)
        z = np.random.default_rng(seed).standard_normal(256)
        exact = dense_sqrt(M) @ z
        ys, _ = krylov_iterates(M, z, 60)
        errs = np.array([np.linalg.norm(exact - y) for y in ys])
        assert np.all(np.diff(errs) <= 1e-12)

    @pytest.mark.parametrize("n_distinct", [1, 3, 8])
    def test_breakdown_is_exact(self, n_distinct, rng):
        vals = np.repeat(np.linspace(0.5, 5.0, n_distinct), 64 // n_distinct)
        Qr = np.linalg.qr(rng.standard_normal((vals.size, vals.size)))[0]
        M = (Qr * vals) @ Qr.T
        z = rng.standard_normal(vals.size)
        res = sqrt_apply_krylov(M, z, k_max=40)
        assert res.breakdown and res.k0 == n_distinct
        err = np.linalg.norm(dense_sqrt(M) @ z - res.y)
        assert err <= 1e-9 * np.linalg.norm(z) * math.sqrt(5.0)

    def test_convergence_envelope(self, rng):
        lmin, lmax = 0.2, 2.0
        M = random_spd(300, lmin, lmax, seed=11)
        z = rng.standard_normal(300)
        exact = dense_sqrt(M) @ z
        r = (lmax + lmin) / (lmax - lmin)
        ys, res = krylov_iterates(M, z, 80)
        assert not res.breakdown
        for k, y in enumerate(ys, start=1):
            bound = math.sqrt(2 * lmax) * 4 * r * r / (r - 1) * r ** (-k) * np.linalg.norm(z)
            assert np.linalg.norm(exact - y) <= bound


class TestSchulz:
    def test_fixed_point(self, rng):
        z = rng.standard_normal(5)
        for k in range(5):
            np.testing.assert_allclose(sqrt_apply_schulz(lambda v: v, z, k=k, s=1.0), z)

    def test_one_step(self):
        y = sqrt_apply_schulz(lambda v: 0.25 * v, np.array([2.0]), k=1, s=1.0)
        assert y[0] == pytest.approx(2 * 0.34375, rel=1e-15)

    def test_depth_six(self):
        M = np.diag([1.0, 0.5])
        z = np.array([0.3, -1.2])
        y = sqrt_apply_schulz(M, z, k=6, s=1.0)
        np.testing.assert_allclose(y, np.sqrt([1.0, 0.5]) * z, atol=1e-6)

    def test_error_follows_contraction(self):
        """e_k = |A_k - M^{1/2}| for M = diag(1, 0.5) sits below kappa^(2^k)."""
        M = np.diag([1.0, 0.5])
        for k in range(1, 6):
            y = sqrt_apply_schulz(M, np.array([0.0, 1.0]), k=k, s=1.0)
            assert abs(y[1] - math.sqrt(0.5)) <= 0.5 ** (2 ** k)

    @pytest.mark.parametrize("k", [0, 1, 3, 5])
    def test_matches_matrix_iterate(self, k, rng):
        M = random_spd(40, 0.3, 2.0, seed=k)
        z = rng.standard_normal((40, 2))
        s = 0.7
        expected = schulz_dense(M, k, s)[k] @ z
        np.testing.assert_allclose(sqrt_apply_schulz(M, z, k=k, s=s), expected,
                                   rtol=1e-12, atol=1e-12)

    def test_quadratic_order(self, rng):
        M = random_spd(64, 1.0, 4.0, seed=1)
        exact = dense_sqrt(M)
        s = 2 / 5
        errs = [np.linalg.norm(A - exact, 2) for A in schulz_dense(M, 6, s)]
        pre = [(a, b) for a, b in zip(errs, errs[1:]) if b > 1e-10]
        c = max(b / a ** 2 for a, b in pre)
        assert all(b <= c * a * a for a, b in pre) and c < 10

    def test_workspace_reuse(self, rng):
        ws = SchulzWorkspace(4, (30,))
        M = random_spd(30, 0.5, 1.0, seed=0)
        a = sqrt_apply_schulz(M, rng.standard_normal(30), k=4, s=1.0, workspace=ws)
        z = rng.standard_normal(30)
        b = sqrt_apply_schulz(M, z, k=4, s=1.0, workspace=ws)
        np.testing.assert_array_equal(b, sqrt_apply_schulz(M, z, k=4, s=1.0))
        assert a.shape == (30,)

    def test_cost_guard(self):
        with pytest.raises(CostGuardError):
            sqrt_apply_schulz(np.eye(2), np.ones(2), k=15)

    def test_divergence_names_s(self):
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(DivergenceError, match="s="):
                sqrt_apply_schulz(lambda v: 10.0 * v, np.ones(3), k=12, s=1.0)


class TestPerturbationBound:
    @pytest.mark.parametrize("seed", range(100))
    def test_random_pairs(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 65))
        A = random_spd(n, 10.0 ** rng.uniform(-4, 0), 1.0, seed)
        E = rng.standard_normal((n, n)) * 10.0 ** rng.uniform(-6, -1)
        B = A + (E + E.T) / 2
        wb = np.linalg.eigvalsh(B)
        if wb[0] <= 0:
            B += (1e-6 - wb[0]) * np.eye(n)
        gap = np.linalg.norm(dense_sqrt(A) - dense_sqrt(B), 2)
        diff = np.linalg.norm(A - B, 2)
        lmin = np.linalg.eigvalsh(A)[0] + np.linalg.eigvalsh(B)[0]
        assert gap <= 3 * math.sqrt(diff) * (1 + 1e-10)
        assert gap <= diff / math.sqrt(lmin) * (1 + 1e-8)
