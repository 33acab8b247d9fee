"""
Applying a matrix square root with products only
================================================

Both iterations below need nothing but products with the covariance
matrix.  The Krylov method projects onto span{z, Cz, C^2 z, ...} and takes a
small dense square root there; the Schulz method runs a coupled
multiplication-only recursion whose error squares at every level.
"""

import warnings

import numpy as np

from h2field import (
    MaternKernel,
    SampleConfig,
    FieldSampler,
    assemble_dense,
    dense_sqrt,
    sqrt_apply_krylov,
    sqrt_apply_schulz,
)

warnings.simplefilter("ignore")

# An exponential kernel on 2^10 Sobol points, compressed with order 8
cfg = SampleConfig(lowdisc=10, mu=0.5, lam=0.1, p=8, scaling="optimal")
sampler = FieldSampler(cfg)
C = assemble_dense(sampler.kernel, sampler.points)
z = np.random.default_rng(1).standard_normal(sampler.n)
exact = dense_sqrt(C) @ z

# Krylov: keep every intermediate approximation to watch it converge
res = sqrt_apply_krylov(sampler.h2, z, k_max=80, keep_basis=True, history=True)
print(" k   Krylov relative error")
for k in (1, 5, 10, 20, 40, 80):
    if k <= len(res.coefficients):
        c = res.coefficients[k - 1]
        y = res.Q[:, :c.size] @ c
        print(f"{k:3d}   {np.linalg.norm(y - exact) / np.linalg.norm(z):.2e}")

# Schulz: the spectral estimate fixes the scaling s; each level costs three
# times as many products as the previous one
sc = sampler.schulz_scaling()
print(f"\nscaling s = {sc['s']:.3e}, estimated contraction {sc['kappa_est']:.4f}")
print(" k   products   Schulz relative error")
for k in range(0, 11, 2):
    y = sqrt_apply_schulz(sampler.h2, z, k=k, s=sc["s"])
    print(f"{k:3d}   {3 ** k:8d}   {np.linalg.norm(y - exact) / np.linalg.norm(z):.2e}")
