"""
Compressing a covariance matrix
===============================

A Matern covariance on a few thousand points is dense, but blocks that
couple well separated clusters are smooth and can be replaced by tensor
Chebyshev interpolants.  This script builds the hierarchical representation
step by step and shows how the interpolation order trades storage for
accuracy.
"""

import warnings

import numpy as np

from h2field import (
    MaternKernel,
    assemble,
    assemble_dense,
    build_block_tree,
    build_cluster_tree,
    frobenius_error,
    generate_lowdiscrepancy,
    h2_stats,
    sparsity_stats,
)

# The c2 guidance only applies to kernels that declare a smoothness scale
warnings.simplefilter("ignore")

# 2^11 Sobol points in the unit square and a Gaussian (mu = inf) kernel
points = generate_lowdiscrepancy(11, 2)
kernel = MaternKernel(sigma=1.0, lam=0.5, mu="inf")
print(f"{points.n} points in dimension {points.dim}")

# Geometric bisection: every box is halved along its longest edge until a
# cluster holds at most c_leaf points
tree = build_cluster_tree(points, c_leaf=20)
print(f"cluster tree: {tree.n_nodes} clusters, depth {tree.depth}")

# Pair up clusters; admissible pairs become far (low-rank) blocks
blocks = build_block_tree(tree, eta=1.0)
print("block partition:", sparsity_stats(blocks))

# The dense matrix is still affordable here, which lets us measure the error
C = assemble_dense(kernel, points)
print(f"dense storage: {C.size} entries")

print("\n p   entries/N   ||C - C_p||_F / ||C||_F")
for p in range(2, 8):
    h = assemble(kernel, blocks, p)
    s = h2_stats(h)
    rel = frobenius_error(h, C) / np.linalg.norm(C)
    print(f"{p:2d}   {s['storage_per_n']:9.1f}   {rel:.2e}")

# The fast product agrees with the dense one up to the compression error
h = assemble(kernel, blocks, 6)
z = np.random.default_rng(0).standard_normal(points.n)
print("\nmatvec difference:", np.linalg.norm(h @ z - C @ z) / np.linalg.norm(C @ z))
