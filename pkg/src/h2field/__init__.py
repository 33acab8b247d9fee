"""Gaussian and log-normal random fields through H^2-matrix covariances.

The covariance matrix of a kernel on a point set is compressed into an
H^2-matrix ``C_p`` and samples are ``C_p^{1/2} z`` for standard normal ``z``,
with the square root applied matrix-free by a Krylov or a Newton-Schulz
iteration.
"""

from .cluster import (
    BlockClusterTree,
    ClusterTree,
    build_block_tree,
    build_cluster_tree,
    sparsity_stats,
)
from .errors import (
    ConfigError,
    CostGuardError,
    DivergenceError,
    DuplicatePointError,
    H2FieldError,
    KernelError,
    NotPositiveDefiniteError,
    NumericalError,
    ParseError,
    PointSetError,
    SizeError,
)
from .h2 import H2Matrix, assemble, frobenius_error
from .h2 import stats as h2_stats
from .kernels import CustomKernel, MaternKernel, NonStationaryKernel, assemble_dense
from .oracle import dense_sqrt, spectral_bounds
from .pointset import (
    PointSet,
    generate_grid,
    generate_lowdiscrepancy,
    load_points,
    save_points,
    uniformity_report,
)
from .sampler import (
    FieldSample,
    FieldSampler,
    SampleConfig,
    draw_normal,
    empirical_covariance_check,
    lognormal_mean_check,
    sample_field,
    write_samples_csv,
)
from .sqrt_iter import (
    choose_scaling,
    estimate_lambda_max,
    estimate_lambda_min,
    sqrt_apply_krylov,
    sqrt_apply_schulz,
    sqrt_dense_small,
)

__all__ = [name for name in dir() if not name.startswith("_")]
