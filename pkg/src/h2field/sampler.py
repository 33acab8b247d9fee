"""Gaussian and log-normal random field samples on a point set.

The pipeline is point set -> cluster tree -> block tree -> H^2 covariance
``C_p`` (built once) and then, per sample ``i``, a standard normal vector
``z`` drawn from stream ``i`` followed by ``y = C_p^{1/2} z``.

Random numbers come from the counter-based Philox generator keyed by
``(seed, stream)``; output word ``j`` of that key is mapped to a uniform
``u = (floor(w / 2**11) + 1/2) / 2**53`` in (0, 1) and then to a normal
through the inverse normal CDF.  The value of ``z[j]`` therefore depends
only on ``(seed, stream, j)``.

Samples are processed in fixed batches of ``batch`` consecutive indices.
Batches are independent, so worker threads only change the schedule, never
the numbers.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.special import ndtri

from . import kernels as kmod
from .cluster import DEFAULT_CLEAF, DEFAULT_ETA, build_block_tree, build_cluster_tree
from .errors import ConfigError, NotPositiveDefiniteError, NumericalError, SizeError
from .h2 import assemble
from .pointset import PointSet, generate_grid, generate_lowdiscrepancy, load_points
from .sqrt_iter import (
    BREAKDOWN_TOL,
    KRYLOV_KMAX,
    SCHULZ_K,
    choose_scaling,
    contraction_factor,
    estimate_lambda_max,
    estimate_lambda_min,
    sqrt_apply_krylov,
    sqrt_apply_schulz,
)

METHODS = ("krylov", "schulz")
SCALINGS = ("safe", "optimal")
KERNELS = ("matern", "nonstat")
_TWO53 = 2.0**-53


def draw_normal(seed: int, stream: int, n: int) -> np.ndarray:
    """``n`` standard normal values determined by ``(seed, stream)``.

    Examples
    --------
    >>> a = draw_normal(7, 0, 5)
    >>> bool(np.array_equal(a, draw_normal(7, 0, 5)))
    True
    """
    if n < 1:
        raise ConfigError(f"n must be >= 1, got {n}")
    if not (0 <= seed < 2**64 and 0 <= stream < 2**64):
        raise ConfigError("seed and stream must be integers in [0, 2**64)")
    bitgen = np.random.Philox(key=int(seed) | (int(stream) << 64))
    words = bitgen.random_raw(n)
    u = ((words >> np.uint64(11)).astype(float) + 0.5) * _TWO53
    return ndtri(u)


def parse_grid(text) -> tuple[int, ...]:
    """``"32x32"`` -> ``(32, 32)``; an int or sequence passes through."""
    if isinstance(text, str):
        try:
            counts = tuple(int(t) for t in text.lower().split("x"))
        except ValueError:
            raise ConfigError(f"cannot parse grid {text!r}; expected e.g. 32x32") from None
    else:
        counts = tuple(int(t) for t in np.atleast_1d(text))
    if not counts or min(counts) < 1:
        raise ConfigError(f"grid counts must be positive, got {text!r}")
    return counts


@dataclass
class SampleConfig:
    """Everything that determines a batch of field samples.

    Exactly one of ``points`` (file path), ``grid`` (``"AxB"``), ``lowdisc``
    (Sobol exponent ``m``) or ``point_set`` selects the evaluation points.
    """

    kernel: str = "matern"
    sigma: float = 1.0
    lam: float = 1.0
    mu: object = 0.5
    pnorm: int = 2
    points: str | None = None
    grid: object = None
    lowdisc: int | None = None
    point_set: PointSet | None = field(default=None, repr=False)
    p: int = 4
    eta: float = DEFAULT_ETA
    c_leaf: int = DEFAULT_CLEAF
    method: str = "krylov"
    kmax: int = KRYLOV_KMAX
    krylov_tol: float | None = None
    breakdown_tol: float = BREAKDOWN_TOL
    schulz_k: int = SCHULZ_K
    scaling: str = "safe"
    seed: int = 0
    n_samples: int = 1
    lognormal: bool = False
    mean: float = 0.0
    batch: int = 8

    def __post_init__(self):
        if self.n_samples < 1:
            raise ConfigError("samples must be >= 1")
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.scaling not in SCALINGS:
            raise ConfigError(f"scaling must be one of {SCALINGS}, got {self.scaling!r}")
        if self.kernel not in KERNELS:
            raise ConfigError(f"kernel must be one of {KERNELS}, got {self.kernel!r}")
        if self.p < 1 or self.c_leaf < 1 or self.kmax < 1 or self.batch < 1:
            raise ConfigError("p, cleaf, kmax and batch must be >= 1")
        if not self.eta > 0:
            raise ConfigError("eta must be positive")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must lie in [0, 2**64)")
        if self.kernel == "matern":
            kmod.parse_mu(self.mu)
        sources = [s for s in (self.points, self.grid, self.lowdisc, self.point_set)
                   if s is not None]
        if len(sources) != 1:
            raise ConfigError("give exactly one point source: points, grid or lowdisc")

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("point_set")
        if self.point_set is not None:
            d["point_set"] = f"<{self.point_set.n} points in {self.point_set.dim}D>"
        return d


@dataclass
class FieldSample:
    values: np.ndarray
    sample_index: int
    diagnostics: dict


def resolve_points(cfg: SampleConfig) -> PointSet:
    if cfg.point_set is not None:
        return cfg.point_set
    if cfg.points is not None:
        return load_points(cfg.points)
    if cfg.grid is not None:
        return generate_grid(parse_grid(cfg.grid))
    return generate_lowdiscrepancy(int(cfg.lowdisc), 2)


def make_kernel(cfg: SampleConfig) -> kmod.Kernel:
    if cfg.kernel == "matern":
        return kmod.MaternKernel(cfg.sigma, cfg.lam, cfg.mu, cfg.pnorm)
    return kmod.NonStationaryKernel(cfg.sigma)


class FieldSampler:
    """Holds the assembled covariance of one configuration and draws samples.

    Attributes
    ----------
    points : PointSet
    kernel : Kernel
    h2 : H2Matrix
    timings : dict
        Wall-clock seconds of the tree and assembly phases.
    """

    def __init__(self, cfg: SampleConfig):
        self.cfg = cfg
        t0 = time.perf_counter()
        self.points = resolve_points(cfg)
        self.kernel = make_kernel(cfg)
        tree = build_cluster_tree(self.points, cfg.c_leaf)
        self.bct = build_block_tree(tree, cfg.eta)
        t1 = time.perf_counter()
        self.h2 = assemble(self.kernel, self.bct, cfg.p)
        t2 = time.perf_counter()
        self.timings = {"tree": t1 - t0, "assembly": t2 - t1}
        self._schulz = None

    @property
    def n(self) -> int:
        return self.points.n

    def schulz_scaling(self) -> dict:
        """Spectral estimate and scaling factor used by the Schulz method (cached)."""
        if self._schulz is None:
            est = estimate_lambda_max(self.h2, self.n, seed=self.cfg.seed)
            if self.cfg.scaling == "optimal":
                est = estimate_lambda_min(self.h2, self.n, est.lambda_max_est,
                                          seed=self.cfg.seed)
            s = choose_scaling(est, self.cfg.scaling)
            kappa = (contraction_factor(s, est.lambda_min_est, est.lambda_max_est)
                     if est.lambda_min_est is not None else None)
            self._schulz = {"s": s, "lambda_max_est": est.lambda_max_est,
                            "lambda_min_est": est.lambda_min_est, "kappa_est": kappa}
        return self._schulz

    def normals(self, indices) -> np.ndarray:
        """Standard normal block ``(N, len(indices))``, column ``j`` from stream ``indices[j]``."""
        return np.stack([draw_normal(self.cfg.seed, int(i), self.n) for i in indices], axis=1)

    def apply_sqrt(self, Z):
        """``C_p^{1/2} Z`` column by column; returns ``(Y, diagnostics per column)``."""
        cfg = self.cfg
        if cfg.method == "krylov":
            try:
                res = sqrt_apply_krylov(self.h2, Z, cfg.kmax, cfg.breakdown_tol, cfg.krylov_tol)
            except NotPositiveDefiniteError as exc:
                raise NotPositiveDefiniteError(
                    f"{exc} (current p={cfg.p}; C_p loses positive definiteness when p "
                    "is too small)") from exc
            return np.stack([r.y for r in res], axis=1), [r.diagnostics for r in res]
        sc = self.schulz_scaling()
        Y = sqrt_apply_schulz(self.h2, Z, cfg.schulz_k, sc["s"])
        diag = {"method": "schulz", "k": cfg.schulz_k, **sc}
        return Y, [dict(diag) for _ in range(Z.shape[1])]

    def _batch(self, indices):
        Y, diags = self.apply_sqrt(self.normals(indices))
        out = []
        for j, i in enumerate(indices):
            vals = self.cfg.mean + Y[:, j]
            if self.cfg.lognormal:
                vals = np.exp(vals)
            if not np.all(np.isfinite(vals)):
                raise NumericalError(f"sample {i} has non-finite values")
            if self.cfg.lognormal and np.any(vals <= 0):
                raise NumericalError(f"log-normal sample {i} underflowed to zero")
            out.append(FieldSample(vals, int(i), diags[j]))
        return out

    def sample(self, indices=None, threads: int | None = None) -> list[FieldSample]:
        """Draw the samples ``indices`` (default ``0..n_samples-1``) in index order."""
        if indices is None:
            indices = range(self.cfg.n_samples)
        indices = list(indices)
        b = self.cfg.batch
        batches = [indices[s:s + b] for s in range(0, len(indices), b)]
        if threads is not None and threads > 1 and len(batches) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                parts = list(pool.map(self._batch, batches))
        else:
            parts = [self._batch(bt) for bt in batches]
        return [s for part in parts for s in part]


def sample_field(cfg: SampleConfig, threads: int | None = None) -> list[FieldSample]:
    """Build the covariance for ``cfg`` once and draw ``cfg.n_samples`` fields."""
    return FieldSampler(cfg).sample(threads=threads)


def _dense_reference(sampler: FieldSampler, cap: int):
    if sampler.n > cap:
        raise SizeError(f"N={sampler.n} exceeds the dense cap {cap}")
    return kmod.assemble_dense(sampler.kernel, sampler.points, cap)


def empirical_covariance_check(cfg: SampleConfig, m: int, cap: int = kmod.DENSE_CAP,
                               threads: int | None = None) -> dict:
    """Compare ``(1/m) sum y y^T`` over ``m`` Gaussian samples with the exact ``C``.

    The log-normal flag and mean offset of ``cfg`` are ignored.
    """
    if m < 100:
        raise ConfigError("empirical covariance check needs m >= 100")
    cfg = replace(cfg, n_samples=m, lognormal=False, mean=0.0)
    sampler = FieldSampler(cfg)
    C = _dense_reference(sampler, cap)
    Y = np.stack([s.values for s in sampler.sample(threads=threads)], axis=1)
    emp = Y @ Y.T / m
    err = emp - C
    return {
        "max_abs_entry_error": float(np.abs(err).max()),
        "frobenius_rel_error": float(np.linalg.norm(err) / np.linalg.norm(C)),
        "clt_envelope": float(5 * math.sqrt(2 / m) * np.abs(C).max()),
        "m": m,
    }


def lognormal_mean_check(cfg: SampleConfig, m: int, threads: int | None = None) -> dict:
    """Empirical mean of ``exp(Z(x))`` against ``exp(C_xx / 2)`` at every point.

    ``max_zscore`` is the largest deviation in units of the Monte Carlo
    standard error ``sqrt((e^{C_xx} - 1) e^{C_xx} / m)``.
    """
    cfg = replace(cfg, n_samples=m, lognormal=True, mean=0.0)
    sampler = FieldSampler(cfg)
    X = sampler.points.coords
    cxx = sampler.kernel(X, X)
    vals = np.stack([s.values for s in sampler.sample(threads=threads)], axis=1)
    emp = vals.mean(axis=1)
    expected = np.exp(0.5 * cxx)
    se = np.sqrt((np.exp(cxx) - 1) * np.exp(cxx) / m)
    return {"max_abs_error": float(np.abs(emp - expected).max()),
            "max_zscore": float((np.abs(emp - expected) / se).max()), "m": m}


def write_samples_csv(path, points: PointSet, samples: list[FieldSample]) -> None:
    """One row per point: coordinates then one column per sample, 17 significant digits."""
    cols = [f"x_{a + 1}" for a in range(points.dim)]
    cols += [f"sample_{s.sample_index}" for s in samples]
    data = np.column_stack([points.coords] + [s.values for s in samples])
    np.savetxt(Path(path), data, fmt="%.17g", delimiter=",", header=",".join(cols), comments="")
