"""Matrix-free application of ``M^{1/2}`` to vectors.

Two iterations are provided, both needing only products with ``M``:

* :func:`sqrt_apply_krylov` projects ``M`` onto the Krylov space of ``z``,
  orthonormalised one column at a time, and takes the dense square root of
  the small projected matrix.
* :func:`sqrt_apply_schulz` runs the coupled Newton-Schulz iteration for the
  sign function of ``[[0, sM], [I, 0]]`` recursively, storing one scratch
  vector per recursion level.

Operators may be given as dense arrays, sparse matrices, objects with a
``matvec`` method, or plain callables ``v -> M v``.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigError,
    CostGuardError,
    DimensionError,
    DivergenceError,
    NotPositiveDefiniteError,
    NumericalError,
)

log = logging.getLogger(__name__)

KRYLOV_KMAX = 200
SCHULZ_K = 10
SCHULZ_MAX_K = 14
BREAKDOWN_TOL = 1e-12
SMALL_SQRT_MAX = 512


def as_operator(m):
    """Normalise ``m`` to a callable computing ``m @ v``."""
    if callable(m) and not hasattr(m, "matvec"):
        return m
    if hasattr(m, "matvec"):
        return m.matvec
    arr = m
    return lambda v: arr @ v


@dataclass(frozen=True)
class SpectralEstimate:
    lambda_max_est: float
    lambda_min_est: float | None
    iterations_used: int
    residual: float


def _power(apply, n, iters, rng, tol):
    """Power iteration; returns (Rayleigh quotient, vector, iterations, residual)."""
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    theta, res = 0.0, np.inf
    for it in range(1, iters + 1):
        w = np.asarray(apply(v), dtype=float)
        theta = float(v @ w)
        nw = float(np.linalg.norm(w))
        if nw == 0.0:
            return 0.0, v, it, 0.0
        res = float(np.linalg.norm(w - theta * v)) / max(abs(theta), np.finfo(float).tiny)
        v = w / nw
        if res <= tol:
            break
    return theta, v, it, res


def estimate_lambda_max(apply, n: int, iters: int = 100, seed: int = 0,
                        tol: float = 0.0) -> SpectralEstimate:
    """Largest eigenvalue of a symmetric PSD operator by power iteration.

    The returned Rayleigh quotient never exceeds the true largest eigenvalue
    (up to roundoff).  A start vector in the null space is retried once with
    a new seed.
    """
    if iters < 1:
        raise ConfigError("iters must be >= 1")
    apply = as_operator(apply)
    for attempt in range(2):
        rng = np.random.default_rng([seed, attempt])
        theta, _, used, res = _power(apply, n, iters, rng, tol)
        if theta > 0:
            return SpectralEstimate(theta, None, used, res)
    raise NumericalError("power iteration collapsed to zero twice; operator may be zero")


def estimate_lambda_min(apply, n: int, lambda_max: float, iters: int = 200,
                        seed: int = 1, tol: float = 0.0) -> SpectralEstimate:
    """Smallest eigenvalue via power iteration on ``lambda_max I - M`` (best effort)."""
    apply = as_operator(apply)
    shifted = lambda v: lambda_max * v - apply(v)  # noqa: E731
    rng = np.random.default_rng([seed, 0])
    theta, _, used, res = _power(shifted, n, iters, rng, tol)
    lmin = max(lambda_max - theta, 0.0)
    return SpectralEstimate(lambda_max, min(lmin, lambda_max), used, res)


def choose_scaling(est: SpectralEstimate, policy: str = "safe") -> float:
    """Scaling factor ``s`` for the Schulz iteration.

    ``"safe"`` returns ``1/lambda_max``, leaving a factor 2 margin below the
    convergence limit ``2/lambda_max``.  ``"optimal"`` returns
    ``2/(lambda_min + lambda_max)``, which minimises the contraction factor;
    without a lambda_min estimate it falls back to ``"safe"`` with a warning.
    """
    if not est.lambda_max_est > 0:
        raise ConfigError("lambda_max estimate must be positive")
    if policy == "optimal":
        if est.lambda_min_est is None:
            warnings.warn("no lambda_min estimate; falling back to safe scaling",
                          RuntimeWarning, stacklevel=2)
        else:
            return 2.0 / (est.lambda_min_est + est.lambda_max_est)
    elif policy != "safe":
        raise ConfigError(f"unknown scaling policy {policy!r}; use 'safe' or 'optimal'")
    return 1.0 / est.lambda_max_est


def contraction_factor(s: float, lambda_min: float, lambda_max: float) -> float:
    """``max(|1 - s lambda_max|, |1 - s lambda_min|)``."""
    return max(abs(1 - s * lambda_max), abs(1 - s * lambda_min))


def sqrt_dense_small(U, max_size: int = SMALL_SQRT_MAX) -> np.ndarray:
    """Symmetric square root of a small SPD matrix by eigendecomposition.

    Eigenvalues below ``1e-14 * lambda_max`` are clamped to that floor;
    eigenvalues below ``-1e-8 * lambda_max`` raise
    :class:`NotPositiveDefiniteError`.
    """
    U = np.asarray(U, dtype=float)
    k = U.shape[0]
    if U.shape != (k, k):
        raise DimensionError(f"expected a square matrix, got shape {U.shape}")
    if k > max_size:
        raise CostGuardError(f"dense square root of size {k} exceeds the cap {max_size}")
    try:
        w, V = np.linalg.eigh(0.5 * (U + U.T))
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigendecomposition failed: {exc}") from exc
    top = float(w[-1]) if k else 0.0
    if top <= 0 or w[0] < -1e-8 * top:
        raise NotPositiveDefiniteError(
            f"matrix is not positive definite (eigenvalues {w[0]:.3e} .. {top:.3e})")
    w = np.maximum(w, 1e-14 * top)
    return (V * np.sqrt(w)) @ V.T


@dataclass
class KrylovResult:
    """Output of :func:`sqrt_apply_krylov`.

    ``increments[j]`` is ``|y_{j+1} - y_j| / |y_{j+1}|`` between consecutive
    Krylov approximations; ``coefficients`` (when requested) holds the
    coordinates ``c_j`` of each ``y_j = Q_j c_j``.
    """

    y: np.ndarray
    k0: int
    breakdown: bool
    converged: bool
    r_last: float
    orthogonality_defect: float
    increments: list = field(default_factory=list)
    Q: np.ndarray | None = None
    coefficients: list | None = None

    @property
    def diagnostics(self) -> dict:
        return {"k0": self.k0, "breakdown": self.breakdown, "converged": self.converged,
                "r_last": self.r_last, "orthogonality_defect": self.orthogonality_defect,
                "last_increment": self.increments[-1] if self.increments else None}


def _small_sqrt_coeffs(U, znorm):
    """Coordinates ``|z| U^{1/2} e_1`` of the Krylov approximation."""
    return znorm * sqrt_dense_small(U)[:, 0]


def _apply_block(apply, X):
    """Apply the operator to the columns of ``X`` (vector if one column)."""
    if X.shape[1] == 1:
        return np.asarray(apply(X[:, 0]), dtype=float)[:, None]
    try:
        out = np.asarray(apply(X), dtype=float)
    except (ValueError, TypeError):
        out = None
    if out is None or out.shape != X.shape:
        out = np.stack([np.asarray(apply(x), dtype=float) for x in X.T], axis=1)
    return out


def sqrt_apply_krylov(apply, z, k_max: int = KRYLOV_KMAX,
                      breakdown_tol: float = BREAKDOWN_TOL, tol: float | None = None,
                      keep_basis: bool = False, history: bool = False):
    """Approximate ``M^{1/2} z`` in the Krylov space ``span{z, Mz, ..., M^{k-1} z}``.

    The basis ``Q`` starts at ``z/|z|``; each step multiplies the newest
    column by ``M`` and appends the orthonormalised product (block
    Gram-Schmidt applied twice, which realises the incremental QR
    factorisation with nonnegative diagonal).  The step breaks down when the
    new diagonal entry of ``R`` falls below ``breakdown_tol`` times the norm
    of the product, and the Krylov space is then invariant.  The result is
    ``Q U^{1/2} Q^T z`` with ``U = Q^T M Q``.

    Parameters
    ----------
    apply : operator
        Symmetric positive definite ``M``.
    z : ndarray, shape (N,) or (N, b)
        Right-hand side.  With ``b`` columns, ``b`` independent Krylov
        processes advance in lockstep and share one block product with
        ``M`` per step; each stops on its own breakdown or tolerance.
    k_max : int
        Maximal Krylov dimension.
    tol : float, optional
        Stop early once the relative change between consecutive
        approximations drops below ``tol``.  By default all ``k_max`` steps
        run unless the space becomes invariant.
    keep_basis, history : bool
        Return the basis ``Q`` and the coefficient vectors of every
        intermediate approximation.

    Returns
    -------
    KrylovResult, or a list of them (one per column) for 2-D ``z``.
    """
    apply = as_operator(apply)
    z = np.asarray(z, dtype=float)
    if z.ndim not in (1, 2):
        raise DimensionError("z must be a vector or a block of column vectors")
    Z = z[:, None] if z.ndim == 1 else z
    n, nb = Z.shape
    znorm = np.linalg.norm(Z, axis=0)
    if np.any(znorm == 0.0):
        raise ConfigError("z must be nonzero")
    if k_max < 1:
        raise ConfigError("k_max must be >= 1")
    kcap = min(k_max, n)

    # one contiguous (kcap, N) basis per column keeps the projections in BLAS
    Q = np.empty((nb, kcap, n))
    Q[:, 0] = (Z / znorm).T
    U = np.zeros((nb, kcap, kcap))
    k0 = np.full(nb, kcap)
    breakdown = np.zeros(nb, dtype=bool)
    converged = np.zeros(nb, dtype=bool)
    r_last = np.ones(nb)
    active = np.ones(nb, dtype=bool)
    increments = [[] for _ in range(nb)]
    coeffs = [[] for _ in range(nb)] if history else None
    prev = [None] * nb

    for j in range(1, kcap + 1):
        act = np.flatnonzero(active)
        if act.size == 0:
            break
        full = act.size == nb
        Qj = Q[:, :j] if full else Q[act, :j]
        q = _apply_block(apply, Q[act, j - 1].T).T[:, :, None]
        if not np.all(np.isfinite(q)):
            raise DivergenceError("operator produced non-finite values")
        # U_j grows by one row/column; entry (i, j-1) = q_i^T M q_{j-1}
        col = Qj @ q
        U[act, :j, j - 1] = col[:, :, 0]
        U[act, j - 1, :j] = col[:, :, 0]

        keep = np.ones(act.size, dtype=bool)
        if tol is not None or history:
            for t, a in enumerate(act):
                c = _small_sqrt_coeffs(U[a, :j, :j], znorm[a])
                if history:
                    coeffs[a].append(c)
                if prev[a] is not None:
                    inc = float(np.linalg.norm(c - np.append(prev[a], 0.0)) / np.linalg.norm(c))
                    increments[a].append(inc)
                    if tol is not None and inc <= tol:
                        k0[a], converged[a], active[a] = j, True, False
                        keep[t] = False
                prev[a] = c
        if j == kcap:
            break
        if not keep.all():
            act, Qj, q, col = act[keep], Qj[keep], q[keep], col[keep]
            if act.size == 0:
                break

        QjT = np.swapaxes(Qj, 1, 2)
        qnorm = np.linalg.norm(q[:, :, 0], axis=1)
        w = q - QjT @ col
        w -= QjT @ (Qj @ w)
        w = w[:, :, 0]
        r_jj = np.linalg.norm(w, axis=1)
        r_last[act] = np.where(qnorm > 0, r_jj / np.where(qnorm > 0, qnorm, 1.0), 0.0)
        stop = r_jj <= breakdown_tol * qnorm
        if stop.any():
            hit = act[stop]
            k0[hit], breakdown[hit], active[hit] = j, True, False
        go = ~stop
        Q[act[go], j] = w[go] / r_jj[go, None]

    results = []
    for a in range(nb):
        kk = int(k0[a])
        Qa = Q[a, :kk]
        try:
            c = _small_sqrt_coeffs(U[a, :kk, :kk], znorm[a])
        except NotPositiveDefiniteError as exc:
            raise NotPositiveDefiniteError(
                f"projected matrix is indefinite ({exc}); the H2 approximation is probably "
                "not positive definite - increase the interpolation order p") from exc
        if history and (not coeffs[a] or len(coeffs[a][-1]) != kk):
            coeffs[a].append(c)
        y = Qa.T @ c
        defect = float(np.abs(Qa @ Qa.T - np.eye(kk)).max())
        log.debug("krylov: k0=%d breakdown=%s defect=%.2e", kk, breakdown[a], defect)
        results.append(KrylovResult(
            y, kk, bool(breakdown[a]), bool(converged[a]), float(r_last[a]), defect,
            increments[a], Qa.T if keep_basis else None,
            coeffs[a] if history else None))
    return results[0] if z.ndim == 1 else results


@dataclass
class SchulzWorkspace:
    """One scratch vector per recursion level, reused across calls.

    ``shape`` is the shape of the right-hand side, ``(N,)`` or ``(N, b)``.
    """

    k: int
    shape: tuple
    scratch: np.ndarray = None

    def __post_init__(self):
        self.shape = tuple(np.atleast_1d(self.shape))
        if self.scratch is None:
            self.scratch = np.empty((self.k,) + self.shape)


def sqrt_apply_schulz(apply, z, k: int = SCHULZ_K, s: float = 1.0,
                      workspace: SchulzWorkspace | None = None) -> np.ndarray:
    """Approximate ``M^{1/2} z`` by ``k`` recursive Newton-Schulz steps.

    Computes ``A_k z / sqrt(s)`` where ``A_0 = sM``, ``B_0 = I`` and
    ``A_{j+1} = A_j (3I - B_j A_j) / 2``, ``B_{j+1} = B_j (3I - A_j B_j) / 2``,
    using ``3**k`` products with ``M``.  Convergence requires
    ``0 < s < 2 / lambda_max(M)``; this is not checked.  ``z`` may be a
    vector or a block ``(N, b)`` of columns.
    """
    if k > SCHULZ_MAX_K:
        raise CostGuardError(f"Schulz depth k={k} needs 3**{k} products; the cap is {SCHULZ_MAX_K}")
    if k < 0:
        raise ConfigError("k must be >= 0")
    if not s > 0:
        raise ConfigError("scaling factor s must be positive")
    apply = as_operator(apply)
    z = np.asarray(z, dtype=float)
    if z.ndim not in (1, 2):
        raise DimensionError("z must be a vector or a block of column vectors")
    if workspace is None:
        workspace = SchulzWorkspace(k, z.shape)
    elif workspace.scratch.shape[0] < k or workspace.scratch.shape[1:] != z.shape:
        raise DimensionError("workspace too small for this depth or vector shape")
    zs = workspace.scratch
    if z.ndim == 1:
        mult = lambda v: np.asarray(apply(v), dtype=float)  # noqa: E731
    else:
        mult = lambda v: _apply_block(apply, v)  # noqa: E731

    def part_a(v, lev):
        if lev == 0:
            out = s * mult(v)
            if not np.all(np.isfinite(out)):
                raise DivergenceError(f"non-finite values in Schulz iteration; check s={s}")
            return out
        w = zs[lev - 1]
        w[:] = part_a(v, lev - 1)
        w[:] = part_b(w, lev - 1)
        w *= -1.0
        w += 3.0 * v
        return 0.5 * part_a(w, lev - 1)

    def part_b(v, lev):
        if lev == 0:
            return np.array(v, copy=True)
        w = zs[lev - 1]
        w[:] = part_b(v, lev - 1)
        w[:] = part_a(w, lev - 1)
        w *= -1.0
        w += 3.0 * v
        return 0.5 * part_b(w, lev - 1)

    y = part_a(z, k) / math.sqrt(s)
    if not np.all(np.isfinite(y)):
        raise DivergenceError(f"Schulz iteration diverged; check s={s}")
    return y
