"""Dense reference computations for validation at moderate N.

Everything here works on explicit ``(N, N)`` arrays and refuses sizes above
:data:`DENSE_CAP`.  Symmetric eigenproblems go through LAPACK by default;
``method="jacobi"`` switches to a self-contained cyclic Jacobi solver that
shares no code with LAPACK and serves as an independent cross-check for
small matrices.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg

from .errors import NotPositiveDefiniteError, NumericalError, SizeError
from .kernels import DENSE_CAP


def _check(M, cap):
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    if M.shape[0] > cap:
        raise SizeError(f"N={M.shape[0]} exceeds the dense cap {cap}")
    if not np.all(np.isfinite(M)):
        raise NumericalError("matrix has non-finite entries")
    return M


def jacobi_eigh(M, tol: float = 1e-15, max_sweeps: int = 60):
    """Symmetric eigendecomposition by cyclic Jacobi rotations.

    Each sweep visits all index pairs in round-robin order, so that every
    round consists of ``n/2`` disjoint rotations applied together.

    Returns
    -------
    w : ndarray
        Eigenvalues in ascending order.
    V : ndarray
        Orthonormal eigenvectors as columns.
    """
    A = np.array(M, dtype=float)
    n = A.shape[0]
    V = np.eye(n)
    if n == 1:
        return A.diagonal().copy(), V
    m = n + (n % 2)
    players = list(range(m))
    scale = np.linalg.norm(A)
    for _ in range(max_sweeps):
        off = np.linalg.norm(A - np.diag(A.diagonal()))
        if off <= tol * scale:
            break
        for _ in range(m - 1):
            pairs = [(players[i], players[m - 1 - i]) for i in range(m // 2)]
            pairs = [(min(a, b), max(a, b)) for a, b in pairs if a < n and b < n]
            p = np.array([a for a, _ in pairs])
            q = np.array([b for _, b in pairs])
            apq = A[p, q]
            keep = apq != 0
            if keep.any():
                p, q, apq = p[keep], q[keep], apq[keep]
                theta = (A[q, q] - A[p, p]) / (2 * apq)
                t = np.sign(theta) / (np.abs(theta) + np.sqrt(theta**2 + 1))
                t[theta == 0] = 1.0
                c = 1 / np.sqrt(t**2 + 1)
                s = t * c
                # the rotations act on disjoint index pairs, so they commute
                J = np.eye(n)
                J[p, p] = c
                J[q, q] = c
                J[p, q] = s
                J[q, p] = -s
                A = J.T @ A @ J
                A = 0.5 * (A + A.T)
                V = V @ J
            players = [players[0]] + [players[-1]] + players[1:-1]
    else:
        raise NumericalError("Jacobi iteration did not converge")
    w = A.diagonal().copy()
    order = np.argsort(w)
    return w[order], V[:, order]


def eigh(M, method: str = "lapack", cap: int = DENSE_CAP):
    M = _check(M, cap)
    if method == "jacobi":
        return jacobi_eigh(M)
    if method != "lapack":
        raise ValueError(f"unknown eigensolver {method!r}")
    try:
        return scipy.linalg.eigh(0.5 * (M + M.T))
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigensolver failed: {exc}") from exc


def dense_sqrt(M, method: str = "lapack", cap: int = DENSE_CAP) -> np.ndarray:
    """Symmetric positive semidefinite square root.

    Eigenvalues in ``[-1e-8 lambda_max, 0)`` are set to zero; anything more
    negative raises :class:`NotPositiveDefiniteError`.
    """
    w, V = eigh(M, method, cap)
    top = max(float(w[-1]), 0.0)
    if w[0] < -1e-8 * top or top == 0.0 and w[0] < 0:
        raise NotPositiveDefiniteError(f"smallest eigenvalue {w[0]:.3e} is negative")
    R = (V * np.sqrt(np.maximum(w, 0.0))) @ V.T
    return 0.5 * (R + R.T)


def spectral_bounds(M, method: str = "lapack", cap: int = DENSE_CAP) -> dict:
    """Extreme eigenvalues and condition number (``lambda_min`` clamped at 1e-300)."""
    w, _ = eigh(M, method, cap)
    lmin, lmax = float(w[0]), float(w[-1])
    return {"lambda_min": lmin, "lambda_max": lmax, "cond": lmax / max(lmin, 1e-300)}


def op_norm_diff(apply_a, apply_b, n: int, probes: int = 100, seed: int = 0):
    """Estimate ``||A - B||_2`` for symmetric ``A``, ``B`` by power iteration.

    Returns ``(estimate, residual)``.  The estimate is the largest ``|Dv|``
    seen over unit iterates ``v`` and hence a lower bound of the true norm.
    """
    from .sqrt_iter import as_operator

    fa, fb = as_operator(apply_a), as_operator(apply_b)
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    est, res = 0.0, 0.0
    for _ in range(probes):
        w = fa(v) - fb(v)
        nw = float(np.linalg.norm(w))
        if nw == 0.0:
            return 0.0, 0.0
        theta = float(v @ w)
        est = max(est, nw)
        res = float(np.linalg.norm(w - theta * v)) / nw
        v = w / nw
    return est, res


def schulz_dense(M, k: int, s: float) -> list:
    """Matrix iterates ``A_j / sqrt(s)`` for ``j = 0..k`` of the coupled Schulz iteration."""
    M = np.asarray(M, dtype=float)
    n = M.shape[0]
    A, B = s * M, np.eye(n)
    out = [A / np.sqrt(s)]
    for _ in range(k):
        A, B = 0.5 * A @ (3 * np.eye(n) - B @ A), 0.5 * B @ (3 * np.eye(n) - A @ B)
        out.append(A / np.sqrt(s))
    return out


def random_spd(n: int, lam_min: float, lam_max: float, seed=0) -> np.ndarray:
    """SPD matrix with eigenvalues spread between ``lam_min`` and ``lam_max`` (both attained)."""
    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    w = np.sort(rng.uniform(lam_min, lam_max, n))
    w[0], w[-1] = lam_min, lam_max
    M = (Q * w) @ Q.T
    return 0.5 * (M + M.T)


def h2_explicit_matvec(h, z) -> np.ndarray:
    """``C_p z`` summed block by block, without the transfer recursion.

    Every far block is rebuilt as ``V^X M^{XY} (V^Y)^T`` with both bases
    evaluated directly at the points, which checks the nested-basis
    machinery of the fast product independently.
    """
    t = h.tree
    z = np.asarray(z, dtype=float)
    zt = z[t.perm]
    yt = np.zeros_like(zt)
    for b, (x, y) in enumerate(h.bct.far):
        yt[t.start[x]:t.stop[x]] += h.far_block_dense(b) @ zt[t.start[y]:t.stop[y]]
    for x, y in h.bct.near:
        yt[t.start[x]:t.stop[x]] += h.near_block(x, y) @ zt[t.start[y]:t.stop[y]]
    out = np.empty_like(yt)
    out[t.perm] = yt
    return out
