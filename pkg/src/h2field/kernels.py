"""Covariance functions.

Every kernel is a callable ``k(x, y)`` taking two coordinate arrays of shape
``(..., d)`` that broadcast against each other and returning the covariance
values with the broadcast leading shape.  ``k.matrix(X, Y)`` is the
pairwise matrix and :func:`eval` the scalar convenience wrapper.

Supported families:

* :class:`MaternKernel` with smoothness ``mu`` in {1/2, 3/2, 5/2, inf},
  evaluated through the closed forms of the Matern function.
* :class:`NonStationaryKernel` with a spatially varying anisotropy
  ``x -> Sigma_x``.
* :class:`CustomKernel` wrapping a user callback.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np

from .errors import KernelError, SizeError

DENSE_CAP = 4096
ANISO_FLOOR = 1e-8

_MU_NAMES = {0.5: "1/2", 1.5: "3/2", 2.5: "5/2", math.inf: "inf"}


class AdmissibilityWarning(UserWarning):
    """Emitted when the eta < 4*c2 convergence guidance cannot be confirmed."""


class AnisotropyClampWarning(UserWarning):
    pass


def parse_mu(mu) -> float:
    """Normalise a smoothness value given as number or string ("1/2", "inf")."""
    if isinstance(mu, str):
        text = mu.strip().lower()
        if text in ("inf", "infinity", "oo"):
            val = math.inf
        else:
            try:
                val = float(Fraction(text))
            except (ValueError, ZeroDivisionError):
                raise KernelError(f"cannot parse mu={mu!r}") from None
    else:
        val = float(mu)
    if val not in _MU_NAMES:
        raise KernelError(
            f"mu={mu} is not supported; choose one of 1/2, 3/2, 5/2, inf")
    return val


class Kernel:
    """Common interface; subclasses implement ``__call__``."""

    smoothness_scale_c2: float | None = None

    def __call__(self, x, y):  # pragma: no cover - abstract
        raise NotImplementedError

    def matrix(self, X, Y=None) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        Y = X if Y is None else np.asarray(Y, dtype=float)
        return self(X[:, None, :], Y[None, :, :])

    @property
    def stationary(self) -> bool:
        return False

    def config(self) -> dict:
        return {"kernel": type(self).__name__}


@dataclass(frozen=True)
class MaternKernel(Kernel):
    """Isotropic Matern covariance ``sigma^2 f(|x - y|_p / lam)``.

    Parameters
    ----------
    sigma : float
        Field standard deviation.
    lam : float
        Correlation length.
    mu : float or str
        Smoothness, one of 1/2, 3/2, 5/2 or inf (Gaussian).
    pnorm : int
        Order of the l_p norm measuring distances.
    """

    sigma: float = 1.0
    lam: float = 1.0
    mu: float = 0.5
    pnorm: int = 2
    smoothness_scale_c2: float | None = None

    def __post_init__(self):
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise KernelError(f"sigma must be positive, got {self.sigma}")
        if not (self.lam > 0 and math.isfinite(self.lam)):
            raise KernelError(f"lambda must be positive, got {self.lam}")
        object.__setattr__(self, "mu", parse_mu(self.mu))
        if int(self.pnorm) != self.pnorm or self.pnorm < 1:
            raise KernelError(f"pnorm must be a positive integer, got {self.pnorm}")
        object.__setattr__(self, "pnorm", int(self.pnorm))

    @property
    def stationary(self) -> bool:
        return True

    def distance(self, x, y):
        diff = np.abs(np.asarray(x, dtype=float) - np.asarray(y, dtype=float))
        p = self.pnorm
        if p == 1:
            return diff.sum(axis=-1)
        if p == 2:
            return np.sqrt(np.einsum("...i,...i->...", diff, diff))
        return (diff**p).sum(axis=-1) ** (1.0 / p)

    def of_distance(self, r):
        """Covariance as a function of the (already p-normed) distance."""
        s2 = self.sigma**2
        t = np.asarray(r, dtype=float) / self.lam
        if self.mu == 0.5:
            return s2 * np.exp(-t)
        if self.mu == 1.5:
            a = math.sqrt(3.0) * t
            return s2 * (1.0 + a) * np.exp(-a)
        if self.mu == 2.5:
            a = math.sqrt(5.0) * t
            return s2 * (1.0 + a + a * a / 3.0) * np.exp(-a)
        return s2 * np.exp(-0.5 * t * t)

    def __call__(self, x, y):
        return self.of_distance(self.distance(x, y))

    def config(self) -> dict:
        return {"kernel": "matern", "sigma": self.sigma, "lambda": self.lam,
                "mu": _MU_NAMES[self.mu], "pnorm": self.pnorm}


def example_anisotropy(x, floor: float = ANISO_FLOOR) -> np.ndarray:
    """Anisotropy map ``Sigma_x = |x|^2 I``.

    Accepts a single point ``(d,)`` or a stack ``(..., d)`` and returns
    ``(..., d, d)``.  ``|x|^2`` is clamped to ``floor`` near the origin, where
    the map is singular; an :class:`AnisotropyClampWarning` is issued.
    """
    x = np.asarray(x, dtype=float)
    r2 = np.einsum("...i,...i->...", x, x)
    small = r2 < floor
    if np.any(small):
        warnings.warn(f"|x|^2 below {floor:g} clamped in anisotropy map "
                      f"({int(np.count_nonzero(small))} points)",
                      AnisotropyClampWarning, stacklevel=2)
        r2 = np.where(small, floor, r2)
    d = x.shape[-1]
    return r2[..., None, None] * np.eye(d)


@dataclass(frozen=True)
class NonStationaryKernel(Kernel):
    """Non-stationary anisotropic Gaussian-type covariance.

    ``k(x, y) = sigma^2 det(Sx)^(1/4) det(Sy)^(1/4) / (sqrt(2) det(Sx+Sy)^(1/2))
    * exp(-(x-y)^T (Sx+Sy)^(-1) (x-y) / 2)``

    Note the diagonal value is ``sigma^2 / (sqrt(2) 2^(d/2))``, not ``sigma^2``.

    Parameters
    ----------
    sigma_map : callable
        Vectorised map from points ``(..., d)`` to SPD matrices ``(..., d, d)``.
    """

    sigma: float = 1.0
    sigma_map: Callable = example_anisotropy
    smoothness_scale_c2: float | None = None

    def __post_init__(self):
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise KernelError(f"sigma must be positive, got {self.sigma}")

    def __call__(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        x, y = np.broadcast_arrays(x, y)
        sx = self.sigma_map(x)
        sy = self.sigma_map(y)
        s = sx + sy
        det_s = np.linalg.det(s)
        if np.any(~(det_s > 0)):
            raise KernelError("Sigma_x + Sigma_y is singular or indefinite")
        diff = x - y
        try:
            sol = np.linalg.solve(s, diff[..., None])[..., 0]
        except np.linalg.LinAlgError as exc:
            raise KernelError(f"Sigma_x + Sigma_y not invertible: {exc}") from exc
        quad = np.einsum("...i,...i->...", diff, sol)
        pref = (np.linalg.det(sx) * np.linalg.det(sy)) ** 0.25 / (math.sqrt(2.0) * np.sqrt(det_s))
        return self.sigma**2 * pref * np.exp(-0.5 * quad)

    def check_map(self, points) -> None:
        """Spot-check symmetry and positive definiteness of ``sigma_map``."""
        mats = self.sigma_map(np.asarray(points, dtype=float))
        if not np.allclose(mats, np.swapaxes(mats, -1, -2), rtol=1e-12, atol=0):
            raise KernelError("sigma_map returned non-symmetric matrices")
        if np.any(np.linalg.eigvalsh(mats) <= 0):
            raise KernelError("sigma_map returned matrices that are not positive definite")

    def config(self) -> dict:
        name = getattr(self.sigma_map, "__name__", "custom")
        return {"kernel": "nonstat", "sigma": self.sigma, "sigma_map": name}


@dataclass(frozen=True)
class CustomKernel(Kernel):
    """User-supplied covariance callback.

    Parameters
    ----------
    func : callable
        ``func(x, y) -> float`` for single points, or a broadcasting function
        of ``(..., d)`` arrays when ``vectorized`` is true.
    dim : int
        Spatial dimension, used for the symmetry spot-check at construction.
    """

    func: Callable
    dim: int
    vectorized: bool = False
    smoothness_scale_c2: float | None = None
    check_points: int = field(default=32, repr=False)

    def __post_init__(self):
        rng = np.random.default_rng(0)
        x = rng.random((self.check_points, self.dim))
        y = rng.random((self.check_points, self.dim))
        kxy, kyx = self(x, y), self(y, x)
        kxx = self(x, x)
        if np.any(~(kxx > 0)):
            raise KernelError("custom kernel has non-positive diagonal values")
        if np.any(np.abs(kxy - kyx) > 1e-12 * np.abs(kxx).max()):
            raise KernelError("custom kernel failed the symmetry spot-check")

    def __call__(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.vectorized:
            return np.asarray(self.func(x, y), dtype=float)
        x, y = np.broadcast_arrays(x, y)
        lead = x.shape[:-1]
        xf = x.reshape(-1, x.shape[-1])
        yf = y.reshape(-1, y.shape[-1])
        out = np.fromiter((self.func(a, b) for a, b in zip(xf, yf)), float, len(xf))
        return out.reshape(lead)


def eval(k: Kernel, x, y) -> float:  # noqa: A001 - mirrors the mathematical name
    """Scalar covariance between two points."""
    return float(k(np.atleast_1d(np.asarray(x, dtype=float)),
                   np.atleast_1d(np.asarray(y, dtype=float))))


def assemble_dense(k: Kernel, ps, cap: int = DENSE_CAP) -> np.ndarray:
    """Dense covariance matrix ``C_ij = k(x_i, x_j)`` of a point set.

    Only the upper triangle is evaluated and mirrored, so the result is
    exactly symmetric.
    """
    coords = ps.coords if hasattr(ps, "coords") else np.asarray(ps, dtype=float)
    n = coords.shape[0]
    if n > cap:
        raise SizeError(f"N={n} exceeds the dense cap {cap}")
    iu, ju = np.triu_indices(n)
    C = np.empty((n, n))
    chunk = 1 << 20
    for s in range(0, iu.size, chunk):
        a, b = iu[s:s + chunk], ju[s:s + chunk]
        vals = k(coords[a], coords[b])
        C[a, b] = vals
        C[b, a] = vals
    return C


def check_admissibility_guidance(k: Kernel, eta: float) -> None:
    """Warn when eta < 4*c2 cannot be confirmed for this kernel."""
    c2 = k.smoothness_scale_c2
    if c2 is None:
        warnings.warn("kernel has no smoothness_scale_c2; eta < 4*c2 not checked",
                      AdmissibilityWarning, stacklevel=3)
    elif eta >= 4 * c2:
        warnings.warn(f"eta={eta} >= 4*c2={4 * c2}; exponential convergence in p "
                      "is not guaranteed", AdmissibilityWarning, stacklevel=3)
