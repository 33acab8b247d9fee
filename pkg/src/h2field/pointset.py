"""Evaluation point sets: generation, file I/O and quasi-uniformity diagnostics.

A :class:`PointSet` is an immutable ``(N, d)`` array of distinct points.  Row
``i`` of the coordinate array is point ``i`` and corresponds to row/column
``i`` of every covariance matrix built from the set.

Point files are plain text with one point per line and ``d`` comma- or
whitespace-separated decimal fields.  Blank lines and lines starting with
``#`` are ignored.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree
from scipy.stats import qmc

from .errors import (
    DuplicatePointError,
    ParseError,
    PointSetError,
    SizeError,
    UnsupportedDimensionError,
)

MAX_POINTS = 2**24
_SPLIT = re.compile(r"[,\s]+")


def _find_duplicates(coords):
    """Return ``(i, j)`` index pairs (i < j) of exactly equal rows."""
    order = np.lexsort(coords.T[::-1])
    srt = coords[order]
    same = np.all(srt[1:] == srt[:-1], axis=1)
    return [(int(min(order[k], order[k + 1])), int(max(order[k], order[k + 1])))
            for k in np.flatnonzero(same)]


@dataclass(frozen=True, eq=False)
class PointSet:
    """Finite set of distinct points in R^d with stable index order.

    Parameters
    ----------
    coords : array_like, shape (N, d) or (N,)
        Point coordinates.  A 1-D array is read as ``N`` points in one
        dimension.
    """

    coords: np.ndarray

    def __post_init__(self):
        c = np.array(self.coords, dtype=float)
        if c.ndim == 1:
            c = c[:, None]
        if c.ndim != 2 or c.shape[1] < 1:
            raise PointSetError(f"coordinates must have shape (N, d), got {c.shape}")
        if c.shape[0] == 0:
            raise PointSetError("point set is empty")
        if not np.all(np.isfinite(c)):
            bad = np.flatnonzero(~np.all(np.isfinite(c), axis=1))
            raise PointSetError(f"non-finite coordinates at indices {bad[:10].tolist()}")
        dups = _find_duplicates(c)
        if dups:
            raise DuplicatePointError(
                f"duplicate points at indices {dups[:10]}", indices=dups)
        c.setflags(write=False)
        object.__setattr__(self, "coords", c)

    def __len__(self):
        return self.coords.shape[0]

    @property
    def n(self) -> int:
        return self.coords.shape[0]

    @property
    def dim(self) -> int:
        return self.coords.shape[1]

    @property
    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        """Smallest axis-parallel box ``(lo, hi)`` containing all points."""
        return self.coords.min(axis=0), self.coords.max(axis=0)

    def diameter(self) -> float:
        lo, hi = self.bbox
        return float(np.linalg.norm(hi - lo))

    def __eq__(self, other):
        if not isinstance(other, PointSet):
            return NotImplemented
        return self.coords.shape == other.coords.shape and bool(
            np.array_equal(self.coords, other.coords))

    __hash__ = None


@dataclass(frozen=True)
class UniformityReport:
    """Empirical quasi-uniformity constants of a point set.

    ``c_u_estimate`` is the smallest constant ``C`` with
    ``min_dist >= 1/(C N^{1/d})`` and ``fill <= C N^{1/d}``, floored at 1.
    """

    min_pairwise_distance: float
    fill_distance_estimate: float
    c_u_estimate: float
    closest_pair: tuple[int, int]


def generate_grid(n_per_axis, dim: int = 1, box=None, max_n: int = MAX_POINTS) -> PointSet:
    """Tensor grid of equispaced points including the box corners.

    Parameters
    ----------
    n_per_axis : int or sequence of int
        Points per axis.  A scalar is used for every axis.
    dim : int
        Spatial dimension; ignored when ``n_per_axis`` is a sequence.
    box : (lo, hi), optional
        Axis box, defaults to the unit cube.

    Points are ordered lexicographically with the first axis varying slowest.
    """
    counts = np.atleast_1d(np.asarray(n_per_axis, dtype=int))
    if counts.size == 1:
        counts = np.repeat(counts, dim)
    dim = counts.size
    if np.any(counts < 1):
        raise PointSetError("n_per_axis must be >= 1")
    total = int(np.prod(counts.astype(object)))
    if total > max_n:
        raise SizeError(f"grid has {total} points, more than the cap {max_n}")
    if box is None:
        lo, hi = np.zeros(dim), np.ones(dim)
    else:
        lo = np.broadcast_to(np.asarray(box[0], dtype=float), (dim,))
        hi = np.broadcast_to(np.asarray(box[1], dtype=float), (dim,))
    axes = [np.linspace(lo[a], hi[a], counts[a]) for a in range(dim)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return PointSet(np.stack([m.ravel() for m in mesh], axis=1))


def generate_lowdiscrepancy(m: int, dim: int = 2) -> PointSet:
    """First ``2**m`` points of the unscrambled Sobol sequence in [0, 1)^d.

    Uses the Joe-Kuo direction numbers shipped with scipy.  The first point
    is the origin, so ``m=0`` returns ``{0}``.  Only ``d <= 2`` is supported.
    """
    if dim > 2 or dim < 1:
        raise UnsupportedDimensionError(
            f"low-discrepancy points are available for d in {{1, 2}}, got d={dim}")
    if not 0 <= m <= 24:
        raise SizeError(f"exponent m must lie in [0, 24], got {m}")
    pts = qmc.Sobol(dim, scramble=False).random_base2(m)
    return PointSet(pts)


def uniformity_report(ps: PointSet, grid_per_axis: int | None = None) -> UniformityReport:
    """Minimum separation (exact), fill distance (sampled) and C_u estimate.

    The fill distance is the largest distance from a candidate centre on a
    regular grid over the bounding box to its nearest point, so it is a lower
    estimate of the true supremum.
    """
    n, d = ps.n, ps.dim
    if n < 2:
        raise PointSetError("uniformity report needs at least two points")
    tree = cKDTree(ps.coords)
    dist, idx = tree.query(ps.coords, k=2)
    i = int(np.argmin(dist[:, 1]))
    j = int(idx[i, 1])
    min_dist = float(dist[i, 1])
    if min_dist <= 1e-14 * ps.diameter():
        raise DuplicatePointError(
            f"points {min(i, j)} and {max(i, j)} are closer than 1e-14*diam",
            indices=[(min(i, j), max(i, j))])

    if grid_per_axis is None:
        grid_per_axis = int(min(max(4 * round(n ** (1 / d)), 16), round(2e6 ** (1 / d))))
    lo, hi = ps.bbox
    axes = [np.linspace(lo[a], hi[a], grid_per_axis) for a in range(d)]
    centres = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
    fill = float(tree.query(centres, k=1)[0].max())

    scale = n ** (1.0 / d)
    c_u = max(fill * scale, 1.0 / (min_dist * scale), 1.0)
    return UniformityReport(min_dist, fill, c_u, (min(i, j), max(i, j)))


def load_points(path) -> PointSet:
    """Read a point file (see module docstring for the format)."""
    rows, lines = [], []
    width = None
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            text = raw.strip()
            if not text or text.startswith("#"):
                continue
            fields = [f for f in _SPLIT.split(text) if f]
            if width is None:
                width = len(fields)
            elif len(fields) != width:
                raise ParseError(f"expected {width} columns, found {len(fields)}", lineno)
            try:
                vals = [float(f) for f in fields]
            except ValueError:
                raise ParseError(f"non-numeric token in {text!r}", lineno) from None
            if not all(np.isfinite(vals)):
                raise ParseError("non-finite coordinate", lineno)
            rows.append(vals)
            lines.append(lineno)
    if not rows:
        raise ParseError("no points")
    coords = np.array(rows, dtype=float)
    dups = _find_duplicates(coords)
    if dups:
        i, j = dups[0]
        raise DuplicatePointError(
            f"line {lines[j]}: duplicates the point on line {lines[i]}",
            indices=[(lines[a], lines[b]) for a, b in dups])
    return PointSet(coords)


def save_points(ps: PointSet, path) -> None:
    """Write points with shortest round-trip decimal representation."""
    with open(Path(path), "w") as fh:
        for row in ps.coords:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
