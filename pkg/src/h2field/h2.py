"""H^2-matrix approximation of kernel matrices by tensor Chebyshev interpolation.

Each cluster ``X`` carries ``r = p**d`` interpolation nodes, the tensor
product of the ``p`` first-kind Chebyshev points of every axis of its box.
Far-field blocks are represented as ``V^X M^{XY} (V^Y)^T`` where

* ``V^X[i, n] = L^X_n(x_i)`` is stored only for leaf clusters,
* ``T^{X'X}[m, n] = L^X_n(q^{X'}_m)`` links a child ``X'`` to its parent, and
* ``M^{XY}[n, m] = k(q^X_n, q^Y_m)`` is the kernel at the node pairs.

Near-field blocks hold exact kernel entries.  All pieces are stored as
scipy sparse matrices acting on a flat coefficient vector in which cluster
``c`` owns slots ``c*r .. c*r + r - 1``, so a matrix-vector product is a
short, fixed chain of compiled sparse products:

1. leaf projection and upward transfer, deepest level first,
2. coupling over all far blocks,
3. downward transfer, root first, and leaf evaluation,
4. plus the near-field product.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .cluster import BlockClusterTree
from .errors import DimensionError, KernelError, SizeError
from .kernels import DENSE_CAP, Kernel, check_admissibility_guidance

_CHUNK = 1 << 21


def chebyshev_reference(p: int) -> tuple[np.ndarray, np.ndarray]:
    """First-kind Chebyshev points on [-1, 1] and their barycentric weights."""
    if p < 1:
        raise ValueError(f"interpolation order must be >= 1, got {p}")
    theta = (2 * np.arange(p) + 1) * np.pi / (2 * p)
    nodes = np.cos(theta)
    weights = (-1.0) ** np.arange(p) * np.sin(theta)
    return nodes, weights


def _to_reference(x, centre, half):
    """Affine map of physical coordinates to [-1, 1]; flat axes map to 0."""
    safe = np.where(half > 0, half, 1.0)
    return np.where(half > 0, (x - centre) / safe, 0.0)


def lagrange_1d(t, p: int) -> np.ndarray:
    """All ``p`` Lagrange basis values at reference points ``t`` (shape ``t.shape + (p,)``)."""
    nodes, w = chebyshev_reference(p)
    t = np.asarray(t, dtype=float)
    diff = t[..., None] - nodes
    hit = diff == 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        tmp = w / diff
        out = tmp / tmp.sum(axis=-1, keepdims=True)
    exact = hit.any(axis=-1)
    if np.any(exact):
        out[exact] = hit[exact].astype(float)
    return out


def tensor_lagrange(t, p: int) -> np.ndarray:
    """Tensor Lagrange basis at reference points ``t`` of shape ``(..., d)``.

    Multi-indices are flattened in C order (first axis slowest), matching
    :func:`chebyshev_nodes`.
    """
    t = np.asarray(t, dtype=float)
    d = t.shape[-1]
    out = lagrange_1d(t[..., 0], p)
    for a in range(1, d):
        la = lagrange_1d(t[..., a], p)
        out = (out[..., :, None] * la[..., None, :]).reshape(*t.shape[:-1], -1)
    return out


def chebyshev_nodes(lo, hi, p: int) -> np.ndarray:
    """Tensor Chebyshev nodes of the box ``[lo, hi]``, shape ``(p**d, d)``.

    Per axis the nodes are ``centre + half * cos((2k+1) pi / (2p))``; a
    zero-length axis collapses all its nodes onto the single coordinate.
    """
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    ref, _ = chebyshev_reference(p)
    centre, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    grids = np.meshgrid(*([ref] * lo.size), indexing="ij")
    t = np.stack([g.ravel() for g in grids], axis=1)
    return centre + half * t


@dataclass(frozen=True)
class ChebBasis:
    """Lagrange basis of the tensor Chebyshev interpolant on one box."""

    lo: np.ndarray
    hi: np.ndarray
    p: int

    @property
    def centre(self):
        return 0.5 * (np.asarray(self.lo, float) + np.asarray(self.hi, float))

    @property
    def half(self):
        return 0.5 * (np.asarray(self.hi, float) - np.asarray(self.lo, float))

    @property
    def nodes(self) -> np.ndarray:
        return chebyshev_nodes(self.lo, self.hi, self.p)

    def eval(self, x) -> np.ndarray:
        """Basis values at points ``x`` of shape ``(m, d)``; returns ``(m, p**d)``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return tensor_lagrange(_to_reference(x, self.centre, self.half), self.p)


def lagrange_eval(basis: ChebBasis, n: int, x) -> float:
    """Value of the ``n``-th tensor Lagrange polynomial of ``basis`` at ``x``."""
    return float(basis.eval(np.atleast_1d(np.asarray(x, dtype=float))[None, :])[0, n])


def _block_sparse(blocks, rows, cols, n_rows, n_cols):
    """BSR matrix from dense ``blocks[b]`` placed at block position (rows[b], cols[b])."""
    order = np.lexsort((cols, rows))
    indptr = np.zeros(n_rows + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=n_rows), out=indptr[1:])
    br, bc = blocks.shape[1:]
    return sp.bsr_matrix((blocks[order], cols[order], indptr),
                         shape=(n_rows * br, n_cols * bc))


class H2Matrix:
    """Symmetric H^2-matrix ``C_p`` built from a kernel and a block-cluster tree.

    Use :func:`assemble` to construct.  Vectors passed to :meth:`matvec` are
    in the original point order; the permutation is handled internally.
    """

    def __init__(self, kernel, bct, p, leaf_bases, leaf_of_point, transfer,
                 ops, near, far_order):
        self.kernel = kernel
        self.bct = bct
        self.p = p
        self.leaf_bases = leaf_bases
        self.leaf_of_point = leaf_of_point
        self.transfer = transfer
        self._vleaf, self._vleaf_t, self._up, self._down, self._coupling = ops
        self._near = near
        self._far_order = far_order
        for arr in (leaf_bases, leaf_of_point, transfer):
            arr.setflags(write=False)

    @property
    def n(self) -> int:
        return self.bct.n

    @property
    def shape(self):
        return (self.n, self.n)

    @property
    def rank(self) -> int:
        return self.p ** self.bct.tree.dim

    @property
    def tree(self):
        return self.bct.tree

    def coupling(self, b: int) -> np.ndarray:
        """Coupling matrix of the ``b``-th far block of ``bct.far``."""
        return np.array(self._coupling.data[self._far_order[b]])

    def basis(self, c: int) -> ChebBasis:
        t = self.tree
        return ChebBasis(t.lo[c], t.hi[c], self.p)

    def near_block(self, x: int, y: int) -> np.ndarray:
        t = self.tree
        return self._near[t.start[x]:t.stop[x], t.start[y]:t.stop[y]].toarray()

    def storage(self) -> dict:
        """Stored floating-point entries by component."""
        t = self.tree
        r = self.rank
        counts = {
            "leaf_bases": int(self.leaf_bases.size),
            "transfer": int((t.n_nodes - 1) * r * r),
            "coupling": int(len(self.bct.far) * r * r),
            "near": int(self._near.nnz),
        }
        counts["total"] = sum(counts.values())
        return counts

    def matvec(self, z, out=None) -> np.ndarray:
        """``C_p z`` for a vector ``(N,)`` or a block of vectors ``(N, m)``."""
        z = np.asarray(z, dtype=float)
        if z.shape[0] != self.n or z.ndim > 2:
            raise DimensionError(f"expected leading dimension {self.n}, got shape {z.shape}")
        perm = self.tree.perm
        zt = z[perm]
        zh = self._vleaf_t @ zt
        for u in self._up:
            zh += u @ zh
        yh = self._coupling @ zh
        for dn in self._down:
            yh += dn @ yh
        yt = self._vleaf @ yh
        yt += self._near @ zt
        if out is None:
            out = np.empty_like(yt)
        out[perm] = yt
        return out

    __matmul__ = matvec

    def __call__(self, z):
        return self.matvec(z)

    def to_dense(self) -> np.ndarray:
        if self.n > DENSE_CAP:
            raise SizeError(f"N={self.n} exceeds the dense cap {DENSE_CAP}")
        return self.matvec(np.eye(self.n))

    def far_block_dense(self, b: int) -> np.ndarray:
        """``V^X M^{XY} (V^Y)^T`` of far block ``b``, bases evaluated directly.

        Rows and columns follow tree order inside the block.
        """
        t = self.tree
        x, y = self.bct.far[b]
        vx = self.basis(x).eval(t.points[t.perm[t.start[x]:t.stop[x]]])
        vy = self.basis(y).eval(t.points[t.perm[t.start[y]:t.stop[y]]])
        return vx @ self.coupling(b) @ vy.T


def assemble(kernel: Kernel, bct: BlockClusterTree, p: int, check_c2: bool = True) -> H2Matrix:
    """Build the H^2-matrix of ``kernel`` on the partition ``bct`` with order ``p``.

    Parameters
    ----------
    p : int
        Chebyshev points per axis; every cluster basis has rank ``p**d``.
    check_c2 : bool
        Warn when the kernel's smoothness scale cannot confirm ``eta < 4 c2``.
    """
    if p < 1:
        raise ValueError(f"interpolation order must be >= 1, got {p}")
    if check_c2:
        check_admissibility_guidance(kernel, bct.eta)
    t = bct.tree
    n, d, nc = t.n_points, t.dim, t.n_nodes
    r = p**d
    pts = t.points[t.perm]
    centre = 0.5 * (t.lo + t.hi)
    half = 0.5 * (t.hi - t.lo)
    ref_nodes = chebyshev_nodes(-np.ones(d), np.ones(d), p)
    nodes = centre[:, None, :] + half[:, None, :] * ref_nodes[None]  # (nc, r, d)

    # leaf bases, one row per point in tree order
    leaves = t.leaves
    # leaves at different depths are not numbered in point order
    leaves = leaves[np.argsort(t.start[leaves])]
    sizes = t.stop[leaves] - t.start[leaves]
    leaf_of_point = np.repeat(leaves, sizes)
    vleaf = tensor_lagrange(_to_reference(pts, centre[leaf_of_point], half[leaf_of_point]), p)

    # transfer matrices T^{c, parent(c)}, stored per child (root entry unused)
    transfer = np.zeros((nc, r, r))
    kids = np.flatnonzero(t.parent >= 0)
    if kids.size:
        par = t.parent[kids]
        tref = _to_reference(nodes[kids], centre[par][:, None, :], half[par][:, None, :])
        transfer[kids] = tensor_lagrange(tref, p)

    ops = _build_operators(t, r, vleaf, leaf_of_point, transfer)
    coupling, far_order = _build_coupling(kernel, bct, nodes, r)
    near = _build_near(kernel, bct, pts)
    return H2Matrix(kernel, bct, p, vleaf, leaf_of_point, transfer,
                    ops[:4] + (coupling,), near, far_order)


def _build_operators(t, r, vleaf, leaf_of_point, transfer):
    n, nc = t.n_points, t.n_nodes
    blocks = vleaf[:, None, :]
    vl = sp.bsr_matrix((blocks, leaf_of_point, np.arange(n + 1)), shape=(n, nc * r))
    vl_t = vl.T.tocsr()
    vl = vl.tocsr()
    up, down = [], []
    for lev in range(t.depth, 0, -1):
        kids = np.flatnonzero(t.level == lev)
        par = t.parent[kids]
        # upward: zhat[parent] += T^T zhat[child]
        u = _block_sparse(np.ascontiguousarray(transfer[kids].transpose(0, 2, 1)),
                          par, kids, nc, nc)
        up.append(u)
        down.append(_block_sparse(transfer[kids], kids, par, nc, nc))
    return vl, vl_t, up, down[::-1]


def _build_coupling(kernel, bct, nodes, r):
    far = bct.far
    nc = bct.tree.n_nodes
    nb = len(far)
    # sort blocks by (row, col) so the BSR data can be filled in place
    order = np.lexsort((far[:, 1], far[:, 0]))
    rows, cols = far[order, 0], far[order, 1]
    data = np.empty((nb, r, r))
    step = max(1, _CHUNK // (r * r))
    for s in range(0, nb, step):
        sl = slice(s, s + step)
        try:
            data[sl] = kernel(nodes[rows[sl]][:, :, None, :], nodes[cols[sl]][:, None, :, :])
        except KernelError as exc:
            raise KernelError(f"far blocks {s}..{s + step}: {exc}") from exc
    indptr = np.zeros(nc + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=nc), out=indptr[1:])
    coupling = sp.bsr_matrix((data, cols, indptr), shape=(nc * r, nc * r))
    far_order = np.empty(nb, dtype=np.int64)
    far_order[order] = np.arange(nb)
    return coupling, far_order


def _build_near(kernel, bct, pts):
    t = bct.tree
    n = t.n_points
    near = bct.near
    if len(near) == 0:
        return sp.csr_matrix((n, n))
    x, y = near[:, 0], near[:, 1]
    nr = t.stop[x] - t.start[x]
    ncol = t.stop[y] - t.start[y]
    cnt = nr * ncol
    total = int(cnt.sum())
    offs = np.concatenate([[0], np.cumsum(cnt)[:-1]])
    blk = np.repeat(np.arange(len(near)), cnt)
    local = np.arange(total) - offs[blk]
    rows = t.start[x][blk] + local // ncol[blk]
    cols = t.start[y][blk] + local % ncol[blk]
    vals = np.empty(total)
    for s in range(0, total, _CHUNK):
        sl = slice(s, s + _CHUNK)
        try:
            vals[sl] = kernel(pts[rows[sl]], pts[cols[sl]])
        except KernelError as exc:
            raise KernelError(f"near-field entries {s}..{s + _CHUNK}: {exc}") from exc
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def frobenius_error(h: H2Matrix, dense) -> float:
    """Exact ``||C - C_p||_F`` accumulated block by block.

    ``dense`` is the exact covariance matrix in original point order.
    """
    dense = np.asarray(dense, dtype=float)
    if dense.shape != h.shape:
        raise DimensionError(f"dense matrix has shape {dense.shape}, expected {h.shape}")
    t = h.tree
    total = 0.0
    for b, (x, y) in enumerate(h.bct.far):
        ix, iy = t.indices(x), t.indices(y)
        diff = dense[np.ix_(ix, iy)] - h.far_block_dense(b)
        total += float(np.sum(diff * diff))
    for x, y in h.bct.near:
        ix, iy = t.indices(x), t.indices(y)
        diff = dense[np.ix_(ix, iy)] - h.near_block(x, y)
        total += float(np.sum(diff * diff))
    return float(np.sqrt(total))


def nested_basis_defect(h: H2Matrix) -> float:
    """Max deviation between direct bases and ``V^{X'} T^{X'X}`` over all parents.

    For every point of every non-root cluster ``X'`` with parent ``X``, the
    directly evaluated row of ``V^X`` is compared with the same row of
    ``V^{X'} T^{X'X}``.
    """
    t = h.tree
    worst = 0.0
    for c in range(1, t.n_nodes):
        par = t.parent[c]
        pts = t.points[t.indices(c)]
        direct = h.basis(par).eval(pts)
        nested = h.basis(c).eval(pts) @ h.transfer[c]
        worst = max(worst, float(np.abs(direct - nested).max()))
    return worst


def stats(h: H2Matrix) -> dict:
    from .cluster import sparsity_stats

    out = sparsity_stats(h.bct)
    st = h.storage()
    out.update({"p": h.p, "rank": h.rank, "n": h.n, "eta": h.bct.eta,
                "c_leaf": h.tree.c_leaf, "storage": st,
                "storage_per_n": st["total"] / h.n})
    return out

