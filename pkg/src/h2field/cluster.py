"""Binary cluster tree and block-cluster tree (near/far partition).

Clusters are built by geometric bisection.  Every node stores the box it was
cut from (the recursively halved box, not the tight bounding box of its
points), so a child box has exactly half the volume of its parent.  A point
lying on the cutting hyperplane goes to the lower half.  If one half would be
empty, the node's tight bounding box is bisected instead and both children
are flagged ``resplit``.

Tree arrays are stored in flat numpy form; node 0 is the root and the
children of a node always carry larger ids than the node itself.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DuplicatePointError, PointSetError

DEFAULT_CLEAF = 20
DEFAULT_ETA = 1.0


@dataclass(frozen=True)
class ClusterNode:
    """Read-only view of one node of a :class:`ClusterTree`."""

    id: int
    start: int
    stop: int
    lo: np.ndarray
    hi: np.ndarray
    level: int
    sons: tuple[int, ...]
    resplit: bool

    @property
    def size(self) -> int:
        return self.stop - self.start


@dataclass(frozen=True, eq=False)
class ClusterTree:
    """Flat representation of the cluster tree.

    Attributes
    ----------
    perm : ndarray of int
        ``perm[k]`` is the original index of the k-th point in tree order;
        every node owns the contiguous slice ``perm[start:stop]``.
    start, stop, level, parent : ndarray of int, shape (n_nodes,)
    sons : ndarray of int, shape (n_nodes, 2)
        Child ids, ``-1`` for leaves.
    lo, hi : ndarray, shape (n_nodes, d)
        Node boxes.
    """

    points: np.ndarray
    perm: np.ndarray
    start: np.ndarray
    stop: np.ndarray
    level: np.ndarray
    parent: np.ndarray
    sons: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    resplit: np.ndarray
    c_leaf: int

    @property
    def n_nodes(self) -> int:
        return self.start.size

    @property
    def n_points(self) -> int:
        return self.perm.size

    @property
    def dim(self) -> int:
        return self.lo.shape[1]

    @property
    def depth(self) -> int:
        return int(self.level.max())

    def is_leaf(self, i) -> bool:
        return self.sons[i, 0] < 0

    @property
    def leaves(self) -> np.ndarray:
        return np.flatnonzero(self.sons[:, 0] < 0)

    def node(self, i: int) -> ClusterNode:
        sons = tuple(int(s) for s in self.sons[i] if s >= 0)
        return ClusterNode(int(i), int(self.start[i]), int(self.stop[i]),
                           self.lo[i], self.hi[i], int(self.level[i]), sons,
                           bool(self.resplit[i]))

    def indices(self, i: int) -> np.ndarray:
        """Original point indices owned by node ``i``."""
        return self.perm[self.start[i]:self.stop[i]]

    def diam(self) -> np.ndarray:
        return np.linalg.norm(self.hi - self.lo, axis=1)


def _bisect(pts, lo, hi):
    """Split ``pts`` at the midpoint of the longest edge of ``[lo, hi]``.

    Returns (mask of the lower half, box of lower half, box of upper half).
    """
    axis = int(np.argmax(hi - lo))  # ties -> lowest axis
    mid = 0.5 * (lo[axis] + hi[axis])
    lower = pts[:, axis] <= mid
    lo0, hi0 = lo.copy(), hi.copy()
    lo1, hi1 = lo.copy(), hi.copy()
    hi0[axis] = mid
    lo1[axis] = mid
    return lower, (lo0, hi0), (lo1, hi1)


def build_cluster_tree(ps, c_leaf: int = DEFAULT_CLEAF) -> ClusterTree:
    """Recursive geometric bisection until clusters hold at most ``c_leaf`` points.

    Parameters
    ----------
    ps : PointSet or array_like (N, d)
    c_leaf : int
        Maximal leaf size, at least 1.
    """
    pts = np.asarray(ps.coords if hasattr(ps, "coords") else ps, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    n, d = pts.shape
    if n == 0:
        raise PointSetError("cannot build a cluster tree for an empty point set")
    if c_leaf < 1:
        raise PointSetError(f"c_leaf must be >= 1, got {c_leaf}")

    perm = np.arange(n)
    start, stop, level, parent, resplit = [0], [n], [0], [-1], [False]
    lo_l, hi_l = [pts.min(axis=0)], [pts.max(axis=0)]
    sons = [[-1, -1]]

    # depth-first, lower child first; stack holds node ids to refine
    stack = [0]
    while stack:
        i = stack.pop()
        s, e = start[i], stop[i]
        if e - s <= c_leaf:
            continue
        idx = perm[s:e]
        sub = pts[idx]
        lower, box0, box1 = _bisect(sub, lo_l[i], hi_l[i])
        flagged = False
        if lower.all() or not lower.any():
            tlo, thi = sub.min(axis=0), sub.max(axis=0)
            lower, box0, box1 = _bisect(sub, tlo, thi)
            flagged = True
            if lower.all() or not lower.any():
                raise DuplicatePointError(
                    f"cannot separate {e - s} coincident points", indices=[tuple(idx[:2])])
        # stable partition keeps original relative order inside each half
        perm[s:e] = np.concatenate([idx[lower], idx[~lower]])
        mid = s + int(np.count_nonzero(lower))
        kids = []
        for (a, b), (blo, bhi) in (((s, mid), box0), ((mid, e), box1)):
            kids.append(len(start))
            start.append(a)
            stop.append(b)
            level.append(level[i] + 1)
            parent.append(i)
            resplit.append(flagged)
            lo_l.append(blo)
            hi_l.append(bhi)
            sons.append([-1, -1])
        sons[i] = kids
        stack.append(kids[1])
        stack.append(kids[0])

    return ClusterTree(
        points=pts, perm=perm,
        start=np.array(start), stop=np.array(stop), level=np.array(level),
        parent=np.array(parent), sons=np.array(sons, dtype=int).reshape(-1, 2),
        lo=np.array(lo_l), hi=np.array(hi_l), resplit=np.array(resplit),
        c_leaf=int(c_leaf))


def box_diam(lo, hi):
    return np.linalg.norm(np.asarray(hi) - np.asarray(lo), axis=-1)


def box_dist(lo_a, hi_a, lo_b, hi_b):
    """Euclidean distance between axis-parallel boxes (vectorised over leading axes)."""
    gap = np.maximum(0.0, np.maximum(np.asarray(lo_a) - hi_b, np.asarray(lo_b) - hi_a))
    return np.sqrt(np.sum(gap * gap, axis=-1))


def admissible(lo_a, hi_a, lo_b, hi_b, eta: float):
    """Admissibility test ``max(diam) <= eta * dist`` with ``dist > 0``.

    Touching or overlapping boxes are never admissible, even when both are
    degenerate (zero diameter).
    """
    dist = box_dist(lo_a, hi_a, lo_b, hi_b)
    diam = np.maximum(box_diam(lo_a, hi_a), box_diam(lo_b, hi_b))
    return (dist > 0) & (diam <= eta * dist)


@dataclass(frozen=True, eq=False)
class BlockClusterTree:
    """Leaves of the block-cluster tree.

    ``near`` and ``far`` are ``(n_blocks, 2)`` arrays of ``(row, col)``
    cluster ids, listed level by level in traversal order.
    """

    tree: ClusterTree
    near: np.ndarray
    far: np.ndarray
    eta: float

    @property
    def permutation(self) -> np.ndarray:
        return self.tree.perm

    @property
    def n(self) -> int:
        return self.tree.n_points

    def blocks(self):
        """Iterate ``(row, col, is_far)`` over all leaf blocks."""
        for x, y in self.near:
            yield int(x), int(y), False
        for x, y in self.far:
            yield int(x), int(y), True

    def dump(self, path=None) -> str:
        """Block list as CSV text: tree-order index ranges and block kind."""
        t = self.tree
        lines = ["x_start,x_stop,y_start,y_stop,kind"]
        for x, y, is_far in self.blocks():
            lines.append(f"{t.start[x]},{t.stop[x]},{t.start[y]},{t.stop[y]},"
                         f"{'far' if is_far else 'near'}")
        text = "\n".join(lines) + "\n"
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def build_block_tree(tree: ClusterTree, eta: float = DEFAULT_ETA) -> BlockClusterTree:
    """Subdivide ``(root, root)`` by the four-case son rule.

    A block becomes a far leaf if its boxes are admissible, a near leaf if
    both clusters are leaves, and is otherwise replaced by the product of
    the children of whichever clusters have children.  The tree is processed
    one block level at a time; within a level, blocks keep the order of
    their parents.
    """
    if not eta > 0:
        raise ValueError(f"eta must be positive, got {eta}")
    sons, lo, hi = tree.sons, tree.lo, tree.hi
    near, far = [], []
    front = np.zeros((1, 2), dtype=int)
    while front.size:
        x, y = front[:, 0], front[:, 1]
        adm = admissible(lo[x], hi[x], lo[y], hi[y], eta)
        far.append(front[adm])
        front = front[~adm]
        x, y = front[:, 0], front[:, 1]
        xl, yl = sons[x, 0] < 0, sons[y, 0] < 0
        near.append(front[xl & yl])

        # every refined block gets 2 or 4 children; -1 marks unused slots
        kids = np.full((front.shape[0], 4, 2), -1, dtype=int)
        only_y = xl & ~yl
        only_x = ~xl & yl
        both = ~xl & ~yl
        for k in range(2):
            kids[only_y, k, 0] = x[only_y]
            kids[only_y, k, 1] = sons[y[only_y], k]
            kids[only_x, k, 0] = sons[x[only_x], k]
            kids[only_x, k, 1] = y[only_x]
        for k, (a, b) in enumerate(((0, 0), (0, 1), (1, 0), (1, 1))):
            kids[both, k, 0] = sons[x[both], a]
            kids[both, k, 1] = sons[y[both], b]
        kids = kids.reshape(-1, 2)
        front = kids[kids[:, 0] >= 0]
    cat = lambda b: np.concatenate(b).reshape(-1, 2) if b else np.zeros((0, 2), int)  # noqa: E731
    return BlockClusterTree(tree, cat(near), cat(far), float(eta))


def sparsity_stats(bct: BlockClusterTree) -> dict:
    """Sparsity constant, depth and block counts.

    ``C_sparse`` is the maximum over clusters of the number of leaf blocks in
    which the cluster appears as row plus the number in which it appears as
    column.
    """
    nn = bct.tree.n_nodes
    counts = np.zeros(nn, dtype=int)
    for blocks in (bct.near, bct.far):
        if blocks.size:
            counts += np.bincount(blocks[:, 0], minlength=nn)
            counts += np.bincount(blocks[:, 1], minlength=nn)
    return {
        "C_sparse": int(counts.max()),
        "depth": bct.tree.depth,
        "near_count": int(len(bct.near)),
        "far_count": int(len(bct.far)),
        "n_clusters": int(nn),
        "n_leaves": int(bct.tree.leaves.size),
    }
