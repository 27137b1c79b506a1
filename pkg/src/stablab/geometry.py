"""Geometric kernels: exact neighbor queries, geometric graphs, Voronoi cells
in the plane and the exact independence number.

Distance ties are broken by the smaller point index everywhere, so every
functional built on these kernels is a deterministic function of its input.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import QhullError, Voronoi, cKDTree

DEFAULT_COMPONENT_CAP = 40

# Candidate windows whose boundary gap is below this relative size are
# re-resolved by a full scan.
_WINDOW_SLACK = 1e-9


class ComponentTooLarge(RuntimeError):
    """A graph component exceeds the exact independence-number cap."""

    def __init__(self, size: int, cap: int):
        super().__init__(f"component too large: {size} vertices (cap {cap}); parameters likely supercritical")
        self.size = size
        self.cap = cap


def distances(points: np.ndarray, origin: np.ndarray) -> np.ndarray:
    """Euclidean distances from ``origin`` to each row of ``points``.

    The squared terms are accumulated axis by axis in a fixed order; every
    query and oracle in the package goes through this formula so that equal
    distances compare equal.
    """
    points = np.atleast_2d(points)
    diff = points - origin
    acc = diff[..., 0] * diff[..., 0]
    for j in range(1, points.shape[-1]):
        acc = acc + diff[..., j] * diff[..., j]
    return np.sqrt(acc)


def pair_distances(points: np.ndarray, i: np.ndarray, j: np.ndarray) -> np.ndarray:
    diff = points[i] - points[j]
    acc = diff[:, 0] * diff[:, 0]
    for a in range(1, points.shape[1]):
        acc = acc + diff[:, a] * diff[:, a]
    return np.sqrt(acc)


def distance_matrix(points: np.ndarray) -> np.ndarray:
    points = np.asarray(points, dtype=float)
    diff = points[:, None, :] - points[None, :, :]
    acc = diff[..., 0] * diff[..., 0]
    for j in range(1, points.shape[1]):
        acc = acc + diff[..., j] * diff[..., j]
    return np.sqrt(acc)


class NeighborIndex:
    """Exact k-nearest and fixed-radius queries over a fixed point list."""

    def __init__(self, points):
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1)
        self.points = pts
        self.n = len(pts)
        self._tree = cKDTree(pts) if self.n else None

    def _row_knn(self, i: int, k: int) -> tuple[np.ndarray, np.ndarray]:
        d = distances(self.points, self.points[i])
        d[i] = np.inf
        order = np.lexsort((np.arange(self.n), d))[:k]
        return order, d[order]

    def knn_all(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        """The k nearest neighbors of every point, self excluded.

        Returns ``(indices, dists)``, both of shape ``(n, k)``, each row
        sorted by (distance, index).
        """
        n = self.n
        if k < 1 or k >= n:
            raise ValueError(f"need 1 <= k < n, got k={k}, n={n}")
        window = min(k + 2, n)
        _, cand = self._tree.query(self.points, k=window)
        cand = np.asarray(cand).reshape(n, window)
        rows = np.repeat(np.arange(n), window)
        dist = pair_distances(self.points, rows, cand.ravel()).reshape(n, window)
        dist[cand == np.arange(n)[:, None]] = np.inf
        # sort each row by (distance, index)
        order = np.lexsort((cand, dist), axis=1)
        cand = np.take_along_axis(cand, order, axis=1)
        dist = np.take_along_axis(dist, order, axis=1)
        # the last column is self (inf) or the first point beyond the window
        idx, dst = cand[:, :k].copy(), dist[:, :k].copy()
        if window < n:
            edge = dist[:, k]
            unsafe = ~(edge > dst[:, -1] * (1 + _WINDOW_SLACK))
            # self must have been excluded, otherwise the window lost a point
            unsafe |= np.isfinite(dist[:, window - 1])
            for i in np.flatnonzero(unsafe):
                idx[i], dst[i] = self._row_knn(i, k)
        return idx, dst

    def k_nearest(self, i: int, k: int) -> list[int]:
        if k < 1 or k >= self.n:
            raise ValueError(f"need 1 <= k < n, got k={k}, n={self.n}")
        return self._row_knn(i, k)[0].tolist()

    def within(self, x, r: float) -> np.ndarray:
        """Indices with distance to ``x`` at most ``r``, ascending."""
        if self.n == 0:
            return np.empty(0, dtype=int)
        x = np.asarray(x, dtype=float)
        cand = np.asarray(self._tree.query_ball_point(x, r * (1 + _WINDOW_SLACK)), dtype=int)
        cand.sort()
        return cand[distances(self.points[cand], x) <= r] if len(cand) else cand

    def pairs_within(self, r: float) -> np.ndarray:
        """All pairs ``i < j`` with distance at most ``r``, lexicographically sorted."""
        if self.n < 2:
            return np.empty((0, 2), dtype=int)
        pairs = self._tree.query_pairs(r * (1 + _WINDOW_SLACK), output_type="ndarray")
        if len(pairs) == 0:
            return np.empty((0, 2), dtype=int)
        pairs = np.sort(pairs, axis=1)
        pairs = pairs[pair_distances(self.points, pairs[:, 0], pairs[:, 1]) <= r]
        return pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))]

    def pairs_within_each(self, radii: np.ndarray) -> np.ndarray:
        """Candidate pairs ``i < j`` with distance at most ``radii[i]``; unfiltered
        beyond a small slack, callers apply their own exact rule."""
        lists = self._tree.query_ball_point(self.points, np.asarray(radii) * (1 + _WINDOW_SLACK))
        rows = [(i, j) for i, lst in enumerate(lists) for j in lst if j != i]
        if not rows:
            return np.empty((0, 2), dtype=int)
        pairs = np.sort(np.array(rows, dtype=int), axis=1)
        return np.unique(pairs, axis=0)


@dataclass
class GeometricGraph:
    """G(X, r): vertices joined when at most ``radius`` apart."""

    positions: np.ndarray
    edges: np.ndarray  # (m, 2), i < j, lexicographic
    radius: float | None = None
    _adj: list | None = field(default=None, init=False, repr=False, compare=False)

    @property
    def n(self) -> int:
        return len(self.positions)

    def adjacency(self) -> list[list[int]]:
        """Neighbor lists, built once and cached."""
        if self._adj is None:
            adj: list[list[int]] = [[] for _ in range(self.n)]
            for i, j in self.edges.tolist():
                adj[i].append(j)
                adj[j].append(i)
            self._adj = adj
        return self._adj


def geometric_graph(points, r: float) -> GeometricGraph:
    if not r > 0:
        raise ValueError(f"connection radius must be positive, got {r}")
    index = points if isinstance(points, NeighborIndex) else NeighborIndex(points)
    return GeometricGraph(index.points, index.pairs_within(r), r)


def components(graph: GeometricGraph) -> list[list[int]]:
    """Connected components, each sorted, ordered by smallest member."""
    n = graph.n
    if n == 0:
        return []
    e = graph.edges
    mat = coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(n, n))
    _, labels = connected_components(mat, directed=False)
    # labels are assigned in order of first appearance, i.e. by smallest member
    order = np.argsort(labels, kind="stable")
    splits = np.flatnonzero(np.diff(labels[order])) + 1
    groups = [g.tolist() for g in np.split(order, splits)]
    groups.sort(key=lambda g: g[0])
    return groups


def _mis_bitmask(adj: list[int]) -> int:
    """Maximum independent set size of a graph given as neighbor bitmasks."""
    n = len(adj)
    full = (1 << n) - 1

    def greedy(cand: int) -> int:
        size = 0
        while cand:
            # min-degree vertex within cand
            best_v, best_deg = -1, n + 1
            c = cand
            while c:
                low = c & -c
                v = low.bit_length() - 1
                deg = bin(adj[v] & cand).count("1")
                if deg < best_deg:
                    best_v, best_deg = v, deg
                c ^= low
            cand &= ~(adj[best_v] | (1 << best_v))
            size += 1
        return size

    def clique_cover(cand: int) -> int:
        count = 0
        while cand:
            low = cand & -cand
            v = low.bit_length() - 1
            clique_cand = cand & adj[v]
            cand ^= low
            while clique_cand:
                lu = clique_cand & -clique_cand
                u = lu.bit_length() - 1
                cand &= ~lu
                clique_cand &= adj[u]
            count += 1
        return count

    best = greedy(full)

    def search(cand: int, size: int) -> None:
        nonlocal best
        # a vertex of degree <= 1 inside cand belongs to some maximum set
        changed = True
        while changed and cand:
            changed = False
            c = cand
            while c:
                low = c & -c
                v = low.bit_length() - 1
                c ^= low
                if not (cand >> v) & 1:
                    continue
                if bin(adj[v] & cand).count("1") <= 1:
                    cand &= ~(adj[v] | low)
                    size += 1
                    changed = True
        if not cand:
            best = max(best, size)
            return
        if size + clique_cover(cand) <= best:
            return
        # branch on a max-degree vertex
        pick, pick_deg = -1, -1
        c = cand
        while c:
            low = c & -c
            v = low.bit_length() - 1
            deg = bin(adj[v] & cand).count("1")
            if deg > pick_deg:
                pick, pick_deg = v, deg
            c ^= low
        search(cand & ~(adj[pick] | (1 << pick)), size + 1)
        search(cand & ~(1 << pick), size)

    search(full, 0)
    return best


def independence_number(graph: GeometricGraph, vertices=None, cap: int = DEFAULT_COMPONENT_CAP) -> int:
    """Exact independence number.

    With ``vertices`` the graph is restricted to that vertex set, which is
    expected to be one component. Without it the graph is split into
    components and the per-component numbers are summed. Any component
    larger than ``cap`` raises ``ComponentTooLarge``.
    """
    if vertices is None:
        return sum(independence_number(graph, comp, cap) for comp in components(graph))
    verts = list(vertices)
    if len(verts) > cap:
        raise ComponentTooLarge(len(verts), cap)
    if len(verts) <= 1:
        return len(verts)
    local = {v: i for i, v in enumerate(verts)}
    nbrs = graph.adjacency()
    adj = [0] * len(verts)
    for v, i in local.items():
        for u in nbrs[v]:
            j = local.get(u)
            if j is not None:
                adj[i] |= 1 << j
    return _mis_bitmask(adj)


@dataclass
class VoronoiCell:
    """Finite boundary edges of one Voronoi cell.

    ``clipped_edges`` holds unbounded edges cut at a clip box, when one was
    requested; they never count as finite.
    """

    generator: int
    edges: list[tuple[tuple[float, float], tuple[float, float]]] = field(default_factory=list)
    n_unbounded: int = 0
    clipped_edges: list[tuple[tuple[float, float], tuple[float, float]]] = field(default_factory=list)

    @property
    def finite_length(self) -> float:
        return float(sum(np.hypot(b[0] - a[0], b[1] - a[1]) for a, b in self.edges))


def _collinear(points: np.ndarray) -> bool:
    centered = points - points.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    return sv[1] <= 1e-12 * max(sv[0], 1e-300)


def _clip_ray(origin, direction, lo, hi):
    """Segment of the ray origin + t*direction (t >= 0) inside the box, or None."""
    t0, t1 = 0.0, np.inf
    for a in range(2):
        if direction[a] == 0:
            if not lo[a] <= origin[a] <= hi[a]:
                return None
            continue
        ta = (lo[a] - origin[a]) / direction[a]
        tb = (hi[a] - origin[a]) / direction[a]
        t0, t1 = max(t0, min(ta, tb)), min(t1, max(ta, tb))
    if t0 > t1:
        return None
    p, q = origin + t0 * direction, origin + t1 * direction
    return (tuple(p.tolist()), tuple(q.tolist()))


def voronoi_cells(points, clip_box=None) -> list[VoronoiCell]:
    """Voronoi cells of planar points.

    Each finite edge is reported by both adjacent cells with the same
    endpoints. ``clip_box = (lower, upper)`` additionally cuts unbounded
    edges to the box and stores them in ``clipped_edges``.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("Voronoi cells are only supported in d = 2")
    n = len(pts)
    if n < 2:
        raise ValueError(f"need at least 2 points, got {n}")
    cells = [VoronoiCell(i) for i in range(n)]
    lo = hi = None
    if clip_box is not None:
        lo, hi = (np.asarray(v, dtype=float) for v in clip_box)

    if n == 2 or _collinear(pts):
        # parallel bisector lines: nothing finite
        direction = pts[-1] - pts[0]
        normal = np.array([-direction[1], direction[0]])
        order = np.lexsort((np.arange(n), pts @ direction))
        for a, b in zip(order[:-1], order[1:]):
            cells[a].n_unbounded += 1
            cells[b].n_unbounded += 1
            if clip_box is not None:
                mid = (pts[a] + pts[b]) / 2
                s1 = _clip_ray(mid, normal, lo, hi)
                s2 = _clip_ray(mid, -normal, lo, hi)
                pieces = [s for s in (s1, s2) if s is not None]
                if pieces:
                    seg = (pieces[-1][1], pieces[0][1]) if len(pieces) == 2 else pieces[0]
                    cells[a].clipped_edges.append(seg)
                    cells[b].clipped_edges.append(seg)
        return cells

    try:
        vor = Voronoi(pts)
    except QhullError:
        vor = Voronoi(pts, qhull_options="Qbb Qc Qz QJ")
    verts = vor.vertices
    center = pts.mean(axis=0)
    for (p, q), ridge in zip(vor.ridge_points.tolist(), vor.ridge_vertices):
        if -1 not in ridge:
            a, b = verts[ridge[0]], verts[ridge[1]]
            seg = (tuple(a.tolist()), tuple(b.tolist()))
            cells[p].edges.append(seg)
            cells[q].edges.append(seg)
            continue
        cells[p].n_unbounded += 1
        cells[q].n_unbounded += 1
        if clip_box is not None:
            v = verts[[i for i in ridge if i >= 0][0]]
            t = pts[q] - pts[p]
            normal = np.array([-t[1], t[0]])
            mid = (pts[p] + pts[q]) / 2
            direction = np.sign(np.dot(mid - center, normal)) * normal
            if not np.any(direction):
                direction = normal
            seg = _clip_ray(v, direction, lo, hi)
            if seg is not None:
                cells[p].clipped_edges.append(seg)
                cells[q].clipped_edges.append(seg)
    return cells
