"""Geometric score functions and functionals: kNN length and large-edge
indicator, Voronoi half-perimeter, MST length, persistent Betti numbers,
score sums and add-one costs."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.spatial import Delaunay, cKDTree

from .geometry import PointPattern, Region
from .percolation import UnionFind, boolean_clusters


class InfiniteScoreError(ArithmeticError):
    """A score evaluated to infinity; carries the offending point."""

    def __init__(self, point, msg: str = "infinite score"):
        super().__init__(f"{msg} at {np.asarray(point).tolist()}")
        self.point = np.asarray(point)


@dataclass(frozen=True)
class ScoreSpec:
    kind: str
    k: int = 4
    a: float = 1.0
    q: int = 0
    r: float = 0.0
    s: float = 0.0

    PER_POINT = ("knn_length", "knn_large_edge", "voronoi_perimeter")
    WHOLE = ("mst_total", "betti", "count")

    def __post_init__(self):
        if self.kind not in self.PER_POINT + self.WHOLE:
            raise ValueError(f"unknown score kind {self.kind!r}")
        if self.kind.startswith("knn") and self.k < 1:
            raise ValueError("k must be >= 1")
        if self.kind == "knn_large_edge" and not self.a > 0:
            raise ValueError("a must be positive")
        if self.kind == "betti":
            if self.q not in (0, 1):
                raise ValueError("q must be 0 or 1")
            if not (0 <= self.r <= self.s):
                raise ValueError("need 0 <= r <= s")

    @property
    def per_point(self) -> bool:
        return self.kind in self.PER_POINT

    @classmethod
    def parse(cls, text: str) -> "ScoreSpec":
        """Parse 'knn-length:k=4', 'knn-large:k=4,a=1.0', 'voronoi', 'mst',
        'betti:q=1,r=0.5,s=0.8' or 'count'."""
        name, _, args = text.strip().partition(":")
        kw: dict = {}
        for item in filter(None, (a.strip() for a in args.split(","))):
            key, eq, val = item.partition("=")
            if not eq:
                raise ValueError(f"bad functional parameter {item!r}")
            key = key.strip()
            if key not in ("k", "a", "q", "r", "s"):
                raise ValueError(f"unknown functional parameter {key!r}")
            kw[key] = int(val) if key in ("k", "q") else float(val)
        kinds = {"knn-length": "knn_length", "knn-large": "knn_large_edge", "voronoi": "voronoi_perimeter",
                 "mst": "mst_total", "betti": "betti", "count": "count"}
        if name not in kinds:
            raise ValueError(f"unknown functional {name!r}")
        return cls(kinds[name], **kw)


def _pts(phi) -> np.ndarray:
    return phi.coords if isinstance(phi, PointPattern) else np.asarray(phi, dtype=float)


def _index_of(pts: np.ndarray, x) -> int:
    x = np.asarray(x, float).reshape(-1)
    hit = np.flatnonzero(np.all(pts == x, axis=1))
    if not len(hit):
        raise ValueError("x must be a point of phi")
    return int(hit[0])


# ---------------------------------------------------------------------------
# kNN


def knn_edges(pts: np.ndarray, k: int) -> np.ndarray:
    """Undirected kNN edges (i < j): j among the k nearest of i or vice versa."""
    n = len(pts)
    if n <= k:
        raise InfiniteScoreError(pts[0] if n else np.zeros(2), "fewer than k+1 points")
    _, nn = cKDTree(pts).query(pts, k + 1)
    nn = nn[:, 1:]
    i = np.repeat(np.arange(n), k)
    j = nn.reshape(-1)
    e = np.sort(np.stack([i, j], axis=1), axis=1)
    return np.unique(e, axis=0)


def knn_scores(phi, k: int) -> np.ndarray:
    """Half the total length of kNN edges incident to each point (inf if #phi <= k)."""
    pts = _pts(phi)
    n = len(pts)
    if n <= k:
        return np.full(n, np.inf)
    e = knn_edges(pts, k)
    L = np.sqrt(((pts[e[:, 0]] - pts[e[:, 1]]) ** 2).sum(axis=1))
    out = np.zeros(n)
    np.add.at(out, e[:, 0], L)
    np.add.at(out, e[:, 1], L)
    return 0.5 * out


def knn_score(phi, x, k: int) -> float:
    pts = _pts(phi)
    return float(knn_scores(pts, k)[_index_of(pts, x)])


def kth_neighbour_distance(pts: np.ndarray, k: int) -> np.ndarray:
    n = len(pts)
    if n <= k:
        return np.full(n, np.inf)
    dd, _ = cKDTree(pts).query(pts, k + 1)
    return dd[:, k]


def knn_large_edge(phi, x, k: int, a: float) -> int:
    """1 if the k-th nearest other point of phi is at distance >= a from x."""
    pts = _pts(phi)
    i = _index_of(pts, x)
    others = np.delete(pts, i, axis=0)
    if len(others) < k:
        return 1
    d = np.sort(np.sqrt(((others - pts[i]) ** 2).sum(axis=1)))
    return int(d[k - 1] >= a)


def knn_large_edge_scores(phi, k: int, a: float) -> np.ndarray:
    pts = _pts(phi)
    return (kth_neighbour_distance(pts, k) >= a).astype(float)


def knn_stabilization_radius(phi, x, k: int) -> float:
    """Radius R with g(x, (phi ∩ B_R(x)) + chi) = g(x, phi ∩ B_R(x)) for every
    finite chi outside B_R(x) (d = 2; inf when not certified).

    The plane around x is split into six 60-degree sectors; if each sector
    holds k points within distance R_c, no point beyond 2 max R_c can select
    x or alter the neighbours of points that do.
    """
    pts = _pts(phi)
    if pts.shape[1] != 2:
        return math.inf
    i = _index_of(pts, x)
    v = np.delete(pts, i, axis=0) - pts[i]
    if len(v) < k:
        return math.inf
    ang = np.mod(np.arctan2(v[:, 1], v[:, 0]), 2 * math.pi)
    sector = np.minimum((ang // (math.pi / 3)).astype(int), 5)
    r = np.sqrt((v**2).sum(axis=1))
    worst = 0.0
    for c in range(6):
        rc = np.sort(r[sector == c])
        if len(rc) < k:
            return math.inf
        worst = max(worst, float(rc[k - 1]))
    return 2 * worst


# ---------------------------------------------------------------------------
# Voronoi


def _clip(poly: np.ndarray, m: np.ndarray, nrm: np.ndarray) -> np.ndarray:
    """Clip a convex polygon to the half-plane {z : (z - m) . nrm <= 0}."""
    if len(poly) == 0:
        return poly
    s = (poly - m) @ nrm
    if np.all(s <= 0):
        return poly
    out = []
    n = len(poly)
    for i in range(n):
        p, q = poly[i], poly[(i + 1) % n]
        sp, sq = s[i], s[(i + 1) % n]
        if sp <= 0:
            out.append(p)
        if (sp < 0 < sq) or (sq < 0 < sp):
            t = sp / (sp - sq)
            out.append(p + t * (q - p))
    return np.array(out) if out else np.zeros((0, 2))


def voronoi_cell(phi, x) -> np.ndarray | None:
    """Vertices (counter-clockwise) of the Voronoi cell of x, or None if unbounded."""
    pts = _pts(phi)
    if pts.shape[1] != 2:
        raise ValueError("Voronoi scores need d = 2")
    i = _index_of(pts, x)
    c = pts[i]
    others = np.delete(pts, i, axis=0)
    if len(others) < 2:
        return None
    span = float(np.ptp(pts, axis=0).max()) or 1.0
    L = 1e4 * span
    # work relative to x so rounding does not depend on the absolute position
    poly = np.array([[-L, -L], [L, -L], [L, L], [-L, L]])
    rel = others - c
    dist = np.sqrt((rel**2).sum(axis=1))
    order = np.argsort(dist, kind="stable")
    for j in order:
        reach = np.sqrt((poly**2).sum(axis=1)).max()
        if dist[j] > 2 * reach:
            break
        poly = _clip(poly, rel[j] / 2, rel[j])
    if np.abs(poly).max() >= L * (1 - 1e-9):
        return None
    return c + poly


def voronoi_score(phi, x) -> float:
    """Half the perimeter of the Voronoi cell of x (inf if unbounded)."""
    poly = voronoi_cell(phi, x)
    if poly is None:
        return math.inf
    poly = poly - np.asarray(x, float)
    return 0.5 * float(np.sqrt(((poly - np.roll(poly, -1, axis=0)) ** 2).sum(axis=1)).sum())


def voronoi_scores(phi, idx=None) -> np.ndarray:
    pts = _pts(phi)
    idx = range(len(pts)) if idx is None else idx
    return np.array([voronoi_score(pts, pts[i]) for i in idx], dtype=float)


# ---------------------------------------------------------------------------
# MST


def _kruskal(pts: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """Minimal spanning tree edges chosen from the candidate set (ties by edge key)."""
    n = len(pts)
    if n < 2:
        return np.zeros((0, 2), dtype=np.int64)
    L = np.sqrt(((pts[edges[:, 0]] - pts[edges[:, 1]]) ** 2).sum(axis=1))
    order = np.lexsort((edges[:, 1], edges[:, 0], L))
    uf = UnionFind(n)
    chosen = []
    for e in order:
        if uf.union(int(edges[e, 0]), int(edges[e, 1])):
            chosen.append(e)
            if len(chosen) == n - 1:
                break
    if len(chosen) != n - 1:
        raise RuntimeError("candidate edge set does not span the points")
    return edges[np.array(chosen)]


def mst_edges_candidates(pts: np.ndarray) -> np.ndarray:
    n = len(pts)
    if n <= 2000 or n <= pts.shape[1] + 1:
        i, j = np.triu_indices(n, k=1)
        return np.stack([i, j], axis=1)
    tri = Delaunay(pts)
    e = set()
    for simplex in tri.simplices:
        for a, b in itertools.combinations(sorted(simplex), 2):
            e.add((a, b))
    return np.array(sorted(e))


def mst_edges(phi) -> np.ndarray:
    """Edges (i, j) of the Euclidean minimal spanning tree."""
    pts = _pts(phi)
    if len(pts) < 2:
        return np.zeros((0, 2), dtype=np.int64)
    return _kruskal(pts, mst_edges_candidates(pts))


def mst_total_length(phi) -> float:
    """Total edge length of the Euclidean minimal spanning tree."""
    pts = _pts(phi)
    e = mst_edges(pts)
    if not len(e):
        return 0.0
    return float(np.sqrt(((pts[e[:, 0]] - pts[e[:, 1]]) ** 2).sum(axis=1)).sum())


# ---------------------------------------------------------------------------
# persistent Betti numbers


def meb_radius3(a, b, c) -> float:
    """Radius of the smallest ball enclosing three points (d = 2)."""
    la = float(np.linalg.norm(b - c))
    lb = float(np.linalg.norm(a - c))
    lc = float(np.linalg.norm(a - b))
    x, y, z = sorted([la, lb, lc])
    if z * z >= x * x + y * y:  # right or obtuse
        return z / 2
    area2 = abs(float((b - a)[0] * (c - a)[1] - (b - a)[1] * (c - a)[0]))
    return la * lb * lc / (2 * area2)


@dataclass
class PersistenceDiagram:
    pairs: list  # (dim, birth, death) with death = inf for essential classes

    def count(self, q: int, r: float, s: float) -> int:
        return sum(1 for dim, b, d in self.pairs if dim == q and b <= r and d > s)


def cech_filtration(pts: np.ndarray, t_max: float):
    """Simplices (up to triangles) of the Cech filtration with value <= t_max,
    as a list of (value, dim, vertex tuple), sorted so faces precede cofaces."""
    n = len(pts)
    simplices = [(0.0, 0, (i,)) for i in range(n)]
    if n > 1:
        pairs = cKDTree(pts).query_pairs(2 * t_max, output_type="ndarray")
        nbr: dict[int, set] = {i: set() for i in range(n)}
        for i, j in pairs:
            i, j = int(min(i, j)), int(max(i, j))
            simplices.append((float(np.linalg.norm(pts[i] - pts[j])) / 2, 1, (i, j)))
            nbr[i].add(j)
            nbr[j].add(i)
        if pts.shape[1] == 2:
            for i in range(n):
                for j in sorted(v for v in nbr[i] if v > i):
                    for k in sorted(v for v in nbr[i] & nbr[j] if v > j):
                        val = meb_radius3(pts[i], pts[j], pts[k])
                        if val <= t_max:
                            simplices.append((val, 2, (i, j, k)))
    simplices.sort(key=lambda s: (s[0], s[1], s[2]))
    return simplices


def persistence_diagram(phi, t_max: float) -> PersistenceDiagram:
    """Z/2 persistence of the Cech filtration truncated at t_max (dims 0, 1)."""
    pts = _pts(phi)
    simplices = cech_filtration(pts, t_max)
    pos = {s[2]: i for i, s in enumerate(simplices)}
    cols: list = []
    pivot_of: dict[int, int] = {}
    pairs = []
    paired = set()
    for idx, (val, dim, verts) in enumerate(simplices):
        if dim == 0:
            col = set()
        else:
            col = {pos[f] for f in itertools.combinations(verts, dim)}
        while col:
            low = max(col)
            other = pivot_of.get(low)
            if other is None:
                break
            col ^= cols[other]
        cols.append(col)
        if col:
            low = max(col)
            pivot_of[low] = idx
            paired.add(low)
            paired.add(idx)
            b = simplices[low][0]
            if val > b:
                pairs.append((simplices[low][1], b, val))
    for idx, (val, dim, verts) in enumerate(simplices):
        if idx not in paired and not cols[idx] and dim <= 1:
            pairs.append((dim, val, math.inf))
    return PersistenceDiagram(pairs)


def persistent_betti(phi, q: int, r: float, s: float) -> int:
    """beta_q^{r,s}: rank of H_q(B_r(phi)) -> H_q(B_s(phi)), q in {0, 1}."""
    if not (0 <= r <= s):
        raise ValueError("need 0 <= r <= s")
    pts = _pts(phi)
    if q == 0:
        if len(pts) == 0:
            return 0
        if s == 0:
            return len(pts)
        return boolean_clusters(pts, 2 * s).n_clusters
    if q == 1:
        if len(pts) and pts.shape[1] != 2:
            raise ValueError("beta_1 is implemented for d = 2")
        if len(pts) < 3:
            return 0
        return persistence_diagram(pts, s).count(1, r, s)
    raise ValueError("q must be 0 or 1")


# ---------------------------------------------------------------------------
# sums and costs


def point_scores(phi, spec: ScoreSpec, idx=None) -> np.ndarray:
    pts = _pts(phi)
    if spec.kind == "knn_length":
        out = knn_scores(pts, spec.k)
    elif spec.kind == "knn_large_edge":
        out = knn_large_edge_scores(pts, spec.k, spec.a)
    elif spec.kind == "voronoi_perimeter":
        return voronoi_scores(pts, idx)
    else:
        raise ValueError(f"{spec.kind} is not a per-point score")
    return out if idx is None else out[np.asarray(idx, dtype=int)]


def score_sum(phi, spec: ScoreSpec, Q: Region, variant: str = "full") -> float:
    """sum_{x in phi ∩ Q} g(x, phi) (full) or g(x, phi ∩ Q) (restricted)."""
    if not spec.per_point:
        return window_functional(phi, spec, Q)
    pts = _pts(phi)
    if len(pts) == 0:
        return 0.0
    inside = np.flatnonzero(Q.contains(pts))
    if not len(inside):
        return 0.0
    if variant == "full":
        vals = point_scores(pts, spec, inside)
        where = inside
    elif variant == "restricted":
        vals = point_scores(pts[inside], spec)
        where = inside
    else:
        raise ValueError("variant must be 'full' or 'restricted'")
    bad = np.flatnonzero(~np.isfinite(vals))
    if len(bad):
        raise InfiniteScoreError(pts[where[bad[0]]])
    return float(vals.sum())


def whole_functional(phi, spec: ScoreSpec) -> float:
    pts = _pts(phi)
    if spec.kind == "mst_total":
        return mst_total_length(pts)
    if spec.kind == "betti":
        return float(persistent_betti(pts, spec.q, spec.r, spec.s))
    if spec.kind == "count":
        return float(len(pts))
    vals = point_scores(pts, spec)
    if not np.all(np.isfinite(vals)):
        raise InfiniteScoreError(pts[np.flatnonzero(~np.isfinite(vals))[0]])
    return float(vals.sum())


def window_functional(phi, spec: ScoreSpec, Q: Region) -> float:
    """H(phi ∩ Q) for whole-pattern functionals."""
    pts = _pts(phi)
    if len(pts):
        pts = pts[Q.contains(pts)]
    return whole_functional(pts, spec)


def add_one_cost(H, phi, y) -> float:
    """D_y H(phi) = H(phi + y) - H(phi); H is a ScoreSpec or a callable."""
    pts = _pts(phi)
    y = np.asarray(y, float).reshape(1, -1)
    if len(pts) and np.any(np.all(pts == y, axis=1)):
        raise ValueError("y already belongs to phi")
    f: Callable = (lambda p: whole_functional(p, H)) if isinstance(H, ScoreSpec) else H
    with_y = np.vstack([pts, y]) if len(pts) else y
    return float(f(with_y) - f(pts))


__all__ = [
    "ScoreSpec", "InfiniteScoreError", "knn_edges", "knn_scores", "knn_score", "knn_large_edge",
    "knn_stabilization_radius", "kth_neighbour_distance", "voronoi_cell", "voronoi_score", "voronoi_scores",
    "mst_total_length", "mst_edges", "meb_radius3", "PersistenceDiagram", "cech_filtration", "persistence_diagram",
    "persistent_betti", "point_scores", "score_sum", "window_functional", "whole_functional", "add_one_cost",
]
