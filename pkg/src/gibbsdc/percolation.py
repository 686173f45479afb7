"""Boolean-model connectivity: clusters, connection events and decay curves."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .geometry import Ball, Box, Complement, PointPattern, Region, dist
from .rng import as_stream


class UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))
        self.size = [1] * n

    def find(self, i: int) -> int:
        root = i
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[i] != root:
            self.parent[i], i = root, self.parent[i]
        return root

    def union(self, i: int, j: int) -> bool:
        a, b = self.find(i), self.find(j)
        if a == b:
            return False
        if self.size[a] < self.size[b]:
            a, b = b, a
        self.parent[b] = a
        self.size[a] += self.size[b]
        return True


@dataclass
class ClusterPartition:
    """Cluster label per point (labels numbered by first appearance)."""

    labels: np.ndarray
    bboxes: list

    @property
    def n_clusters(self) -> int:
        return len(self.bboxes)

    def members(self, label: int) -> np.ndarray:
        return np.flatnonzero(self.labels == label)


def _coords(phi) -> np.ndarray:
    return phi.coords if isinstance(phi, PointPattern) else np.asarray(phi, dtype=float)


def boolean_clusters(phi, r: float) -> ClusterPartition:
    """Components of the graph joining points at distance <= r."""
    if r <= 0:
        raise ValueError("connection radius must be positive")
    pts = _coords(phi)
    n = len(pts)
    uf = UnionFind(n)
    if n > 1:
        pairs = cKDTree(pts).query_pairs(r, output_type="ndarray")
        for i, j in pairs:
            uf.union(int(i), int(j))
    labels = np.empty(n, dtype=np.int64)
    seen: dict[int, int] = {}
    for i in range(n):
        root = uf.find(i)
        if root not in seen:
            seen[root] = len(seen)
        labels[i] = seen[root]
    bboxes = []
    for lab in range(len(seen)):
        m = pts[labels == lab]
        bboxes.append((m.min(axis=0), m.max(axis=0)))
    return ClusterPartition(labels, bboxes)


def touching_clusters(phi, region: Region, r0: float, partition: ClusterPartition | None = None) -> np.ndarray:
    """Sorted labels of clusters having a point within r0 of `region`."""
    pts = _coords(phi)
    if len(pts) == 0:
        return np.zeros(0, dtype=np.int64)
    part = partition or boolean_clusters(pts, r0)
    near = region.point_distance(pts) <= r0
    return np.unique(part.labels[near])


def _gap(A: Region, B: Region) -> float:
    if isinstance(B, OutsideNeighbourhood) and B.A is A:
        return B.s
    if isinstance(A, OutsideNeighbourhood) and A.A is B:
        return A.s
    return dist(A, B)


def connects(A: Region, B: Region, phi, r0: float) -> bool:
    """A <-> B in the Boolean model of r0/2-balls, counting direct adjacency."""
    if _gap(A, B) <= r0:
        return True
    pts = _coords(phi)
    if len(pts) == 0:
        return False
    near_a = A.point_distance(pts) <= r0
    near_b = B.point_distance(pts) <= r0
    if not near_a.any() or not near_b.any():
        return False
    part = boolean_clusters(pts, r0)
    return bool(np.intersect1d(part.labels[near_a], part.labels[near_b]).size)


class OutsideNeighbourhood(Region):
    """{z : dist(z, A) >= s} for a convex box or ball A (unbounded)."""

    def __init__(self, A: Region, s: float):
        if not isinstance(A, (Box, Ball)):
            raise ValueError("shell regions need a box or ball core")
        self.A, self.s, self.dim = A, float(s), A.dim

    def contains(self, pts):
        return self.A.point_distance(pts) >= self.s

    def point_distance(self, pts):
        return np.maximum(self.s - self.A.point_distance(pts), 0.0)


@dataclass
class DecayRow:
    s: float
    p_hat: float
    stderr: float
    reps: int


def decay_curve(alpha0: float, r0: float, A: Region, distances, margin: float | None = None, reps: int = 1000,
                rng=0) -> list[DecayRow]:
    """Monte Carlo estimate of P(A <-> {z : dist(z, A) >= s}) for each s.

    The carrier is a homogeneous Poisson process of intensity alpha0 on the
    bounding box of A enlarged by max(s) + margin; each replicate is shared
    across all distances.
    """
    from .sampler import sample_marked_poisson  # local import keeps module graph acyclic

    stream = as_stream(rng)
    distances = [float(s) for s in distances]
    if margin is None:
        margin = 4 * r0
    lo, hi = A.bbox()
    ext = max(distances) + margin
    W = Box(lo - ext, hi + ext)
    hits = np.zeros(len(distances), dtype=np.int64)
    shells = [OutsideNeighbourhood(A, s) for s in distances]
    for rep in range(reps):
        pts = sample_marked_poisson(W, alpha0, stream.child("rep", rep)).coords
        for k, (s, shell) in enumerate(zip(distances, shells)):
            if s <= r0:
                hits[k] += 1
                continue
            hits[k] += connects(A, shell, pts, r0)
    rows = []
    for s, h in zip(distances, hits):
        p = h / reps
        rows.append(DecayRow(s, float(p), float(math.sqrt(p * (1 - p) / reps)), reps))
    return rows


def loglinear_fit(s, p) -> tuple[float, float]:
    """Least-squares slope and R^2 of log p against s (p must be positive)."""
    s = np.asarray(s, float)
    y = np.log(np.asarray(p, float))
    A = np.vstack([s, np.ones_like(s)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float((resid**2).sum()) / ss_tot if ss_tot > 0 else 1.0
    return float(coef[0]), r2


__all__ = ["UnionFind", "ClusterPartition", "boolean_clusters", "touching_clusters", "connects",
           "OutsideNeighbourhood", "decay_curve", "DecayRow", "loglinear_fit", "Complement"]
