"""Points, regions, distances, measures and orderings.

Regions are small expression trees with vectorised membership tests.  Exact
distances are available for boxes, balls, their unions and a few composite
shapes; measures are exact for boxes and balls and otherwise estimated on a
midpoint grid.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np


class GeometryError(ValueError):
    """Raised for operations that are not defined on the given region shapes."""


class OrderTieError(GeometryError):
    pass


def ball_volume(r: float, d: int) -> float:
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1) * r**d


def _as_points(pts, d: int | None = None) -> np.ndarray:
    a = np.asarray(pts, dtype=float)
    if a.ndim == 1:
        a = a.reshape(1, -1) if a.size else a.reshape(0, d or 2)
    if d is not None and a.shape[1] != d:
        raise GeometryError(f"expected dimension {d}, got {a.shape[1]}")
    return a


# ---------------------------------------------------------------------------
# point patterns


class PointPattern:
    """A finite simple point configuration, optionally carrying marks.

    Coordinates are stored as an (n, d) float array.  Duplicated coordinates
    are rejected.  Marks, when present, must lie in [0, kappa_max].
    """

    __slots__ = ("coords", "marks", "kappa_max")

    def __init__(self, coords, marks=None, kappa_max: float | None = None, dim: int | None = None,
                 check: bool = True):
        c = np.asarray(coords, dtype=float)
        if c.size == 0:
            c = c.reshape(0, dim if dim is not None else (c.shape[1] if c.ndim == 2 else 2))
        elif c.ndim == 1:
            c = c.reshape(1, -1)
        if c.shape[1] not in (1, 2, 3):
            raise GeometryError("dimension must be 1, 2 or 3")
        if dim is not None and c.shape[1] != dim:
            raise GeometryError(f"expected dimension {dim}, got {c.shape[1]}")
        if check:
            if not np.all(np.isfinite(c)):
                raise GeometryError("non-finite coordinates")
            if len(c) > 1 and len(np.unique(c, axis=0)) != len(c):
                raise GeometryError("duplicate point coordinates")
        m = None
        if marks is not None:
            m = np.asarray(marks, dtype=float).reshape(-1)
            if len(m) != len(c):
                raise GeometryError("marks and points differ in length")
            if check and len(m):
                hi = np.inf if kappa_max is None else kappa_max
                if m.min() < 0 or m.max() > hi:
                    raise GeometryError("mark outside [0, kappa_max]")
        c.setflags(write=False)
        if m is not None:
            m.setflags(write=False)
        self.coords = c
        self.marks = m
        self.kappa_max = kappa_max

    @classmethod
    def empty(cls, dim: int = 2, marked: bool = False, kappa_max: float | None = None):
        return cls(np.zeros((0, dim)), np.zeros(0) if marked else None, kappa_max, dim=dim)

    @property
    def dim(self) -> int:
        return self.coords.shape[1]

    @property
    def is_marked(self) -> bool:
        return self.marks is not None

    def __len__(self) -> int:
        return len(self.coords)

    def __iter__(self):
        return iter(self.coords)

    def __repr__(self):
        return f"PointPattern(n={len(self)}, d={self.dim}, marked={self.is_marked})"

    def __eq__(self, other):
        if not isinstance(other, PointPattern):
            return NotImplemented
        return self.same_points(other)

    def same_points(self, other: "PointPattern") -> bool:
        """Set equality of the point locations (order ignored, exact floats)."""
        if len(self) != len(other) or self.dim != other.dim:
            return False
        a = self.coords[np.lexsort(self.coords.T[::-1])]
        b = other.coords[np.lexsort(other.coords.T[::-1])]
        return bool(np.array_equal(a, b))

    def unmarked(self) -> "PointPattern":
        return PointPattern(self.coords, dim=self.dim, check=False)

    def take(self, idx) -> "PointPattern":
        idx = np.asarray(idx)
        m = None if self.marks is None else self.marks[idx]
        return PointPattern(self.coords[idx], m, self.kappa_max, dim=self.dim, check=False)

    def restrict(self, region: "Region") -> "PointPattern":
        if len(self) == 0:
            return self
        return self.take(np.flatnonzero(region.contains(self.coords)))

    def union(self, other: "PointPattern") -> "PointPattern":
        if other.dim != self.dim:
            raise GeometryError("dimension mismatch")
        m = None
        if self.marks is not None and other.marks is not None:
            m = np.concatenate([self.marks, other.marks])
        return PointPattern(np.vstack([self.coords, other.coords]), m, self.kappa_max, dim=self.dim)

    def translate(self, v) -> "PointPattern":
        return PointPattern(self.coords + np.asarray(v, float), self.marks, self.kappa_max, dim=self.dim,
                            check=False)

    # csv ------------------------------------------------------------------
    def to_csv_lines(self) -> list[str]:
        names = ["x", "y", "z"][: self.dim]
        if self.marks is not None:
            names.append("mark")
        lines = [",".join(names)]
        for i in range(len(self)):
            row = [format(v, ".17g") for v in self.coords[i]]
            if self.marks is not None:
                row.append(format(self.marks[i], ".17g"))
            lines.append(",".join(row))
        return lines

    @classmethod
    def from_csv(cls, path) -> "PointPattern":
        rows = []
        header = None
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if header is None:
                    header = [h.strip() for h in line.split(",")]
                    continue
                rows.append([float(v) for v in line.split(",")])
        if header is None:
            raise GeometryError(f"{path}: missing header")
        marked = header[-1] == "mark"
        d = len(header) - int(marked)
        if header[:d] != ["x", "y", "z"][:d]:
            raise GeometryError(f"{path}: bad header {header}")
        a = np.array(rows, dtype=float).reshape(-1, len(header))
        if marked:
            return cls(a[:, :d], a[:, d], dim=d)
        return cls(a, dim=d)


# ---------------------------------------------------------------------------
# regions


class Region:
    """Membership-testable subset of R^d."""

    dim: int

    def contains(self, pts) -> np.ndarray:
        raise NotImplementedError

    @property
    def bounded(self) -> bool:
        return self.bbox() is not None

    def bbox(self):
        """(lo, hi) arrays of a bounding box, or None if unbounded."""
        return None

    def point_distance(self, pts) -> np.ndarray:
        """Euclidean distance from each point to the closure of the region."""
        raise GeometryError(f"no exact distance for {type(self).__name__}")

    def __or__(self, other):
        return Union(self, other)

    def __and__(self, other):
        return Intersection(self, other)

    def __sub__(self, other):
        return Difference(self, other)


@dataclass(frozen=True, eq=False)
class Empty(Region):
    dim: int = 2

    def contains(self, pts):
        return np.zeros(len(_as_points(pts, self.dim)), dtype=bool)

    def bbox(self):
        z = np.zeros(self.dim)
        return z, z


@dataclass(frozen=True, eq=False)
class Everything(Region):
    dim: int = 2

    def contains(self, pts):
        return np.ones(len(_as_points(pts, self.dim)), dtype=bool)

    def point_distance(self, pts):
        return np.zeros(len(_as_points(pts, self.dim)))


class Box(Region):
    """Closed axis-parallel box [lo, hi]."""

    def __init__(self, lo, hi):
        self.lo = np.asarray(lo, dtype=float).reshape(-1)
        self.hi = np.asarray(hi, dtype=float).reshape(-1)
        if self.lo.shape != self.hi.shape or np.any(self.hi < self.lo):
            raise GeometryError("box needs lo <= hi componentwise")
        self.dim = len(self.lo)

    @classmethod
    def cube(cls, n: float, d: int = 2, center=None):
        """Q_n = [-n/2, n/2]^d, optionally translated to `center`."""
        c = np.zeros(d) if center is None else np.asarray(center, float)
        return cls(c - n / 2, c + n / 2)

    def __repr__(self):
        return f"Box({self.lo.tolist()}, {self.hi.tolist()})"

    def contains(self, pts):
        p = _as_points(pts, self.dim)
        return np.all((p >= self.lo) & (p <= self.hi), axis=1)

    def bbox(self):
        return self.lo, self.hi

    def point_distance(self, pts):
        p = _as_points(pts, self.dim)
        g = np.maximum(np.maximum(self.lo - p, p - self.hi), 0.0)
        return np.sqrt((g * g).sum(axis=1))

    @property
    def volume(self) -> float:
        return float(np.prod(self.hi - self.lo))


class Ball(Region):
    """Closed ball B_r(c)."""

    def __init__(self, center, radius: float):
        self.center = np.asarray(center, dtype=float).reshape(-1)
        self.radius = float(radius)
        if self.radius < 0:
            raise GeometryError("negative radius")
        self.dim = len(self.center)

    def __repr__(self):
        return f"Ball({self.center.tolist()}, {self.radius})"

    def contains(self, pts):
        p = _as_points(pts, self.dim)
        d2 = ((p - self.center) ** 2).sum(axis=1)
        return d2 <= self.radius * self.radius

    def bbox(self):
        return self.center - self.radius, self.center + self.radius

    def point_distance(self, pts):
        p = _as_points(pts, self.dim)
        return np.maximum(np.sqrt(((p - self.center) ** 2).sum(axis=1)) - self.radius, 0.0)

    @property
    def volume(self) -> float:
        return ball_volume(self.radius, self.dim)


class Complement(Region):
    """Complement of a box or ball in R^d (unbounded)."""

    def __init__(self, inner: Region):
        self.inner = inner
        self.dim = inner.dim

    def __repr__(self):
        return f"Complement({self.inner!r})"

    def contains(self, pts):
        return ~self.inner.contains(pts)

    def point_distance(self, pts):
        p = _as_points(pts, self.dim)
        if isinstance(self.inner, Box):
            m = np.minimum(p - self.inner.lo, self.inner.hi - p).min(axis=1)
            return np.maximum(m, 0.0)
        if isinstance(self.inner, Ball):
            r = np.sqrt(((p - self.inner.center) ** 2).sum(axis=1))
            return np.maximum(self.inner.radius - r, 0.0)
        return super().point_distance(pts)


class Union(Region):
    def __init__(self, *parts: Region):
        if not parts:
            raise GeometryError("empty union")
        self.parts = tuple(parts)
        self.dim = parts[0].dim

    def __repr__(self):
        return "Union(" + ", ".join(map(repr, self.parts)) + ")"

    def contains(self, pts):
        p = _as_points(pts, self.dim)
        out = np.zeros(len(p), dtype=bool)
        for part in self.parts:
            out |= part.contains(p)
        return out

    def bbox(self):
        boxes = [q.bbox() for q in self.parts]
        if any(b is None for b in boxes):
            return None
        return (np.min([b[0] for b in boxes], axis=0), np.max([b[1] for b in boxes], axis=0))

    def point_distance(self, pts):
        return np.min([q.point_distance(pts) for q in self.parts], axis=0)


class Intersection(Region):
    def __init__(self, *parts: Region):
        if not parts:
            raise GeometryError("empty intersection")
        self.parts = tuple(parts)
        self.dim = parts[0].dim

    def __repr__(self):
        return "Intersection(" + ", ".join(map(repr, self.parts)) + ")"

    def contains(self, pts):
        p = _as_points(pts, self.dim)
        out = np.ones(len(p), dtype=bool)
        for part in self.parts:
            if not out.any():
                break
            idx = np.flatnonzero(out)
            out[idx] = part.contains(p[idx])
        return out

    def bbox(self):
        boxes = [b for b in (q.bbox() for q in self.parts) if b is not None]
        if not boxes:
            return None
        lo = np.max([b[0] for b in boxes], axis=0)
        hi = np.min([b[1] for b in boxes], axis=0)
        return lo, np.maximum(hi, lo)


class Difference(Region):
    """A minus B."""

    def __init__(self, a: Region, b: Region):
        self.a, self.b = a, b
        self.dim = a.dim

    def __repr__(self):
        return f"Difference({self.a!r}, {self.b!r})"

    def contains(self, pts):
        p = _as_points(pts, self.dim)
        out = self.a.contains(p)
        if out.any():
            idx = np.flatnonzero(out)
            out[idx] = ~self.b.contains(p[idx])
        return out

    def bbox(self):
        return self.a.bbox()

    def point_distance(self, pts):
        if isinstance(self.a, Box) and isinstance(self.b, Ball) and self.dim == 2:
            p = _as_points(pts, 2)
            return np.array([_dist_box_minus_disk(q, self.a, self.b) for q in p])
        return super().point_distance(pts)


def _seg_nearest(q, a, b):
    ab = b - a
    L2 = float(ab @ ab)
    t = 0.0 if L2 == 0 else min(max(float((q - a) @ ab) / L2, 0.0), 1.0)
    return a + t * ab


def _dist_box_minus_disk(q, box: Box, disk: Ball) -> float:
    """Distance from q to the closure of box minus the open disk (exact, d = 2)."""
    c, r = disk.center, disk.radius
    inside_box = box.contains(q)[0]
    if inside_box and np.linalg.norm(q - c) >= r:
        return 0.0
    cands = []
    # box edges, minus the open disk
    lo, hi = box.lo, box.hi
    corners = [np.array([lo[0], lo[1]]), np.array([hi[0], lo[1]]),
               np.array([hi[0], hi[1]]), np.array([lo[0], hi[1]])]
    for i in range(4):
        a, b = corners[i], corners[(i + 1) % 4]
        # parametrise a + t(b-a); remove t where |a + t(b-a) - c| < r
        ab = b - a
        A = float(ab @ ab)
        if A == 0:
            pieces = [(a, b)]
        else:
            B = 2 * float((a - c) @ ab)
            C = float((a - c) @ (a - c)) - r * r
            disc = B * B - 4 * A * C
            if disc <= 0:
                pieces = [(a, b)]
            else:
                s = math.sqrt(disc)
                t1, t2 = (-B - s) / (2 * A), (-B + s) / (2 * A)
                pieces = []
                if t1 > 0:
                    pieces.append((a, a + min(t1, 1.0) * ab))
                if t2 < 1:
                    pieces.append((a + max(t2, 0.0) * ab, b))
        for s0, s1 in pieces:
            cands.append(np.linalg.norm(q - _seg_nearest(q, s0, s1)))
    # circle arc inside the box
    v = q - c
    nv = np.linalg.norm(v)
    if nv > 0:
        proj = c + r * v / nv
        if box.contains(proj)[0]:
            cands.append(abs(nv - r))
    for axis in range(2):
        for val in (lo[axis], hi[axis]):
            off = val - c[axis]
            if abs(off) > r:
                continue
            h = math.sqrt(r * r - off * off)
            for sgn in (-1, 1):
                pt = c.copy()
                pt[axis] = val
                pt[1 - axis] = c[1 - axis] + sgn * h
                if box.contains(pt)[0]:
                    cands.append(np.linalg.norm(q - pt))
    return float(min(cands)) if cands else math.inf


# ---------------------------------------------------------------------------
# distances and measures


def _point_region(a) -> Region:
    if isinstance(a, Region):
        return a
    p = np.asarray(a, dtype=float).reshape(-1)
    return Ball(p, 0.0)


def dist(A, B) -> float:
    """inf{|x - y| : x in A, y in B} for regions built from boxes and balls.

    Points may be given as coordinate arrays.
    """
    A, B = _point_region(A), _point_region(B)
    for X, Y in ((A, B), (B, A)):
        v = _dist_ordered(X, Y)
        if v is not None:
            return v
    raise GeometryError(f"no exact distance between {type(A).__name__} and {type(B).__name__}")


def _dist_ordered(X: Region, Y: Region):
    if isinstance(X, Union):
        vals = [dist(p, Y) for p in X.parts]
        return float(min(vals))
    if isinstance(X, Ball):
        try:
            return float(max(Y.point_distance(X.center[None, :])[0] - X.radius, 0.0))
        except GeometryError:
            return None
    if isinstance(X, Box) and isinstance(Y, Box):
        g = np.maximum(np.maximum(X.lo - Y.hi, Y.lo - X.hi), 0.0)
        return float(np.sqrt((g * g).sum()))
    if isinstance(X, Box) and isinstance(Y, Complement):
        inner = Y.inner
        if isinstance(inner, Box):
            m = np.minimum(X.lo - inner.lo, inner.hi - X.hi).min()
            return float(max(m, 0.0))
        if isinstance(inner, Ball):
            corners = np.array(np.meshgrid(*zip(X.lo, X.hi))).reshape(X.dim, -1).T
            far = np.sqrt(((corners - inner.center) ** 2).sum(axis=1)).max()
            return float(max(inner.radius - far, 0.0))
    return None


def measure(A: Region, resolution: float = 1e-2) -> float:
    """Lebesgue measure; exact for boxes and balls, midpoint-grid otherwise."""
    if isinstance(A, Empty):
        return 0.0
    if isinstance(A, Box):
        return A.volume
    if isinstance(A, Ball):
        return A.volume
    if (isinstance(A, Difference) and isinstance(A.a, Box) and isinstance(A.b, Ball)
            and A.a.contains(A.b.bbox()[0])[0] and A.a.contains(A.b.bbox()[1])[0]):
        return A.a.volume - A.b.volume
    bb = A.bbox()
    if bb is None:
        raise GeometryError("measure of an unbounded region")
    lo, hi = bb
    if resolution <= 0:
        raise GeometryError("resolution must be positive")
    counts = np.maximum(np.ceil((hi - lo) / resolution).astype(int), 1)
    steps = (hi - lo) / counts
    if np.any(steps == 0):
        return 0.0
    axes = [lo[i] + steps[i] * (np.arange(counts[i]) + 0.5) for i in range(len(lo))]
    cell = float(np.prod(steps))
    total = 0
    # chunk over the first axis to bound memory
    rest = np.stack(np.meshgrid(*axes[1:], indexing="ij"), axis=-1).reshape(-1, len(lo) - 1) \
        if len(lo) > 1 else np.zeros((1, 0))
    for x0 in axes[0]:
        pts = np.hstack([np.full((len(rest), 1), x0), rest])
        total += int(A.contains(pts).sum())
    return total * cell


# ---------------------------------------------------------------------------
# orderings


@dataclass(frozen=True)
class OrderMap:
    """A real-valued ordering map iota with null level sets.

    rule is 'distance' (to `reference`, default the origin), 'lexicographic'
    (first coordinate, ties broken by later coordinates), or 'custom' with a
    vectorised function `fn` whose level sets the caller vouches are null.
    """

    rule: str = "distance"
    reference: tuple | None = None
    fn: Callable | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.rule not in ("distance", "lexicographic", "custom"):
            raise GeometryError(f"unknown order rule {self.rule!r}")
        if self.rule == "custom" and self.fn is None:
            raise GeometryError("custom order needs fn")

    def value(self, pts) -> np.ndarray:
        p = _as_points(pts)
        if self.rule == "distance":
            ref = np.zeros(p.shape[1]) if self.reference is None else np.asarray(self.reference, float)
            return np.sqrt(((p - ref) ** 2).sum(axis=1))
        if self.rule == "lexicographic":
            return p[:, 0].copy()
        return np.asarray(self.fn(p), dtype=float).reshape(-1)

    def argsort(self, pts) -> np.ndarray:
        p = _as_points(pts)
        if len(p) == 0:
            return np.zeros(0, dtype=int)
        v = self.value(p)
        if self.rule == "lexicographic":
            keys = [p[:, j] for j in range(p.shape[1] - 1, -1, -1)]
            idx = np.lexsort(keys)
            same = np.all(p[idx][1:] == p[idx][:-1], axis=1)
        else:
            idx = np.argsort(v, kind="stable")
            same = v[idx][1:] == v[idx][:-1]
        if np.any(same):
            raise OrderTieError("tie in ordering values")
        return idx


def order_sort(phi: PointPattern, iota: OrderMap) -> PointPattern:
    return phi.take(iota.argsort(phi.coords)) if len(phi) else phi


class OrderCut(Region):
    """{z : iota(z) > t} (side='after') or {z : iota(z) <= t} (side='upto').

    Unbounded; intersect with a bounded region before measuring.
    """

    def __init__(self, iota: OrderMap, t: float, side: str = "after", dim: int = 2):
        if side not in ("after", "upto"):
            raise GeometryError("side must be 'after' or 'upto'")
        self.iota, self.t, self.side, self.dim = iota, float(t), side, dim

    def __repr__(self):
        return f"OrderCut({self.iota.rule}, {self.t}, {self.side})"

    def contains(self, pts):
        v = self.iota.value(_as_points(pts, self.dim))
        return v > self.t if self.side == "after" else v <= self.t


def is_empty(R: Region | None, resolution: float | None = None) -> bool:
    """Conservative emptiness test used where an empty remainder is required."""
    if R is None or isinstance(R, Empty):
        return True
    if isinstance(R, (Box, Ball)):
        return measure(R) == 0.0
    bb = R.bbox()
    if bb is None:
        return False
    span = float(np.max(bb[1] - bb[0]))
    if span == 0:
        return True
    return measure(R, resolution or span / 64) == 0.0


class GridIndex:
    """Append-only uniform-grid hash of points for fixed-radius queries."""

    def __init__(self, cell: float, dim: int = 2):
        if cell <= 0:
            raise GeometryError("cell width must be positive")
        self.cell = float(cell)
        self.dim = dim
        self._cells: dict[tuple, list[int]] = {}
        self._pts: list[np.ndarray] = []
        self._offsets = [tuple(o) for o in np.array(
            np.meshgrid(*[[-1, 0, 1]] * dim, indexing="ij")).reshape(dim, -1).T]

    def __len__(self):
        return len(self._pts)

    def _key(self, x) -> tuple:
        return tuple(int(v) for v in np.floor(np.asarray(x) / self.cell))

    def add(self, x) -> int:
        x = np.asarray(x, dtype=float)
        i = len(self._pts)
        self._pts.append(x)
        self._cells.setdefault(self._key(x), []).append(i)
        return i

    def extend(self, pts) -> None:
        for x in np.asarray(pts, dtype=float).reshape(-1, self.dim):
            self.add(x)

    def points(self) -> np.ndarray:
        if not self._pts:
            return np.zeros((0, self.dim))
        return np.array(self._pts)

    def candidates(self, x, radius: float | None = None) -> list[int]:
        """Indices of points in the grid cells that can lie within `radius` of x."""
        r = self.cell if radius is None else radius
        if r <= self.cell:
            k = self._key(x)
            out: list[int] = []
            for o in self._offsets:
                lst = self._cells.get(tuple(a + b for a, b in zip(k, o)))
                if lst:
                    out.extend(lst)
            return out
        lo = np.floor((np.asarray(x) - r) / self.cell).astype(int)
        hi = np.floor((np.asarray(x) + r) / self.cell).astype(int)
        out = []
        for key in np.array(np.meshgrid(*[np.arange(a, b + 1) for a, b in zip(lo, hi)],
                                        indexing="ij")).reshape(self.dim, -1).T:
            lst = self._cells.get(tuple(int(v) for v in key))
            if lst:
                out.extend(lst)
        return out

    def within(self, x, radius: float | None = None) -> np.ndarray:
        """Points at Euclidean distance <= radius from x (default: the cell width)."""
        r = self.cell if radius is None else radius
        idx = self.candidates(x, r)
        if not idx:
            return np.zeros((0, self.dim))
        P = np.array([self._pts[i] for i in idx])
        d2 = ((P - x) ** 2).sum(axis=1)
        return P[d2 <= r * r]

    def within_indices(self, x, radius: float | None = None) -> np.ndarray:
        r = self.cell if radius is None else radius
        idx = self.candidates(x, r)
        if not idx:
            return np.zeros(0, dtype=int)
        idx = np.array(idx)
        P = np.array([self._pts[i] for i in idx])
        d2 = ((P - x) ** 2).sum(axis=1)
        return idx[d2 <= r * r]


def coordinate_key(x: np.ndarray) -> tuple:
    """Stable integer words encoding the exact float coordinates of a point."""
    return tuple(np.frombuffer(np.ascontiguousarray(x, dtype="<f8").tobytes(), dtype="<u4").tolist())


__all__ = [
    "GeometryError", "OrderTieError", "PointPattern", "Region", "Empty", "Everything", "Box", "Ball",
    "Complement", "Union", "Intersection", "Difference", "OrderCut", "OrderMap", "dist", "measure",
    "order_sort", "ball_volume", "is_empty", "coordinate_key", "GridIndex",
]
