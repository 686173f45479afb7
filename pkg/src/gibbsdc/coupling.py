"""Stopping-set explorations and the disagreement couplings built on them.

Both couplings are thinnings whose candidate order and remainder regions are
decided by an exploration of the Poisson carrier alone.  An exploration is
computed once as a *schedule* (candidate order plus a snapshot of the explored
set S after each step) and then thinned against one or more boundary
conditions with shared marks and shared keyed auxiliary randomness.

The explored set is kept as a union of atoms: the band B_{r0}(B) ∩ Q (possibly
cut by an ordering value), an ordering prefix, anchor balls below a rank
threshold, and a growing list of closed balls.  Snapshots refer to prefixes of
that list, so each remainder Q minus S_n is a cheap membership predicate.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .geometry import Box, Complement, GridIndex, Intersection, OrderMap, PointPattern, Region
from .models import InteractionModel
from .percolation import boolean_clusters, connects
from .rng import as_stream
from .sampler import DEFAULT_WORK_BUDGET, EXACT, PoissonCarrier, RetentionMode, thin_in_order


class CertificateError(RuntimeError):
    """No window up to n_max certified the infinite-volume restriction."""


# ---------------------------------------------------------------------------
# anchors


@dataclass(frozen=True)
class GridAnchor:
    """Anchor grid delta * Z^d, ordered outer shell first (sup-norm descending,
    then lexicographic)."""

    delta: float

    @classmethod
    def default(cls, r0: float, d: int = 2) -> "GridAnchor":
        return cls(r0 / (2 * math.sqrt(d)))

    def check(self, r0: float, d: int):
        # the cube of side 2 delta must fit into B_{r0}
        if not (0 < self.delta and self.delta * math.sqrt(d) <= r0 * (1 + 1e-12)):
            raise ValueError("anchor spacing too coarse for the interaction range")


class _AnchorRanker:
    def __init__(self, anchors: GridAnchor, r0: float, d: int, extent: float):
        self.delta, self.r0, self.d = anchors.delta, r0, d
        reach = int(math.ceil(r0 / self.delta)) + 1
        grids = np.meshgrid(*[np.arange(-reach, reach + 1)] * d, indexing="ij")
        self.offsets = np.stack(grids, axis=-1).reshape(-1, d)
        self.K = int(math.ceil(extent / self.delta)) + reach + 2
        self.W = 2 * self.K + 1

    def encode(self, k: np.ndarray) -> np.ndarray:
        """Integer rank of anchor indices k (..., d); smaller = earlier."""
        sup = np.abs(k).max(axis=-1)
        r = (self.K - sup).astype(np.int64)
        for i in range(self.d):
            r = r * self.W + (k[..., i] + self.K)
        return r

    def first_anchor(self, pts: np.ndarray):
        """Rank and coordinates of the earliest anchor within r0 of each point."""
        n = len(pts)
        if n == 0:
            return np.zeros(0, dtype=np.int64), np.zeros((0, self.d))
        base = np.floor(pts / self.delta).astype(np.int64)
        k = base[:, None, :] + self.offsets[None, :, :]
        c = k * self.delta
        d2 = ((c - pts[:, None, :]) ** 2).sum(axis=-1)
        ranks = self.encode(k)
        big = np.iinfo(np.int64).max
        ranks = np.where(d2 <= self.r0 * self.r0, ranks, big)
        j = ranks.argmin(axis=1)
        rows = np.arange(n)
        return ranks[rows, j], c[rows, j]


# ---------------------------------------------------------------------------
# explored sets and remainders


class ExploredSet:
    """Append-only description of the explored region S (see module docstring)."""

    def __init__(self, Q: Region, B: Region | None, r0: float, dim: int, iota: OrderMap | None = None,
                 ranker: _AnchorRanker | None = None):
        self.Q, self.B, self.r0, self.dim = Q, B, r0, dim
        self.iota = iota
        self.ranker = ranker
        self.centers: list[np.ndarray] = []
        self.radii: list[float] = []
        self.band_only: list[bool] = []
        self.grid = GridIndex(r0, dim)

    def add_ball(self, c, radius: float, band_only: bool = False) -> int:
        self.centers.append(np.asarray(c, float))
        self.radii.append(float(radius))
        self.band_only.append(bool(band_only))
        return self.grid.add(c)

    @property
    def n_balls(self) -> int:
        return len(self.centers)

    def in_band(self, pts) -> np.ndarray:
        if self.B is None:
            return np.zeros(len(pts), dtype=bool)
        return self.B.point_distance(pts) <= self.r0

    def contains(self, snap: "Snapshot", pts: np.ndarray) -> np.ndarray:
        n = len(pts)
        out = np.zeros(n, dtype=bool)
        if n == 0:
            return out
        band = self.in_band(pts) if (snap.band_cap is not None or snap.anchor_phase) else None
        vals = None
        if snap.band_cap is not None:
            if snap.band_cap == math.inf:
                out |= band
            else:
                vals = self.iota.value(pts)
                out |= band & (vals <= snap.band_cap)
        if snap.prefix > -math.inf:
            vals = self.iota.value(pts) if vals is None else vals
            out |= vals <= snap.prefix
        if snap.anchor_phase:
            todo = np.flatnonzero(~out)
            if len(todo):
                ranks, _ = self.ranker.first_anchor(pts[todo])
                hit = ranks < snap.anchor_rank
                if snap.anchor_phase == 1:
                    hit &= band[todo]
                else:
                    hit |= band[todo]
                out[todo] = hit
        if snap.n_balls:
            for i in np.flatnonzero(~out):
                p = pts[i]
                for j in self.grid.candidates(p, self.r0):
                    if j >= snap.n_balls:
                        continue
                    c = self.centers[j]
                    r = self.radii[j]
                    if ((p - c) ** 2).sum() > r * r:
                        continue
                    if self.band_only[j] and not (band[i] if band is not None else self.in_band(p[None])[0]):
                        continue
                    if j >= snap.n_full:
                        if vals is None:
                            vals = self.iota.value(pts)
                        if vals[i] > snap.partial_cap:
                            continue
                    out[i] = True
                    break
        return out


@dataclass(frozen=True)
class Snapshot:
    n_balls: int = 0
    n_full: int = 0  # balls [n_full, n_balls) count only where iota <= partial_cap
    partial_cap: float = math.inf
    band_cap: float | None = None  # None: band not explored; inf: whole band
    prefix: float = -math.inf
    anchor_phase: int = 0  # 0: no anchors, 1: band-restricted anchors, 2: all anchors
    anchor_rank: int = 0


class Remainder(Region):
    """Q minus the explored set at a snapshot."""

    def __init__(self, S: ExploredSet, snap: Snapshot):
        self.S, self.snap, self.dim = S, snap, S.dim

    def contains(self, pts):
        p = np.asarray(pts, dtype=float).reshape(-1, self.dim)
        out = self.S.Q.contains(p)
        if out.any():
            idx = np.flatnonzero(out)
            out[idx] = ~self.S.contains(self.snap, p[idx])
        return out

    def bbox(self):
        return self.S.Q.bbox()


@dataclass
class Step:
    kind: str  # 'anchor', 'point', 'exhaust', 'band', 'growth', 'jump'
    center: np.ndarray | None
    radius: float
    candidate: int  # carrier index decided at this step, -1 if none
    snapshot: Snapshot


@dataclass
class StoppingState:
    """Exploration record: explored-set atoms and the ordered steps."""

    explored: ExploredSet
    steps: list = field(default_factory=list)
    order: list = field(default_factory=list)  # candidate indices in decision order
    snap_of: dict = field(default_factory=dict)  # candidate -> snapshot after its step
    retained: np.ndarray | None = None

    def remainder(self, i: int) -> Remainder:
        return Remainder(self.explored, self.snap_of[i])

    def final_snapshot(self) -> Snapshot:
        return self.steps[-1].snapshot if self.steps else Snapshot()


def _carrier_arrays(phi_star: PointPattern, Q: Region):
    if not phi_star.is_marked:
        raise ValueError("carrier must carry marks")
    P, M = phi_star.coords, phi_star.marks
    if len(P) and not Q.contains(P).all():
        raise ValueError("carrier points outside Q")
    return P, M


# ---------------------------------------------------------------------------
# radial exploration


def radial_schedule(Q: Region, B: Region | None, P: np.ndarray, r0: float,
                    anchors: GridAnchor | None = None) -> StoppingState:
    """Radial exploration of the carrier locations P inside Q.

    Anchors whose ball meets the band B_{r0}(B) ∩ Q are handled first with
    their candidate sets restricted to the band; then all anchors in order.
    From each start point the whole cluster is explored breadth first, each
    explored point's ball being swept by distance until exhausted.
    """
    d = P.shape[1] if P.ndim == 2 and P.shape[1] else (Q.dim)
    anchors = anchors or GridAnchor.default(r0, d)
    anchors.check(r0, d)
    lo, hi = Q.bbox()
    extent = float(np.max(np.abs(np.concatenate([lo, hi]))))
    ranker = _AnchorRanker(anchors, r0, d, extent)
    S = ExploredSet(Q, B, r0, d, ranker=ranker)
    state = StoppingState(S)
    n = len(P)
    explored = np.zeros(n, dtype=bool)
    tree = cKDTree(P) if n else None
    rank, anchor_xy = ranker.first_anchor(P)
    band = S.in_band(P) if n else np.zeros(0, dtype=bool)
    ad = np.sqrt(((P - anchor_xy) ** 2).sum(axis=1)) if n else np.zeros(0)

    phase = 1
    anchor_t = 0

    def snap():
        return Snapshot(n_balls=S.n_balls, n_full=S.n_balls, anchor_phase=phase, anchor_rank=anchor_t,
                        band_cap=(math.inf if phase == 2 and B is not None else None))

    def decide(i: int, kind: str, c, rho):
        s = snap()
        state.steps.append(Step(kind, c, rho, i, s))
        state.order.append(i)
        state.snap_of[i] = s
        explored[i] = True

    def explore_cluster(i0: int):
        queue = deque([i0])
        while queue:
            x = queue.popleft()
            while True:
                nb = [j for j in tree.query_ball_point(P[x], r0) if not explored[j]]
                if not nb:
                    S.add_ball(P[x], r0)
                    state.steps.append(Step("exhaust", P[x], r0, -1, snap()))
                    break
                dd = ((P[nb] - P[x]) ** 2).sum(axis=1)
                y = nb[int(np.argmin(dd))]
                rho = math.sqrt(float(dd.min()))
                S.add_ball(P[x], rho)
                decide(y, "point", P[x], rho)
                queue.append(y)

    for ph in (1, 2):
        phase = ph
        if ph == 1:
            pool = np.flatnonzero(band)
        else:
            pool = np.flatnonzero(~explored)
        pool = pool[np.lexsort((ad[pool], rank[pool]))] if len(pool) else pool
        for i in pool:
            if explored[i]:
                continue
            anchor_t = int(rank[i])
            c = anchor_xy[i]
            S.add_ball(c, ad[i], band_only=(ph == 1))
            decide(int(i), "anchor", c, float(ad[i]))
            explore_cluster(int(i))
        anchor_t = np.iinfo(np.int64).max if ph == 2 else 0
    return state


# ---------------------------------------------------------------------------
# cluster exploration


def cluster_schedule(Q: Region, B: Region | None, P: np.ndarray, r0: float,
                     iota: OrderMap | None = None) -> StoppingState:
    """Cluster-growth exploration: band first in iota order, then repeated
    growth by r0-balls around the newly explored points, jumping to the
    iota-smallest unexplored point when the growth saturates."""
    d = P.shape[1] if P.ndim == 2 and P.shape[1] else Q.dim
    iota = iota or OrderMap()
    S = ExploredSet(Q, B, r0, d, iota=iota)
    state = StoppingState(S)
    n = len(P)
    explored = np.zeros(n, dtype=bool)
    tree = cKDTree(P) if n else None
    vals = iota.value(P) if n else np.zeros(0)
    band = S.in_band(P) if n else np.zeros(0, dtype=bool)

    band_cap = None if B is None else -math.inf
    prefix = -math.inf
    n_full = 0
    partial_cap = math.inf

    def snap():
        return Snapshot(n_balls=S.n_balls, n_full=n_full, partial_cap=partial_cap, band_cap=band_cap,
                        prefix=prefix)

    def decide(i: int, kind: str):
        s = snap()
        state.steps.append(Step(kind, None, 0.0, i, s))
        state.order.append(i)
        state.snap_of[i] = s
        explored[i] = True

    pending: list[int] = []
    if B is not None:
        bidx = np.flatnonzero(band)
        bidx = bidx[np.argsort(vals[bidx], kind="stable")]
        for i in bidx:
            band_cap = float(vals[i])
            decide(int(i), "band")
        band_cap = math.inf
        pending = [int(i) for i in bidx]
    while True:
        while pending:
            cand: set[int] = set()
            for x in pending:
                cand.update(j for j in tree.query_ball_point(P[x], r0) if not explored[j])
            for x in pending:
                S.add_ball(P[x], r0)
            cand_l = sorted(cand, key=lambda j: vals[j])
            for y in cand_l:
                partial_cap = float(vals[y])
                decide(y, "growth")
            n_full = S.n_balls
            partial_cap = math.inf
            pending = cand_l
        rest = np.flatnonzero(~explored)
        if not len(rest):
            break
        x = int(rest[np.argmin(vals[rest])])
        prefix = float(vals[x])
        decide(x, "jump")
        pending = [x]
    state.steps.append(Step("final", None, 0.0, -1, snap()))
    return state


# ---------------------------------------------------------------------------
# thinning along a schedule


def thin_schedule(model: InteractionModel, state: StoppingState, phi_star: PointPattern, psi,
                  mode: RetentionMode = EXACT, rng=0, work_budget: int = DEFAULT_WORK_BUDGET) -> np.ndarray:
    P, M = phi_star.coords, phi_star.marks
    return thin_in_order(model, state.order, P, M, state.remainder, psi, mode, as_stream(rng).child("aux"),
                         work_budget)


@dataclass
class CouplingTrace:
    carrier: PointPattern
    keep_a: np.ndarray
    keep_b: np.ndarray
    labels: np.ndarray
    flagged: np.ndarray  # sorted labels of clusters within r0 of B
    dist_to_B: np.ndarray  # per-cluster minimum distance to B
    state: StoppingState

    @property
    def output_a(self) -> PointPattern:
        return PointPattern(self.carrier.coords[self.keep_a], dim=self.carrier.dim, check=False)

    @property
    def output_b(self) -> PointPattern:
        return PointPattern(self.carrier.coords[self.keep_b], dim=self.carrier.dim, check=False)

    @property
    def disagreement(self) -> np.ndarray:
        return np.flatnonzero(self.keep_a != self.keep_b)

    @property
    def violations(self) -> int:
        """Disagreeing points outside the flagged clusters (must be 0)."""
        dis = self.disagreement
        if not len(dis):
            return 0
        return int((~np.isin(self.labels[dis], self.flagged)).sum())

    @property
    def confined(self) -> bool:
        return self.violations == 0

    def cluster_agreement(self) -> dict:
        out = {}
        for lab in range(len(self.dist_to_B)):
            m = self.labels == lab
            out[lab] = bool(np.array_equal(self.keep_a[m], self.keep_b[m]))
        return out

    def disagrees_on(self, A: Region) -> bool:
        dis = self.disagreement
        return bool(len(dis) and A.contains(self.carrier.coords[dis]).any())


def _trace(model, Q, B, phi_star, keep_a, keep_b, state) -> CouplingTrace:
    P = phi_star.coords
    r0 = model.r0
    if len(P):
        part = boolean_clusters(P, r0)
        labels = part.labels
        dB = B.point_distance(P) if B is not None else np.full(len(P), np.inf)
        ncl = part.n_clusters
        dist_cl = np.full(ncl, np.inf)
        np.minimum.at(dist_cl, labels, dB)
        flagged = np.flatnonzero(dist_cl <= r0)
    else:
        labels = np.zeros(0, dtype=np.int64)
        dist_cl = np.zeros(0)
        flagged = np.zeros(0, dtype=np.int64)
    return CouplingTrace(phi_star, keep_a, keep_b, labels, flagged, dist_cl, state)


def cluster_coupling(model: InteractionModel, Q: Region, B: Region, psi, psi_prime, phi_star: PointPattern,
                     rng=0, mode: RetentionMode = EXACT, iota: OrderMap | None = None,
                     work_budget: int = DEFAULT_WORK_BUDGET) -> CouplingTrace:
    """Cluster-based coupling of X(Q, psi) and X(Q, psi_prime) on one carrier."""
    P, _ = _carrier_arrays(phi_star, Q)
    state = cluster_schedule(Q, B, P, model.r0, iota)
    ka = thin_schedule(model, state, phi_star, psi, mode, rng, work_budget)
    kb = thin_schedule(model, state, phi_star, psi_prime, mode, rng, work_budget)
    state.retained = ka
    return _trace(model, Q, B, phi_star, ka, kb, state)


def radial_coupling(model: InteractionModel, Q: Region, B: Region | None, psi, phi_star: PointPattern,
                    anchors: GridAnchor | None = None, mode: RetentionMode = EXACT, rng=0,
                    work_budget: int = DEFAULT_WORK_BUDGET) -> tuple[PointPattern, StoppingState]:
    """Radial thinning of the carrier on Q with boundary psi."""
    P, _ = _carrier_arrays(phi_star, Q)
    state = radial_schedule(Q, B, P, model.r0, anchors)
    keep = thin_schedule(model, state, phi_star, psi, mode, rng, work_budget)
    state.retained = keep
    return PointPattern(P[keep], dim=phi_star.dim, check=False), state


def radial_pair(model: InteractionModel, Q: Region, B: Region, psi, psi_prime, phi_star: PointPattern,
                anchors: GridAnchor | None = None, mode: RetentionMode = EXACT, rng=0,
                work_budget: int = DEFAULT_WORK_BUDGET) -> CouplingTrace:
    """Radial coupling of the two boundary conditions on one shared schedule."""
    P, _ = _carrier_arrays(phi_star, Q)
    state = radial_schedule(Q, B, P, model.r0, anchors)
    ka = thin_schedule(model, state, phi_star, psi, mode, rng, work_budget)
    kb = thin_schedule(model, state, phi_star, psi_prime, mode, rng, work_budget)
    state.retained = ka
    return _trace(model, Q, B, phi_star, ka, kb, state)


# ---------------------------------------------------------------------------
# windows and infinite volume


def _window(n: float, d: int, U: Region | None) -> Region:
    Qn = Box.cube(n, d)
    return Qn if U is None else Intersection(Qn, U)


def _sup_extent(A: Region) -> float:
    lo, hi = A.bbox()
    return float(np.max(np.abs(np.concatenate([lo, hi]))))


@dataclass
class ConsistencyResult:
    event: bool  # no cluster links A to the outside of Q_{n - 4 r0}
    equal: bool  # the two windows agree on A

    @property
    def implication(self) -> bool:
        return (not self.event) or self.equal

    def __bool__(self):
        return self.event and self.equal


def _radial_window(model, n, U, psi, carrier: PoissonCarrier, anchors, mode, rng, work_budget):
    d = carrier.dim
    W = _window(n, d, U)
    phi_star = carrier.sample(W)
    B = Complement(Box.cube(n, d))
    out, state = radial_coupling(model, W, B, psi, phi_star, anchors, mode, rng, work_budget)
    return out, phi_star


def radial_consistency_check(model: InteractionModel, U: Region | None, psi, A: Region, n: float, m: float,
                             carrier: PoissonCarrier, rng=0, anchors: GridAnchor | None = None,
                             mode: RetentionMode = EXACT, work_budget: int = DEFAULT_WORK_BUDGET
                             ) -> ConsistencyResult:
    """Compare radial thinnings on Q_n ∩ U and Q_m ∩ U restricted to A."""
    if n > m:
        raise ValueError("need n <= m")
    d = carrier.dim
    if _sup_extent(A) > (n - 4 * model.r0) / 2:
        raise ValueError("A must lie inside Q_{n - 4 r0}")
    Wn = _window(n, d, U)
    event = not connects(A, Complement(Box.cube(n - 4 * model.r0, d)), carrier.sample(Wn).coords, model.r0)
    out_n, _ = _radial_window(model, n, U, psi, carrier, anchors, mode, rng, work_budget)
    out_m, _ = _radial_window(model, m, U, psi, carrier, anchors, mode, rng, work_budget)
    equal = out_n.restrict(A).same_points(out_m.restrict(A))
    return ConsistencyResult(bool(event), bool(equal))


def infinite_volume_approx(model: InteractionModel, A: Region, psi, U: Region | None, n_max: float,
                           carrier: PoissonCarrier, rng=0, anchors: GridAnchor | None = None,
                           mode: RetentionMode = EXACT, n_start: float | None = None, step: float = 1.0,
                           work_budget: int = DEFAULT_WORK_BUDGET) -> tuple[PointPattern, float]:
    """Radial thinning on the first window Q_n certified by {A not linked to
    the outside of Q_{n - 4 r0}}; returns (output on A, n)."""
    d = carrier.dim
    r0 = model.r0
    n = n_start if n_start is not None else math.ceil(2 * _sup_extent(A) + 4 * r0 + 1e-9)
    while n <= n_max:
        Wn = _window(n, d, U)
        pts = carrier.sample(Wn).coords
        if not connects(A, Complement(Box.cube(n - 4 * r0, d)), pts, r0):
            out, _ = _radial_window(model, n, U, psi, carrier, anchors, mode, rng, work_budget)
            return out.restrict(A), float(n)
        n += step
    raise CertificateError(f"no certificate up to n_max={n_max}")


__all__ = [
    "GridAnchor", "ExploredSet", "Snapshot", "Remainder", "Step", "StoppingState", "CouplingTrace",
    "radial_schedule", "cluster_schedule", "thin_schedule", "cluster_coupling", "radial_coupling",
    "radial_pair", "radial_consistency_check", "infinite_volume_approx", "ConsistencyResult",
    "CertificateError",
]
