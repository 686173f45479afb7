"""Standard Poisson-embedding thinning, the retention threshold, a rejection
oracle, and the GNZ balance diagnostic.

The retention threshold p(x, R, psi') of a candidate x facing the remainder R
equals E[kappa(x, Y + psi')] with Y ~ X(R, psi').  Only Y inside B_{r0}(x)
matters, so one draw is produced by thinning a fresh Poisson sample of
B_{r0}(x) ∩ R, ordered by distance to x, with the same rule applied
recursively.  Because the candidate's mark is independent of that draw,
thresholding the mark against it gives the exact Bernoulli retention law.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .geometry import (Ball, Difference, GridIndex, Intersection, OrderCut, OrderMap, PointPattern, Region,
                       coordinate_key, is_empty, measure)
from .models import InteractionModel
from .rng import RngStream, as_stream


class BudgetExceeded(RuntimeError):
    """A rejection-iteration or recursion-work budget was exhausted."""


@dataclass(frozen=True)
class RetentionMode:
    kind: str = "exact_recursive"
    samples: int = 1

    def __post_init__(self):
        if self.kind not in ("exact_recursive", "plugin_estimate", "terminal_only"):
            raise ValueError(f"unknown retention mode {self.kind!r}")
        if self.samples < 1:
            raise ValueError("plugin_estimate needs M >= 1")

    @classmethod
    def parse(cls, text: str) -> "RetentionMode":
        t = text.strip()
        if t in ("exact", "exact_recursive", "thinning-exact"):
            return cls("exact_recursive")
        if t in ("terminal", "terminal_only"):
            return cls("terminal_only")
        for prefix in ("thinning-plugin:", "plugin:", "plugin_estimate:"):
            if t.startswith(prefix):
                return cls("plugin_estimate", int(t[len(prefix):]))
        raise ValueError(f"cannot parse retention mode {text!r}")


EXACT = RetentionMode()
DEFAULT_WORK_BUDGET = 1_000_000


class _Work:
    __slots__ = ("left",)

    def __init__(self, budget: int):
        self.left = budget

    def tick(self):
        self.left -= 1
        if self.left < 0:
            raise BudgetExceeded("recursion work budget exceeded in retention estimate")


def _nbrs(index: GridIndex, extra: np.ndarray, x: np.ndarray, r0: float) -> np.ndarray:
    near = index.within(x, r0) if len(index) else np.zeros((0, len(x)))
    if len(extra):
        d2 = ((extra - x) ** 2).sum(axis=1)
        e = extra[d2 <= r0 * r0]
        if len(e):
            near = np.vstack([near, e]) if len(near) else e
    return near


def _estimate(model: InteractionModel, x: np.ndarray, R: Region, index: GridIndex, extra: np.ndarray,
              gen: np.random.Generator, work: _Work) -> float:
    """One draw of kappa(x, Y + boundary) with Y ~ X(R, boundary) near x."""
    r0 = model.r0
    k0 = model.kappa_local(x, _nbrs(index, extra, x, r0))
    if k0 == 0.0 or model.constant:
        return k0
    work.tick()
    kmax = model.kappa_max
    d = len(x)
    n = gen.poisson(kmax * (2 * r0) ** d)
    if n == 0:
        return k0
    pts = x + gen.uniform(-r0, r0, size=(n, d))
    marks = gen.uniform(0.0, kmax, size=n)
    d2 = ((pts - x) ** 2).sum(axis=1)
    keep = d2 <= r0 * r0
    if keep.any():
        idx = np.flatnonzero(keep)
        keep[idx] = R.contains(pts[idx])
    if not keep.any():
        return k0
    idx = np.flatnonzero(keep)
    idx = idx[np.argsort(d2[idx], kind="stable")]
    kept: list[np.ndarray] = []
    for i in idx:
        y, u = pts[i], marks[i]
        ext = np.vstack([extra] + [k[None, :] for k in kept]) if kept else extra
        ky = model.kappa_local(y, _nbrs(index, ext, y, r0))
        if u > ky:
            # the estimate never exceeds kappa(y, boundary) for repulsive models
            continue
        Ry = Difference(R, Ball(x, math.sqrt(d2[i])))
        if u <= _estimate(model, y, Ry, index, ext, gen, work):
            kept.append(y)
    if not kept:
        return k0
    return model.kappa_local(x, _nbrs(index, np.vstack([extra] + [k[None, :] for k in kept]), x, r0))


def _as_index(model: InteractionModel, psi, dim: int) -> GridIndex:
    if isinstance(psi, GridIndex):
        return psi
    index = GridIndex(model.r0, dim)
    if psi is not None:
        pts = psi.coords if isinstance(psi, PointPattern) else np.asarray(psi, float).reshape(-1, dim)
        index.extend(pts)
    return index


def retention_probability(model: InteractionModel, x, remainder: Region | None, psi_prime=None,
                          mode: RetentionMode = EXACT, rng=0, work_budget: int = DEFAULT_WORK_BUDGET) -> float:
    """Retention threshold of x facing `remainder` with boundary psi_prime.

    terminal_only needs an empty remainder and returns kappa(x, psi') exactly.
    exact_recursive returns one unbiased draw; plugin_estimate averages M draws.
    `rng` is an RngStream (or integer seed) reserved for this decision.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    index = _as_index(model, psi_prime, len(x))
    k0 = model.kappa_local(x, _nbrs(index, np.zeros((0, len(x))), x, model.r0))
    if mode.kind == "terminal_only":
        if not is_empty(remainder):
            raise ValueError("terminal_only requires an empty remainder")
        return k0
    if k0 == 0.0 or model.constant or remainder is None:
        return k0
    gen = as_stream(rng).generator()
    empty = np.zeros((0, len(x)))
    work = _Work(work_budget)
    draws = [_estimate(model, x, remainder, index, empty, gen, work) for _ in range(mode.samples)]
    return float(sum(draws) / len(draws))


def sample_marked_poisson(Q: Region, kappa_max: float, rng) -> PointPattern:
    """Poisson(kappa_max) points on Q with i.i.d. uniform marks on [0, kappa_max]."""
    bb = Q.bbox()
    if bb is None:
        raise ValueError("sample_marked_poisson needs a bounded region")
    lo, hi = bb
    gen = as_stream(rng).generator()
    vol = float(np.prod(hi - lo))
    d = len(lo)
    if vol == 0:
        return PointPattern.empty(d, marked=True, kappa_max=kappa_max)
    n = gen.poisson(kappa_max * vol)
    pts = lo + (hi - lo) * gen.random((n, d))
    marks = gen.uniform(0.0, kappa_max, size=n)
    keep = Q.contains(pts) if n else np.zeros(0, dtype=bool)
    return PointPattern(pts[keep], marks[keep], kappa_max, dim=d, check=False)


class PoissonCarrier:
    """Marked Poisson process on R^d generated lazily per unit cell.

    Cell (i_1..i_d) is drawn from the stream keyed by its integer index, so a
    restriction to any bounded region is the same regardless of which window
    asked for it first.
    """

    def __init__(self, rng, kappa_max: float, dim: int = 2, cell: float = 1.0):
        self.stream = as_stream(rng)
        self.kappa_max = float(kappa_max)
        self.dim = dim
        self.cell = float(cell)
        self._cache: dict[tuple, tuple[np.ndarray, np.ndarray]] = {}

    def _cell(self, key: tuple):
        got = self._cache.get(key)
        if got is None:
            gen = self.stream.child("cell", *key).generator()
            n = gen.poisson(self.kappa_max * self.cell**self.dim)
            pts = (np.asarray(key, float) + gen.random((n, self.dim))) * self.cell
            marks = gen.uniform(0.0, self.kappa_max, size=n)
            got = (pts, marks)
            self._cache[key] = got
        return got

    def sample(self, region: Region) -> PointPattern:
        bb = region.bbox()
        if bb is None:
            raise ValueError("carrier restriction needs a bounded region")
        lo = np.floor(bb[0] / self.cell).astype(int)
        hi = np.floor(bb[1] / self.cell).astype(int)
        P, M = [], []
        grid = np.array(np.meshgrid(*[np.arange(a, b + 1) for a, b in zip(lo, hi)], indexing="ij"))
        for key in grid.reshape(self.dim, -1).T:
            pts, marks = self._cell(tuple(int(v) for v in key))
            if len(pts):
                P.append(pts)
                M.append(marks)
        if not P:
            return PointPattern.empty(self.dim, marked=True, kappa_max=self.kappa_max)
        P, M = np.vstack(P), np.concatenate(M)
        keep = region.contains(P)
        return PointPattern(P[keep], M[keep], self.kappa_max, dim=self.dim, check=False)


def thin_in_order(model: InteractionModel, order: list, coords: np.ndarray, marks: np.ndarray,
                  remainders: Callable[[int], Region | None], psi, mode: RetentionMode, rng,
                  work_budget: int = DEFAULT_WORK_BUDGET) -> np.ndarray:
    """Thin candidates in the given order; returns a boolean retention vector.

    remainders(i) gives the remainder region Q_(x_i, inf) for candidate i.
    Auxiliary randomness for candidate x comes from rng.child('aux', key(x)).
    """
    stream = as_stream(rng)
    d = coords.shape[1] if coords.ndim == 2 else model.dim
    index = _as_index(model, psi, d)
    keep = np.zeros(len(coords), dtype=bool)
    empty = np.zeros((0, d))
    for i in order:
        x, u = coords[i], marks[i]
        k0 = model.kappa_local(x, _nbrs(index, empty, x, model.r0))
        if mode.kind == "terminal_only":
            R = remainders(i)
            if not is_empty(R):
                raise ValueError("terminal_only requires an empty remainder")
            p = k0
        elif u > k0:
            continue
        elif model.constant:
            p = k0
        else:
            R = remainders(i)
            if R is None:
                p = k0
            else:
                gen = stream.child("aux", *coordinate_key(x)).generator()
                work = _Work(work_budget)
                draws = [_estimate(model, x, R, index, empty, gen, work) for _ in range(mode.samples)]
                p = sum(draws) / len(draws)
        if u <= p:
            keep[i] = True
            index.add(x)
    return keep


def standard_thinning(model: InteractionModel, Q: Region, psi, iota: OrderMap, phi_star: PointPattern,
                      mode: RetentionMode = EXACT, rng=0, work_budget: int = DEFAULT_WORK_BUDGET) -> PointPattern:
    """Thin the marked carrier phi_star on Q in iota order against boundary psi."""
    if not phi_star.is_marked:
        raise ValueError("phi_star must carry marks")
    coords, marks = phi_star.coords, phi_star.marks
    if len(coords) and not Q.contains(coords).all():
        raise ValueError("carrier points outside Q")
    if len(marks) and marks.max() > model.kappa_max * (1 + 1e-12):
        raise ValueError("carrier marks exceed kappa_max")
    order = iota.argsort(coords)
    vals = iota.value(coords) if len(coords) else np.zeros(0)
    d = phi_star.dim

    def remainder(i):
        return Intersection(Q, OrderCut(iota, vals[i], "after", dim=d))

    keep = thin_in_order(model, list(order), coords, marks, remainder, psi, mode, rng, work_budget)
    return PointPattern(coords[keep], dim=d, check=False)


def thinning_sample(model: InteractionModel, Q: Region, psi=None, rng=0, mode: RetentionMode = EXACT,
                    iota: OrderMap | None = None, work_budget: int = DEFAULT_WORK_BUDGET) -> PointPattern:
    """Draw X(Q, psi) by thinning a fresh carrier (stream rng.child('carrier'))."""
    stream = as_stream(rng)
    carrier = sample_marked_poisson(Q, model.kappa_max, stream.child("carrier"))
    return standard_thinning(model, Q, psi, iota or OrderMap(), carrier, mode, stream.child("aux"), work_budget)


def rejection_sample_gibbs(model: InteractionModel, Q: Region, psi=None, rng=0, max_iter: int = 1_000_000,
                           warn_iter: int | None = 10_000) -> PointPattern:
    """Exact X(Q, psi): accept a Poisson(kappa_max) proposal with probability
    density / kappa_max^n."""
    gen = as_stream(rng).generator()
    bb = Q.bbox()
    if bb is None:
        raise ValueError("rejection sampling needs a bounded region")
    lo, hi = bb
    d = len(lo)
    vol = float(np.prod(hi - lo))
    kmax = model.kappa_max
    bnd = _as_index(model, psi, d)
    empty = np.zeros((0, d))
    for it in range(1, max_iter + 1):
        n = gen.poisson(kmax * vol)
        pts = lo + (hi - lo) * gen.random((n, d))
        if n:
            pts = pts[Q.contains(pts)]
        ratio = 1.0
        if not model.constant:
            for i in range(len(pts)):
                ratio *= model.kappa_local(pts[i], np.vstack([pts[:i], _nbrs(bnd, empty, pts[i], model.r0)])) / kmax
                if ratio == 0.0:
                    break
        else:
            ratio = (model.alpha0 / kmax) ** len(pts)
        if gen.random() <= ratio:
            if warn_iter is not None and it > warn_iter:
                warnings.warn(f"rejection sampler needed {it} iterations", RuntimeWarning, stacklevel=2)
            return PointPattern(pts, dim=d, check=False)
    raise BudgetExceeded(f"rejection sampler exceeded {max_iter} iterations")


# ---------------------------------------------------------------------------
# GNZ balance


@dataclass
class GNZResult:
    lhs: float
    rhs: float
    se_lhs: float
    se_rhs: float
    se_diff: float
    reps: int

    @property
    def combined_se(self) -> float:
        return math.sqrt(self.se_lhs**2 + self.se_rhs**2)

    @property
    def z(self) -> float:
        s = self.combined_se
        return 0.0 if s == 0 else (self.lhs - self.rhs) / s


def f_one(x, pts) -> float:
    return 1.0


def no_neighbour(r: float):
    """f(x, phi) = 1 if no other point of phi lies within distance r of x."""

    def f(x, pts):
        if len(pts) == 0:
            return 1.0
        d2 = ((pts - x) ** 2).sum(axis=1)
        return float(np.count_nonzero(d2 <= r * r) <= 1)  # x itself is in pts

    return f


def gnz_balance(model: InteractionModel, Q: Region, f: Callable, reps: int, rng=0, psi=None,
                sampler: str = "thinning", inner: int = 1) -> GNZResult:
    """Monte Carlo estimates of both sides of the finite-volume GNZ equation.

    lhs: E sum_{x in X} f(x, X).  rhs: |Q| E[f(U, X + U) kappa(U, X + psi)]
    with U uniform on Q (`inner` draws per replicate).
    """
    stream = as_stream(rng)
    d = model.dim
    lo, hi = Q.bbox()
    volQ = measure(Q)
    bnd_pts = np.zeros((0, d)) if psi is None else (
        psi.coords if isinstance(psi, PointPattern) else np.asarray(psi, float).reshape(-1, d))
    L = np.empty(reps)
    Rv = np.empty(reps)
    for r in range(reps):
        s = stream.child("rep", r)
        if sampler == "rejection":
            X = rejection_sample_gibbs(model, Q, psi, s.child("rejection"))
        else:
            X = thinning_sample(model, Q, psi, s)
        pts = X.coords
        L[r] = sum(f(pts[i], pts) for i in range(len(pts)))
        gen = s.child("gnz-u").generator()
        acc = 0.0
        m = 0
        while m < inner:
            u = lo + (hi - lo) * gen.random(d)
            if not Q.contains(u)[0]:
                continue
            m += 1
            with_u = np.vstack([pts, u[None, :]])
            val = f(u, with_u)
            if val:
                acc += val * model.kappa_local(u, np.vstack([pts, bnd_pts]))
        Rv[r] = volQ * acc / inner
    sd = lambda a: float(a.std(ddof=1) / math.sqrt(len(a))) if len(a) > 1 else 0.0
    return GNZResult(float(L.mean()), float(Rv.mean()), sd(L), sd(Rv), sd(L - Rv), reps)


__all__ = [
    "BudgetExceeded", "RetentionMode", "EXACT", "retention_probability", "sample_marked_poisson",
    "PoissonCarrier", "standard_thinning", "thinning_sample", "thin_in_order", "rejection_sample_gibbs",
    "gnz_balance", "GNZResult", "f_one", "no_neighbour", "RngStream",
]
