"""Monte Carlo experiment engine: replicated functionals on growing windows,
variance scaling, Kolmogorov distance to the normal law, and paired
disagreement/connection decay experiments."""
from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .coupling import CertificateError, GridAnchor, infinite_volume_approx, radial_pair
from .functionals import InfiniteScoreError, ScoreSpec, knn_stabilization_radius, score_sum
from .geometry import Box, PointPattern, Region
from .models import InteractionModel
from .percolation import connects
from .rng import RngStream
from .sampler import (BudgetExceeded, PoissonCarrier, RetentionMode, rejection_sample_gibbs,
                      thinning_sample)

ROUTES = ("auto", "rejection", "thinning-exact", "thinning-plugin", "infinite_volume_approx")


def worker_count(workers: int | None = None) -> int:
    """Worker count: explicit value, else GIBBSDC_THREADS, else 1."""
    if workers is None:
        raw = os.environ.get("GIBBSDC_THREADS", "1").strip() or "1"
        try:
            workers = int(raw)
        except ValueError as exc:
            raise ValueError(f"GIBBSDC_THREADS must be an integer, got {raw!r}") from exc
    if workers < 1:
        raise ValueError("worker count must be >= 1")
    return workers


def ordered_map(fn, tasks: list, workers: int | None = None) -> list:
    """map(fn, tasks) in task order, optionally across processes."""
    w = worker_count(workers)
    if w == 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    chunk = max(1, len(tasks) // (4 * w))
    with ProcessPoolExecutor(max_workers=w) as ex:
        return list(ex.map(fn, tasks, chunksize=chunk))


def replicate_seed(master: int, n: float, rep: int) -> int:
    """63-bit seed determined by (master seed, window size, replicate index)."""
    n_code = int(round(float(n) * 1000))
    ss = np.random.SeedSequence(int(master), spawn_key=(n_code, int(rep)))
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


# ---------------------------------------------------------------------------
# tables


@dataclass
class ExperimentRow:
    n: float
    rep: int
    seed: int
    value: float
    flag: str = ""  # '' for a valid row, else the failure kind
    audit: int = -1  # points whose stabilization ball leaves the sampled window (-1: not audited)
    points: int = 0


@dataclass
class ExperimentTable:
    rows: list = field(default_factory=list)
    dim: int = 2

    def sizes(self) -> list:
        return sorted({r.n for r in self.rows})

    def values(self, n: float) -> np.ndarray:
        return np.array([r.value for r in self.rows if r.n == n and not r.flag], dtype=float)

    def excluded(self, n: float) -> int:
        return sum(1 for r in self.rows if r.n == n and r.flag)

    def aggregates(self) -> list[dict]:
        out = []
        for n in self.sizes():
            v = self.values(n)
            var = float(v.var(ddof=1)) if len(v) >= 2 else math.nan
            ks = math.nan
            if len(v) >= 2 and var > 0:
                ks = ks_distance((v - v.mean()) / math.sqrt(var))
            out.append(dict(n=n, count=len(v), excluded=self.excluded(n),
                            mean=float(v.mean()) if len(v) else math.nan, var=var,
                            norm_var=var / n**self.dim, ks=ks))
        return out

    def to_csv_lines(self) -> list[str]:
        lines = ["n,rep,seed,value,flag,audit,points"]
        for r in self.rows:
            lines.append(f"{_fmt(r.n)},{r.rep},{r.seed},{_fmt(r.value)},{r.flag},{r.audit},{r.points}")
        return lines


def _fmt(v: float) -> str:
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


# ---------------------------------------------------------------------------
# replicated functionals


def default_margin(model: InteractionModel, spec: ScoreSpec) -> float:
    """max(r0, 3 x the k-th neighbour distance of a Poisson(alpha0) pattern)."""
    k = spec.k if spec.kind.startswith("knn") else 1
    d = model.dim
    # E[k-th NN distance] for a Poisson process: Gamma(k + 1/d) / Gamma(k) / (alpha0 * omega_d)^(1/d)
    omega = math.pi ** (d / 2) / math.gamma(d / 2 + 1)
    rk = math.exp(math.lgamma(k + 1 / d) - math.lgamma(k)) / (model.alpha0 * omega) ** (1 / d)
    return max(model.r0, 3 * rk)


@dataclass(frozen=True)
class _Task:
    model: InteractionModel
    spec: ScoreSpec
    n: float
    rep: int
    seed: int
    route: str
    variant: str
    margin: float
    audit: bool


def resolve_route(route: str, model: InteractionModel, volume: float) -> str:
    if route != "auto":
        return route
    if model.constant or model.kappa_max * volume <= 4:
        return "rejection"
    return "thinning-exact"


def sample_window(model: InteractionModel, W: Box, route: str, rng: RngStream) -> PointPattern:
    """One exact (or flagged approximate) draw of the Gibbs process on W."""
    route = resolve_route(route, model, W.volume)
    if route == "rejection":
        return rejection_sample_gibbs(model, W, None, rng, warn_iter=None)
    if route == "thinning-exact":
        return thinning_sample(model, W, None, rng)
    if route.startswith("thinning-plugin"):
        mode = RetentionMode.parse(route)
        return thinning_sample(model, W, None, rng, mode=mode)
    if route == "infinite_volume_approx":
        carrier = PoissonCarrier(rng.child("carrier"), model.kappa_max, model.dim)
        side = float(np.max(W.hi - W.lo))
        n_max = 2 * side + 4 * model.r0 + 20
        out, _ = infinite_volume_approx(model, W, None, None, n_max, carrier, rng.child("aux"))
        return out
    raise ValueError(f"unknown sampling route {route!r}")


def _run_task(t: _Task) -> ExperimentRow:
    rng = RngStream(t.seed)
    d = t.model.dim
    Q = Box.cube(t.n, d)
    W = Box.cube(t.n + 2 * t.margin, d) if t.variant == "full" else Q
    row = ExperimentRow(t.n, t.rep, t.seed, math.nan)
    try:
        X = sample_window(t.model, W, t.route, rng)
    except BudgetExceeded:
        row.flag = "budget"
        return row
    except CertificateError:
        row.flag = "certificate"
        return row
    row.points = int(Q.contains(X.coords).sum()) if len(X) else 0
    try:
        row.value = score_sum(X, t.spec, Q, t.variant)
    except InfiniteScoreError:
        row.flag = "inf"
        return row
    if t.audit and t.variant == "full" and t.spec.kind.startswith("knn") and d == 2:
        row.audit = stabilization_audit(X, Q, W, t.spec.k)
    return row


def stabilization_audit(X: PointPattern, Q: Region, W: Box, k: int) -> int:
    """Number of points of X in Q whose kNN stabilization ball is not inside W."""
    pts = X.coords
    if not len(pts):
        return 0
    bad = 0
    for i in np.flatnonzero(Q.contains(pts)):
        R = knn_stabilization_radius(pts, pts[i], k)
        if not (np.all(pts[i] - R >= W.lo) and np.all(pts[i] + R <= W.hi)):
            bad += 1
    return bad


def replicate_functional(model: InteractionModel, spec: ScoreSpec, n_list, reps: int, seed: int,
                         route: str = "auto", variant: str = "full", margin: float | None = None,
                         workers: int | None = None, audit: bool = False) -> ExperimentTable:
    """One functional value per (window size, replicate) on Q_n = [-n/2, n/2]^d.

    variant 'full' samples on Q_{n + 2 margin} and sums g(x, X) over X ∩ Q_n;
    'restricted' samples on Q_n and uses X ∩ Q_n only.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    if variant not in ("full", "restricted"):
        raise ValueError("variant must be 'full' or 'restricted'")
    base = route.split(":")[0]
    if base not in ROUTES:
        raise ValueError(f"unknown sampling route {route!r}")
    if margin is None:
        margin = default_margin(model, spec) if variant == "full" else 0.0
    tasks = [_Task(model, spec, float(n), rep, replicate_seed(seed, n, rep), route, variant, float(margin), audit)
             for n in n_list for rep in range(reps)]
    return ExperimentTable(ordered_map(_run_task, tasks, workers), dim=model.dim)


# ---------------------------------------------------------------------------
# normal approximation diagnostics


def normal_cdf(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.array([0.5 * math.erfc(-v / math.sqrt(2.0)) for v in x.reshape(-1)]).reshape(x.shape)


def ks_distance(samples) -> float:
    """sup_u |F_N(u) - Phi(u)| over the empirical CDF jump points."""
    x = np.sort(np.asarray(samples, dtype=float).reshape(-1))
    N = len(x)
    if N < 2:
        raise ValueError("ks_distance needs at least 2 samples")
    F = normal_cdf(x)
    i = np.arange(1, N + 1)
    return float(max(np.max(i / N - F), np.max(F - (i - 1) / N)))


def variance_scaling(table: ExperimentTable) -> list[tuple]:
    """(n, Var(H_n)/|Q_n|, relative change from the previous window size)."""
    sizes = table.sizes()
    if len(sizes) < 2:
        raise ValueError("variance_scaling needs at least two window sizes")
    out = []
    prev = None
    for agg in table.aggregates():
        nv = agg["norm_var"]
        rel = math.nan if prev is None or prev == 0 else (nv - prev) / prev
        out.append((agg["n"], nv, rel))
        prev = nv
    return out


def standardize(table: ExperimentTable) -> dict:
    """Studentized samples (H - mean) / sd per window size."""
    out = {}
    for n in table.sizes():
        v = table.values(n)
        if len(v) < 2:
            raise ValueError(f"window {n}: need at least two valid samples")
        sd = float(v.std(ddof=1))
        if not sd > 0:
            raise ValueError(f"window {n}: zero sample variance")
        out[n] = (v - v.mean()) / sd
    return out


# ---------------------------------------------------------------------------
# disagreement decay


@dataclass
class DecayComparison:
    s: float
    p_disagree: float
    p_connect: float
    se_disagree: float
    se_connect: float
    reps: int
    dominance_violations: int  # realizations with disagreement on A but no connection

    @property
    def dominated(self) -> bool:
        return self.p_disagree <= self.p_connect


def perturbation_pattern(B: Box, r0: float, kind: str, rng: RngStream) -> PointPattern:
    """Boundary perturbation on B: a lattice of spacing r0/2, a unit-rate Poisson
    sample, or nothing ('none', the control arm)."""
    d = len(B.lo)
    if kind == "none":
        return PointPattern.empty(d)
    if kind == "lattice":
        h = r0 / 2
        axes = [np.arange(lo + h / 2, hi, h) for lo, hi in zip(B.lo, B.hi)]
        g = np.array(np.meshgrid(*axes, indexing="ij")).reshape(d, -1).T
        return PointPattern(g, dim=d, check=False)
    if kind == "poisson":
        gen = rng.generator()
        n = gen.poisson(B.volume)
        return PointPattern(B.lo + (B.hi - B.lo) * gen.random((n, d)), dim=d, check=False)
    raise ValueError(f"unknown perturbation {kind!r}")


def decay_geometry(A: Box, s: float, margin: float) -> tuple[Box, Box]:
    """Window Q and perturbed box B at gap s to the right of A (B is A shifted).

    Q is the bounding box of A enlarged by `margin`, cut at the left face of B.
    """
    width = A.hi[0] - A.lo[0]
    shift = np.zeros(len(A.lo))
    shift[0] = width + s
    B = Box(A.lo + shift, A.hi + shift)
    hi = A.hi + margin
    hi[0] = B.lo[0]
    return Box(A.lo - margin, hi), B


@dataclass(frozen=True)
class _DecayTask:
    model: InteractionModel
    A: Box
    distances: tuple
    margin: float
    seed: int
    rep: int
    perturbation: str


def _run_decay(t: _DecayTask) -> list[tuple[bool, bool]]:
    stream = RngStream(t.seed).child("rep", t.rep)
    carrier = PoissonCarrier(stream.child("carrier"), t.model.kappa_max, t.model.dim)
    out = []
    for j, s in enumerate(t.distances):
        Q, B = decay_geometry(t.A, s, t.margin)
        phi_star = carrier.sample(Q)
        psi_b = perturbation_pattern(B, t.model.r0, t.perturbation, stream.child("perturb", j))
        trace = radial_pair(t.model, Q, B, None, psi_b, phi_star, GridAnchor.default(t.model.r0, t.model.dim),
                            rng=stream.child("aux", j))
        out.append((trace.disagrees_on(t.A), connects(t.A, B, phi_star.coords, t.model.r0)))
    return out


def disagreement_decay_experiment(model: InteractionModel, A: Box, distances, margin: float | None = None,
                                  reps: int = 1000, seed: int = 0, perturbation: str = "lattice",
                                  workers: int | None = None) -> list[DecayComparison]:
    """Paired radial couplings (empty boundary vs perturbation on B_s) per distance s.

    Reports the empirical probability of disagreement on A next to the
    probability that A and B_s are linked in the carrier's Boolean model.
    """
    distances = tuple(float(s) for s in distances)
    if margin is None:
        margin = max(distances) + 4 * model.r0
    tasks = [_DecayTask(model, A, distances, float(margin), int(seed), rep, perturbation) for rep in range(reps)]
    res = ordered_map(_run_decay, tasks, workers)
    rows = []
    for j, s in enumerate(distances):
        dis = np.array([r[j][0] for r in res])
        con = np.array([r[j][1] for r in res])
        pd, pc = float(dis.mean()), float(con.mean())
        rows.append(DecayComparison(s, pd, pc, math.sqrt(pd * (1 - pd) / reps), math.sqrt(pc * (1 - pc) / reps),
                                    reps, int((dis & ~con).sum())))
    return rows


__all__ = [
    "ExperimentRow", "ExperimentTable", "replicate_functional", "replicate_seed", "ks_distance", "normal_cdf",
    "variance_scaling", "standardize", "disagreement_decay_experiment", "DecayComparison", "ordered_map",
    "worker_count", "default_margin", "sample_window", "stabilization_audit", "decay_geometry",
    "perturbation_pattern", "ROUTES",
]
