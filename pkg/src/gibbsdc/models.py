"""Papangelou conditional intensities for Poisson, Strauss, hard-sphere and
area-interaction models, and the unnormalised configuration density."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import PointPattern, ball_volume

KINDS = ("poisson", "strauss", "hard_sphere", "area_interaction")
_ALIASES = {"area": "area_interaction", "hardsphere": "hard_sphere", "hard-sphere": "hard_sphere"}


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class InteractionModel:
    """Conditional intensity with finite range r0 and domination bound kappa_max.

    For the area-interaction model, V(x, phi) is the measure of the part of
    B_{r0/2}(x) not covered by the r0/2-balls of the points of phi, counted on
    the fixed lattice grid_resolution * Z^d (default r0/200).
    """

    kind: str = "poisson"
    alpha0: float = 1.0
    r0: float = 0.3
    beta: float = 1.0
    gamma: float = 1.0
    grid_resolution: float | None = None
    dim: int = 2

    def __post_init__(self):
        kind = _ALIASES.get(self.kind, self.kind)
        object.__setattr__(self, "kind", kind)
        if kind not in KINDS:
            raise ModelError(f"unknown model kind {self.kind!r}")
        if not (self.alpha0 > 0 and math.isfinite(self.alpha0)):
            raise ModelError("alpha0 must be positive and finite")
        if not (self.r0 > 0 and math.isfinite(self.r0)):
            raise ModelError("r0 must be positive and finite")
        if self.dim not in (1, 2, 3):
            raise ModelError("dim must be 1, 2 or 3")
        if kind == "strauss" and not (self.beta >= 0):
            raise ModelError("beta must be >= 0")
        if kind == "area_interaction":
            if not (0 < self.gamma <= 1):
                raise ModelError("gamma must lie in (0, 1]")
            if self.grid_resolution is None:
                object.__setattr__(self, "grid_resolution", self.r0 / 200)
            if not self.grid_resolution > 0:
                raise ModelError("grid_resolution must be positive")

    # -- bounds ---------------------------------------------------------------
    @property
    def kappa_max(self) -> float:
        if self.kind != "area_interaction":
            return self.alpha0
        # lattice cells of side h centred at lattice points in B_{r0/2}(x) are
        # disjoint and lie in B_{r0/2 + h sqrt(d)/2}(x)
        h = self.grid_resolution
        vmax = ball_volume(self.r0 / 2 + h * math.sqrt(self.dim) / 2, self.dim)
        return self.alpha0 * self.gamma ** (-vmax)

    @property
    def constant(self) -> bool:
        """True when kappa does not depend on the configuration."""
        return (self.kind == "poisson" or (self.kind == "strauss" and self.beta == 0)
                or (self.kind == "area_interaction" and self.gamma == 1))

    # -- evaluation -------------------------------------------------------------
    def kappa_local(self, x: np.ndarray, nbrs: np.ndarray) -> float:
        """kappa(x, nbrs); nbrs may include points farther than r0 (they are ignored)."""
        if self.kind == "poisson":
            return self.alpha0
        if len(nbrs):
            d2 = ((nbrs - x) ** 2).sum(axis=1)
            nbrs = nbrs[d2 <= self.r0 * self.r0]
        if self.kind == "hard_sphere":
            return 0.0 if len(nbrs) else self.alpha0
        if self.kind == "strauss":
            return self.alpha0 * math.exp(-self.beta * len(nbrs)) if len(nbrs) else self.alpha0
        if self.gamma == 1:
            return self.alpha0
        return self.alpha0 * self.gamma ** (-self.uncovered_area(x, nbrs))

    def uncovered_area(self, x: np.ndarray, nbrs: np.ndarray) -> float:
        """Lattice measure of B_{r0/2}(x) minus the r0/2-balls around nbrs."""
        h = self.grid_resolution
        rho = self.r0 / 2
        g = _lattice_ball(np.asarray(x, float), rho, h)
        if len(nbrs):
            keep = np.ones(len(g), dtype=bool)
            for y in nbrs:
                keep &= ((g - y) ** 2).sum(axis=1) > rho * rho
            count = int(keep.sum())
        else:
            count = len(g)
        return count * h ** len(x)

    def energy(self, phi) -> float:
        """Energy E(phi) with kappa(x, psi) = exp(-(E(psi + x) - E(psi)))."""
        pts = _coords(phi, self.dim)
        n = len(pts)
        if self.kind == "poisson" or n == 0:
            return -n * math.log(self.alpha0)
        diff = pts[:, None, :] - pts[None, :, :]
        d2 = (diff**2).sum(axis=-1)
        close = np.triu(d2 <= self.r0**2, k=1)
        if self.kind == "hard_sphere":
            return math.inf if close.any() else -n * math.log(self.alpha0)
        if self.kind == "strauss":
            return -n * math.log(self.alpha0) + self.beta * int(close.sum())
        h = self.grid_resolution
        rho = self.r0 / 2
        lat = np.unique(np.vstack([_lattice_ball(p, rho, h) for p in pts]).round(12), axis=0)
        return -n * math.log(self.alpha0) + len(lat) * h**self.dim * math.log(self.gamma)


def _coords(phi, dim: int) -> np.ndarray:
    if isinstance(phi, PointPattern):
        return phi.coords
    a = np.asarray(phi, dtype=float)
    return a.reshape(-1, dim)


def _lattice_ball(x: np.ndarray, rho: float, h: float) -> np.ndarray:
    """Points of h Z^d in the closed ball B_rho(x)."""
    lo = np.ceil((x - rho) / h).astype(np.int64)
    hi = np.floor((x + rho) / h).astype(np.int64)
    axes = [np.arange(a, b + 1) * h for a, b in zip(lo, hi)]
    g = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(x))
    return g[((g - x) ** 2).sum(axis=1) <= rho * rho]


def kappa(model: InteractionModel, x, phi) -> float:
    """Papangelou conditional intensity kappa(x, phi); x must not belong to phi."""
    x = np.asarray(x, dtype=float).reshape(-1)
    return model.kappa_local(x, _coords(phi, len(x)))


def configuration_density(model: InteractionModel, phi, psi=None) -> float:
    """prod_i kappa(x_i, {x_1..x_{i-1}} + psi) in the given enumeration of phi."""
    pts = _coords(phi, model.dim)
    bnd = np.zeros((0, model.dim)) if psi is None else _coords(psi, model.dim)
    out = 1.0
    for i in range(len(pts)):
        k = model.kappa_local(pts[i], np.vstack([pts[:i], bnd]))
        out *= k
        if out == 0.0:
            return 0.0
    return out


__all__ = ["InteractionModel", "ModelError", "kappa", "configuration_density", "KINDS"]
