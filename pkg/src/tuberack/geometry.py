"""Convex collision primitives.

Two routes are provided. ``gjk_distance`` handles arbitrary oriented boxes
and cylinders through their support mappings. The ``upright_*`` functions
are exact separating-axis tests for the common case where every box is
only yawed and every cylinder is vertical; they are vectorized over many
obstacles at once.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

_EPS = 1e-12


@dataclass(frozen=True)
class Box:
    center: np.ndarray
    rotation: np.ndarray  # columns are the box axes in world
    half: np.ndarray

    def support(self, d: np.ndarray) -> np.ndarray:
        local = self.rotation.T @ d
        return self.center + self.rotation @ (np.where(local >= 0.0, 1.0, -1.0) * self.half)

    def aabb(self) -> tuple[np.ndarray, np.ndarray]:
        ext = np.abs(self.rotation) @ self.half
        return self.center - ext, self.center + ext

    def contains(self, p: np.ndarray) -> np.ndarray:
        local = (np.atleast_2d(p) - self.center) @ self.rotation
        return np.all(np.abs(local) <= self.half, axis=1)

    def vertices(self) -> np.ndarray:
        signs = np.array(list(itertools.product((-1.0, 1.0), repeat=3)))
        return self.center + (signs * self.half) @ self.rotation.T


@dataclass(frozen=True)
class Cylinder:
    center: np.ndarray
    axis: np.ndarray  # unit
    radius: float
    half_height: float

    def support(self, d: np.ndarray) -> np.ndarray:
        along = float(d @ self.axis)
        perp = d - along * self.axis
        n = math.sqrt(float(perp @ perp))
        p = self.center + math.copysign(self.half_height, along) * self.axis
        if n > _EPS:
            p = p + (self.radius / n) * perp
        return p

    def aabb(self) -> tuple[np.ndarray, np.ndarray]:
        a = self.axis
        ext = np.abs(a) * self.half_height + self.radius * np.sqrt(np.clip(1.0 - a * a, 0.0, 1.0))
        return self.center - ext, self.center + ext


def _closest_on_simplex(pts: list[np.ndarray]) -> tuple[np.ndarray, list[np.ndarray]]:
    """Min-norm point of the convex hull of <= 4 points, with its supporting subset."""
    best = None
    best_set: list[np.ndarray] = []
    n = len(pts)
    for k in range(1, n + 1):
        for idx in itertools.combinations(range(n), k):
            sub = [pts[i] for i in idx]
            if k == 1:
                lam = np.array([1.0])
            else:
                p0 = sub[0]
                e = np.array([p - p0 for p in sub[1:]])  # (k-1, 3)
                gram = e @ e.T
                rhs = -(e @ p0)
                try:
                    mu = np.linalg.solve(gram, rhs)
                except np.linalg.LinAlgError:
                    continue
                lam = np.concatenate(([1.0 - mu.sum()], mu))
                if np.any(lam < -1e-12):
                    continue
            v = sum(l * p for l, p in zip(lam, sub))
            d2 = float(v @ v)
            if best is None or d2 < float(best @ best) - 1e-15:
                best, best_set = v, sub
    return best, best_set


def gjk_distance(a: Box | Cylinder, b: Box | Cylinder, max_iter: int = 64, rel_tol: float = 1e-9) -> float:
    """Euclidean distance between two convex shapes (0 when they overlap)."""

    def support(d: np.ndarray) -> np.ndarray:
        return a.support(d) - b.support(-d)

    d0 = a.center - b.center
    if float(d0 @ d0) < _EPS:
        d0 = np.array([1.0, 0.0, 0.0])
    v = support(-d0)
    simplex = [v]
    for _ in range(max_iter):
        vv = float(v @ v)
        if vv < 1e-18:
            return 0.0
        w = support(-v)
        if vv - float(v @ w) <= rel_tol * max(vv, 1.0):
            return math.sqrt(vv)
        simplex.append(w)
        v, simplex = _closest_on_simplex(simplex)
        if len(simplex) == 4:
            return 0.0
    return math.sqrt(float(v @ v))


def aabb_overlap(a: tuple[np.ndarray, np.ndarray], b: tuple[np.ndarray, np.ndarray]) -> bool:
    return bool(np.all(a[0] < b[1]) and np.all(b[0] < a[1]))


def intersects(a: Box | Cylinder, b: Box | Cylinder) -> bool:
    if not aabb_overlap(a.aabb(), b.aabb()):
        return False
    return gjk_distance(a, b) <= 1e-9


# ---------------------------------------------------------------------------
# upright fast path
# ---------------------------------------------------------------------------


def upright_box_vs_cylinders(
    bc: np.ndarray, byaw_cs: tuple[float, float], bhalf: np.ndarray,
    cx: np.ndarray, cy: np.ndarray, r: np.ndarray, z0: np.ndarray, z1: np.ndarray,
) -> bool:
    """Yawed box against vertical cylinders: z-interval overlap plus rectangle-circle test."""
    if cx.size == 0:
        return False
    zlo, zhi = bc[2] - bhalf[2], bc[2] + bhalf[2]
    zmask = (z0 < zhi) & (z1 > zlo)
    if not zmask.any():
        return False
    c, s = byaw_cs
    dx = cx[zmask] - bc[0]
    dy = cy[zmask] - bc[1]
    u = c * dx + s * dy
    v = -s * dx + c * dy
    du = u - np.clip(u, -bhalf[0], bhalf[0])
    dv = v - np.clip(v, -bhalf[1], bhalf[1])
    return bool(np.any(du * du + dv * dv < r[zmask] ** 2))


def upright_box_vs_boxes(
    bc: np.ndarray, byaw_cs: tuple[float, float], bhalf: np.ndarray,
    ox: np.ndarray, oy: np.ndarray, oz: np.ndarray, ocos: np.ndarray, osin: np.ndarray,
    ohx: np.ndarray, ohy: np.ndarray, ohz: np.ndarray,
) -> bool:
    """Yawed box against yawed boxes: z-interval plus 2D separating-axis test on four axes."""
    if ox.size == 0:
        return False
    zmask = np.abs(oz - bc[2]) < (ohz + bhalf[2])
    if not zmask.any():
        return False
    ox, oy = ox[zmask], oy[zmask]
    oc, os_ = ocos[zmask], osin[zmask]
    hx, hy = ohx[zmask], ohy[zmask]
    c, s = byaw_cs
    dx = ox - bc[0]
    dy = oy - bc[1]
    sep = np.zeros(ox.shape, dtype=bool)
    # axes of the query box
    for ax, ay, ha in ((c, s, bhalf[0]), (-s, c, bhalf[1])):
        proj_o = hx * np.abs(oc * ax + os_ * ay) + hy * np.abs(-os_ * ax + oc * ay)
        sep |= np.abs(dx * ax + dy * ay) >= ha + proj_o
    # axes of each obstacle box
    for ax, ay, ho in ((oc, os_, hx), (-os_, oc, hy)):
        proj_b = bhalf[0] * np.abs(c * ax + s * ay) + bhalf[1] * np.abs(-s * ax + c * ay)
        sep |= np.abs(dx * ax + dy * ay) >= ho + proj_b
    return bool(np.any(~sep))


def upright_cylinder_vs_cylinders(
    px: float, py: float, pr: float, pz0: float, pz1: float,
    cx: np.ndarray, cy: np.ndarray, r: np.ndarray, z0: np.ndarray, z1: np.ndarray,
) -> bool:
    if cx.size == 0:
        return False
    zmask = (z0 < pz1) & (z1 > pz0)
    if not zmask.any():
        return False
    dx = cx[zmask] - px
    dy = cy[zmask] - py
    rr = r[zmask] + pr
    return bool(np.any(dx * dx + dy * dy < rr * rr))


def upright_cylinder_vs_boxes(
    px: float, py: float, pr: float, pz0: float, pz1: float,
    ox: np.ndarray, oy: np.ndarray, oz: np.ndarray, ocos: np.ndarray, osin: np.ndarray,
    ohx: np.ndarray, ohy: np.ndarray, ohz: np.ndarray,
) -> bool:
    if ox.size == 0:
        return False
    zmask = ((oz - ohz) < pz1) & ((oz + ohz) > pz0)
    if not zmask.any():
        return False
    dx = px - ox[zmask]
    dy = py - oy[zmask]
    oc, os_ = ocos[zmask], osin[zmask]
    u = oc * dx + os_ * dy
    v = -os_ * dx + oc * dy
    hx, hy = ohx[zmask], ohy[zmask]
    du = u - np.clip(u, -hx, hx)
    dv = v - np.clip(v, -hy, hy)
    return bool(np.any(du * du + dv * dv < pr * pr))
