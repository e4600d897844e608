"""Closest-point queries between convex collision primitives.

Primitives are spheres, capsules and oriented boxes.  Spheres and capsules
are inflated core shapes (point / segment), so the query runs on the core
convex sets via support-function descent (GJK with a subset-enumeration
distance subalgorithm, fine for desk-scale problem sizes) and the radii
are peeled off afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MAX_ITERS = 100
_EPS = 1e-12


@dataclass(frozen=True)
class Sphere:
    center: np.ndarray
    radius: float

    def support(self, direction):
        return np.asarray(self.center, dtype=float)

    @property
    def inflation(self):
        return self.radius


@dataclass(frozen=True)
class Capsule:
    point_a: np.ndarray
    point_b: np.ndarray
    radius: float

    def support(self, direction):
        a = np.asarray(self.point_a, dtype=float)
        b = np.asarray(self.point_b, dtype=float)
        return a if direction @ a >= direction @ b else b

    @property
    def inflation(self):
        return self.radius


@dataclass(frozen=True)
class Box:
    center: np.ndarray
    rotation: np.ndarray      # world_from_box, 3x3
    half_extents: np.ndarray

    def support(self, direction):
        local = np.asarray(self.rotation, dtype=float).T @ direction
        corner = np.where(local >= 0.0, 1.0, -1.0) * np.asarray(self.half_extents, dtype=float)
        return np.asarray(self.center, dtype=float) + np.asarray(self.rotation) @ corner

    @property
    def inflation(self):
        return 0.0


@dataclass(frozen=True)
class ClosestPoints:
    point_a: np.ndarray       # witness on the first body surface
    point_b: np.ndarray       # witness on the second body surface
    distance: float           # separation; <= 0 when penetrating
    normal: np.ndarray        # unit direction from body a to body b, or None
    penetrating: bool


def _closest_on_simplex(points):
    """Min-norm point of the convex hull of up to 4 points.

    Enumerates face subsets and solves the affine KKT system for each;
    returns (closest, lam, subset_indices).
    """
    n = len(points)
    best = None
    for mask in range(1, 1 << n):
        idx = [i for i in range(n) if mask >> i & 1]
        mat = np.array([points[i] for i in idx]).T  # 3 x k
        k = len(idx)
        kkt = np.zeros((k + 1, k + 1))
        kkt[:k, :k] = 2.0 * mat.T @ mat
        kkt[:k, k] = 1.0
        kkt[k, :k] = 1.0
        rhs = np.zeros(k + 1)
        rhs[k] = 1.0
        sol, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
        lam = sol[:k]
        if np.any(lam < -1e-10):
            continue
        lam = np.clip(lam, 0.0, None)
        total = lam.sum()
        if total <= 0.0:
            continue
        lam = lam / total
        point = mat @ lam
        norm = point @ point
        if best is None or norm < best[0] - 1e-15:
            best = (norm, point, lam, idx)
    _, point, lam, idx = best
    return point, lam, idx


def _gjk_core(shape_a, shape_b):
    """Closest points between the core convex sets (no inflation).

    Returns (witness_a, witness_b, distance, overlapping).
    """
    direction = np.array([1.0, 0.0, 0.0])
    w = shape_a.support(direction) - shape_b.support(-direction)
    simplex = [(w, shape_a.support(direction), shape_b.support(-direction))]
    for _ in range(_MAX_ITERS):
        points = [entry[0] for entry in simplex]
        v, lam, idx = _closest_on_simplex(points)
        simplex = [simplex[i] for i in idx]
        dist = np.linalg.norm(v)
        if dist < _EPS or len(simplex) == 4:
            return None, None, 0.0, True
        direction = -v
        sup_a = shape_a.support(direction)
        sup_b = shape_b.support(-direction)
        w_new = sup_a - sup_b
        # no further progress toward the origin
        if dist * dist - direction @ w_new <= 1e-10 * max(1.0, dist * dist):
            witness_a = sum(l * s[1] for l, s in zip(lam, simplex))
            witness_b = sum(l * s[2] for l, s in zip(lam, simplex))
            return witness_a, witness_b, dist, False
        if any(np.linalg.norm(w_new - entry[0]) < _EPS for entry in simplex):
            witness_a = sum(l * s[1] for l, s in zip(lam, simplex))
            witness_b = sum(l * s[2] for l, s in zip(lam, simplex))
            return witness_a, witness_b, dist, False
        simplex.append((w_new, sup_a, sup_b))
    points = [entry[0] for entry in simplex]
    v, lam, idx = _closest_on_simplex(points)
    simplex = [simplex[i] for i in idx]
    witness_a = sum(l * s[1] for l, s in zip(lam, simplex))
    witness_b = sum(l * s[2] for l, s in zip(lam, simplex))
    return witness_a, witness_b, float(np.linalg.norm(v)), False


def closest_points(shape_a, shape_b) -> ClosestPoints:
    """Minimum-distance witness pair between two convex primitives.

    ``distance`` is the surface separation (core distance minus radii);
    ``penetrating`` is set when it is non-positive, in which case the
    caller should fall back to its last valid normal if ``normal`` is None.
    """
    core_a, core_b, core_dist, overlap = _gjk_core(shape_a, shape_b)
    inflation = shape_a.inflation + shape_b.inflation
    if overlap:
        return ClosestPoints(
            point_a=None, point_b=None, distance=-inflation, normal=None, penetrating=True
        )
    if core_dist < _EPS:
        return ClosestPoints(
            point_a=core_a, point_b=core_b, distance=-inflation, normal=None, penetrating=True
        )
    normal = (core_b - core_a) / core_dist
    point_a = core_a + normal * shape_a.inflation
    point_b = core_b - normal * shape_b.inflation
    distance = core_dist - inflation
    return ClosestPoints(
        point_a=point_a,
        point_b=point_b,
        distance=float(distance),
        normal=normal,
        penetrating=bool(distance <= 0.0),
    )


def _fibonacci_sphere(count):
    k = np.arange(count) + 0.5
    phi = np.arccos(1.0 - 2.0 * k / count)
    theta = np.pi * (1.0 + np.sqrt(5.0)) * k
    return np.column_stack(
        [np.sin(phi) * np.cos(theta), np.sin(phi) * np.sin(theta), np.cos(phi)]
    )


def sample_surface(shape, count):
    """Structured dense surface sampling, used as a brute-force oracle."""
    if isinstance(shape, Sphere):
        return np.asarray(shape.center) + shape.radius * _fibonacci_sphere(count)
    if isinstance(shape, Capsule):
        a = np.asarray(shape.point_a, dtype=float)
        b = np.asarray(shape.point_b, dtype=float)
        caps = _fibonacci_sphere(count // 3)
        n_side = count - 2 * (count // 3)
        n_circ = max(8, int(np.sqrt(n_side)))
        n_axial = max(2, n_side // n_circ)
        theta = np.linspace(0.0, 2.0 * np.pi, n_circ, endpoint=False)
        axis = b - a
        length = np.linalg.norm(axis)
        axis_dir = axis / length if length > 0 else np.array([0.0, 0.0, 1.0])
        ortho = np.eye(3)[np.argmin(np.abs(axis_dir))]
        u = np.cross(axis_dir, ortho)
        u /= np.linalg.norm(u)
        v = np.cross(axis_dir, u)
        rim = shape.radius * (np.outer(np.cos(theta), u) + np.outer(np.sin(theta), v))
        t_vals = np.linspace(0.0, 1.0, n_axial)
        side = np.concatenate([a + t * axis + rim for t in t_vals])
        return np.concatenate([a + shape.radius * caps, b + shape.radius * caps, side])
    if isinstance(shape, Box):
        half = np.asarray(shape.half_extents, dtype=float)
        per_face = max(4, count // 6)
        m = max(2, int(np.ceil(np.sqrt(per_face))))
        grid = np.linspace(-1.0, 1.0, m)  # inclusive: edges and corners sampled
        uu, vv = np.meshgrid(grid, grid)
        uv = np.column_stack([uu.ravel(), vv.ravel()])
        pts = []
        for axis in range(3):
            others = [j for j in range(3) if j != axis]
            for sign in (1.0, -1.0):
                local = np.zeros((uv.shape[0], 3))
                local[:, axis] = sign * half[axis]
                local[:, others[0]] = uv[:, 0] * half[others[0]]
                local[:, others[1]] = uv[:, 1] * half[others[1]]
                pts.append(np.asarray(shape.center) + local @ np.asarray(shape.rotation).T)
        return np.concatenate(pts)
    raise TypeError(f"unsupported shape {type(shape)!r}")
