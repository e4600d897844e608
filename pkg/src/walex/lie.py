"""Minimal 3D orientation calculus on unit quaternions.

Conventions used throughout the package:

* ``Rotation`` is an element of the rotation group stored as a unit
  quaternion ``(w, x, y, z)``.  ``rotate(R, v)`` multiplies the rotation
  matrix of ``R`` onto ``v``.
* Increments compose on the left in the frame the rotation maps into:
  ``boxplus(R, d) = exp_map(d) * R`` and
  ``boxminus(A, B) = log_map(A * B.inverse())``, so
  ``boxminus(boxplus(R, d), R) == d`` for ``|d| < pi``.
* ``exp_jacobian`` returns the matrix ``G`` satisfying
  ``exp_map(phi + d) ~= boxplus(exp_map(phi), G(phi) @ d)`` to first order.

Angles below ``SMALL_ANGLE`` switch all trigonometric coefficient
evaluations to second-order Taylor series to avoid division by a near-zero
angle.
"""

from __future__ import annotations

import numpy as np

SMALL_ANGLE = 1e-8


def skew(v) -> np.ndarray:
    """Cross-product matrix: ``skew(v) @ w == cross(v, w)``."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


class Rotation:
    """Orientation stored as a unit quaternion ``(w, x, y, z)``.

    Instances are treated as immutable values; every operation returns a
    new object and renormalizes, keeping the quaternion norm within 1e-12.
    """

    __slots__ = ("q",)

    def __init__(self, q):
        q = np.asarray(q, dtype=float)
        if q.shape != (4,):
            raise ValueError("quaternion must have shape (4,)")
        n = float(np.sqrt(q @ q))
        if n == 0.0 or not np.isfinite(n):
            raise ValueError("quaternion must be finite and nonzero")
        q = q / n
        if q[0] < 0.0:  # fix sign ambiguity for repeatable storage
            q = -q
        self.q = q
        self.q.setflags(write=False)

    @staticmethod
    def identity() -> "Rotation":
        return Rotation(np.array([1.0, 0.0, 0.0, 0.0]))

    @staticmethod
    def _wrap(q) -> "Rotation":
        # fast path for internally produced quaternions (already unit up to
        # rounding); renormalizes only when drift becomes measurable
        n2 = q @ q
        if abs(n2 - 1.0) > 1e-13:
            q = q / np.sqrt(n2)
        if q[0] < 0.0:
            q = -q
        rot = object.__new__(Rotation)
        rot.q = q
        return rot

    def matrix(self) -> np.ndarray:
        w, x, y, z = self.q
        ww, xx, yy, zz = w * w, x * x, y * y, z * z
        wx, wy, wz = w * x, w * y, w * z
        xy, xz, yz = x * y, x * z, y * z
        return np.array(
            [
                [ww + xx - yy - zz, 2.0 * (xy - wz), 2.0 * (xz + wy)],
                [2.0 * (xy + wz), ww - xx + yy - zz, 2.0 * (yz - wx)],
                [2.0 * (xz - wy), 2.0 * (yz + wx), ww - xx - yy + zz],
            ]
        )

    def inverse(self) -> "Rotation":
        w, x, y, z = self.q
        return Rotation._wrap(np.array([w, -x, -y, -z]))

    def __mul__(self, other: "Rotation") -> "Rotation":
        w1, x1, y1, z1 = self.q
        w2, x2, y2, z2 = other.q
        return Rotation._wrap(
            np.array(
                [
                    w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
                    w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
                    w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
                    w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
                ]
            )
        )

    def __repr__(self):
        return f"Rotation({self.q.tolist()})"


def rotate(rot: Rotation, v) -> np.ndarray:
    """Apply the rotation to a 3-vector (norm preserving)."""
    return rot.matrix() @ np.asarray(v, dtype=float)


def exp_map(axis_angle) -> Rotation:
    """Rotation by ``|axis_angle|`` radians about ``axis_angle`` direction."""
    phi = np.asarray(axis_angle, dtype=float)
    angle = float(np.sqrt(phi @ phi))
    if angle < SMALL_ANGLE:
        # sin(a/2)/a ~= 1/2 - a^2/48
        vec = phi * (0.5 - angle * angle / 48.0)
        w = 1.0 - angle * angle / 8.0
    else:
        vec = phi * (np.sin(0.5 * angle) / angle)
        w = np.cos(0.5 * angle)
    return Rotation._wrap(np.concatenate(([w], vec)))


def log_map(rot: Rotation) -> np.ndarray:
    """Inverse of :func:`exp_map`; returns the axis-angle with ``|.| <= pi``."""
    q = rot.q if rot.q[0] >= 0.0 else -rot.q
    w = min(q[0], 1.0)
    vn = float(np.sqrt(q[1] * q[1] + q[2] * q[2] + q[3] * q[3]))
    if vn < SMALL_ANGLE:
        # 2/w * (1 - |v|^2/(3 w^2)) ~= 2 for w ~= 1
        return q[1:] * (2.0 / w) * (1.0 - vn * vn / (3.0 * w * w))
    angle = 2.0 * np.arctan2(vn, w)
    return q[1:] * (angle / vn)


def boxplus(rot: Rotation, delta) -> Rotation:
    return exp_map(delta) * rot


def boxminus(rot_a: Rotation, rot_b: Rotation) -> np.ndarray:
    return log_map(rot_a * rot_b.inverse())


def exp_jacobian(axis_angle) -> np.ndarray:
    """First-order sensitivity of the exponential map.

    Returns ``G`` with ``exp_map(phi + d) ~= boxplus(exp_map(phi), G @ d)``.
    The rotation axis is always an eigenvector with eigenvalue 1.
    """
    phi = np.asarray(axis_angle, dtype=float)
    angle = float(np.sqrt(phi @ phi))
    px = skew(phi)
    if angle < SMALL_ANGLE:
        c1 = 0.5 - angle * angle / 24.0
        c2 = 1.0 / 6.0 - angle * angle / 120.0
    else:
        c1 = (1.0 - np.cos(angle)) / (angle * angle)
        c2 = (angle - np.sin(angle)) / (angle ** 3)
    return np.eye(3) + c1 * px + c2 * (px @ px)


def exp_jacobian_inv(axis_angle) -> np.ndarray:
    """Inverse of :func:`exp_jacobian`, computed in closed form."""
    phi = np.asarray(axis_angle, dtype=float)
    angle = float(np.sqrt(phi @ phi))
    px = skew(phi)
    if angle < SMALL_ANGLE:
        c = 1.0 / 12.0 + angle * angle / 720.0
    else:
        c = 1.0 / (angle * angle) - (1.0 + np.cos(angle)) / (
            2.0 * angle * np.sin(angle)
        )
    return np.eye(3) - 0.5 * px + c * (px @ px)


def rotation_z(angle: float) -> Rotation:
    """Rotation about the z axis, shorthand for ``exp_map((0, 0, angle))``."""
    return exp_map(np.array([0.0, 0.0, float(angle)]))


def rot_z_matrix(angle: float) -> np.ndarray:
    """Matrix of :func:`rotation_z` without going through a quaternion."""
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def exp_matrix(axis_angle) -> np.ndarray:
    """Rotation matrix of :func:`exp_map` via the Rodrigues formula."""
    phi = np.asarray(axis_angle, dtype=float)
    angle_sq = float(phi @ phi)
    px = skew(phi)
    if angle_sq < SMALL_ANGLE * SMALL_ANGLE:
        return np.eye(3) + px + 0.5 * (px @ px)
    angle = np.sqrt(angle_sq)
    return (
        np.eye(3)
        + (np.sin(angle) / angle) * px
        + ((1.0 - np.cos(angle)) / angle_sq) * (px @ px)
    )
