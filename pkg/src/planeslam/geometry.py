"""Rigid transforms, planes and line segments.

Conventions
-----------
* ``Pose`` is a world-to-camera transform ``T_cw``: ``p_c = R @ p_w + t``.
* Twists are ordered ``(omega, v)``: rotation first, translation second.
* A plane ``(n, d)`` holds the points with ``n . p + d = 0``. The canonical
  representative has ``d > 0``; when ``|d| <= 1e-9`` the first nonzero
  component of ``n`` is made positive instead.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateRotationError

PLANE_D_TOL = 1e-9
POLE_TOL = 1e-18
_SMALL_ANGLE = 1e-5
LOG_ANGLE_LIMIT = np.pi - 1e-6


def _frozen(a, shape):
    a = np.array(a, dtype=float).reshape(shape)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Pose:
    """World-to-camera rigid transform."""

    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "R", _frozen(self.R, (3, 3)))
        object.__setattr__(self, "t", _frozen(self.t, (3,)))

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, M) -> "Pose":
        M = np.asarray(M, dtype=float)
        return cls(M[:3, :3], M[:3, 3])

    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.R
        M[:3, 3] = self.t
        return M

    def inverse(self) -> "Pose":
        return Pose(self.R.T, -self.R.T @ self.t)

    def __matmul__(self, other: "Pose") -> "Pose":
        """Composition: ``(self @ other)`` applies ``other`` first."""
        return Pose(self.R @ other.R, self.R @ other.t + self.t)

    def center(self) -> np.ndarray:
        """Camera centre in world coordinates."""
        return -self.R.T @ self.t

    def orthonormalized(self) -> "Pose":
        U, _, Vt = np.linalg.svd(self.R)
        R = U @ Vt
        if np.linalg.det(R) < 0:
            U[:, -1] *= -1
            R = U @ Vt
        return Pose(R, self.t)

    def __repr__(self):
        return f"Pose(R={self.R.tolist()}, t={self.t.tolist()})"


@dataclass(frozen=True, eq=False)
class Plane:
    normal: np.ndarray
    d: float

    def __post_init__(self):
        object.__setattr__(self, "normal", _frozen(self.normal, (3,)))
        object.__setattr__(self, "d", float(self.d))

    @classmethod
    def from_normal(cls, normal, d) -> "Plane":
        """Normalize ``normal`` (scaling ``d`` with it) and canonicalize."""
        normal = np.asarray(normal, dtype=float)
        s = np.linalg.norm(normal)
        return canonicalize(cls(normal / s, d / s))

    @classmethod
    def through_point(cls, normal, point) -> "Plane":
        n = np.asarray(normal, dtype=float)
        n = n / np.linalg.norm(n)
        return canonicalize(cls(n, -float(n @ np.asarray(point, dtype=float))))

    def signed_distance(self, p) -> np.ndarray:
        return np.asarray(p, dtype=float) @ self.normal + self.d

    def as_array(self) -> np.ndarray:
        return np.append(self.normal, self.d)

    def __repr__(self):
        return f"Plane(normal={self.normal.tolist()}, d={self.d!r})"


@dataclass(frozen=True)
class MinimalPlane:
    """Azimuth ``phi``, elevation ``psi`` of the normal, and offset ``d``."""

    phi: float
    psi: float
    d: float

    def as_array(self) -> np.ndarray:
        return np.array([self.phi, self.psi, self.d])


@dataclass(frozen=True, eq=False)
class LineSegment3D:
    start: np.ndarray
    end: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "start", _frozen(self.start, (3,)))
        object.__setattr__(self, "end", _frozen(self.end, (3,)))

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.end - self.start))

    @property
    def direction(self) -> np.ndarray:
        v = self.end - self.start
        return v / np.linalg.norm(v)

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.start + self.end)

    def transformed(self, T: Pose) -> "LineSegment3D":
        return LineSegment3D(transform_point(T, self.start), transform_point(T, self.end))


def canonicalize(plane: Plane) -> Plane:
    if plane.d > PLANE_D_TOL:
        return plane
    if plane.d < -PLANE_D_TOL:
        return Plane(-plane.normal, -plane.d)
    nz = plane.normal[plane.normal != 0.0]
    if nz.size and nz[0] < 0:
        return Plane(-plane.normal, -plane.d)
    return plane


def canonical_sign(normal, d) -> float:
    """The factor (+1 or -1) that :func:`canonicalize` would apply."""
    if d > PLANE_D_TOL:
        return 1.0
    if d < -PLANE_D_TOL:
        return -1.0
    nz = np.asarray(normal)[np.asarray(normal) != 0.0]
    return -1.0 if nz.size and nz[0] < 0 else 1.0


def transform_point(T: Pose, p) -> np.ndarray:
    return T.R @ np.asarray(p, dtype=float) + T.t


def transform_plane(T: Pose, plane: Plane) -> Plane:
    """Apply ``T^-T`` to a plane, i.e. express it in the target frame of ``T``."""
    n = T.R @ plane.normal
    return canonicalize(Plane(n, plane.d - float(T.t @ n)))


def plane_to_minimal(plane: Plane) -> MinimalPlane:
    nx, ny, nz = plane.normal
    if nx * nx + ny * ny < POLE_TOL:
        phi = 0.0
    else:
        phi = float(np.arctan2(ny, nx))
        if phi == -np.pi:  # atan2(-0.0, x<0)
            phi = np.pi
    psi = float(np.arcsin(np.clip(nz, -1.0, 1.0)))
    return MinimalPlane(phi, psi, plane.d)


def minimal_to_plane(tau: MinimalPlane) -> Plane:
    cp = np.cos(tau.psi)
    n = np.array([cp * np.cos(tau.phi), cp * np.sin(tau.phi), np.sin(tau.psi)])
    return Plane(n, tau.d)


def wrap_angle(a):
    """Wrap into (-pi, pi]."""
    w = np.mod(np.asarray(a, dtype=float) + np.pi, 2.0 * np.pi) - np.pi
    w = np.where(w == -np.pi, np.pi, w)
    return float(w) if np.ndim(w) == 0 else w


def angle_between_directions(a, b) -> float:
    """Unsigned angle between two lines given by unit directions, in [0, pi/2]."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    # atan2 stays accurate near 0, where arccos of the dot product loses ~1e-8 rad
    return float(np.arctan2(np.linalg.norm(np.cross(a, b)), abs(float(np.dot(a, b)))))


# --- Lie group -------------------------------------------------------------


def hat(w) -> np.ndarray:
    wx, wy, wz = w
    return np.array([[0.0, -wz, wy], [wz, 0.0, -wx], [-wy, wx, 0.0]])


def so3_exp(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    theta = np.linalg.norm(w)
    W = hat(w)
    if theta < _SMALL_ANGLE:
        t2 = theta * theta
        A = 1.0 - t2 / 6.0
        B = 0.5 - t2 / 24.0
    else:
        A = np.sin(theta) / theta
        B = (1.0 - np.cos(theta)) / (theta * theta)
    return np.eye(3) + A * W + B * (W @ W)


def so3_log(R) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    a = 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    s = np.linalg.norm(a)
    c = 0.5 * (np.trace(R) - 1.0)
    theta = np.arctan2(s, c)
    if theta > LOG_ANGLE_LIMIT:
        raise DegenerateRotationError(f"rotation angle {theta:.9f} too close to pi")
    if theta < _SMALL_ANGLE:
        return a * (1.0 + theta * theta / 6.0)
    return a * (theta / s)


def _left_jacobian(w):
    theta = np.linalg.norm(w)
    W = hat(w)
    if theta < _SMALL_ANGLE:
        t2 = theta * theta
        B = 0.5 - t2 / 24.0
        C = 1.0 / 6.0 - t2 / 120.0
    else:
        B = (1.0 - np.cos(theta)) / theta**2
        C = (theta - np.sin(theta)) / theta**3
    return np.eye(3) + B * W + C * (W @ W)


def _left_jacobian_inv(w):
    theta = np.linalg.norm(w)
    W = hat(w)
    if theta < _SMALL_ANGLE:
        D = 1.0 / 12.0 + theta * theta / 720.0
    else:
        D = (1.0 - theta * np.sin(theta) / (2.0 * (1.0 - np.cos(theta)))) / theta**2
    return np.eye(3) - 0.5 * W + D * (W @ W)


def se3_exp(xi) -> Pose:
    xi = np.asarray(xi, dtype=float)
    w, v = xi[:3], xi[3:]
    return Pose(so3_exp(w), _left_jacobian(w) @ v)


def se3_log(T: Pose) -> np.ndarray:
    w = so3_log(T.R)
    return np.concatenate([w, _left_jacobian_inv(w) @ T.t])


def rotation_angle(R) -> float:
    R = np.asarray(R, dtype=float)
    a = 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    return float(np.arctan2(np.linalg.norm(a), 0.5 * (np.trace(R) - 1.0)))
