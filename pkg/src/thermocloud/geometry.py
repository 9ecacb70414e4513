"""Projective and Euclidean geometry for the thermal mapping pipeline.

Conventions
-----------

- Right-handed coordinates, OpenCV style: camera +X right, +Y down,
  +Z forward (in front of the camera). Image u grows rightward, v grows
  downward, and (0, 0) is the *center* of the top-left pixel.
- Poses are stored world-to-camera: ``X_cam = R @ X_world + t``. Camera
  centers are always derived (``C = -R.T @ t``), never stored.
- Rotations are unit quaternions in (w, x, y, z) order, normalized on
  construction and after every composition. Matrices are derived on demand.
- The distortion model is a single radial coefficient applied to
  normalized image coordinates: ``m_d = m * (1 + k1 * |m|^2)``. Pixels are
  then ``u = fx*m_d.x + skew*m_d.y + cx``, ``v = fy*m_d.y + cy``.
- Points with camera-frame depth ``Z <= DEPTH_EPS`` are unprojectable;
  :func:`project` reports them as ``None`` instead of producing huge pixel
  values.

3D points and translations are plain float64 numpy arrays of shape (3,);
batches are (N, 3). All types are immutable value types and all functions
are pure, so everything here is safe to share across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Tuple

import numpy as np

from .errors import NoConvergence

DEPTH_EPS = 1e-6


def vec3(x: float, y: float, z: float) -> np.ndarray:
    """Build a float64 3-vector."""
    return np.array([x, y, z], dtype=np.float64)


def as_vec3(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (3,):
        raise ValueError(f"expected a 3-vector, got shape {v.shape}")
    return v


@dataclass(frozen=True)
class UnitQuaternion:
    """Rotation as a unit quaternion (w, x, y, z); normalized on construction."""

    w: float
    x: float
    y: float
    z: float

    def __post_init__(self):
        n = math.sqrt(self.w**2 + self.x**2 + self.y**2 + self.z**2)
        if not math.isfinite(n) or n < 1e-15:
            raise ValueError("quaternion norm is zero or non-finite")
        object.__setattr__(self, "w", self.w / n)
        object.__setattr__(self, "x", self.x / n)
        object.__setattr__(self, "y", self.y / n)
        object.__setattr__(self, "z", self.z / n)

    @staticmethod
    def identity() -> "UnitQuaternion":
        return UnitQuaternion(1.0, 0.0, 0.0, 0.0)

    @staticmethod
    def from_axis_angle(v) -> "UnitQuaternion":
        """Quaternion for a rotation vector (axis * angle, radians)."""
        v = as_vec3(v)
        theta = float(np.linalg.norm(v))
        if theta < 1e-12:
            # sin(t/2)/t ~ 1/2 - t^2/48 near zero
            s = 0.5 - theta * theta / 48.0
            return UnitQuaternion(1.0, s * v[0], s * v[1], s * v[2])
        s = math.sin(0.5 * theta) / theta
        return UnitQuaternion(math.cos(0.5 * theta), s * v[0], s * v[1], s * v[2])

    @staticmethod
    def from_matrix(m) -> "UnitQuaternion":
        """Quaternion for a 3x3 rotation matrix (Shepperd's method)."""
        m = np.asarray(m, dtype=np.float64)
        t = m[0, 0] + m[1, 1] + m[2, 2]
        if t > 0.0:
            s = math.sqrt(t + 1.0) * 2.0
            return UnitQuaternion(
                0.25 * s,
                (m[2, 1] - m[1, 2]) / s,
                (m[0, 2] - m[2, 0]) / s,
                (m[1, 0] - m[0, 1]) / s,
            )
        if m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
            s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
            return UnitQuaternion(
                (m[2, 1] - m[1, 2]) / s,
                0.25 * s,
                (m[0, 1] + m[1, 0]) / s,
                (m[0, 2] + m[2, 0]) / s,
            )
        if m[1, 1] > m[2, 2]:
            s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
            return UnitQuaternion(
                (m[0, 2] - m[2, 0]) / s,
                (m[0, 1] + m[1, 0]) / s,
                0.25 * s,
                (m[1, 2] + m[2, 1]) / s,
            )
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        return UnitQuaternion(
            (m[1, 0] - m[0, 1]) / s,
            (m[0, 2] + m[2, 0]) / s,
            (m[1, 2] + m[2, 1]) / s,
            0.25 * s,
        )

    def matrix(self) -> np.ndarray:
        """The 3x3 rotation matrix."""
        w, x, y, z = self.w, self.x, self.y, self.z
        xx, yy, zz = x * x, y * y, z * z
        xy, xz, yz = x * y, x * z, y * z
        wx, wy, wz = w * x, w * y, w * z
        return np.array(
            [
                [1 - 2 * (yy + zz), 2 * (xy - wz), 2 * (xz + wy)],
                [2 * (xy + wz), 1 - 2 * (xx + zz), 2 * (yz - wx)],
                [2 * (xz - wy), 2 * (yz + wx), 1 - 2 * (xx + yy)],
            ],
            dtype=np.float64,
        )

    def conjugate(self) -> "UnitQuaternion":
        return UnitQuaternion(self.w, -self.x, -self.y, -self.z)

    def multiply(self, other: "UnitQuaternion") -> "UnitQuaternion":
        """Hamilton product self * other (renormalized)."""
        w1, x1, y1, z1 = self.w, self.x, self.y, self.z
        w2, x2, y2, z2 = other.w, other.x, other.y, other.z
        return UnitQuaternion(
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        )

    def rotate(self, p) -> np.ndarray:
        return self.matrix() @ as_vec3(p)

    def angle_to(self, other: "UnitQuaternion") -> float:
        """Rotation angle (radians) between two orientations."""
        dot = abs(
            self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z
        )
        return 2.0 * math.acos(min(1.0, dot))

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z], dtype=np.float64)


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """SE(3) map ``p -> R @ p + t`` with R a unit quaternion rotation."""

    rotation: UnitQuaternion
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "translation", as_vec3(self.translation))

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(UnitQuaternion.identity(), np.zeros(3))


@dataclass(frozen=True, eq=False)
class SimilarityTransform:
    """Similarity map ``p -> scale * (R @ p) + t``; scale > 0."""

    scale: float
    rotation: UnitQuaternion
    translation: np.ndarray

    def __post_init__(self):
        if not (math.isfinite(self.scale) and self.scale > 0.0):
            raise ValueError(f"scale must be positive and finite, got {self.scale}")
        object.__setattr__(self, "translation", as_vec3(self.translation))

    @staticmethod
    def identity() -> "SimilarityTransform":
        return SimilarityTransform(1.0, UnitQuaternion.identity(), np.zeros(3))


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics (pixels) with one radial coefficient.

    ``k1`` acts on normalized coordinates; see the module docstring for the
    exact projection formula.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    skew: float = 0.0
    k1: float = 0.0

    def __post_init__(self):
        vals = (self.fx, self.fy, self.cx, self.cy, self.skew, self.k1)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("intrinsics must be finite")
        if self.fx <= 0.0 or self.fy <= 0.0:
            raise ValueError("focal lengths must be positive")

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, self.skew, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )


@dataclass(frozen=True, eq=False)
class CameraView:
    """A camera's intrinsics, world-to-camera pose, and sensor size."""

    intrinsics: CameraIntrinsics
    world_to_camera: RigidTransform
    image_width: int
    image_height: int

    def __post_init__(self):
        if self.image_width < 1 or self.image_height < 1:
            raise ValueError("image dimensions must be >= 1")


class Pixel(NamedTuple):
    u: float
    v: float


# --- transform algebra ------------------------------------------------------


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """The transform mapping p to a(b(p))."""
    rot = a.rotation.multiply(b.rotation)
    t = a.rotation.matrix() @ b.translation + a.translation
    return RigidTransform(rot, t)


def invert(t: RigidTransform) -> RigidTransform:
    rot = t.rotation.conjugate()
    return RigidTransform(rot, -(rot.matrix() @ t.translation))


def transform_point(t: RigidTransform, p) -> np.ndarray:
    return t.rotation.matrix() @ as_vec3(p) + t.translation


def transform_points(t: RigidTransform, pts: np.ndarray) -> np.ndarray:
    """Apply a rigid transform to an (N, 3) array of points."""
    pts = np.asarray(pts, dtype=np.float64)
    return pts @ t.rotation.matrix().T + t.translation


def apply_similarity(s: SimilarityTransform, p) -> np.ndarray:
    """scale * R(p) + t for a single point."""
    return s.scale * (s.rotation.matrix() @ as_vec3(p)) + s.translation


def apply_similarity_points(s: SimilarityTransform, pts: np.ndarray) -> np.ndarray:
    pts = np.asarray(pts, dtype=np.float64)
    return s.scale * (pts @ s.rotation.matrix().T) + s.translation


def camera_center(view: CameraView) -> np.ndarray:
    """World-space camera center ``C = -R.T @ t``."""
    t = view.world_to_camera
    return -(t.rotation.matrix().T @ t.translation)


def similarity_adjust_view(g: SimilarityTransform, view: CameraView) -> CameraView:
    """Re-express a view's pose in the g-transformed world frame.

    The rotation is conjugated by g's rotation and the camera center is
    mapped through g, so projecting g(p) through the adjusted view yields
    the same pixel as projecting p through the original (the scale cancels
    in the perspective division).
    """
    w2c = view.world_to_camera
    new_rot = w2c.rotation.multiply(g.rotation.conjugate())
    new_center = apply_similarity(g, camera_center(view))
    new_t = -(new_rot.matrix() @ new_center)
    return CameraView(
        view.intrinsics,
        RigidTransform(new_rot, new_t),
        view.image_width,
        view.image_height,
    )


# --- projection ---------------------------------------------------------------


def project(
    view: CameraView, p_world, depth_eps: float = DEPTH_EPS
) -> Optional[Tuple[Pixel, float]]:
    """Project a world point; returns (pixel, depth) or None if behind the camera.

    Depth is the camera-frame Z in the units of the world frame (meters
    once the model has been scaled).
    """
    intr = view.intrinsics
    X, Y, Z = transform_point(view.world_to_camera, p_world)
    if Z <= depth_eps:
        return None
    mx, my = X / Z, Y / Z
    f = 1.0 + intr.k1 * (mx * mx + my * my)
    mdx, mdy = mx * f, my * f
    u = intr.fx * mdx + intr.skew * mdy + intr.cx
    v = intr.fy * mdy + intr.cy
    return Pixel(u, v), Z


def project_points(
    view: CameraView, pts: np.ndarray, depth_eps: float = DEPTH_EPS
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized :func:`project` over an (N, 3) array.

    Returns (uv, depth, in_front) where uv is (N, 2), depth is (N,) and
    in_front flags points with Z > depth_eps. Rows of uv for points behind
    the camera are NaN.
    """
    intr = view.intrinsics
    cam = transform_points(view.world_to_camera, pts)
    z = cam[:, 2]
    in_front = z > depth_eps
    with np.errstate(divide="ignore", invalid="ignore"):
        mx = np.where(in_front, cam[:, 0] / z, np.nan)
        my = np.where(in_front, cam[:, 1] / z, np.nan)
    f = 1.0 + intr.k1 * (mx * mx + my * my)
    mdx, mdy = mx * f, my * f
    uv = np.stack(
        [intr.fx * mdx + intr.skew * mdy + intr.cx, intr.fy * mdy + intr.cy], axis=1
    )
    return uv, z, in_front


def undistort(intr: CameraIntrinsics, distorted_normalized) -> Tuple[float, float]:
    """Invert the radial distortion in normalized coordinates.

    Fixed-point iteration ``m <- m_d / (1 + k1*|m|^2)`` run for at least 20
    iterations or until the update falls below 1e-12. Raises
    :class:`NoConvergence` if re-distorting the result misses the input by
    more than 1e-6 after 100 iterations.
    """
    mdx, mdy = float(distorted_normalized[0]), float(distorted_normalized[1])
    mx, my = undistort_normalized(intr.k1, np.array([mdx]), np.array([mdy]))
    mx, my = float(mx[0]), float(my[0])
    f = 1.0 + intr.k1 * (mx * mx + my * my)
    resid = math.hypot(mx * f - mdx, my * f - mdy)
    if resid > 1e-6:
        raise NoConvergence(
            f"radial undistortion residual {resid:g} after 100 iterations"
        )
    return mx, my


def undistort_normalized(
    k1: float, mdx: np.ndarray, mdy: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorized fixed-point undistortion; no convergence check."""
    mx, my = np.array(mdx, dtype=np.float64), np.array(mdy, dtype=np.float64)
    for i in range(100):
        f = 1.0 + k1 * (mx * mx + my * my)
        nx, ny = mdx / f, mdy / f
        change = np.max(np.hypot(nx - mx, ny - my)) if mx.size else 0.0
        mx, my = nx, ny
        if i >= 19 and change < 1e-12:
            break
    return mx, my
