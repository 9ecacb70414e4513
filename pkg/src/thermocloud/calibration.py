"""Three-camera rig calibration from planar checkerboard corners.

The rig is two RGB cameras plus a thermal camera. Input is per-view,
per-camera lists of detected interior-corner pixel coordinates in row-major
board order (detection itself happens upstream). The pipeline is the
classic planar-target chain: per-view homographies, closed-form intrinsics
from the absolute-conic constraints, per-view board poses from the
calibrated homographies, quaternion-averaged rig transforms, then a joint
Levenberg-Marquardt refinement of everything against all corners.

The left RGB camera is the rig reference: right and thermal poses for a
view are ``rig_transform @ left_board_pose``. Skew is fixed at zero and the
radial coefficient k1 enters only in the refinement stage. The reported
rms is per residual component: ``sqrt(sum(du^2 + dv^2) / (2 * n_corners))``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import kv
from .errors import (
    BadHeader,
    DegenerateConfiguration,
    IllConditioned,
    InsufficientViews,
    MalformedNumber,
    MissingProperty,
    NoCommonViews,
    ParseError,
)
from .geometry import (
    CameraIntrinsics,
    RigidTransform,
    UnitQuaternion,
    compose,
    invert,
)
from .lm import levenberg_marquardt

CAMERA_IDS = ("left", "right", "thermal")
_CAMERA_RANK = {c: i for i, c in enumerate(CAMERA_IDS)}

CALIBRATION_FORMAT = "thermocloud-calibration/1"


@dataclass(frozen=True)
class BoardSpec:
    """Interior-corner grid of a planar checkerboard; square_size in meters."""

    rows: int
    cols: int
    square_size: float

    def __post_init__(self):
        if self.rows < 3 or self.cols < 3:
            raise ValueError("board must have at least 3x3 interior corners")
        if not (self.square_size > 0.0 and math.isfinite(self.square_size)):
            raise ValueError("square_size must be positive")

    @property
    def corner_count(self) -> int:
        return self.rows * self.cols

    def board_xy(self) -> np.ndarray:
        """(rows*cols, 2) board-plane coordinates, row-major: corner (i, j) -> (j*s, i*s)."""
        j, i = np.meshgrid(np.arange(self.cols), np.arange(self.rows))
        return (
            np.stack([j.ravel(), i.ravel()], axis=1).astype(np.float64)
            * self.square_size
        )


@dataclass(frozen=True, eq=False)
class CornerSet:
    """Detected corners for one (view, camera); row-major board order."""

    view_id: int
    camera_id: str
    corners: np.ndarray  # (N, 2) pixel coordinates

    def __post_init__(self):
        if self.camera_id not in CAMERA_IDS:
            raise ValueError(f"unknown camera_id {self.camera_id!r}")
        c = np.asarray(self.corners, dtype=np.float64)
        if c.ndim != 2 or c.shape[1] != 2:
            raise ValueError("corners must be an (N, 2) array")
        if not np.all(np.isfinite(c)):
            raise ValueError("corner coordinates must be finite")
        object.__setattr__(self, "corners", c)


@dataclass(eq=False)
class CalibrationResult:
    """Full rig calibration: per-camera intrinsics, per-(view, camera) board
    poses (board-to-camera), rig transforms relative to the left camera, and
    per-camera rms reprojection error in pixels."""

    intrinsics: Dict[str, CameraIntrinsics]
    board_poses: Dict[Tuple[int, str], RigidTransform]
    right_from_left: RigidTransform
    thermal_from_left: RigidTransform

    rms_reprojection: Dict[str, float]

    def rig_transform(self, camera_id: str) -> RigidTransform:
        if camera_id == "left":
            return RigidTransform.identity()
        if camera_id == "right":
            return self.right_from_left
        if camera_id == "thermal":
            return self.thermal_from_left
        raise ValueError(f"unknown camera_id {camera_id!r}")


# --- homography and closed-form initialization -------------------------------


def _hartley_normalization(pts: np.ndarray) -> np.ndarray:
    """3x3 similarity bringing pts to zero centroid, mean distance sqrt(2)."""
    centroid = pts.mean(axis=0)
    d = np.linalg.norm(pts - centroid, axis=1).mean()
    s = math.sqrt(2.0) / d if d > 1e-300 else 1.0
    return np.array(
        [[s, 0.0, -s * centroid[0]], [0.0, s, -s * centroid[1]], [0.0, 0.0, 1.0]]
    )


def _check_spans_plane(pts: np.ndarray, what: str) -> None:
    centered = pts - pts.mean(axis=0)
    eigvals = np.linalg.eigvalsh(centered.T @ centered)
    if eigvals[0] <= 1e-12 * max(eigvals[-1], 1e-300):
        raise DegenerateConfiguration(f"{what} are collinear")


def estimate_homography(
    board: BoardSpec,
    corners: CornerSet,
    board_xy: Optional[np.ndarray] = None,
) -> np.ndarray:
    """DLT homography from board-plane coordinates to image pixels.

    Hartley-normalized direct linear transform; the result has unit
    Frobenius norm and a non-negative bottom-right entry. Raises
    :class:`DegenerateConfiguration` when the corners do not determine a
    homography (e.g. collinear points).
    """
    src = board.board_xy() if board_xy is None else np.asarray(board_xy, float)
    dst = corners.corners
    if len(src) != len(dst):
        raise ValueError("corner count does not match the board spec")
    if len(src) < 4:
        raise DegenerateConfiguration("need at least 4 correspondences")
    _check_spans_plane(src, "board points")
    _check_spans_plane(dst, "image corners")

    t_src = _hartley_normalization(src)
    t_dst = _hartley_normalization(dst)
    s = (src @ t_src[:2, :2].T) + t_src[:2, 2]
    d = (dst @ t_dst[:2, :2].T) + t_dst[:2, 2]

    n = len(src)
    a = np.zeros((2 * n, 9))
    a[0::2, 0] = s[:, 0]
    a[0::2, 1] = s[:, 1]
    a[0::2, 2] = 1.0
    a[0::2, 6] = -d[:, 0] * s[:, 0]
    a[0::2, 7] = -d[:, 0] * s[:, 1]
    a[0::2, 8] = -d[:, 0]
    a[1::2, 3] = s[:, 0]
    a[1::2, 4] = s[:, 1]
    a[1::2, 5] = 1.0
    a[1::2, 6] = -d[:, 1] * s[:, 0]
    a[1::2, 7] = -d[:, 1] * s[:, 1]
    a[1::2, 8] = -d[:, 1]

    _, sv, vt = np.linalg.svd(a)
    # rank must be 8 for a unique (up to scale) solution
    if sv[-2] < 1e-10 * sv[0]:
        raise DegenerateConfiguration("corner configuration is rank-deficient")
    h_norm = vt[-1].reshape(3, 3)
    h = np.linalg.inv(t_dst) @ h_norm @ t_src
    h /= np.linalg.norm(h)
    if h[2, 2] < 0:
        h = -h
    return h


def _conic_row(h: np.ndarray, i: int, j: int) -> np.ndarray:
    """Constraint row h_i^T B h_j with skew fixed (B12 = 0); unknowns
    are (B11, B22, B13, B23, B33)."""
    return np.array(
        [
            h[0, i] * h[0, j],
            h[1, i] * h[1, j],
            h[2, i] * h[0, j] + h[0, i] * h[2, j],
            h[2, i] * h[1, j] + h[1, i] * h[2, j],
            h[2, i] * h[2, j],
        ]
    )


def intrinsics_from_homographies(hs: Sequence[np.ndarray]) -> CameraIntrinsics:
    """Closed-form fx, fy, cx, cy from the orthonormality constraints of
    planar-target homographies (skew = 0, k1 = 0).

    Needs at least two homographies from distinct board orientations.
    Raises :class:`IllConditioned` when the views do not determine the
    parameters (e.g. all boards parallel to the image plane)."""
    if len(hs) < 2:
        raise InsufficientViews(f"need >= 2 homographies, got {len(hs)}")
    rows = []
    for h in hs:
        h = np.asarray(h, dtype=np.float64)
        h = h / np.linalg.norm(h)
        rows.append(_conic_row(h, 0, 1))
        rows.append(_conic_row(h, 0, 0) - _conic_row(h, 1, 1))
    a = np.stack(rows)

    _, sv, vt = np.linalg.svd(a)
    if sv[-2] < 1e-8 * sv[0]:
        raise IllConditioned("board orientations do not determine the intrinsics")
    b11, b22, b13, b23, b33 = vt[-1]
    if b11 < 0:
        b11, b22, b13, b23, b33 = -b11, -b22, -b13, -b23, -b33
    if b11 <= 0 or b22 <= 0:
        raise IllConditioned("recovered conic is not positive definite")
    cx = -b13 / b11
    cy = -b23 / b22
    lam = b33 - b13 * b13 / b11 - b23 * b23 / b22
    if lam <= 0:
        raise IllConditioned("recovered conic is not positive definite")
    return CameraIntrinsics(
        fx=math.sqrt(lam / b11), fy=math.sqrt(lam / b22), cx=cx, cy=cy
    )


def extrinsics_from_homography(
    intr: CameraIntrinsics, h: np.ndarray
) -> RigidTransform:
    """Board-to-camera pose from a calibrated homography.

    r1 = lam*K^-1 h1, r2 = lam*K^-1 h2, r3 = r1 x r2, t = lam*K^-1 h3,
    with the sign chosen so the board sits in front of the camera; the
    rotation is projected to the nearest orthonormal matrix."""
    h = np.asarray(h, dtype=np.float64)
    kinv = np.linalg.inv(intr.matrix())
    lam = 1.0 / np.linalg.norm(kinv @ h[:, 0])
    t = lam * (kinv @ h[:, 2])
    if t[2] < 0:
        lam = -lam
        t = -t
    r1 = lam * (kinv @ h[:, 0])
    r2 = lam * (kinv @ h[:, 1])
    r3 = np.cross(r1, r2)
    m = np.stack([r1, r2, r3], axis=1)
    u, _, vt = np.linalg.svd(m)
    r = u @ np.diag([1.0, 1.0, np.sign(np.linalg.det(u @ vt))]) @ vt
    return RigidTransform(UnitQuaternion.from_matrix(r), t)


def average_quaternions(qs: Sequence[UnitQuaternion]) -> UnitQuaternion:
    """Chordal-mean quaternion: dominant eigenvector of sum(q q^T)."""
    m = np.zeros((4, 4))
    for q in qs:
        v = q.as_array()
        m += np.outer(v, v)
    _, vecs = np.linalg.eigh(m)
    avg = vecs[:, -1]
    if float(avg @ qs[0].as_array()) < 0:
        avg = -avg
    return UnitQuaternion(*avg)


def rig_from_view_poses(
    left_poses: Dict[int, RigidTransform],
    other_poses: Dict[int, RigidTransform],
) -> RigidTransform:
    """Aggregate per-view ``other_pose @ left_pose^-1`` estimates.

    Rotations are quaternion-averaged, translations averaged component-wise.
    Raises :class:`NoCommonViews` if the two cameras share no view."""
    common = sorted(set(left_poses) & set(other_poses))
    if not common:
        raise NoCommonViews("cameras share no board views")
    estimates = [compose(other_poses[v], invert(left_poses[v])) for v in common]
    if len(estimates) == 1:
        return estimates[0]
    rot = average_quaternions([e.rotation for e in estimates])
    t = np.mean([e.translation for e in estimates], axis=0)
    return RigidTransform(rot, t)


# --- joint refinement ---------------------------------------------------------


def _skew_many(a: np.ndarray) -> np.ndarray:
    """Cross-product matrices for an (..., 3) array of vectors."""
    out = np.zeros(a.shape[:-1] + (3, 3))
    out[..., 0, 1] = -a[..., 2]
    out[..., 0, 2] = a[..., 1]
    out[..., 1, 0] = a[..., 2]
    out[..., 1, 2] = -a[..., 0]
    out[..., 2, 0] = -a[..., 1]
    out[..., 2, 1] = a[..., 0]
    return out


def _so3_right_jacobian(delta: np.ndarray) -> np.ndarray:
    """Right Jacobian of SO(3): d exp(delta + d) = exp(delta) exp(Jr(delta) d)."""
    theta = float(np.linalg.norm(delta))
    a = _skew_many(np.asarray(delta, float))
    if theta < 1e-8:
        return np.eye(3) - 0.5 * a + a @ a / 6.0
    return (
        np.eye(3)
        - (1.0 - math.cos(theta)) / theta**2 * a
        + (theta - math.sin(theta)) / theta**3 * (a @ a)
    )


class _RigProblem:
    """Packs the joint calibration into a flat LM parameter vector.

    Layout: 5 intrinsics (fx, fy, cx, cy, k1) per camera in left/right/
    thermal order, then 6 per view (axis-angle increment on the initial
    left-pose rotation, absolute translation), then 6 per non-left rig
    transform. Residuals are ordered view-major, camera-minor, corner-minor,
    (u, v) last, so sums are bitwise reproducible."""

    def __init__(
        self,
        board_xy: np.ndarray,
        corner_sets: Sequence[CornerSet],
        initial: CalibrationResult,
    ):
        self.board3 = np.concatenate(
            [board_xy, np.zeros((len(board_xy), 1))], axis=1
        )
        self.n_corners = len(board_xy)
        self.sets = sorted(
            corner_sets, key=lambda s: (s.view_id, _CAMERA_RANK[s.camera_id])
        )
        self.views = sorted({s.view_id for s in self.sets})
        self.cameras = sorted(
            {s.camera_id for s in self.sets}, key=_CAMERA_RANK.__getitem__
        )
        self.rig_cameras = [c for c in self.cameras if c != "left"]
        self._view_index = {v: i for i, v in enumerate(self.views)}

        self.base_view_q = [
            initial.board_poses[(v, "left")].rotation for v in self.views
        ]
        self.base_rig_q = {
            c: initial.rig_transform(c).rotation for c in self.rig_cameras
        }

        self.n_params = (
            5 * len(self.cameras) + 6 * len(self.views) + 6 * len(self.rig_cameras)
        )
        self._offsets = {}
        pos = 0
        for s in self.sets:
            self._offsets[(s.view_id, s.camera_id)] = pos
            pos += 2 * self.n_corners
        self.n_residuals = pos

        x0 = np.zeros(self.n_params)
        for i, c in enumerate(self.cameras):
            intr = initial.intrinsics[c]
            x0[5 * i : 5 * i + 5] = (intr.fx, intr.fy, intr.cx, intr.cy, intr.k1)
        vbase = 5 * len(self.cameras)
        for i, v in enumerate(self.views):
            x0[vbase + 6 * i + 3 : vbase + 6 * i + 6] = initial.board_poses[
                (v, "left")
            ].translation
        rbase = vbase + 6 * len(self.views)
        for i, c in enumerate(self.rig_cameras):
            x0[rbase + 6 * i + 3 : rbase + 6 * i + 6] = initial.rig_transform(
                c
            ).translation
        self.x0 = x0

    def unpack(self, x: np.ndarray):
        intrinsics = {}
        for i, c in enumerate(self.cameras):
            fx, fy, cx, cy, k1 = x[5 * i : 5 * i + 5]
            intrinsics[c] = CameraIntrinsics(fx=fx, fy=fy, cx=cx, cy=cy, k1=k1)
        vbase = 5 * len(self.cameras)
        view_poses = {}
        for i, v in enumerate(self.views):
            delta = x[vbase + 6 * i : vbase + 6 * i + 3]
            t = x[vbase + 6 * i + 3 : vbase + 6 * i + 6]
            rot = self.base_view_q[i].multiply(UnitQuaternion.from_axis_angle(delta))
            view_poses[v] = RigidTransform(rot, t)
        rbase = vbase + 6 * len(self.views)
        rigs = {"left": RigidTransform.identity()}
        for i, c in enumerate(self.rig_cameras):
            delta = x[rbase + 6 * i : rbase + 6 * i + 3]
            t = x[rbase + 6 * i + 3 : rbase + 6 * i + 6]
            rot = self.base_rig_q[c].multiply(UnitQuaternion.from_axis_angle(delta))
            rigs[c] = RigidTransform(rot, t)
        return intrinsics, view_poses, rigs

    def residuals(self, x: np.ndarray) -> np.ndarray:
        intrinsics, view_poses, rigs = self.unpack(x)
        view_r = np.stack([view_poses[v].rotation.matrix() for v in self.views])
        view_t = np.stack([view_poses[v].translation for v in self.views])

        out = np.empty(self.n_residuals)
        for c in self.cameras:
            sets_c = [s for s in self.sets if s.camera_id == c]
            if not sets_c:
                continue
            idx = [self._view_index[s.view_id] for s in sets_c]
            rig = rigs[c]
            rr, rt = rig.rotation.matrix(), rig.translation
            r_set = np.einsum("ij,vjk->vik", rr, view_r[idx])
            t_set = view_t[idx] @ rr.T + rt

            cam = (
                np.einsum("vij,nj->vni", r_set, self.board3) + t_set[:, None, :]
            )
            z = cam[..., 2]
            mx = cam[..., 0] / z
            my = cam[..., 1] / z
            intr = intrinsics[c]
            f = 1.0 + intr.k1 * (mx * mx + my * my)
            uv = np.stack(
                [intr.fx * mx * f + intr.cx, intr.fy * my * f + intr.cy], axis=-1
            )
            for k, s in enumerate(sets_c):
                off = self._offsets[(s.view_id, c)]
                out[off : off + 2 * self.n_corners] = (uv[k] - s.corners).ravel()
        return out

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        """Analytic Jacobian of :meth:`residuals`.

        Rotation columns differentiate through the local increment using
        the right Jacobian of SO(3), so they are exact at any delta."""
        intrinsics, view_poses, rigs = self.unpack(x)
        view_r = np.stack([view_poses[v].rotation.matrix() for v in self.views])
        view_t = np.stack([view_poses[v].translation for v in self.views])
        vbase = 5 * len(self.cameras)
        rbase = vbase + 6 * len(self.views)

        jr_view = np.stack(
            [
                _so3_right_jacobian(x[vbase + 6 * i : vbase + 6 * i + 3])
                for i in range(len(self.views))
            ]
        )
        jr_rig = {
            c: _so3_right_jacobian(x[rbase + 6 * i : rbase + 6 * i + 3])
            for i, c in enumerate(self.rig_cameras)
        }
        skew_board = _skew_many(self.board3)

        jac = np.zeros((self.n_residuals, self.n_params))
        n2 = 2 * self.n_corners
        for ci, c in enumerate(self.cameras):
            sets_c = [s for s in self.sets if s.camera_id == c]
            if not sets_c:
                continue
            idx = [self._view_index[s.view_id] for s in sets_c]
            rig = rigs[c]
            rr, rt = rig.rotation.matrix(), rig.translation
            rv = view_r[idx]
            y = np.einsum("vij,nj->vni", rv, self.board3) + view_t[idx][:, None, :]
            cam = np.einsum("ij,vnj->vni", rr, y) + rt
            z = cam[..., 2]
            mx = cam[..., 0] / z
            my = cam[..., 1] / z
            intr = intrinsics[c]
            k1 = intr.k1
            r2 = mx * mx + my * my
            f = 1.0 + k1 * r2

            # d(u,v)/d(mx,my), shape (V, N, 2, 2)
            duv_dm = np.empty(mx.shape + (2, 2))
            duv_dm[..., 0, 0] = intr.fx * (f + 2.0 * k1 * mx * mx)
            duv_dm[..., 0, 1] = intr.fx * 2.0 * k1 * mx * my
            duv_dm[..., 1, 0] = intr.fy * 2.0 * k1 * mx * my
            duv_dm[..., 1, 1] = intr.fy * (f + 2.0 * k1 * my * my)
            # d(mx,my)/dX_cam, shape (V, N, 2, 3)
            dm_dx = np.zeros(mx.shape + (2, 3))
            dm_dx[..., 0, 0] = 1.0 / z
            dm_dx[..., 0, 2] = -mx / z
            dm_dx[..., 1, 1] = 1.0 / z
            dm_dx[..., 1, 2] = -my / z
            g = np.einsum("vnab,vnbc->vnac", duv_dm, dm_dx)  # d(u,v)/dX_cam

            # intrinsics columns (fx, fy, cx, cy, k1)
            d_intr = np.zeros(mx.shape + (2, 5))
            d_intr[..., 0, 0] = mx * f
            d_intr[..., 0, 2] = 1.0
            d_intr[..., 0, 4] = intr.fx * mx * r2
            d_intr[..., 1, 1] = my * f
            d_intr[..., 1, 3] = 1.0
            d_intr[..., 1, 4] = intr.fy * my * r2

            r_set = np.einsum("ij,vjk->vik", rr, rv)
            dx_ddelta = -np.einsum(
                "vij,njk,vkl->vnil", r_set, skew_board, jr_view[idx]
            )
            duv_ddelta = np.einsum("vnab,vnbl->vnal", g, dx_ddelta)
            duv_dtv = np.einsum("vnab,bj->vnaj", g, rr)

            if c != "left":
                ri = self.rig_cameras.index(c)
                dx_drig = -np.einsum(
                    "ij,vnjk,kl->vnil", rr, _skew_many(y), jr_rig[c]
                )
                duv_drig = np.einsum("vnab,vnbl->vnal", g, dx_drig)

            for k, s in enumerate(sets_c):
                off = self._offsets[(s.view_id, c)]
                rows = slice(off, off + n2)
                jac[rows, 5 * ci : 5 * ci + 5] = d_intr[k].reshape(n2, 5)
                vi = self._view_index[s.view_id]
                jac[rows, vbase + 6 * vi : vbase + 6 * vi + 3] = duv_ddelta[
                    k
                ].reshape(n2, 3)
                jac[rows, vbase + 6 * vi + 3 : vbase + 6 * vi + 6] = duv_dtv[
                    k
                ].reshape(n2, 3)
                if c != "left":
                    jac[rows, rbase + 6 * ri : rbase + 6 * ri + 3] = duv_drig[
                        k
                    ].reshape(n2, 3)
                    jac[rows, rbase + 6 * ri + 3 : rbase + 6 * ri + 6] = g[
                        k
                    ].reshape(n2, 3)
        return jac

    def rms_per_camera(self, x: np.ndarray) -> Dict[str, float]:
        r = self.residuals(x)
        out = {}
        for c in self.cameras:
            chunks = [
                r[
                    self._offsets[(s.view_id, c)] : self._offsets[(s.view_id, c)]
                    + 2 * self.n_corners
                ]
                for s in self.sets
                if s.camera_id == c
            ]
            rc = np.concatenate(chunks)
            out[c] = float(np.sqrt(np.mean(rc * rc)))
        return out

    def to_result(self, x: np.ndarray) -> CalibrationResult:
        intrinsics, view_poses, rigs = self.unpack(x)
        board_poses = {}
        for s in self.sets:
            board_poses[(s.view_id, s.camera_id)] = compose(
                rigs[s.camera_id], view_poses[s.view_id]
            )
        return CalibrationResult(
            intrinsics=intrinsics,
            board_poses=board_poses,
            right_from_left=rigs.get("right", RigidTransform.identity()),
            thermal_from_left=rigs.get("thermal", RigidTransform.identity()),
            rms_reprojection=self.rms_per_camera(x),
        )


def build_refinement_problem(
    board: BoardSpec,
    corner_sets: Sequence[CornerSet],
    initial: CalibrationResult,
    board_xy: Optional[np.ndarray] = None,
) -> _RigProblem:
    """The packed least-squares problem behind :func:`refine_reprojection`;
    exposed so the optimizer trace and Jacobian can be inspected."""
    xy = board.board_xy() if board_xy is None else np.asarray(board_xy, float)
    return _RigProblem(xy, corner_sets, initial)


def refine_reprojection(
    board: BoardSpec,
    corner_sets: Sequence[CornerSet],
    initial: CalibrationResult,
    board_xy: Optional[np.ndarray] = None,
    max_iterations: int = 200,
) -> CalibrationResult:
    """Jointly refine intrinsics, left board poses and rig transforms by
    Levenberg-Marquardt on the summed squared pixel residuals.

    Returns the initial result unchanged if no damping value decreases the
    cost on the first iteration (the initial point is already a minimum)."""
    for rms in initial.rms_reprojection.values():
        if not math.isfinite(rms):
            raise ValueError("initial result has non-finite rms")
    problem = build_refinement_problem(board, corner_sets, initial, board_xy)
    result = levenberg_marquardt(
        problem.residuals,
        problem.x0,
        jacobian_fn=problem.jacobian,
        max_iterations=max_iterations,
    )
    if result.no_decrease:
        return initial
    return problem.to_result(result.x)


def calibrate_rig(
    board: BoardSpec,
    corner_sets: Sequence[CornerSet],
    refine: bool = True,
    board_xy: Optional[np.ndarray] = None,
) -> CalibrationResult:
    """Run the full calibration chain on corner sets from all three cameras."""
    xy = board.board_xy() if board_xy is None else np.asarray(board_xy, float)
    for s in corner_sets:
        if len(s.corners) != len(xy):
            raise ValueError(
                f"view {s.view_id}/{s.camera_id}: {len(s.corners)} corners, "
                f"board has {len(xy)}"
            )
    by_camera: Dict[str, Dict[int, CornerSet]] = {}
    for s in corner_sets:
        by_camera.setdefault(s.camera_id, {})[s.view_id] = s
    missing = [c for c in CAMERA_IDS if c not in by_camera]
    if missing:
        raise InsufficientViews(f"no corner sets for camera(s): {', '.join(missing)}")

    homographies = {
        c: {v: estimate_homography(board, s, board_xy=xy) for v, s in vs.items()}
        for c, vs in by_camera.items()
    }
    intrinsics = {
        c: intrinsics_from_homographies(list(hs.values()))
        for c, hs in homographies.items()
    }
    poses = {
        c: {v: extrinsics_from_homography(intrinsics[c], h) for v, h in hs.items()}
        for c, hs in homographies.items()
    }
    right_from_left = rig_from_view_poses(poses["left"], poses["right"])
    thermal_from_left = rig_from_view_poses(poses["left"], poses["thermal"])

    board_poses = {}
    rigs = {
        "left": RigidTransform.identity(),
        "right": right_from_left,
        "thermal": thermal_from_left,
    }
    for s in corner_sets:
        if s.view_id not in poses["left"]:
            raise NoCommonViews(f"view {s.view_id} has no left-camera corners")
        board_poses[(s.view_id, s.camera_id)] = compose(
            rigs[s.camera_id], poses["left"][s.view_id]
        )

    initial = CalibrationResult(
        intrinsics=intrinsics,
        board_poses=board_poses,
        right_from_left=right_from_left,
        thermal_from_left=thermal_from_left,
        rms_reprojection={},
    )
    problem = _RigProblem(xy, corner_sets, initial)
    initial.rms_reprojection = problem.rms_per_camera(problem.x0)
    if not refine:
        return initial
    return refine_reprojection(board, corner_sets, initial, board_xy=xy)


# --- corner CSV ----------------------------------------------------------------

_CSV_HEADER = ["view_id", "camera_id", "corner_index", "u", "v"]


def read_corner_csv(text: str) -> List[CornerSet]:
    """Parse the corner interchange CSV (`view_id,camera_id,corner_index,u,v`)."""
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise BadHeader("empty corner file") from None
    if [h.strip() for h in header] != _CSV_HEADER:
        raise BadHeader(f"expected header {','.join(_CSV_HEADER)}")

    rows: Dict[Tuple[int, str], Dict[int, Tuple[float, float]]] = {}
    for lineno, row in enumerate(reader, start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != 5:
            raise ParseError(f"line {lineno}: expected 5 fields, got {len(row)}")
        try:
            view_id = int(row[0])
            corner_index = int(row[2])
            u = float(row[3])
            v = float(row[4])
        except ValueError as e:
            raise MalformedNumber(f"line {lineno}: {e}") from None
        if not (math.isfinite(u) and math.isfinite(v)):
            raise MalformedNumber(f"line {lineno}: non-finite corner coordinate")
        camera_id = row[1].strip()
        if camera_id not in CAMERA_IDS:
            raise ParseError(f"line {lineno}: unknown camera_id {camera_id!r}")
        cell = rows.setdefault((view_id, camera_id), {})
        if corner_index in cell:
            raise ParseError(
                f"line {lineno}: duplicate corner {corner_index} "
                f"for view {view_id}/{camera_id}"
            )
        cell[corner_index] = (u, v)

    sets = []
    for (view_id, camera_id), cell in sorted(
        rows.items(), key=lambda kv_: (kv_[0][0], _CAMERA_RANK[kv_[0][1]])
    ):
        n = len(cell)
        if sorted(cell) != list(range(n)):
            raise ParseError(
                f"view {view_id}/{camera_id}: corner indices are not 0..{n - 1}"
            )
        corners = np.array([cell[i] for i in range(n)])
        sets.append(CornerSet(view_id, camera_id, corners))
    return sets


def write_corner_csv(sets: Sequence[CornerSet]) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(_CSV_HEADER)
    for s in sorted(sets, key=lambda s: (s.view_id, _CAMERA_RANK[s.camera_id])):
        for i, (u, v) in enumerate(s.corners):
            writer.writerow(
                [s.view_id, s.camera_id, i, kv.format_float(u), kv.format_float(v)]
            )
    return out.getvalue()


# --- calibration document --------------------------------------------------------


def _pose_str(t: RigidTransform) -> str:
    q = t.rotation
    vals = [q.w, q.x, q.y, q.z, *t.translation]
    return " ".join(kv.format_float(v) for v in vals)


def _pose_from_str(s: str) -> RigidTransform:
    parts = s.split()
    if len(parts) != 7:
        raise MalformedNumber(f"pose needs 7 numbers, got {len(parts)}")
    try:
        vals = [float(p) for p in parts]
    except ValueError as e:
        raise MalformedNumber(str(e)) from None
    return RigidTransform(UnitQuaternion(*vals[:4]), np.array(vals[4:]))


def write_calibration(result: CalibrationResult) -> str:
    """Serialize a calibration to the key-value document consumed by the
    fusion stage (schema in docs/formats.md)."""
    pairs = [("format", CALIBRATION_FORMAT)]
    cameras = sorted(result.intrinsics, key=_CAMERA_RANK.__getitem__)
    pairs.append(("cameras", " ".join(cameras)))
    for c in cameras:
        intr = result.intrinsics[c]
        vals = [intr.fx, intr.fy, intr.cx, intr.cy, intr.skew, intr.k1]
        pairs.append((f"intrinsics.{c}", " ".join(kv.format_float(v) for v in vals)))
    pairs.append(("rig.right_from_left", _pose_str(result.right_from_left)))
    pairs.append(("rig.thermal_from_left", _pose_str(result.thermal_from_left)))
    for c in cameras:
        if c in result.rms_reprojection:
            pairs.append((f"rms.{c}", kv.format_float(result.rms_reprojection[c])))
    for (view_id, camera_id) in sorted(
        result.board_poses, key=lambda k: (k[0], _CAMERA_RANK[k[1]])
    ):
        pairs.append(
            (
                f"board_pose.{view_id}.{camera_id}",
                _pose_str(result.board_poses[(view_id, camera_id)]),
            )
        )
    return kv.write_kv(pairs)


def read_calibration(text: str) -> CalibrationResult:
    doc = kv.parse_kv(text)
    if doc.get("format") != CALIBRATION_FORMAT:
        raise BadHeader(f"expected 'format = {CALIBRATION_FORMAT}'")
    if "cameras" not in doc:
        raise MissingProperty("missing 'cameras' key")
    cameras = doc["cameras"].split()
    intrinsics = {}
    for c in cameras:
        if c not in CAMERA_IDS:
            raise ParseError(f"unknown camera {c!r}")
        key = f"intrinsics.{c}"
        if key not in doc:
            raise MissingProperty(f"missing {key}")
        parts = doc[key].split()
        if len(parts) != 6:
            raise MalformedNumber(f"{key}: expected 6 numbers")
        try:
            fx, fy, cx, cy, skew, k1 = (float(p) for p in parts)
        except ValueError as e:
            raise MalformedNumber(f"{key}: {e}") from None
        intrinsics[c] = CameraIntrinsics(fx=fx, fy=fy, cx=cx, cy=cy, skew=skew, k1=k1)

    for key in ("rig.right_from_left", "rig.thermal_from_left"):
        if key not in doc:
            raise MissingProperty(f"missing {key}")
    right_from_left = _pose_from_str(doc["rig.right_from_left"])
    thermal_from_left = _pose_from_str(doc["rig.thermal_from_left"])

    rms = {}
    board_poses = {}
    for key, value in doc.items():
        if key.startswith("rms."):
            try:
                rms[key[4:]] = float(value)
            except ValueError as e:
                raise MalformedNumber(f"{key}: {e}") from None
        elif key.startswith("board_pose."):
            parts = key.split(".")
            if len(parts) != 3:
                raise ParseError(f"bad board_pose key {key!r}")
            try:
                view_id = int(parts[1])
            except ValueError:
                raise MalformedNumber(f"bad view id in {key!r}") from None
            board_poses[(view_id, parts[2])] = _pose_from_str(value)

    return CalibrationResult(
        intrinsics=intrinsics,
        board_poses=board_poses,
        right_from_left=right_from_left,
        thermal_from_left=thermal_from_left,
        rms_reprojection=rms,
    )
