"""Synthetic ground-truth scenes for testing the whole pipeline.

Generates a stereo+thermal rig, a camera trajectory, dense and sparse
points with exact visibility, rendered thermal frames, and the analytic
fused value every dense point must receive. The exported model is expressed
in a configurable similarity gauge (scale, rotation, translation) so the
pipeline has real work to do recovering metric scale.

Two scene layouts exist: ``orbit`` (cameras circle a point volume; used
with image-space linear thermal fields, whose bilinear samples are exact)
and ``wall`` (cameras track past a fronto-parallel plane; used with the
world-space Gaussian hot-spot field, which needs per-pixel rendering).

Determinism: all randomness comes from :class:`SplitMix64` seeded from the
scene spec, so fixtures are bit-reproducible and the generator is easy to
port. Expected thermal values are computed from the same float32-quantized,
gauge-transformed coordinates that land in the fixture files; only then do
oracle and pipeline agree to full float64 precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import kv
from .calibration import BoardSpec, CornerSet, CAMERA_IDS
from .fusion import ThermalFrame, ThermalRigMap, write_pgm
from .geometry import (
    CameraIntrinsics,
    CameraView,
    RigidTransform,
    SimilarityTransform,
    UnitQuaternion,
    apply_similarity,
    apply_similarity_points,
    camera_center,
    compose,
    project_points,
    undistort_normalized,
)
from .sfm_io import (
    DenseCloud,
    Measurement,
    NvmCamera,
    NvmModel,
    NvmPoint,
    write_dense_ply,
    write_nvm,
    write_patch,
)

TRUTH_FORMAT = "thermocloud-truth/1"

_MASK64 = (1 << 64) - 1


class SplitMix64:
    """SplitMix64 generator.

    State advances by 0x9E3779B97F4A7C15 per draw; output mixing multiplies
    by 0xBF58476D1CE4E5B9 and 0x94D049BB133111EB with xor-shifts 30/27/31.
    ``uniform`` uses the top 53 bits; ``normal`` is a fresh Box-Muller pair
    per call (cosine branch), two draws each."""

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + 0x9E3779B97F4A7C15) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def uniform(self, lo: float = 0.0, hi: float = 1.0) -> float:
        u = (self.next_u64() >> 11) * (2.0 ** -53)
        return lo + (hi - lo) * u

    def normal(self, mu: float = 0.0, sigma: float = 1.0) -> float:
        u1 = ((self.next_u64() >> 11) + 0.5) * (2.0 ** -53)
        u2 = (self.next_u64() >> 11) * (2.0 ** -53)
        return mu + sigma * math.sqrt(-2.0 * math.log(u1)) * math.cos(
            2.0 * math.pi * u2
        )

    def byte(self) -> int:
        return self.next_u64() & 0xFF


# --- specs ---------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LinearField:
    """Thermal intensity a + b*u + c*v in thermal image coordinates.

    Integer coefficients make every rendered pixel an exact integer, so
    bilinear samples reproduce the field with no quantization error."""

    a: float = 1000.0
    b: float = 3.0
    c: float = 2.0

    def at_pixel(self, u, v):
        return self.a + self.b * u + self.c * v


@dataclass(frozen=True, eq=False)
class GaussianField:
    """World-space hot spot: amplitude*exp(-|p-center|^2/(2 sigma^2)) + background."""

    center: np.ndarray = field(
        default_factory=lambda: np.array([0.15, -0.1, 2.5])
    )
    sigma: float = 0.0079
    amplitude: float = 20000.0
    background: float = 10000.0

    def at_point(self, p: np.ndarray):
        p = np.asarray(p, dtype=np.float64)
        d2 = np.sum((p - self.center) ** 2, axis=-1)
        return self.amplitude * np.exp(-d2 / (2.0 * self.sigma**2)) + self.background


ThermalField = Union[LinearField, GaussianField]


@dataclass(frozen=True, eq=False)
class RigSpec:
    """Ground-truth rig: per-camera intrinsics, image sizes, rig transforms."""

    intrinsics: Dict[str, CameraIntrinsics]
    image_sizes: Dict[str, Tuple[int, int]]
    right_from_left: RigidTransform
    thermal_from_left: RigidTransform

    @property
    def baseline(self) -> float:
        return float(np.linalg.norm(self.right_from_left.translation))

    def rig_map(self) -> ThermalRigMap:
        w, h = self.image_sizes["thermal"]
        return ThermalRigMap(
            thermal_intrinsics=self.intrinsics["thermal"],
            thermal_from_left=self.thermal_from_left,
            image_width=w,
            image_height=h,
        )

    @staticmethod
    def default(baseline: float = 0.12, thermal_k1: float = 0.0) -> "RigSpec":
        """SfM-faithful rig: RGB cameras have fx=fy and a centered principal
        point, matching what an NVM record can represent."""
        rgb = CameraIntrinsics(fx=600.0, fy=600.0, cx=319.5, cy=239.5)
        thermal = CameraIntrinsics(
            fx=380.0, fy=380.0, cx=159.5, cy=119.5, k1=thermal_k1
        )
        return RigSpec(
            intrinsics={"left": rgb, "right": rgb, "thermal": thermal},
            image_sizes={
                "left": (640, 480),
                "right": (640, 480),
                "thermal": (320, 240),
            },
            right_from_left=RigidTransform(
                UnitQuaternion.from_axis_angle([0.002, 0.004, -0.001]),
                np.array([-baseline, 0.0, 0.0]),
            ),
            thermal_from_left=RigidTransform(
                UnitQuaternion.from_axis_angle([0.01, -0.02, 0.005]),
                np.array([0.04, -0.015, 0.008]),
            ),
        )

    @staticmethod
    def default_calibration(
        baseline: float = 0.12, rgb_k1: float = -0.05, thermal_k1: float = 0.1
    ) -> "RigSpec":
        """Calibration-test rig: distinct fx/fy and off-center principal
        points per camera, nonzero distortion."""
        left = CameraIntrinsics(fx=600.0, fy=590.0, cx=320.0, cy=240.0, k1=rgb_k1)
        right = CameraIntrinsics(
            fx=605.0, fy=596.0, cx=316.0, cy=243.0, k1=rgb_k1 * 0.8
        )
        thermal = CameraIntrinsics(
            fx=385.0, fy=379.0, cx=161.0, cy=118.0, k1=thermal_k1
        )
        return RigSpec(
            intrinsics={"left": left, "right": right, "thermal": thermal},
            image_sizes={
                "left": (640, 480),
                "right": (640, 480),
                "thermal": (320, 240),
            },
            right_from_left=RigidTransform(
                UnitQuaternion.from_axis_angle([0.004, -0.009, 0.002]),
                np.array([-baseline, 0.001, -0.002]),
            ),
            thermal_from_left=RigidTransform(
                UnitQuaternion.from_axis_angle([-0.015, 0.025, 0.01]),
                np.array([0.05, -0.02, 0.01]),
            ),
        )


@dataclass(eq=False)
class SceneSpec:
    seed: int = 1
    n_frames: int = 20
    n_points: int = 5000
    n_sparse: int = 300
    rig: Optional[RigSpec] = None
    model_scale: float = 1.0
    gauge_rotation: UnitQuaternion = field(default_factory=UnitQuaternion.identity)
    gauge_translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    thermal_field: ThermalField = field(default_factory=LinearField)
    noise_px: float = 0.0  # corner-fixture noise only
    layout: str = "orbit"  # "orbit" or "wall"
    # float32-snap dense positions like the PLY file will store them; turn
    # off to compare runs across gauges without storage rounding
    quantize_positions: bool = True

    def __post_init__(self):
        if self.n_frames < 1 or self.n_points < 1 or self.n_sparse < 1:
            raise ValueError("frame and point counts must be >= 1")
        if not (self.model_scale > 0 and math.isfinite(self.model_scale)):
            raise ValueError("model_scale must be positive")
        if self.layout not in ("orbit", "wall"):
            raise ValueError(f"unknown layout {self.layout!r}")
        if isinstance(self.thermal_field, GaussianField) and self.layout != "wall":
            raise ValueError("the Gaussian field needs the wall layout")
        if self.rig is None:
            self.rig = RigSpec.default()

    def gauge(self) -> SimilarityTransform:
        return SimilarityTransform(
            self.model_scale, self.gauge_rotation, np.asarray(self.gauge_translation)
        )


@dataclass(eq=False)
class SceneBundle:
    """Everything the tests need: metric ground truth plus the exact
    gauge-transformed artifacts the fixture files will contain."""

    spec: SceneSpec
    rig: RigSpec
    left_views: List[CameraView]  # metric
    right_views: List[CameraView]
    metric_points: np.ndarray  # (N, 3) dense, metric, pre-quantization
    nvm: NvmModel  # gauged, as exported
    dense: DenseCloud  # gauged float32-quantized positions + visibility
    thermal_frames: List[ThermalFrame]
    thermal_values: np.ndarray  # expected fused value per dense point
    thermal_valid: np.ndarray  # expected validity flag per dense point

    @property
    def visibility(self) -> List[np.ndarray]:
        return self.dense.visibility


_WALL_Z = 2.5


def _look_at(center: np.ndarray, target: np.ndarray) -> RigidTransform:
    fwd = target - center
    fwd = fwd / np.linalg.norm(fwd)
    right = np.cross(fwd, np.array([0.0, 0.0, 1.0]))
    right = right / np.linalg.norm(right)
    down = np.cross(fwd, right)
    rot = UnitQuaternion.from_matrix(np.stack([right, down, fwd]))
    return RigidTransform(rot, -(rot.matrix() @ center))


def _left_poses(spec: SceneSpec, rng: SplitMix64) -> List[RigidTransform]:
    poses = []
    for i in range(spec.n_frames):
        if spec.layout == "orbit":
            theta = 2.0 * math.pi * i / spec.n_frames + rng.uniform(-0.02, 0.02)
            center = np.array(
                [
                    3.5 * math.cos(theta),
                    3.5 * math.sin(theta),
                    rng.uniform(-0.3, 0.3),
                ]
            )
            poses.append(_look_at(center, np.zeros(3)))
        else:
            span = 1.6
            x = -span / 2 + span * (i / max(spec.n_frames - 1, 1))
            center = np.array(
                [
                    x + rng.uniform(-0.03, 0.03),
                    rng.uniform(-0.15, 0.15),
                    rng.uniform(-0.05, 0.05),
                ]
            )
            poses.append(
                RigidTransform(UnitQuaternion.identity(), -center)
            )
    return poses


def _draw_point(spec: SceneSpec, rng: SplitMix64) -> np.ndarray:
    if spec.layout == "orbit":
        return np.array(
            [
                rng.uniform(-1.4, 1.4),
                rng.uniform(-1.4, 1.4),
                rng.uniform(-1.4, 1.4),
            ]
        )
    return np.array(
        [rng.uniform(-1.0, 1.0), rng.uniform(-0.65, 0.65), _WALL_Z]
    )


def _planted_points(spec: SceneSpec) -> List[np.ndarray]:
    """Probe points guaranteeing coverage of a Gaussian hot spot."""
    if not isinstance(spec.thermal_field, GaussianField):
        return []
    f = spec.thermal_field
    pts = [f.center.copy()]
    for k in range(8):
        ang = 2.0 * math.pi * k / 8.0
        offset = 0.4 * f.sigma * np.array([math.cos(ang), math.sin(ang), 0.0])
        pts.append(f.center + offset)
    return pts


def _visibility_matrix(
    views: Sequence[CameraView], points: np.ndarray, margin: float = 2.0
) -> np.ndarray:
    """(N, n_views) flags: projects in front and >= margin px inside the image."""
    vis = np.zeros((len(points), len(views)), dtype=bool)
    for j, view in enumerate(views):
        uv, _, in_front = project_points(view, points)
        w, h = view.image_width, view.image_height
        ok = in_front.copy()
        ok &= np.nan_to_num(uv[:, 0], nan=-1.0) >= margin
        ok &= np.nan_to_num(uv[:, 0], nan=-1.0) <= w - 1 - margin
        ok &= np.nan_to_num(uv[:, 1], nan=-1.0) >= margin
        ok &= np.nan_to_num(uv[:, 1], nan=-1.0) <= h - 1 - margin
        vis[:, j] = ok
    return vis


def _sample_visible_points(
    spec: SceneSpec,
    rng: SplitMix64,
    rgb_views: Sequence[CameraView],
    count: int,
    planted: Sequence[np.ndarray] = (),
) -> Tuple[np.ndarray, np.ndarray]:
    """Rejection-sample points visible in at least one RGB view."""
    kept: List[np.ndarray] = list(planted)[:count]
    while len(kept) < count:
        batch = np.stack(
            [_draw_point(spec, rng) for _ in range(count - len(kept))]
        )
        vis = _visibility_matrix(rgb_views, batch)
        for i in range(len(batch)):
            if vis[i].any():
                kept.append(batch[i])
    points = np.stack(kept[:count])
    return points, _visibility_matrix(rgb_views, points)


def _render_thermal(
    spec: SceneSpec, view: CameraView
) -> np.ndarray:
    """Render one thermal frame as a uint16 raster."""
    w, h = view.image_width, view.image_height
    f = spec.thermal_field
    if isinstance(f, LinearField):
        u = np.arange(w, dtype=np.float64)
        v = np.arange(h, dtype=np.float64)
        img = f.a + np.add.outer(f.c * v, f.b * u)
    else:
        intr = view.intrinsics
        u, v = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
        mdx = (u - intr.cx) / intr.fx
        mdy = (v - intr.cy) / intr.fy
        mx, my = undistort_normalized(intr.k1, mdx.ravel(), mdy.ravel())
        dirs_cam = np.stack([mx, my, np.ones_like(mx)], axis=1)
        r = view.world_to_camera.rotation.matrix()
        center = camera_center(view)
        dirs = dirs_cam @ r  # R^T applied to each row
        t = (_WALL_Z - center[2]) / dirs[:, 2]
        pts = center + t[:, None] * dirs
        img = f.at_point(pts).reshape(h, w)
    return np.clip(np.rint(img), 0, 65535).astype(np.uint16)


def generate_scene(spec: SceneSpec) -> SceneBundle:
    """Build the full deterministic ground-truth bundle for a scene spec."""
    rig = spec.rig
    rng = SplitMix64(spec.seed)
    gauge = spec.gauge()

    poses = _left_poses(spec, rng)
    lw, lh = rig.image_sizes["left"]
    rw, rh = rig.image_sizes["right"]
    left_views = [
        CameraView(rig.intrinsics["left"], p, lw, lh) for p in poses
    ]
    right_views = [
        CameraView(
            rig.intrinsics["right"], compose(rig.right_from_left, p), rw, rh
        )
        for p in poses
    ]
    # NVM camera order interleaves left/right per frame: indices 2f and 2f+1.
    rgb_views: List[CameraView] = []
    for l, r in zip(left_views, right_views):
        rgb_views.extend([l, r])

    sparse_pts, sparse_vis = _sample_visible_points(
        spec, rng, rgb_views, spec.n_sparse
    )
    dense_pts, dense_vis_matrix = _sample_visible_points(
        spec, rng, rgb_views, spec.n_points, planted=_planted_points(spec)
    )

    # gauge-transform and quantize exactly as the fixtures will store them
    dense_gauged = apply_similarity_points(gauge, dense_pts)
    if spec.quantize_positions:
        dense_gauged = dense_gauged.astype(np.float32).astype(np.float64)
    dense_vis = [np.flatnonzero(row).astype(np.int64) for row in dense_vis_matrix]
    dense_colors = np.array(
        [[rng.byte(), rng.byte(), rng.byte()] for _ in range(spec.n_points)],
        dtype=np.uint8,
    )

    nvm_cameras = []
    for f_idx, pose in enumerate(poses):
        for camera_id, view in (("L", left_views[f_idx]), ("R", right_views[f_idx])):
            w2c = view.world_to_camera
            rot = w2c.rotation.multiply(gauge.rotation.conjugate())
            center = apply_similarity(gauge, camera_center(view))
            nvm_cameras.append(
                NvmCamera(
                    image_name=f"{camera_id}_{f_idx:04d}.jpg",
                    focal=view.intrinsics.fx,
                    rotation=rot,
                    center=center,
                    radial=0.0,
                )
            )

    feature_counters = [0] * len(rgb_views)
    nvm_points = []
    for i in range(spec.n_sparse):
        meas = []
        for cam_idx in np.flatnonzero(sparse_vis[i]):
            view = rgb_views[cam_idx]
            uv, _, _ = project_points(view, sparse_pts[i : i + 1])
            meas.append(
                Measurement(
                    int(cam_idx),
                    feature_counters[cam_idx],
                    float(uv[0, 0]),
                    float(uv[0, 1]),
                )
            )
            feature_counters[cam_idx] += 1
        gauged = apply_similarity(gauge, sparse_pts[i])
        nvm_points.append(
            NvmPoint(
                position=gauged,
                color=(rng.byte(), rng.byte(), rng.byte()),
                measurements=meas,
            )
        )
    nvm = NvmModel(nvm_cameras, nvm_points)

    rig_map = rig.rig_map()
    thermal_views = [
        CameraView(
            rig_map.thermal_intrinsics,
            compose(rig.thermal_from_left, p),
            rig_map.image_width,
            rig_map.image_height,
        )
        for p in poses
    ]
    if isinstance(spec.thermal_field, LinearField):
        raster = _render_thermal(spec, thermal_views[0])
        thermal_frames = [
            ThermalFrame(frame_id=2 * f_idx, image=raster)
            for f_idx in range(spec.n_frames)
        ]
    else:
        thermal_frames = [
            ThermalFrame(frame_id=2 * f_idx, image=_render_thermal(spec, tv))
            for f_idx, tv in enumerate(thermal_views)
        ]

    values, valid = _expected_fused(
        spec, rig, nvm, dense_gauged, dense_vis_matrix
    )

    dense = DenseCloud(
        positions=dense_gauged, colors=dense_colors, visibility=dense_vis
    )
    return SceneBundle(
        spec=spec,
        rig=rig,
        left_views=left_views,
        right_views=right_views,
        metric_points=dense_pts,
        nvm=nvm,
        dense=dense,
        thermal_frames=thermal_frames,
        thermal_values=values,
        thermal_valid=valid,
    )


def _expected_fused(
    spec: SceneSpec,
    rig: RigSpec,
    nvm: NvmModel,
    dense_gauged: np.ndarray,
    vis_matrix: np.ndarray,
) -> Tuple[np.ndarray, np.ndarray]:
    """Analytic fused value per dense point, evaluated in the gauge frame.

    Projection through a camera is scale-invariant, so working in the gauge
    frame (with the rig translation scaled by the gauge) gives the same
    pixels the pipeline sees after it recovers metric scale, without this
    oracle depending on the pipeline's scale estimate."""
    field_spec = spec.thermal_field
    intr = rig.intrinsics["thermal"]
    w, h = rig.image_sizes["thermal"]
    r_th = rig.thermal_from_left.rotation.matrix()
    t_th = rig.thermal_from_left.translation * spec.model_scale

    point_field = None
    if isinstance(field_spec, GaussianField):
        # de-gauge once; the world-space field does not depend on the frame
        inv_rot = spec.gauge_rotation.conjugate()
        inv = SimilarityTransform(
            1.0 / spec.model_scale,
            inv_rot,
            -(inv_rot.matrix() @ np.asarray(spec.gauge_translation, float))
            / spec.model_scale,
        )
        point_field = field_spec.at_point(apply_similarity_points(inv, dense_gauged))

    n = len(dense_gauged)
    sums = np.zeros(n)
    counts = np.zeros(n, dtype=np.int64)
    for f_idx in range(spec.n_frames):
        cam = nvm.cameras[2 * f_idx]
        r_l = cam.rotation.matrix()
        x_left = (dense_gauged - cam.center) @ r_l.T
        x_th = x_left @ r_th.T + t_th
        z = x_th[:, 2]
        ok = vis_matrix[:, 2 * f_idx] & (z > 1e-6)
        with np.errstate(divide="ignore", invalid="ignore"):
            mx = np.where(ok, x_th[:, 0] / z, 0.0)
            my = np.where(ok, x_th[:, 1] / z, 0.0)
        dist = 1.0 + intr.k1 * (mx * mx + my * my)
        u = intr.fx * mx * dist + intr.cx
        v = intr.fy * my * dist + intr.cy
        ok &= (u >= 0.0) & (u <= w - 1.0) & (v >= 0.0) & (v <= h - 1.0)
        if isinstance(field_spec, LinearField):
            vals = field_spec.at_pixel(u, v)
        else:
            vals = point_field
        sums[ok] += vals[ok]
        counts[ok] += 1

    valid = counts >= 1
    values = np.where(valid, sums / np.maximum(counts, 1), 0.0)
    return values, valid


# --- calibration fixtures --------------------------------------------------------


@dataclass(eq=False)
class CalibrationSample:
    corner_sets: List[CornerSet]
    board_poses: Dict[int, RigidTransform]  # true board-to-left poses


def generate_calibration_corners(
    rig: RigSpec,
    board: BoardSpec,
    n_views: int,
    seed: int = 0,
    noise_px: float = 0.0,
) -> CalibrationSample:
    """Random board placements whose corners land inside all three cameras.

    Corner pixels are exact projections of the board grid through the true
    rig, plus optional Gaussian noise per coordinate."""
    rng = SplitMix64(seed)
    xy = board.board_xy()
    board3 = np.concatenate([xy, np.zeros((len(xy), 1))], axis=1)
    board_center = board3.mean(axis=0)

    rigs = {
        "left": RigidTransform.identity(),
        "right": rig.right_from_left,
        "thermal": rig.thermal_from_left,
    }
    corner_sets: List[CornerSet] = []
    true_poses: Dict[int, RigidTransform] = {}
    view_id = 0
    attempts = 0
    while view_id < n_views:
        attempts += 1
        if attempts > 200 * n_views:
            raise RuntimeError("could not place enough boards in all cameras")
        axis = np.array([rng.normal(), rng.normal(), rng.normal()])
        norm = np.linalg.norm(axis)
        if norm < 1e-9:
            continue
        # strong tilts and wide placement spread keep the focal lengths and
        # the principal points observable at realistic noise levels
        angle = rng.uniform(0.3, 0.85)
        rot = UnitQuaternion.from_axis_angle(axis / norm * angle)
        target = np.array(
            [
                rng.uniform(-0.16, 0.16),
                rng.uniform(-0.12, 0.12),
                rng.uniform(0.6, 1.15),
            ]
        )
        pose = RigidTransform(rot, target - rot.matrix() @ board_center)

        sets = []
        ok = True
        for camera_id in CAMERA_IDS:
            w, hgt = rig.image_sizes[camera_id]
            view = CameraView(
                rig.intrinsics[camera_id], compose(rigs[camera_id], pose), w, hgt
            )
            uv, _, in_front = project_points(view, board3)
            if not in_front.all():
                ok = False
                break
            margin = 5.0
            if (
                uv[:, 0].min() < margin
                or uv[:, 0].max() > w - 1 - margin
                or uv[:, 1].min() < margin
                or uv[:, 1].max() > hgt - 1 - margin
            ):
                ok = False
                break
            if noise_px > 0:
                noise = np.array(
                    [
                        [rng.normal(0.0, noise_px), rng.normal(0.0, noise_px)]
                        for _ in range(len(uv))
                    ]
                )
                uv = uv + noise
            sets.append(CornerSet(view_id, camera_id, uv))
        if not ok:
            continue
        corner_sets.extend(sets)
        true_poses[view_id] = pose
        view_id += 1

    return CalibrationSample(corner_sets=corner_sets, board_poses=true_poses)


# --- standalone occlusion scene ---------------------------------------------------


def two_plane_occlusion_scene(
    seed: int = 0, n_points: int = 4000
) -> Tuple[DenseCloud, CameraView, np.ndarray]:
    """One camera facing a small near plane that occludes part of a far plane.

    The near plane is a regular grid dense enough that default-radius splats
    tile its projection without holes; ``n_points`` random probes populate
    the far plane. Ground-truth visibility is analytic: near-plane points
    are always visible; a far-plane point is hidden iff its projection falls
    inside the near plane's projected rectangle."""
    rng = SplitMix64(seed)
    intr = CameraIntrinsics(fx=600.0, fy=600.0, cx=319.5, cy=239.5)
    view = CameraView(intr, RigidTransform.identity(), 640, 480)

    near_x, near_y, near_z = 0.5, 0.35, 2.0
    # grid step ~4.5 px when projected, below the 5 px splat footprint
    gx = np.linspace(-near_x, near_x, 68)
    gy = np.linspace(-near_y, near_y, 48)
    xx, yy = np.meshgrid(gx, gy)
    near = np.stack([xx.ravel(), yy.ravel(), np.full(xx.size, near_z)], axis=1)

    far = np.array(
        [
            [rng.uniform(-2.0, 2.0), rng.uniform(-1.5, 1.5), 4.0]
            for _ in range(n_points)
        ]
    )
    positions = np.concatenate([near, far])

    visible = np.ones(len(positions), dtype=bool)
    is_far = positions[:, 2] > near_z
    behind_u = np.abs(positions[:, 0] / positions[:, 2]) < near_x / near_z
    behind_v = np.abs(positions[:, 1] / positions[:, 2]) < near_y / near_z
    visible[is_far & behind_u & behind_v] = False

    colors = np.full((len(positions), 3), 128, dtype=np.uint8)
    return DenseCloud(positions=positions, colors=colors), view, visible


# --- fixture export ----------------------------------------------------------------


def export_fixtures(
    bundle: SceneBundle, outdir: Path, ply_mode: str = "binary"
) -> Dict[str, Path]:
    """Write the NVM/PLY/patch/PGM fixture set plus ground-truth manifests."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "thermal").mkdir(exist_ok=True)

    paths = {
        "nvm": outdir / "model.nvm",
        "ply": outdir / "dense.ply",
        "patch": outdir / "model.patch",
        "truth": outdir / "truth.txt",
        "thermal_truth": outdir / "thermal_truth.txt",
    }
    paths["nvm"].write_text(write_nvm(bundle.nvm))
    paths["ply"].write_bytes(write_dense_ply(bundle.dense, mode=ply_mode))
    paths["patch"].write_text(
        write_patch(bundle.dense.positions, bundle.dense.visibility)
    )
    for f_idx, frame in enumerate(bundle.thermal_frames):
        (outdir / "thermal" / f"T_{f_idx:04d}.pgm").write_bytes(
            write_pgm(frame.image)
        )

    spec = bundle.spec
    field_spec = spec.thermal_field
    pairs = [
        ("format", TRUTH_FORMAT),
        ("seed", str(spec.seed)),
        ("layout", spec.layout),
        ("n_frames", str(spec.n_frames)),
        ("n_points", str(spec.n_points)),
        ("n_sparse", str(spec.n_sparse)),
        ("model_scale", kv.format_float(spec.model_scale)),
        ("expected_scale", kv.format_float(1.0 / spec.model_scale)),
        ("baseline", kv.format_float(bundle.rig.baseline)),
    ]
    if isinstance(field_spec, LinearField):
        pairs.append(("field", "linear"))
        pairs.append(
            (
                "field.params",
                " ".join(
                    kv.format_float(x) for x in (field_spec.a, field_spec.b, field_spec.c)
                ),
            )
        )
    else:
        pairs.append(("field", "gaussian"))
        pairs.append(
            (
                "field.params",
                " ".join(
                    kv.format_float(x)
                    for x in (
                        *field_spec.center,
                        field_spec.sigma,
                        field_spec.amplitude,
                        field_spec.background,
                    )
                ),
            )
        )
    paths["truth"].write_text(kv.write_kv(pairs))

    lines = [f"thermal_truth {len(bundle.thermal_values)}"]
    for i in range(len(bundle.thermal_values)):
        lines.append(
            f"{int(bundle.thermal_valid[i])} {kv.format_float(bundle.thermal_values[i])}"
        )
    paths["thermal_truth"].write_text("\n".join(lines) + "\n")
    return paths
