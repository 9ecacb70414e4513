"""Back-projection of dense points into thermal frames.

Each dense 3D point is projected into every thermal camera associated with
a frame that sees it; in-bounds samples are averaged (plain arithmetic
mean, in ascending camera-index order) and attached to the point. Points
that collect no sample keep their geometry and color but carry a false
validity flag.

Thermal frames are keyed by the NVM index of the left RGB camera captured
alongside them; the thermal camera's pose for a frame is
``thermal_from_left @ world_to_left``. Sampling is bilinear over the pixel-
center hull [0, w-1] x [0, h-1] (nearest-neighbor available for ablation).
When no PMVS visibility is available, visibility can be transferred from
the sparse model or recomputed with a splatted z-buffer.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree

from .errors import BadHeader, MalformedNumber, TruncatedFile, UnsupportedFormat
from .geometry import (
    CameraIntrinsics,
    CameraView,
    Pixel,
    RigidTransform,
    compose,
    project_points,
)
from .sfm_io import DenseCloud, FusedPoint, NvmModel


@dataclass(frozen=True, eq=False)
class ThermalFrame:
    """One thermal image, keyed to the left-RGB NVM camera index."""

    frame_id: int
    image: np.ndarray  # (H, W) uint8 or uint16

    def __post_init__(self):
        img = np.asarray(self.image)
        if img.ndim != 2 or img.shape[0] < 1 or img.shape[1] < 1:
            raise ValueError("thermal image must be a non-empty 2-D raster")
        if img.dtype not in (np.uint8, np.uint16):
            raise ValueError("thermal image must be uint8 or uint16")
        object.__setattr__(self, "image", img)

    @property
    def height(self) -> int:
        return self.image.shape[0]

    @property
    def width(self) -> int:
        return self.image.shape[1]


@dataclass(frozen=True, eq=False)
class ThermalRigMap:
    """Thermal camera intrinsics + pose relative to the left RGB camera."""

    thermal_intrinsics: CameraIntrinsics
    thermal_from_left: RigidTransform
    image_width: int
    image_height: int


def thermal_view(left_view: CameraView, rig: ThermalRigMap) -> CameraView:
    """The thermal camera's view for a frame given the left camera's view."""
    return CameraView(
        rig.thermal_intrinsics,
        compose(rig.thermal_from_left, left_view.world_to_camera),
        rig.image_width,
        rig.image_height,
    )


# --- sampling -------------------------------------------------------------------


def _sample_bilinear_many(
    image: np.ndarray, uv: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """Bilinear samples at (N, 2) pixel coordinates; (values, in_bounds)."""
    h, w = image.shape
    u, v = uv[:, 0], uv[:, 1]
    ok = (u >= 0.0) & (u <= w - 1.0) & (v >= 0.0) & (v <= h - 1.0)
    ok &= np.isfinite(u) & np.isfinite(v)
    uc = np.where(ok, u, 0.0)
    vc = np.where(ok, v, 0.0)
    i0 = np.floor(uc).astype(np.int64)
    j0 = np.floor(vc).astype(np.int64)
    i1 = np.minimum(i0 + 1, w - 1)
    j1 = np.minimum(j0 + 1, h - 1)
    fu = uc - i0
    fv = vc - j0
    img = image.astype(np.float64)
    vals = (1.0 - fv) * ((1.0 - fu) * img[j0, i0] + fu * img[j0, i1]) + fv * (
        (1.0 - fu) * img[j1, i0] + fu * img[j1, i1]
    )
    return vals, ok


def _sample_nearest_many(
    image: np.ndarray, uv: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    h, w = image.shape
    u, v = uv[:, 0], uv[:, 1]
    ok = (u >= 0.0) & (u <= w - 1.0) & (v >= 0.0) & (v <= h - 1.0)
    ok &= np.isfinite(u) & np.isfinite(v)
    i = np.rint(np.where(ok, u, 0.0)).astype(np.int64)
    j = np.rint(np.where(ok, v, 0.0)).astype(np.int64)
    return image[j, i].astype(np.float64), ok


_SAMPLERS = {"bilinear": _sample_bilinear_many, "nearest": _sample_nearest_many}


def sample_bilinear(frame: ThermalFrame, pixel: Pixel) -> Optional[float]:
    """Bilinear intensity at a pixel, or None outside [0, w-1] x [0, h-1]."""
    vals, ok = _sample_bilinear_many(
        frame.image, np.array([[pixel[0], pixel[1]]], dtype=np.float64)
    )
    return float(vals[0]) if ok[0] else None


# --- visibility -----------------------------------------------------------------


def zbuffer_visibility(
    cloud: DenseCloud,
    view: CameraView,
    splat_radius: float = 2.0,
    depth_tol: float = 0.01,
) -> np.ndarray:
    """Occlusion flags from a splatted depth buffer at the view's resolution.

    Every point is splatted into a square window of half-width
    round(splat_radius) around its rounded pixel; a point is visible iff it
    projects in front of the camera, inside the image, and its depth is
    within (1 + depth_tol) of the buffer minimum at its own pixel."""
    h, w = view.image_height, view.image_width
    uv, depth, in_front = project_points(view, cloud.positions)
    ui = np.rint(np.where(in_front, uv[:, 0], -1.0)).astype(np.int64)
    vi = np.rint(np.where(in_front, uv[:, 1], -1.0)).astype(np.int64)
    candidate = in_front & (ui >= 0) & (ui < w) & (vi >= 0) & (vi < h)

    buffer = np.full((h, w), np.inf)
    r = int(round(splat_radius))
    cu, cv, cd = ui[candidate], vi[candidate], depth[candidate]
    for dy in range(-r, r + 1):
        yy = cv + dy
        for dx in range(-r, r + 1):
            xx = cu + dx
            m = (xx >= 0) & (xx < w) & (yy >= 0) & (yy < h)
            np.minimum.at(buffer, (yy[m], xx[m]), cd[m])

    visible = np.zeros(len(cloud), dtype=bool)
    visible[candidate] = depth[candidate] <= (1.0 + depth_tol) * buffer[
        vi[candidate], ui[candidate]
    ]
    return visible


def transfer_sparse_visibility(
    cloud: DenseCloud, model: NvmModel
) -> List[np.ndarray]:
    """Per-dense-point camera lists copied from the nearest sparse point."""
    if not model.points:
        raise ValueError("sparse model has no points to transfer visibility from")
    sparse_pos = np.stack([p.position for p in model.points])
    sparse_vis = [
        np.unique(np.array([m.camera_index for m in p.measurements], dtype=np.int64))
        for p in model.points
    ]
    _, nearest = cKDTree(sparse_pos).query(cloud.positions, k=1)
    return [sparse_vis[int(i)] for i in np.atleast_1d(nearest)]


# --- fusion --------------------------------------------------------------------


def fuse(
    cloud: DenseCloud,
    visibility: Sequence[np.ndarray],
    frames: Sequence[ThermalFrame],
    left_views: Dict[int, CameraView],
    rig: ThermalRigMap,
    interpolation: str = "bilinear",
    threads: int = 1,
) -> List[FusedPoint]:
    """Attach an averaged thermal intensity to every dense point.

    For each point, its visible camera indices are walked in ascending
    order; indices without a thermal frame contribute nothing, as do
    projections behind the camera or outside the image. The mean is taken
    in that fixed order, so the result is independent of threading."""
    if interpolation not in _SAMPLERS:
        raise ValueError(f"unknown interpolation {interpolation!r}")
    if len(visibility) != len(cloud):
        raise ValueError("visibility list length does not match the cloud")
    frames_by_id: Dict[int, ThermalFrame] = {}
    for f in frames:
        if f.frame_id in frames_by_id:
            raise ValueError(f"duplicate thermal frame for camera {f.frame_id}")
        if f.frame_id not in left_views:
            raise ValueError(f"no left view for thermal frame {f.frame_id}")
        frames_by_id[f.frame_id] = f

    n = len(cloud)
    sums = np.zeros(n)
    counts = np.zeros(n, dtype=np.int64)
    views = {c: thermal_view(left_views[c], rig) for c in frames_by_id}
    sampler = _SAMPLERS[interpolation]

    def fuse_range(lo: int, hi: int) -> None:
        by_camera: Dict[int, List[int]] = {}
        for i in range(lo, hi):
            for c in {int(c) for c in visibility[i]}:
                if c in frames_by_id:
                    by_camera.setdefault(c, []).append(i)
        for c in sorted(by_camera):
            idx = np.array(by_camera[c], dtype=np.int64)
            uv, _, in_front = project_points(views[c], cloud.positions[idx])
            vals, ok = sampler(frames_by_id[c].image, uv)
            ok &= in_front
            sums[idx[ok]] += vals[ok]
            counts[idx[ok]] += 1

    threads = max(1, int(threads))
    if threads == 1 or n < 2:
        fuse_range(0, n)
    else:
        bounds = np.linspace(0, n, min(threads, n) + 1).astype(int)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(lambda b: fuse_range(*b), zip(bounds[:-1], bounds[1:])))

    out = []
    for i in range(n):
        k = int(counts[i])
        out.append(
            FusedPoint(
                position=cloud.positions[i].copy(),
                color=tuple(int(v) for v in cloud.colors[i]),
                thermal=float(sums[i] / k) if k else 0.0,
                thermal_valid=k >= 1,
                sample_count=k,
            )
        )
    return out


# --- thermal image I/O ------------------------------------------------------------


def parse_pgm(data: bytes) -> np.ndarray:
    """Read a binary PGM (P5); 16-bit rasters are big-endian per convention."""
    pos = 0

    def next_token() -> bytes:
        nonlocal pos
        while pos < len(data):
            if data[pos : pos + 1].isspace():
                pos += 1
            elif data[pos : pos + 1] == b"#":
                end = data.find(b"\n", pos)
                pos = len(data) if end < 0 else end + 1
            else:
                break
        if pos >= len(data):
            raise TruncatedFile("PGM header ended early")
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        return data[start:pos]

    magic = next_token()
    if magic != b"P5":
        raise BadHeader(f"expected P5, got {magic!r}")
    dims = []
    for what in ("width", "height", "maxval"):
        tok = next_token()
        try:
            dims.append(int(tok))
        except ValueError:
            raise MalformedNumber(f"PGM {what}: {tok!r}") from None
    width, height, maxval = dims
    if width < 1 or height < 1:
        raise MalformedNumber("PGM dimensions must be positive")
    if not 0 < maxval < 65536:
        raise UnsupportedFormat(f"PGM maxval {maxval} out of range")
    pos += 1  # single whitespace byte after maxval
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    nbytes = width * height * dtype.itemsize
    if len(data) - pos < nbytes:
        raise TruncatedFile(f"PGM raster needs {nbytes} bytes")
    raster = np.frombuffer(data, dtype=dtype, count=width * height, offset=pos)
    image = raster.reshape(height, width)
    return image.astype(np.uint16) if maxval > 255 else image.copy()


def write_pgm(image: np.ndarray) -> bytes:
    image = np.asarray(image)
    if image.dtype == np.uint8:
        maxval, payload = 255, image.tobytes()
    elif image.dtype == np.uint16:
        maxval, payload = 65535, image.astype(">u2").tobytes()
    else:
        raise ValueError("PGM output supports uint8 or uint16 images")
    h, w = image.shape
    return f"P5\n{w} {h}\n{maxval}\n".encode("ascii") + payload


def read_thermal_image(path: str) -> np.ndarray:
    """Load a thermal raster from a PGM (P5) or 8/16-bit grayscale PNG."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:2] == b"P5":
        return parse_pgm(data)
    if data[:8] == b"\x89PNG\r\n\x1a\n":
        from PIL import Image
        import io

        img = Image.open(io.BytesIO(data))
        if img.mode == "L":
            return np.asarray(img, dtype=np.uint8)
        if img.mode in ("I;16", "I;16B", "I"):
            arr = np.asarray(img)
            if arr.dtype == np.int32:
                if arr.min() < 0 or arr.max() > 65535:
                    raise UnsupportedFormat("PNG intensities exceed 16-bit range")
                arr = arr.astype(np.uint16)
            return arr.astype(np.uint16)
        raise UnsupportedFormat(f"PNG mode {img.mode!r} is not grayscale 8/16-bit")
    raise BadHeader(f"{path}: neither PGM (P5) nor PNG")
