"""Codecs for the SfM tool chain's interchange files.

Reads NVM_V3 sparse models, PLY 1.0 dense clouds (ascii or binary little
endian) and PMVS ``.patch`` visibility files; writes NVM and the fused
output PLY. Exact grammars are documented in docs/formats.md. Parsers are
whitespace-tolerant, never read past declared counts, validate referenced
indices eagerly, and raise only :class:`~thermocloud.errors.ParseError`
subclasses on bad input.

NVM camera records store the camera *center*; the world-to-camera
translation is derived as ``t = -R @ C``. The per-camera radial coefficient
is kept verbatim and not applied unless explicitly requested, since
exporter conventions differ.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from . import kv
from .errors import (
    BadHeader,
    CountMismatch,
    IndexOutOfRange,
    MalformedNumber,
    MissingProperty,
    ParseError,
    TruncatedFile,
    UnsupportedFormat,
)
from .geometry import CameraIntrinsics, CameraView, RigidTransform, UnitQuaternion

NVM_HEADER = "NVM_V3"
PATCH_HEADER = "PATCHES"


# --- model types -------------------------------------------------------------


class Measurement(NamedTuple):
    camera_index: int
    feature_index: int
    x: float
    y: float


@dataclass(eq=False)
class NvmCamera:
    image_name: str
    focal: float
    rotation: UnitQuaternion  # world-to-camera
    center: np.ndarray  # camera center, model units
    radial: float = 0.0

    def world_to_camera(self) -> RigidTransform:
        return RigidTransform(self.rotation, -(self.rotation.matrix() @ self.center))


@dataclass(eq=False)
class NvmPoint:
    position: np.ndarray
    color: Tuple[int, int, int]
    measurements: List[Measurement]


@dataclass(eq=False)
class NvmModel:
    cameras: List[NvmCamera] = field(default_factory=list)
    points: List[NvmPoint] = field(default_factory=list)


@dataclass(eq=False)
class DenseCloud:
    """Dense reconstructed points with RGB color and optional per-point
    visible-camera index lists (ascending, validated against the model)."""

    positions: np.ndarray  # (N, 3) float64
    colors: np.ndarray  # (N, 3) uint8
    visibility: Optional[List[np.ndarray]] = None

    def __len__(self) -> int:
        return len(self.positions)


@dataclass(eq=False)
class FusedPoint:
    """A dense point with its averaged thermal intensity attached."""

    position: np.ndarray
    color: Tuple[int, int, int]
    thermal: float
    thermal_valid: bool
    sample_count: int

    def __post_init__(self):
        if self.thermal_valid and self.sample_count < 1:
            raise ValueError("valid fused point needs at least one sample")
        if not self.thermal_valid and self.sample_count != 0:
            raise ValueError("invalid fused point must have sample_count 0")


def nvm_camera_to_view(
    camera: NvmCamera,
    image_width: int,
    image_height: int,
    apply_radial: bool = False,
) -> CameraView:
    """Build a CameraView from an NVM record.

    NVM stores a single focal length and no principal point; the principal
    point is assumed at the image center. The file's radial coefficient is
    applied only when asked for, because exporters disagree on its meaning.
    """
    intr = CameraIntrinsics(
        fx=camera.focal,
        fy=camera.focal,
        cx=(image_width - 1) / 2.0,
        cy=(image_height - 1) / 2.0,
        k1=camera.radial if apply_radial else 0.0,
    )
    return CameraView(intr, camera.world_to_camera(), image_width, image_height)


def validate_visibility(
    visibility: Sequence[np.ndarray], camera_count: int
) -> List[np.ndarray]:
    """Check index lists against the camera count; returns sorted int arrays."""
    out = []
    for i, indices in enumerate(visibility):
        arr = np.unique(np.asarray(indices, dtype=np.int64))
        if arr.size and (arr[0] < 0 or arr[-1] >= camera_count):
            raise IndexOutOfRange(
                f"point {i}: camera index out of range 0..{camera_count - 1}"
            )
        out.append(arr)
    return out


# --- token stream -------------------------------------------------------------


class _Tokens:
    def __init__(self, text: str):
        self._tokens = text.split()
        self._pos = 0

    def next(self, what: str) -> str:
        if self._pos >= len(self._tokens):
            raise TruncatedFile(f"stream ended while reading {what}")
        tok = self._tokens[self._pos]
        self._pos += 1
        return tok

    def at_end(self) -> bool:
        return self._pos >= len(self._tokens)

    def next_int(self, what: str, minimum: Optional[int] = None) -> int:
        tok = self.next(what)
        try:
            value = int(tok)
        except ValueError:
            raise MalformedNumber(f"{what}: {tok!r} is not an integer") from None
        if minimum is not None and value < minimum:
            raise MalformedNumber(f"{what}: {value} is below {minimum}")
        return value

    def next_float(self, what: str, finite: bool = True) -> float:
        tok = self.next(what)
        try:
            value = float(tok)
        except ValueError:
            raise MalformedNumber(f"{what}: {tok!r} is not a number") from None
        if finite and not math.isfinite(value):
            raise MalformedNumber(f"{what}: {tok!r} is not finite")
        return value

    def next_byte(self, what: str) -> int:
        value = self.next_int(what, minimum=0)
        if value > 255:
            raise MalformedNumber(f"{what}: {value} exceeds 255")
        return value


# --- NVM -----------------------------------------------------------------------


def parse_nvm(text: str) -> NvmModel:
    """Parse an NVM_V3 sparse model.

    Camera records are ``name focal qw qx qy qz cx cy cz radial 0``; point
    records are ``x y z r g b m`` followed by m ``(image feature x y)``
    measurements. Content after the point block is ignored."""
    toks = _Tokens(text)
    header = toks.next("header")
    if header != NVM_HEADER:
        raise BadHeader(f"expected {NVM_HEADER}, got {header!r}")

    n_cameras = toks.next_int("camera count", minimum=0)
    cameras = []
    for i in range(n_cameras):
        name = toks.next(f"camera {i} name")
        focal = toks.next_float(f"camera {i} focal")
        if focal <= 0:
            raise MalformedNumber(f"camera {i}: focal must be positive")
        q = [toks.next_float(f"camera {i} quaternion") for _ in range(4)]
        center = np.array([toks.next_float(f"camera {i} center") for _ in range(3)])
        radial = toks.next_float(f"camera {i} radial")
        toks.next_float(f"camera {i} trailing zero")
        try:
            rotation = UnitQuaternion(*q)
        except ValueError as e:
            raise MalformedNumber(f"camera {i}: {e}") from None
        cameras.append(NvmCamera(name, focal, rotation, center, radial))

    n_points = toks.next_int("point count", minimum=0)
    points = []
    for i in range(n_points):
        position = np.array([toks.next_float(f"point {i} position") for _ in range(3)])
        color = tuple(toks.next_byte(f"point {i} color") for _ in range(3))
        n_meas = toks.next_int(f"point {i} measurement count", minimum=1)
        measurements = []
        for j in range(n_meas):
            cam_idx = toks.next_int(f"point {i} measurement {j} image", minimum=0)
            if cam_idx >= n_cameras:
                raise IndexOutOfRange(
                    f"point {i} measurement {j}: camera {cam_idx} "
                    f"not in 0..{n_cameras - 1}"
                )
            feat_idx = toks.next_int(f"point {i} measurement {j} feature", minimum=0)
            x = toks.next_float(f"point {i} measurement {j} x")
            y = toks.next_float(f"point {i} measurement {j} y")
            measurements.append(Measurement(cam_idx, feat_idx, x, y))
        points.append(NvmPoint(position, color, measurements))

    return NvmModel(cameras, points)


def write_nvm(model: NvmModel) -> str:
    """Serialize to NVM_V3; floats carry 17 significant digits."""
    f = kv.format_float
    lines = [NVM_HEADER, "", str(len(model.cameras))]
    for cam in model.cameras:
        q = cam.rotation
        lines.append(
            f"{cam.image_name} {f(cam.focal)} "
            f"{f(q.w)} {f(q.x)} {f(q.y)} {f(q.z)} "
            f"{f(cam.center[0])} {f(cam.center[1])} {f(cam.center[2])} "
            f"{f(cam.radial)} 0"
        )
    lines.append("")
    lines.append(str(len(model.points)))
    for p in model.points:
        parts = [f(p.position[0]), f(p.position[1]), f(p.position[2])]
        parts += [str(c) for c in p.color]
        parts.append(str(len(p.measurements)))
        for m in p.measurements:
            parts += [str(m.camera_index), str(m.feature_index), f(m.x), f(m.y)]
        lines.append(" ".join(parts))
    return "\n".join(lines) + "\n"


# --- PLY -------------------------------------------------------------------------

_PLY_SCALAR = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


def _read_ply_vertex_table(data: bytes):
    """Parse header + vertex data; returns (columns dict, property types)."""
    pos = 0

    def read_line() -> str:
        nonlocal pos
        end = data.find(b"\n", pos)
        if end < 0:
            raise TruncatedFile("header ended before end_header")
        line = data[pos:end]
        pos = end + 1
        try:
            return line.decode("ascii").strip()
        except UnicodeDecodeError:
            raise BadHeader("header is not ascii") from None

    if read_line() != "ply":
        raise BadHeader("missing 'ply' magic")

    fmt = None
    vertex_count = None
    properties: List[Tuple[str, str]] = []  # (name, numpy type code)
    in_vertex = False
    seen_element = False
    while True:
        line = read_line()
        if line == "end_header":
            break
        parts = line.split()
        if not parts or parts[0] == "comment" or parts[0] == "obj_info":
            continue
        if parts[0] == "format":
            if len(parts) != 3 or parts[2] != "1.0":
                raise UnsupportedFormat(f"bad format line {line!r}")
            if parts[1] not in ("ascii", "binary_little_endian"):
                raise UnsupportedFormat(f"unsupported format {parts[1]!r}")
            fmt = parts[1]
        elif parts[0] == "element":
            if len(parts) != 3:
                raise BadHeader(f"bad element line {line!r}")
            if parts[1] == "vertex":
                if seen_element:
                    raise UnsupportedFormat("vertex element must come first")
                try:
                    vertex_count = int(parts[2])
                except ValueError:
                    raise MalformedNumber(f"bad vertex count {parts[2]!r}") from None
                if vertex_count < 0:
                    raise MalformedNumber("vertex count must be >= 0")
                in_vertex = True
            else:
                in_vertex = False
            seen_element = True
        elif parts[0] == "property":
            if not in_vertex:
                continue
            if len(parts) < 2:
                raise BadHeader(f"bad property line {line!r}")
            if parts[1] == "list":
                raise UnsupportedFormat("list properties unsupported in vertex")
            if len(parts) != 3:
                raise BadHeader(f"bad property line {line!r}")
            if parts[1] not in _PLY_SCALAR:
                raise UnsupportedFormat(f"unknown property type {parts[1]!r}")
            properties.append((parts[2], _PLY_SCALAR[parts[1]]))

    if fmt is None:
        raise BadHeader("missing format line")
    if vertex_count is None:
        raise MissingProperty("no vertex element")
    if not properties:
        raise MissingProperty("vertex element has no properties")

    names = [name for name, _ in properties]
    if len(set(names)) != len(names):
        raise BadHeader("duplicate vertex property names")

    if fmt == "binary_little_endian":
        dtype = np.dtype([(name, "<" + code) for name, code in properties])
        nbytes = vertex_count * dtype.itemsize
        if len(data) - pos < nbytes:
            raise TruncatedFile(
                f"vertex data needs {nbytes} bytes, {len(data) - pos} available"
            )
        table = np.frombuffer(data, dtype=dtype, count=vertex_count, offset=pos)
        columns = {name: table[name] for name in names}
    else:
        toks = _Tokens(data[pos:].decode("ascii", errors="replace"))
        n_needed = vertex_count * len(properties)
        if len(toks._tokens) < n_needed:
            raise TruncatedFile(
                f"vertex data needs {n_needed} values, "
                f"{len(toks._tokens)} available"
            )
        raw = np.empty((vertex_count, len(properties)))
        for i in range(vertex_count):
            for j, (name, _) in enumerate(properties):
                raw[i, j] = toks.next_float(
                    f"vertex {i} property {name}", finite=True
                )
        columns = {}
        for j, (name, code) in enumerate(properties):
            col = raw[:, j]
            if code[0] in "iu":
                rounded = np.rint(col)
                info = np.iinfo(np.dtype(code))
                if np.any((rounded < info.min) | (rounded > info.max)):
                    raise MalformedNumber(f"property {name}: value out of range")
                col = rounded.astype(code)
            else:
                col = col.astype(code)
            columns[name] = col
    types = dict(properties)
    return columns, types


def _require_property(columns, types, name: str, allowed: Tuple[str, ...]):
    if name not in columns:
        raise MissingProperty(f"vertex property {name!r} not present")
    if types[name] not in allowed:
        raise UnsupportedFormat(
            f"property {name!r} has type {types[name]}, expected {allowed}"
        )
    return columns[name]


def parse_ply(data: bytes) -> DenseCloud:
    """Read a dense point cloud: needs x/y/z (float32 or float64) and
    red/green/blue (uint8); other vertex properties are skipped."""
    columns, types = _read_ply_vertex_table(data)
    xyz = [_require_property(columns, types, n, ("f4", "f8")) for n in "xyz"]
    rgb = [
        _require_property(columns, types, n, ("u1",))
        for n in ("red", "green", "blue")
    ]
    positions = np.stack([c.astype(np.float64) for c in xyz], axis=1)
    if not np.all(np.isfinite(positions)):
        raise MalformedNumber("non-finite vertex position")
    colors = np.stack(rgb, axis=1).astype(np.uint8)
    return DenseCloud(positions=positions, colors=colors)


def read_fused_ply(data: bytes) -> List[FusedPoint]:
    """Read back a fused cloud written by :func:`write_fused_ply`."""
    columns, types = _read_ply_vertex_table(data)
    xyz = [_require_property(columns, types, n, ("f4", "f8")) for n in "xyz"]
    rgb = [
        _require_property(columns, types, n, ("u1",))
        for n in ("red", "green", "blue")
    ]
    thermal = _require_property(columns, types, "thermal", ("f4",))
    valid = _require_property(columns, types, "thermal_valid", ("u1",))
    points = []
    for i in range(len(thermal)):
        is_valid = bool(valid[i])
        points.append(
            FusedPoint(
                position=np.array([float(c[i]) for c in xyz]),
                color=(int(rgb[0][i]), int(rgb[1][i]), int(rgb[2][i])),
                thermal=float(thermal[i]),
                thermal_valid=is_valid,
                sample_count=1 if is_valid else 0,
            )
        )
    return points


_FUSED_DTYPE = np.dtype(
    [
        ("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
        ("red", "u1"), ("green", "u1"), ("blue", "u1"),
        ("thermal", "<f4"), ("thermal_valid", "u1"),
    ]
)


def write_fused_ply(points: Sequence[FusedPoint], mode: str = "binary") -> bytes:
    """Write the thermal cloud as PLY 1.0 (``mode`` is 'ascii' or 'binary').

    Vertex schema: x y z float32, red green blue uint8, thermal float32,
    thermal_valid uint8. Invalid points carry thermal 0.0 and flag 0."""
    if mode not in ("ascii", "binary"):
        raise ValueError(f"mode must be 'ascii' or 'binary', got {mode!r}")
    fmt = "ascii 1.0" if mode == "ascii" else "binary_little_endian 1.0"
    header = (
        "ply\n"
        f"format {fmt}\n"
        f"element vertex {len(points)}\n"
        "property float x\n"
        "property float y\n"
        "property float z\n"
        "property uchar red\n"
        "property uchar green\n"
        "property uchar blue\n"
        "property float thermal\n"
        "property uchar thermal_valid\n"
        "end_header\n"
    )
    table = np.zeros(len(points), dtype=_FUSED_DTYPE)
    for i, p in enumerate(points):
        table[i] = (
            p.position[0], p.position[1], p.position[2],
            p.color[0], p.color[1], p.color[2],
            p.thermal if p.thermal_valid else 0.0,
            1 if p.thermal_valid else 0,
        )
    if mode == "binary":
        return header.encode("ascii") + table.tobytes()
    lines = []
    for row in table:
        lines.append(
            f"{row['x']:.9g} {row['y']:.9g} {row['z']:.9g} "
            f"{row['red']} {row['green']} {row['blue']} "
            f"{row['thermal']:.9g} {row['thermal_valid']}"
        )
    return (header + "\n".join(lines) + ("\n" if lines else "")).encode("ascii")


def write_dense_ply(
    cloud: DenseCloud, mode: str = "binary", with_normals: bool = False
) -> bytes:
    """Write an input-style dense cloud (x y z float32 + red green blue uint8).

    ``with_normals`` adds zero nx/ny/nz columns, matching what the dense
    expansion tools emit; readers here skip them."""
    if mode not in ("ascii", "binary"):
        raise ValueError(f"mode must be 'ascii' or 'binary', got {mode!r}")
    fmt = "ascii 1.0" if mode == "ascii" else "binary_little_endian 1.0"
    fields = [("x", "<f4"), ("y", "<f4"), ("z", "<f4")]
    if with_normals:
        fields += [("nx", "<f4"), ("ny", "<f4"), ("nz", "<f4")]
    fields += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
    header_props = "".join(
        f"property {'float' if code.endswith('f4') else 'uchar'} {name}\n"
        for name, code in fields
    )
    header = (
        "ply\n"
        f"format {fmt}\n"
        f"element vertex {len(cloud)}\n"
        f"{header_props}"
        "end_header\n"
    )
    table = np.zeros(len(cloud), dtype=np.dtype(fields))
    table["x"] = cloud.positions[:, 0].astype(np.float32)
    table["y"] = cloud.positions[:, 1].astype(np.float32)
    table["z"] = cloud.positions[:, 2].astype(np.float32)
    table["red"] = cloud.colors[:, 0]
    table["green"] = cloud.colors[:, 1]
    table["blue"] = cloud.colors[:, 2]
    if mode == "binary":
        return header.encode("ascii") + table.tobytes()
    lines = []
    for row in table:
        parts = [f"{row[name]:.9g}" if code.endswith("f4") else str(row[name])
                 for name, code in fields]
        lines.append(" ".join(parts))
    return (header + "\n".join(lines) + ("\n" if lines else "")).encode("ascii")


# --- PMVS patch files ---------------------------------------------------------


def parse_patch(text: str) -> List[np.ndarray]:
    """Read per-patch visible-image index lists from a PMVS ``.patch`` file.

    Patch order matches the companion PLY's vertex order. Raises
    :class:`CountMismatch` when fewer records exist than the header count."""
    toks = _Tokens(text)
    header = toks.next("header")
    if header != PATCH_HEADER:
        raise BadHeader(f"expected {PATCH_HEADER}, got {header!r}")
    n = toks.next_int("patch count", minimum=0)
    visibility = []
    for i in range(n):
        if toks.at_end():
            raise CountMismatch(f"header declares {n} patches, found {i}")
        tag = toks.next(f"patch {i} tag")
        if tag != "PATCHS":
            raise ParseError(f"patch {i}: expected PATCHS, got {tag!r}")
        for _ in range(4):
            toks.next_float(f"patch {i} position")
        for _ in range(4):
            toks.next_float(f"patch {i} normal")
        for _ in range(3):
            toks.next_float(f"patch {i} score")
        n_vis = toks.next_int(f"patch {i} visible count", minimum=0)
        indices = [
            toks.next_int(f"patch {i} visible index", minimum=0)
            for _ in range(n_vis)
        ]
        n_tex = toks.next_int(f"patch {i} textured count", minimum=0)
        for _ in range(n_tex):
            toks.next_int(f"patch {i} textured index", minimum=0)
        visibility.append(np.unique(np.array(indices, dtype=np.int64)))
    return visibility


def write_patch(positions: np.ndarray, visibility: Sequence[np.ndarray]) -> str:
    """Write a minimal PMVS-style patch file for the given visibility."""
    if len(positions) != len(visibility):
        raise ValueError("positions and visibility must have equal length")
    f = kv.format_float
    lines = [PATCH_HEADER, str(len(visibility))]
    for p, vis in zip(positions, visibility):
        lines.append("PATCHS")
        lines.append(f"{f(p[0])} {f(p[1])} {f(p[2])} 1")
        lines.append("0 0 -1 0")
        lines.append("0 0 0")
        lines.append(str(len(vis)))
        lines.append(" ".join(str(int(i)) for i in vis))
        lines.append("0")
        lines.append("")
        lines.append("")
    return "\n".join(lines) + "\n"
