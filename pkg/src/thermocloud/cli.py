"""Command-line pipeline: ``calibrate``, ``fuse`` and ``synth`` subcommands.

A single key-value config file describes one capture (paths, board
geometry, baseline, patterns, fusion options); command-line flags override
individual options. Every run prints and writes a machine-readable manifest.

Exit codes: 0 success, 2 I/O or usage error, 3 input parse error,
4 degenerate geometry (no stereo pairs, degenerate baselines, calibration
degeneracies).
"""

from __future__ import annotations

import argparse
import glob as globmod
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import calibration as calib
from . import kv
from .errors import CountMismatch, GeometryError, NoPairs, ParseError
from .geometry import UnitQuaternion
from .fusion import (
    ThermalFrame,
    ThermalRigMap,
    fuse,
    read_thermal_image,
    thermal_view,
    transfer_sparse_visibility,
    zbuffer_visibility,
)
from .scale import apply_scale, estimate_scale, match_token, pair_frames
from .sfm_io import (
    nvm_camera_to_view,
    parse_nvm,
    parse_patch,
    parse_ply,
    validate_visibility,
    write_fused_ply,
)
from .synth import (
    GaussianField,
    LinearField,
    RigSpec,
    SceneSpec,
    export_fixtures,
    generate_calibration_corners,
    generate_scene,
)

CONFIG_DEFAULTS = {
    "patch": "",
    "interpolation": "bilinear",
    "zbuffer": "off",
    "splat_radius": "2",
    "depth_tol": "0.01",
    "ply_mode": "binary",
    "apply_nvm_radial": "off",
    "rgb_width": "640",
    "rgb_height": "480",
    "left_pattern": "L_*.jpg",
    "right_pattern": "R_*.jpg",
}


@dataclass
class PipelineConfig:
    base_dir: Path
    values: Dict[str, str] = field(default_factory=dict)

    @staticmethod
    def load(path: str) -> "PipelineConfig":
        p = Path(path)
        text = p.read_text()
        values = dict(CONFIG_DEFAULTS)
        values.update(kv.parse_kv(text))
        return PipelineConfig(base_dir=p.parent, values=values)

    def get(self, key: str) -> str:
        if key not in self.values or self.values[key] == "":
            raise ParseError(f"config is missing required key {key!r}")
        return self.values[key]

    def get_optional(self, key: str) -> Optional[str]:
        v = self.values.get(key, "")
        return v or None

    def path(self, key: str) -> Path:
        return self.base_dir / self.get(key)

    def optional_path(self, key: str) -> Optional[Path]:
        v = self.get_optional(key)
        return self.base_dir / v if v else None

    def number(self, key: str) -> float:
        try:
            return float(self.get(key))
        except ValueError:
            raise ParseError(f"config key {key!r} is not a number") from None

    def integer(self, key: str) -> int:
        try:
            return int(self.get(key))
        except ValueError:
            raise ParseError(f"config key {key!r} is not an integer") from None

    def flag(self, key: str) -> bool:
        v = self.get(key).lower()
        if v in ("on", "true", "1", "yes"):
            return True
        if v in ("off", "false", "0", "no"):
            return False
        raise ParseError(f"config key {key!r} must be on/off, got {v!r}")


def _info(message: str, quiet: bool) -> None:
    if not quiet:
        print(message, file=sys.stderr)


def _emit_manifest(pairs, out_path: Optional[Path]) -> None:
    text = kv.write_kv(pairs)
    if out_path is not None:
        out_path.write_text(text)
    sys.stdout.write(text)


# --- calibrate -----------------------------------------------------------------


def cmd_calibrate(args) -> int:
    config = PipelineConfig.load(args.config)
    board = calib.BoardSpec(
        rows=config.integer("board_rows"),
        cols=config.integer("board_cols"),
        square_size=config.number("square_size"),
    )
    corners_path = config.path("corners_csv")
    corner_sets = calib.read_corner_csv(corners_path.read_text())
    _info(
        f"calibrating from {len(corner_sets)} corner sets "
        f"({len({s.view_id for s in corner_sets})} views)",
        args.quiet,
    )
    result = calib.calibrate_rig(board, corner_sets)

    out_path = config.path("calibration")
    out_path.write_text(calib.write_calibration(result))

    pairs = [("command", "calibrate"), ("output", str(out_path))]
    pairs += [
        (f"rms.{c}", kv.format_float(result.rms_reprojection[c]))
        for c in sorted(result.rms_reprojection, key=calib._CAMERA_RANK.__getitem__)
    ]
    baseline = float(np.linalg.norm(result.right_from_left.translation))
    pairs.append(("baseline", kv.format_float(baseline)))
    _emit_manifest(pairs, Path(str(out_path) + ".manifest"))
    return 0


# --- fuse -----------------------------------------------------------------------


def _thermal_frames_for_model(
    config: PipelineConfig, model, quiet: bool
) -> List[ThermalFrame]:
    pattern = config.get("thermal_glob")
    left_pattern = config.get("left_pattern")
    token_to_left: Dict[str, int] = {}
    for idx, cam in enumerate(model.cameras):
        token = match_token(cam.image_name, left_pattern)
        if token is not None and token not in token_to_left:
            token_to_left[token] = idx

    files = sorted(globmod.glob(str(config.base_dir / pattern)))
    name_pattern = Path(pattern).name
    frames = []
    for path in files:
        token = match_token(Path(path).name, name_pattern)
        if token is None or token not in token_to_left:
            _info(f"skipping thermal frame with no matching left image: {path}", quiet)
            continue
        frames.append(
            ThermalFrame(frame_id=token_to_left[token], image=read_thermal_image(path))
        )
    if not frames:
        raise NoPairs(f"no thermal frames matched {pattern!r}")
    return frames


def cmd_fuse(args) -> int:
    t0 = time.monotonic()
    config = PipelineConfig.load(args.config)
    for key, value in (
        ("ply_mode", args.ply_mode),
        ("interpolation", args.interpolation),
        ("zbuffer", args.zbuffer),
    ):
        if value is not None:
            config.values[key] = value

    calibration = calib.read_calibration(config.path("calibration").read_text())
    model = parse_nvm(config.path("nvm").read_text())
    cloud = parse_ply(config.path("dense_ply").read_bytes())
    _info(
        f"model: {len(model.cameras)} cameras, {len(model.points)} sparse points; "
        f"dense cloud: {len(cloud)} points",
        args.quiet,
    )

    known_baseline = config.number("known_baseline")
    if known_baseline <= 0:
        raise ParseError("config key 'known_baseline' must be positive")
    pairing = pair_frames(
        model, config.get("left_pattern"), config.get("right_pattern")
    )
    estimate = estimate_scale(model, pairing, known_baseline)
    _info(
        f"scale {estimate.scale:.6g} m/unit from {len(pairing)} pairs "
        f"({estimate.inlier_count} inliers)",
        args.quiet,
    )
    model, cloud = apply_scale(model, cloud, estimate.scale)

    patch_path = config.optional_path("patch")
    if patch_path is not None:
        visibility = parse_patch(patch_path.read_text())
        if len(visibility) != len(cloud):
            raise CountMismatch(
                f"patch file has {len(visibility)} records, cloud has {len(cloud)}"
            )
        visibility = validate_visibility(visibility, len(model.cameras))
        visibility_source = "patch"
    else:
        visibility = None
        visibility_source = "zbuffer" if config.flag("zbuffer") else "sparse"

    frames = _thermal_frames_for_model(config, model, args.quiet)
    shapes = {f.image.shape for f in frames}
    if len(shapes) != 1:
        raise ParseError("thermal frames do not share one resolution")
    fh, fw = frames[0].image.shape

    intr = calibration.intrinsics.get("thermal")
    if intr is None:
        raise ParseError("calibration document lacks thermal intrinsics")
    rig = ThermalRigMap(
        thermal_intrinsics=intr,
        thermal_from_left=calibration.thermal_from_left,
        image_width=fw,
        image_height=fh,
    )

    rgb_w = config.integer("rgb_width")
    rgb_h = config.integer("rgb_height")
    apply_radial = config.flag("apply_nvm_radial")
    left_views = {
        f.frame_id: nvm_camera_to_view(
            model.cameras[f.frame_id], rgb_w, rgb_h, apply_radial=apply_radial
        )
        for f in frames
    }

    if visibility is None:
        if visibility_source == "zbuffer":
            splat = config.number("splat_radius")
            tol = config.number("depth_tol")
            lists: List[List[int]] = [[] for _ in range(len(cloud))]
            for f in sorted(frames, key=lambda f: f.frame_id):
                mask = zbuffer_visibility(
                    cloud, thermal_view(left_views[f.frame_id], rig), splat, tol
                )
                for i in np.flatnonzero(mask):
                    lists[i].append(f.frame_id)
            visibility = [np.array(l, dtype=np.int64) for l in lists]
        else:
            visibility = transfer_sparse_visibility(cloud, model)
        _info(f"visibility from {visibility_source}", args.quiet)

    fused = fuse(
        cloud,
        visibility,
        frames,
        left_views,
        rig,
        interpolation=config.get("interpolation"),
        threads=args.threads,
    )
    out_path = config.path("output")
    out_path.write_bytes(write_fused_ply(fused, mode=config.get("ply_mode")))

    n_valid = sum(1 for p in fused if p.thermal_valid)
    ratios = np.array(estimate.per_frame_ratios)
    scaled_baselines = [
        float(np.linalg.norm(model.cameras[li].center - model.cameras[ri].center))
        for li, ri in pairing.pairs
    ]
    pairs = [
        ("command", "fuse"),
        ("scale", kv.format_float(estimate.scale)),
        ("ratio_min", kv.format_float(ratios.min())),
        ("ratio_median", kv.format_float(float(np.median(ratios)))),
        ("ratio_max", kv.format_float(ratios.max())),
        ("stereo_pairs", str(len(pairing))),
        ("inlier_count", str(estimate.inlier_count)),
        ("baseline_recovered", kv.format_float(float(np.mean(scaled_baselines)))),
        ("thermal_frames", str(len(frames))),
        ("visibility_source", visibility_source),
        ("interpolation", config.get("interpolation")),
        ("points_total", str(len(fused))),
        ("points_fused", str(n_valid)),
        ("points_invalid", str(len(fused) - n_valid)),
        ("output", str(out_path)),
        ("wall_time_s", f"{time.monotonic() - t0:.3f}"),
    ]
    _emit_manifest(pairs, Path(str(out_path) + ".manifest"))
    return 0


# --- synth ------------------------------------------------------------------------


def cmd_synth(args) -> int:
    if isinstance(args.gauge_rotation, str):
        rot_parts = [float(x) for x in args.gauge_rotation.split(",")]
        if len(rot_parts) != 3:
            raise ParseError("--gauge-rotation needs rx,ry,rz")
    else:
        rot_parts = args.gauge_rotation

    field_spec = LinearField() if args.field == "linear" else GaussianField()
    spec = SceneSpec(
        seed=args.seed,
        n_frames=args.frames,
        n_points=args.points,
        n_sparse=args.sparse,
        rig=RigSpec.default(baseline=args.baseline),
        model_scale=args.model_scale,
        gauge_rotation=UnitQuaternion.from_axis_angle(rot_parts),
        thermal_field=field_spec,
        noise_px=args.noise_px,
        layout="wall" if args.field == "gaussian" else args.layout,
    )
    outdir = Path(args.out)
    bundle = generate_scene(spec)
    paths = export_fixtures(bundle, outdir, ply_mode=args.ply_mode or "binary")

    board = calib.BoardSpec(rows=6, cols=9, square_size=0.035)
    sample = generate_calibration_corners(
        spec.rig, board, n_views=args.views, seed=spec.seed + 1000,
        noise_px=spec.noise_px,
    )
    (outdir / "corners.csv").write_text(calib.write_corner_csv(sample.corner_sets))

    config_pairs = [
        ("corners_csv", "corners.csv"),
        ("board_rows", str(board.rows)),
        ("board_cols", str(board.cols)),
        ("square_size", kv.format_float(board.square_size)),
        ("calibration", "calib.txt"),
        ("nvm", "model.nvm"),
        ("dense_ply", "dense.ply"),
        ("patch", "model.patch"),
        ("thermal_glob", "thermal/T_*.pgm"),
        ("left_pattern", "L_*.jpg"),
        ("right_pattern", "R_*.jpg"),
        ("known_baseline", kv.format_float(spec.rig.baseline)),
        ("output", "fused.ply"),
        ("ply_mode", args.ply_mode or "binary"),
    ]
    (outdir / "pipeline.cfg").write_text(kv.write_kv(config_pairs))

    pairs = [("command", "synth"), ("out", str(outdir))]
    pairs += [(f"file.{k}", str(p)) for k, p in sorted(paths.items())]
    pairs.append(("file.corners", str(outdir / "corners.csv")))
    pairs.append(("file.config", str(outdir / "pipeline.cfg")))
    _emit_manifest(pairs, None)
    return 0


# --- entry point --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="thermocloud",
        description="Calibrate a stereo+thermal rig, recover metric scale of an "
        "SfM reconstruction, and texture its dense cloud with thermal intensities.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_cal = sub.add_parser("calibrate", help="checkerboard rig calibration")
    p_cal.add_argument("--config", required=True, help="pipeline config file")
    p_cal.add_argument("--quiet", action="store_true", help="manifest only on stdout")
    p_cal.set_defaults(func=cmd_calibrate)

    p_fuse = sub.add_parser("fuse", help="scale recovery + thermal back-projection")
    p_fuse.add_argument("--config", required=True, help="pipeline config file")
    p_fuse.add_argument("--threads", type=int, default=0,
                        help="fusion worker threads (0 = available parallelism)")
    p_fuse.add_argument("--quiet", action="store_true")
    p_fuse.add_argument("--ply-mode", choices=("ascii", "binary"), default=None)
    p_fuse.add_argument("--interpolation", choices=("bilinear", "nearest"),
                        default=None)
    p_fuse.add_argument("--zbuffer", choices=("on", "off"), default=None,
                        help="z-buffer visibility when no patch file is configured")
    p_fuse.set_defaults(func=cmd_fuse)

    p_synth = sub.add_parser("synth", help="generate a synthetic fixture directory")
    p_synth.add_argument("--out", required=True)
    p_synth.add_argument("--quiet", action="store_true")
    p_synth.add_argument("--seed", type=int, default=1)
    p_synth.add_argument("--frames", type=int, default=20)
    p_synth.add_argument("--points", type=int, default=5000)
    p_synth.add_argument("--sparse", type=int, default=300)
    p_synth.add_argument("--views", type=int, default=10,
                         help="calibration board views")
    p_synth.add_argument("--model-scale", type=float, default=1.0)
    p_synth.add_argument("--gauge-rotation", default=(0.0, 0.0, 0.0),
                         help="axis-angle rx,ry,rz of the export gauge")
    p_synth.add_argument("--baseline", type=float, default=0.12)
    p_synth.add_argument("--layout", choices=("orbit", "wall"), default="orbit")
    p_synth.add_argument("--field", choices=("linear", "gaussian"), default="linear")
    p_synth.add_argument("--noise-px", type=float, default=0.0)
    p_synth.add_argument("--ply-mode", choices=("ascii", "binary"), default=None)
    p_synth.set_defaults(func=cmd_synth)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "fuse" and args.threads <= 0:
        args.threads = os.cpu_count() or 1
    try:
        return args.func(args)
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except ParseError as e:
        print(f"parse error: {e}", file=sys.stderr)
        return 3
    except GeometryError as e:
        print(f"degenerate geometry: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
