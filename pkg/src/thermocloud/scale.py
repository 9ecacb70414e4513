"""Metric scale recovery from the known stereo baseline.

A monocular-style reconstruction is determined only up to a similarity
transform. The rig's physical stereo baseline pins the scale: for every
frame, the ratio of the known baseline to the distance between the
reconstructed left and right camera centers estimates meters-per-model-unit.
The per-frame ratios are aggregated by their median, which tolerates up to
floor((n-1)/2) corrupted pairs; inliers are reported against a 3x MAD band
(MAD scaled by 1.4826 to be sigma-comparable).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from .errors import AllDegenerate, NoPairs
from .sfm_io import DenseCloud, NvmCamera, NvmModel, NvmPoint

DEGENERATE_BASELINE = 1e-12
MAD_SCALE = 1.4826


@dataclass(frozen=True)
class StereoPairing:
    """Index pairs (left, right) into NvmModel.cameras, one per frame."""

    pairs: Tuple[Tuple[int, int], ...]

    def __len__(self) -> int:
        return len(self.pairs)


@dataclass(frozen=True)
class ScaleEstimate:
    scale: float  # meters per model unit
    per_frame_ratios: Tuple[float, ...]
    inlier_count: int


def match_token(name: str, pattern: str) -> Optional[str]:
    """Capture the frame token of ``name`` under a single-wildcard pattern.

    ``pattern`` must contain exactly one ``*``; returns the captured
    substring, or None if the name does not match."""
    if pattern.count("*") != 1:
        raise ValueError(f"pattern {pattern!r} must contain exactly one '*'")
    prefix, _, suffix = pattern.partition("*")
    if (
        len(name) >= len(prefix) + len(suffix)
        and name.startswith(prefix)
        and name.endswith(suffix)
    ):
        return name[len(prefix) : len(name) - len(suffix)]
    return None


def pair_frames(
    model: NvmModel, left_pattern: str, right_pattern: str
) -> StereoPairing:
    """Pair cameras whose filenames carry the same captured frame token.

    Cameras without a counterpart are ignored; raises :class:`NoPairs`
    when nothing matches."""
    left_by_token: Dict[str, int] = {}
    right_by_token: Dict[str, int] = {}
    for idx, cam in enumerate(model.cameras):
        token = match_token(cam.image_name, left_pattern)
        if token is not None and token not in left_by_token:
            left_by_token[token] = idx
        token = match_token(cam.image_name, right_pattern)
        if token is not None and token not in right_by_token:
            right_by_token[token] = idx

    pairs = []
    for token in sorted(left_by_token):
        if token in right_by_token:
            li, ri = left_by_token[token], right_by_token[token]
            if li != ri:
                pairs.append((li, ri))
    if not pairs:
        raise NoPairs(
            f"no stereo pairs matched patterns {left_pattern!r} / {right_pattern!r}"
        )
    return StereoPairing(tuple(pairs))


def estimate_scale(
    model: NvmModel, pairing: StereoPairing, known_baseline: float
) -> ScaleEstimate:
    """Median of per-frame known/estimated baseline ratios.

    Pairs with an estimated baseline below 1e-12 model units are dropped;
    raises :class:`AllDegenerate` if none survive."""
    if known_baseline <= 0:
        raise ValueError("known_baseline must be positive")
    if not pairing.pairs:
        raise NoPairs("empty pairing")
    ratios = []
    for li, ri in pairing.pairs:
        d = float(
            np.linalg.norm(model.cameras[li].center - model.cameras[ri].center)
        )
        if d < DEGENERATE_BASELINE:
            continue
        ratios.append(known_baseline / d)
    if not ratios:
        raise AllDegenerate("every stereo pair has a near-zero estimated baseline")

    arr = np.array(ratios)
    scale = float(np.median(arr))
    mad = MAD_SCALE * float(np.median(np.abs(arr - scale)))
    inliers = int(np.count_nonzero(np.abs(arr - scale) <= 3.0 * mad))
    return ScaleEstimate(scale=scale, per_frame_ratios=tuple(ratios), inlier_count=inliers)


def apply_scale(
    model: NvmModel, cloud: Optional[DenseCloud], scale: float
) -> Tuple[NvmModel, Optional[DenseCloud]]:
    """Scale all positions and camera centers into meters.

    Rotations, focal lengths and measurements are untouched, so every
    sparse measurement reprojects identically before and after."""
    if not (scale > 0 and np.isfinite(scale)):
        raise ValueError(f"scale must be positive and finite, got {scale}")
    cameras = [
        NvmCamera(
            image_name=c.image_name,
            focal=c.focal,
            rotation=c.rotation,
            center=c.center * scale,
            radial=c.radial,
        )
        for c in model.cameras
    ]
    points = [
        NvmPoint(
            position=p.position * scale,
            color=p.color,
            measurements=list(p.measurements),
        )
        for p in model.points
    ]
    scaled_model = NvmModel(cameras, points)
    scaled_cloud = None
    if cloud is not None:
        scaled_cloud = DenseCloud(
            positions=cloud.positions * scale,
            colors=cloud.colors,
            visibility=cloud.visibility,
        )
    return scaled_model, scaled_cloud
