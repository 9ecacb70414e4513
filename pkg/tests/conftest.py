"""Shared fixtures: one small synthetic scene and one clean calibration
sample, session-scoped since generation dominates test runtime."""

from __future__ import annotations

import numpy as np
import pytest

from thermocloud.calibration import BoardSpec
from thermocloud.geometry import UnitQuaternion
from thermocloud.synth import (
    RigSpec,
    SceneSpec,
    generate_calibration_corners,
    generate_scene,
)

BOARD = BoardSpec(rows=6, cols=9, square_size=0.035)


@pytest.fixture(scope="session")
def small_scene():
    """Gauged orbit scene small enough for per-test reuse."""
    spec = SceneSpec(
        seed=11,
        n_frames=6,
        n_points=400,
        n_sparse=120,
        model_scale=0.37,
        gauge_rotation=UnitQuaternion.from_axis_angle([0.2, -0.1, 0.4]),
        gauge_translation=np.array([3.0, -1.0, 2.0]),
    )
    return generate_scene(spec)


@pytest.fixture(scope="session")
def calib_rig():
    return RigSpec.default_calibration()


@pytest.fixture(scope="session")
def calib_sample_clean(calib_rig):
    return generate_calibration_corners(calib_rig, BOARD, n_views=10, seed=42)
