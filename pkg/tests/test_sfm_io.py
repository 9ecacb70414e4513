"""Tests for the NVM / PLY / patch codecs."""

from __future__ import annotations

import numpy as np
import pytest

from thermocloud.errors import (
    BadHeader,
    CountMismatch,
    IndexOutOfRange,
    MalformedNumber,
    MissingProperty,
    TruncatedFile,
    UnsupportedFormat,
)
from thermocloud.geometry import UnitQuaternion, transform_point
from thermocloud.sfm_io import (
    DenseCloud,
    FusedPoint,
    Measurement,
    NvmCamera,
    NvmModel,
    NvmPoint,
    nvm_camera_to_view,
    parse_nvm,
    parse_patch,
    parse_ply,
    read_fused_ply,
    validate_visibility,
    write_dense_ply,
    write_fused_ply,
    write_nvm,
    write_patch,
)

from test_geometry import quat_distance


def random_model(rng, n_cameras=3, n_points=5) -> NvmModel:
    cameras = []
    for i in range(n_cameras):
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        cameras.append(
            NvmCamera(
                image_name=f"img_{i:03d}.jpg",
                focal=rng.uniform(100, 2000),
                rotation=UnitQuaternion.from_axis_angle(axis * rng.uniform(0, 3)),
                center=rng.normal(size=3) * 10,
                radial=rng.normal() * 0.1,
            )
        )
    points = []
    for _ in range(n_points):
        n_meas = rng.integers(1, n_cameras + 1)
        cams = rng.choice(n_cameras, size=n_meas, replace=False)
        points.append(
            NvmPoint(
                position=rng.normal(size=3) * 5,
                color=tuple(int(v) for v in rng.integers(0, 256, size=3)),
                measurements=[
                    Measurement(int(c), int(rng.integers(0, 1000)),
                                float(rng.normal() * 300), float(rng.normal() * 300))
                    for c in cams
                ],
            )
        )
    return NvmModel(cameras, points)


def assert_models_equal(a: NvmModel, b: NvmModel, tol=1e-12):
    assert len(a.cameras) == len(b.cameras)
    assert len(a.points) == len(b.points)
    for ca, cb in zip(a.cameras, b.cameras):
        assert ca.image_name == cb.image_name
        assert abs(ca.focal - cb.focal) <= tol * max(1, abs(ca.focal))
        assert quat_distance(ca.rotation, cb.rotation) <= tol
        np.testing.assert_allclose(ca.center, cb.center, rtol=tol, atol=tol)
        assert abs(ca.radial - cb.radial) <= tol
    for pa, pb in zip(a.points, b.points):
        np.testing.assert_allclose(pa.position, pb.position, rtol=tol, atol=tol)
        assert pa.color == pb.color
        assert pa.measurements == pb.measurements or all(
            ma.camera_index == mb.camera_index
            and ma.feature_index == mb.feature_index
            and abs(ma.x - mb.x) <= tol * max(1, abs(ma.x))
            and abs(ma.y - mb.y) <= tol * max(1, abs(ma.y))
            for ma, mb in zip(pa.measurements, pb.measurements)
        )


class TestNvm:
    def test_minimal_round_trip(self):
        model = NvmModel(
            cameras=[
                NvmCamera("a.jpg", 500.0, UnitQuaternion.identity(), np.zeros(3), 0.0)
            ],
            points=[
                NvmPoint(np.array([1.0, 2.0, 3.0]), (10, 20, 30),
                         [Measurement(0, 0, 100.0, 200.0)])
            ],
        )
        assert_models_equal(parse_nvm(write_nvm(model)), model)

    def test_empty_model(self):
        model = NvmModel()
        text = write_nvm(model)
        back = parse_nvm(text)
        assert back.cameras == [] and back.points == []

    def test_one_camera_line(self):
        model = NvmModel(
            cameras=[NvmCamera("x.jpg", 42.0, UnitQuaternion.identity(), np.zeros(3))]
        )
        text = write_nvm(model)
        assert sum(1 for line in text.splitlines() if "x.jpg" in line) == 1

    def test_wrong_header(self):
        with pytest.raises(BadHeader):
            parse_nvm("NVM_V2\n0\n0\n")

    def test_random_round_trips(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            model = random_model(rng, n_cameras=int(rng.integers(1, 6)),
                                 n_points=int(rng.integers(1, 10)))
            assert_models_equal(parse_nvm(write_nvm(model)), model)

    def test_whitespace_tolerant(self):
        text = "NVM_V3 \t 1 \n a.jpg 500 1 0 0 0 \t\t 1 2 3 0 0 \n\n 0 \n"
        model = parse_nvm(text)
        assert model.cameras[0].image_name == "a.jpg"
        np.testing.assert_allclose(model.cameras[0].center, [1, 2, 3])

    def test_trailing_content_ignored(self):
        text = write_nvm(random_model(np.random.default_rng(1))) + "\n0\n\nextra stuff"
        parse_nvm(text)

    def test_truncated(self):
        full = write_nvm(random_model(np.random.default_rng(2)))
        with pytest.raises(TruncatedFile):
            parse_nvm(full[: len(full) // 2].rsplit(" ", 1)[0])

    def test_dangling_camera_index(self):
        text = "NVM_V3\n1\na.jpg 500 1 0 0 0 0 0 0 0 0\n1\n1 2 3 10 20 30 1 5 0 1.0 2.0\n"
        with pytest.raises(IndexOutOfRange):
            parse_nvm(text)

    def test_malformed_focal(self):
        text = "NVM_V3\n1\na.jpg xyz 1 0 0 0 0 0 0 0 0\n0\n"
        with pytest.raises(MalformedNumber):
            parse_nvm(text)

    def test_negative_focal(self):
        text = "NVM_V3\n1\na.jpg -500 1 0 0 0 0 0 0 0 0\n0\n"
        with pytest.raises(MalformedNumber):
            parse_nvm(text)

    def test_zero_measurements_rejected(self):
        text = "NVM_V3\n1\na.jpg 500 1 0 0 0 0 0 0 0 0\n1\n1 2 3 10 20 30 0\n"
        with pytest.raises(MalformedNumber):
            parse_nvm(text)

    def test_camera_to_view_center(self):
        rng = np.random.default_rng(3)
        cam = random_model(rng, n_cameras=1, n_points=1).cameras[0]
        view = nvm_camera_to_view(cam, 640, 480)
        np.testing.assert_allclose(
            transform_point(view.world_to_camera, cam.center), np.zeros(3), atol=1e-9
        )
        assert view.intrinsics.cx == (640 - 1) / 2.0
        assert view.intrinsics.k1 == 0.0
        assert nvm_camera_to_view(cam, 640, 480, apply_radial=True).intrinsics.k1 == (
            cam.radial
        )


def tiny_cloud(rng, n=7) -> DenseCloud:
    positions = (rng.normal(size=(n, 3)) * 4).astype(np.float32).astype(np.float64)
    colors = rng.integers(0, 256, size=(n, 3)).astype(np.uint8)
    return DenseCloud(positions=positions, colors=colors)


class TestPly:
    def test_one_vertex_ascii(self):
        data = (
            b"ply\nformat ascii 1.0\nelement vertex 1\n"
            b"property float x\nproperty float y\nproperty float z\n"
            b"property uchar red\nproperty uchar green\nproperty uchar blue\n"
            b"end_header\n1.5 -2.5 3.5 10 20 30\n"
        )
        cloud = parse_ply(data)
        np.testing.assert_allclose(cloud.positions[0], [1.5, -2.5, 3.5])
        assert tuple(cloud.colors[0]) == (10, 20, 30)

    def test_binary_with_normals_skipped(self):
        rng = np.random.default_rng(4)
        cloud = tiny_cloud(rng)
        data = write_dense_ply(cloud, mode="binary", with_normals=True)
        assert b"property float nx" in data
        back = parse_ply(data)
        np.testing.assert_allclose(back.positions, cloud.positions, atol=1e-6)
        np.testing.assert_array_equal(back.colors, cloud.colors)

    def test_ascii_round_trip(self):
        rng = np.random.default_rng(5)
        cloud = tiny_cloud(rng)
        back = parse_ply(write_dense_ply(cloud, mode="ascii"))
        np.testing.assert_allclose(back.positions, cloud.positions, atol=0)

    def test_big_endian_rejected(self):
        data = (
            b"ply\nformat binary_big_endian 1.0\nelement vertex 0\n"
            b"property float x\nend_header\n"
        )
        with pytest.raises(UnsupportedFormat):
            parse_ply(data)

    def test_missing_color_property(self):
        data = (
            b"ply\nformat ascii 1.0\nelement vertex 1\n"
            b"property float x\nproperty float y\nproperty float z\n"
            b"end_header\n1 2 3\n"
        )
        with pytest.raises(MissingProperty):
            parse_ply(data)

    def test_truncated_binary(self):
        rng = np.random.default_rng(6)
        data = write_dense_ply(tiny_cloud(rng), mode="binary")
        with pytest.raises(TruncatedFile):
            parse_ply(data[:-5])

    def test_header_without_end_is_truncated(self):
        with pytest.raises(TruncatedFile):
            parse_ply(b"ply\nformat ascii 1.0\nelement vertex 3\n")

    def test_non_vertex_first_element_rejected(self):
        data = (
            b"ply\nformat ascii 1.0\nelement face 0\n"
            b"element vertex 0\nproperty float x\nend_header\n"
        )
        with pytest.raises(UnsupportedFormat):
            parse_ply(data)


class TestFusedPly:
    def test_empty_cloud(self):
        data = write_fused_ply([], mode="ascii")
        assert b"element vertex 0" in data
        assert read_fused_ply(data) == []

    def test_single_valid_point(self):
        p = FusedPoint(np.array([1.0, 2.0, 3.0]), (9, 8, 7), 105.0, True, 2)
        data = write_fused_ply([p], mode="ascii")
        assert b"105" in data
        back = read_fused_ply(data)[0]
        assert back.thermal == 105.0
        assert back.thermal_valid
        np.testing.assert_allclose(back.position, p.position)

    def test_invalid_point_zeroed(self):
        p = FusedPoint(np.zeros(3), (0, 0, 0), 0.0, False, 0)
        back = read_fused_ply(write_fused_ply([p], mode="binary"))[0]
        assert back.thermal == 0.0 and not back.thermal_valid

    def test_binary_round_trip_bit_exact(self):
        rng = np.random.default_rng(7)
        pts = []
        for i in range(500):
            valid = bool(rng.integers(0, 2))
            pts.append(
                FusedPoint(
                    position=(rng.normal(size=3) * 3).astype(np.float32).astype(float),
                    color=tuple(int(v) for v in rng.integers(0, 256, size=3)),
                    thermal=float(np.float32(rng.uniform(0, 4000))) if valid else 0.0,
                    thermal_valid=valid,
                    sample_count=int(rng.integers(1, 5)) if valid else 0,
                )
            )
        data = write_fused_ply(pts, mode="binary")
        assert write_fused_ply(read_fused_ply(data), mode="binary") == data

    def test_validity_invariants_enforced(self):
        with pytest.raises(ValueError):
            FusedPoint(np.zeros(3), (0, 0, 0), 1.0, True, 0)
        with pytest.raises(ValueError):
            FusedPoint(np.zeros(3), (0, 0, 0), 1.0, False, 3)


class TestPatch:
    def test_single_patch(self):
        text = (
            "PATCHES\n1\nPATCHS\n0.1 0.2 0.3 1\n0 0 -1 0\n0.9 0 0\n"
            "2\n0 2\n0\n\n\n"
        )
        vis = parse_patch(text)
        assert len(vis) == 1
        np.testing.assert_array_equal(vis[0], [0, 2])

    def test_count_mismatch(self):
        lines = ["PATCHES", "5"]
        for _ in range(4):
            lines += ["PATCHS", "0 0 0 1", "0 0 -1 0", "0 0 0", "1", "0", "0", "", ""]
        with pytest.raises(CountMismatch):
            parse_patch("\n".join(lines))

    def test_wrong_header(self):
        with pytest.raises(BadHeader):
            parse_patch("PATCHE\n0\n")

    def test_truncated_mid_record(self):
        text = "PATCHES\n1\nPATCHS\n0.1 0.2"
        with pytest.raises(TruncatedFile):
            parse_patch(text)

    def test_round_trip_with_ground_truth(self, small_scene):
        text = write_patch(small_scene.dense.positions, small_scene.visibility)
        vis = parse_patch(text)
        assert len(vis) == len(small_scene.visibility)
        for a, b in zip(vis, small_scene.visibility):
            np.testing.assert_array_equal(a, b)


class TestValidateVisibility:
    def test_valid(self):
        out = validate_visibility([np.array([2, 0])], camera_count=3)
        np.testing.assert_array_equal(out[0], [0, 2])

    def test_out_of_range(self):
        with pytest.raises(IndexOutOfRange):
            validate_visibility([np.array([0, 3])], camera_count=3)
        with pytest.raises(IndexOutOfRange):
            validate_visibility([np.array([-1])], camera_count=3)
