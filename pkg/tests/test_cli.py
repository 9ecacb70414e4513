"""CLI tests: subcommand flows, exit codes, manifests, determinism."""

from __future__ import annotations

import pytest

from thermocloud.cli import main
from thermocloud.kv import parse_kv


def run_cli(capsys, *argv) -> tuple[int, str, str]:
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.fixture(scope="module")
def fixture_dir(tmp_path_factory):
    """A small synthetic capture with its pipeline config."""
    out = tmp_path_factory.mktemp("capture")
    code = main(
        [
            "synth", "--out", str(out), "--seed", "21",
            "--frames", "4", "--points", "300", "--sparse", "80",
            "--views", "6", "--model-scale", "0.5", "--quiet",
        ]
    )
    assert code == 0
    return out


class TestSynthCommand:
    def test_creates_expected_files(self, fixture_dir):
        for name in (
            "model.nvm", "dense.ply", "model.patch", "corners.csv",
            "pipeline.cfg", "truth.txt", "thermal_truth.txt",
        ):
            assert (fixture_dir / name).exists()
        assert sorted((fixture_dir / "thermal").glob("T_*.pgm"))

    def test_same_seed_bit_identical(self, tmp_path, capsys):
        args = ["--seed", "9", "--frames", "2", "--points", "50",
                "--sparse", "30", "--views", "4", "--quiet"]
        a, b = tmp_path / "a", tmp_path / "b"
        assert run_cli(capsys, "synth", "--out", str(a), *args)[0] == 0
        assert run_cli(capsys, "synth", "--out", str(b), *args)[0] == 0
        names = [p.relative_to(a) for p in sorted(a.rglob("*")) if p.is_file()]
        assert names
        for rel in names:
            assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel

    def test_zero_frames_rejected_before_writing(self, tmp_path, capsys):
        out = tmp_path / "never"
        code, _, err = run_cli(
            capsys, "synth", "--out", str(out), "--frames", "0"
        )
        assert code == 2
        assert not out.exists()


class TestCalibrateCommand:
    def test_noiseless_rms(self, fixture_dir, capsys):
        code, out, _ = run_cli(
            capsys, "calibrate", "--config", str(fixture_dir / "pipeline.cfg"),
            "--quiet",
        )
        assert code == 0
        manifest = parse_kv(out)
        for c in ("left", "right", "thermal"):
            assert float(manifest[f"rms.{c}"]) < 1e-8
        assert (fixture_dir / "calib.txt").exists()
        assert (fixture_dir / "calib.txt.manifest").exists()

    def test_missing_corner_csv(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text(
            "corners_csv = nope.csv\nboard_rows = 6\nboard_cols = 9\n"
            "square_size = 0.035\ncalibration = c.txt\n"
        )
        code, _, err = run_cli(capsys, "calibrate", "--config", str(cfg))
        assert code == 2
        assert "nope.csv" in err

    def test_config_missing_key(self, tmp_path, capsys):
        cfg = tmp_path / "empty.cfg"
        cfg.write_text("board_rows = 6\n")
        code, _, err = run_cli(capsys, "calibrate", "--config", str(cfg))
        assert code == 3

    def test_noisy_fixture_rms(self, tmp_path, capsys):
        """0.5 px corner noise keeps the reported rms at or below 0.6 px."""
        out = tmp_path / "noisy"
        code, _, _ = run_cli(
            capsys, "synth", "--out", str(out), "--seed", "31",
            "--frames", "2", "--points", "40", "--sparse", "20",
            "--views", "10", "--noise-px", "0.5", "--quiet",
        )
        assert code == 0
        code, stdout, _ = run_cli(
            capsys, "calibrate", "--config", str(out / "pipeline.cfg"), "--quiet"
        )
        assert code == 0
        manifest = parse_kv(stdout)
        for c in ("left", "right", "thermal"):
            assert float(manifest[f"rms.{c}"]) <= 0.6


class TestFuseCommand:
    def test_end_to_end(self, fixture_dir, capsys):
        run_cli(capsys, "calibrate", "--config", str(fixture_dir / "pipeline.cfg"),
                "--quiet")
        code, out, _ = run_cli(
            capsys, "fuse", "--config", str(fixture_dir / "pipeline.cfg"), "--quiet"
        )
        assert code == 0
        manifest = parse_kv(out)
        assert abs(float(manifest["scale"]) - 2.0) < 1e-9
        assert manifest["visibility_source"] == "patch"
        assert int(manifest["points_total"]) == 300
        assert (fixture_dir / "fused.ply").exists()
        assert (fixture_dir / "fused.ply.manifest").exists()

    def test_quiet_stdout_is_manifest_only(self, fixture_dir, capsys):
        code, out, _ = run_cli(
            capsys, "fuse", "--config", str(fixture_dir / "pipeline.cfg"), "--quiet"
        )
        assert code == 0
        parse_kv(out)  # every stdout line is a manifest pair

    def test_rerun_manifest_identical_except_wall_time(self, fixture_dir, capsys):
        cfg = str(fixture_dir / "pipeline.cfg")
        _, out1, _ = run_cli(capsys, "fuse", "--config", cfg, "--quiet")
        _, out2, _ = run_cli(capsys, "fuse", "--config", cfg, "--quiet")
        m1, m2 = parse_kv(out1), parse_kv(out2)
        m1.pop("wall_time_s"), m2.pop("wall_time_s")
        assert m1 == m2

    def test_no_stereo_pairs_exit_4(self, fixture_dir, tmp_path, capsys):
        cfg_text = (fixture_dir / "pipeline.cfg").read_text()
        cfg = tmp_path / "nopairs.cfg"
        cfg.write_text(
            cfg_text.replace("left_pattern = L_*.jpg", "left_pattern = X_*.jpg")
        )
        # patched config still points at the capture directory
        code, _, err = run_cli(
            capsys, "fuse", "--config", str(cfg.rename(fixture_dir / "nopairs.cfg"))
        )
        assert code == 4
        assert "pair" in err.lower()

    def test_sparse_visibility_fallback(self, fixture_dir, capsys):
        cfg_text = (fixture_dir / "pipeline.cfg").read_text()
        cfg = fixture_dir / "sparse.cfg"
        cfg.write_text(cfg_text.replace("patch = model.patch", "patch ="))
        code, out, _ = run_cli(capsys, "fuse", "--config", str(cfg), "--quiet")
        assert code == 0
        assert parse_kv(out)["visibility_source"] == "sparse"

    def test_zbuffer_visibility_flag(self, fixture_dir, capsys):
        cfg_text = (fixture_dir / "pipeline.cfg").read_text()
        cfg = fixture_dir / "zbuf.cfg"
        cfg.write_text(cfg_text.replace("patch = model.patch", "patch ="))
        code, out, _ = run_cli(
            capsys, "fuse", "--config", str(cfg), "--quiet", "--zbuffer", "on"
        )
        assert code == 0
        assert parse_kv(out)["visibility_source"] == "zbuffer"

    def test_ascii_ply_mode_flag(self, fixture_dir, capsys):
        code, _, _ = run_cli(
            capsys, "fuse", "--config", str(fixture_dir / "pipeline.cfg"),
            "--quiet", "--ply-mode", "ascii",
        )
        assert code == 0
        data = (fixture_dir / "fused.ply").read_bytes()
        assert b"format ascii 1.0" in data

    def test_interpolation_flag(self, fixture_dir, capsys):
        code, out, _ = run_cli(
            capsys, "fuse", "--config", str(fixture_dir / "pipeline.cfg"),
            "--quiet", "--interpolation", "nearest",
        )
        assert code == 0
        assert parse_kv(out)["interpolation"] == "nearest"

    def test_threads_flag_same_output(self, fixture_dir, capsys):
        cfg = str(fixture_dir / "pipeline.cfg")
        run_cli(capsys, "fuse", "--config", cfg, "--quiet", "--threads", "1")
        one = (fixture_dir / "fused.ply").read_bytes()
        run_cli(capsys, "fuse", "--config", cfg, "--quiet", "--threads", "3")
        three = (fixture_dir / "fused.ply").read_bytes()
        assert one == three

    def test_corrupt_nvm_exit_3(self, fixture_dir, capsys):
        bad = fixture_dir / "bad.nvm"
        bad.write_text("NVM_V2\n0\n0\n")
        cfg_text = (fixture_dir / "pipeline.cfg").read_text()
        cfg = fixture_dir / "badnvm.cfg"
        cfg.write_text(cfg_text.replace("nvm = model.nvm", "nvm = bad.nvm"))
        code, _, err = run_cli(capsys, "fuse", "--config", str(cfg))
        assert code == 3
