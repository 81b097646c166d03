"""End-to-end command-line tests using the in-process service."""

import numpy as np
import pytest
from click.testing import CliRunner

from wcl import __version__
from wcl.cli import main
from wcl.fileio import (
    read_manifest,
    read_transform,
    write_cloud,
    write_depth_csv,
    write_transform,
)
from wcl.refine import SyntheticScene, generate_scene


@pytest.fixture()
def runner():
    return CliRunner()


def _report(output):
    """Parse flat 'key value' stdout into a dict (last write wins)."""
    entries = {}
    for line in output.strip().splitlines():
        key, _, value = line.partition(" ")
        entries[key] = value
    return entries


def _write_clouds(tmp_path, m=4, n=5, seed=0):
    rng = np.random.default_rng(seed)
    a_path = tmp_path / "cloud_a.txt"
    b_path = tmp_path / "cloud_b.txt"
    write_cloud(a_path, rng.random((m, 3)))
    write_cloud(b_path, rng.random((n, 3)))
    return str(a_path), str(b_path)


def _write_scene_inputs(tmp_path, seed=0):
    scene = SyntheticScene()
    depth_a, depth_b, t_ab = generate_scene(scene, seed=seed)
    da = tmp_path / "depth_a.csv"
    db = tmp_path / "depth_b.csv"
    intr = tmp_path / "intrinsics.txt"
    pose = tmp_path / "pose.txt"
    write_depth_csv(da, depth_a.values)
    write_depth_csv(db, depth_b.values)
    intr.write_text(
        f"fx {scene.intrinsics.fx!r}\nfy {scene.intrinsics.fy!r}\n"
        f"cx {scene.intrinsics.cx!r}\ncy {scene.intrinsics.cy!r}\n"
    )
    write_transform(pose, t_ab)
    return str(da), str(db), str(intr), str(pose)


def test_version_flag(runner):
    result = runner.invoke(main, ["--version"])
    assert result.exit_code == 0
    assert __version__ in result.output


def test_compute_reports_the_transport_value(runner, tmp_path):
    a_path, b_path = _write_clouds(tmp_path)
    result = runner.invoke(
        main,
        ["compute", a_path, b_path, "--epsilon", "0.05", "--iterations", "200",
         "--tolerance", "1e-9"],
    )
    assert result.exit_code == 0
    report = _report(result.output)
    assert report["m"] == "4"
    assert report["n"] == "5"
    assert int(report["iterations_run"]) >= 1
    assert float(report["marginal_residual"]) <= 1e-9
    assert float(report["primal_cost"]) > 0.0
    assert report["value_kind"] == "primal"
    assert report["value"] == report["primal_cost"]


def test_compute_value_flag_selects_the_regularized_number(runner, tmp_path):
    a_path, b_path = _write_clouds(tmp_path)
    result = runner.invoke(main, ["compute", a_path, b_path, "--value", "regularized"])
    assert result.exit_code == 0
    report = _report(result.output)
    assert report["value"] == report["regularized_value"]


def test_compute_output_is_reproducible_byte_for_byte(runner, tmp_path):
    a_path, b_path = _write_clouds(tmp_path)
    args = ["compute", a_path, b_path, "--epsilon", "0.01", "--iterations", "80"]
    first = runner.invoke(main, args)
    second = runner.invoke(main, args)
    assert first.exit_code == second.exit_code == 0
    assert first.output == second.output


def test_compute_dumps_a_coupling_on_request(runner, tmp_path):
    a_path, b_path = _write_clouds(tmp_path, m=3, n=3)
    out_path = tmp_path / "coupling.csv"
    result = runner.invoke(
        main,
        ["compute", a_path, b_path, "--iterations", "200", "--dump-coupling", str(out_path)],
    )
    assert result.exit_code == 0
    coupling = np.loadtxt(out_path, delimiter=",")
    assert coupling.shape == (3, 3)
    assert coupling.sum() == pytest.approx(1.0, abs=1e-6)
    assert (coupling >= 0).all()


def test_compute_rejects_an_unparseable_cloud(runner, tmp_path):
    bad = tmp_path / "bad.txt"
    bad.write_text("1 2\n")
    a_path, _ = _write_clouds(tmp_path)
    result = runner.invoke(main, ["compute", str(bad), a_path])
    assert result.exit_code == 2
    assert "expected 3 coordinates" in result.stderr


def test_compute_missing_file_is_a_usage_error(runner, tmp_path):
    result = runner.invoke(main, ["compute", str(tmp_path / "nope.txt"), str(tmp_path / "nope.txt")])
    assert result.exit_code == 2


def test_compute_unstabilized_underflow_exits_with_the_numeric_code(runner, tmp_path):
    a_path = tmp_path / "far_a.txt"
    b_path = tmp_path / "far_b.txt"
    write_cloud(a_path, [[0.0, 0.0, 0.0], [40.0, 0.0, 0.0]])
    write_cloud(b_path, [[30.0, 0.0, 0.0], [0.0, 40.0, 0.0]])
    result = runner.invoke(
        main,
        ["compute", str(a_path), str(b_path), "--normalize", "none",
         "--epsilon", "0.001", "--no-stabilized"],
    )
    assert result.exit_code == 3
    assert "stabilized" in result.stderr


def test_wcl_command_evaluates_depth_pose_consistency(runner, tmp_path):
    da, db, intr, pose = _write_scene_inputs(tmp_path)
    result = runner.invoke(
        main,
        ["wcl", da, db, intr, pose, "--nc", "8", "--nr", "8", "--iterations", "40"],
    )
    assert result.exit_code == 0
    report = _report(result.output)
    assert report["points_a"] == "48"
    assert report["points_b"] == "48"
    assert report["offset_cols"] == "0"
    assert report["offset_rows"] == "0"
    loss = float(report["loss"])
    assert loss >= 0.0
    assert float(report["term_a"]) + float(report["term_b"]) == pytest.approx(loss)
    assert float(report["weighted_loss"]) == pytest.approx(0.5 * loss)


def test_wcl_without_inputs_or_manifest_is_rejected(runner):
    result = runner.invoke(main, ["wcl"])
    assert result.exit_code == 2
    assert "DEPTH_A" in result.stderr


def test_wcl_manifest_round_trip_reproduces_the_report(runner, tmp_path):
    da, db, intr, pose = _write_scene_inputs(tmp_path)
    manifest = tmp_path / "run.manifest"
    args = ["wcl", da, db, intr, pose, "--nc", "8", "--nr", "8",
            "--epsilon", "0.01", "--lambda-w", "0.25", "--manifest", str(manifest)]
    first = runner.invoke(main, args)
    assert first.exit_code == 0

    entries = read_manifest(manifest)
    assert entries["tool_version"] == __version__
    assert entries["depth_a"] == da
    assert len(entries["depth_a_sha256"]) == 64
    assert entries["epsilon"] == repr(0.01)
    assert entries["seed"] == "none"

    replay = runner.invoke(main, ["wcl", "--from-manifest", str(manifest)])
    assert replay.exit_code == 0
    assert replay.output == first.output


def test_wcl_from_manifest_detects_tampered_inputs(runner, tmp_path):
    da, db, intr, pose = _write_scene_inputs(tmp_path)
    manifest = tmp_path / "run.manifest"
    first = runner.invoke(
        main, ["wcl", da, db, intr, pose, "--nc", "8", "--nr", "8", "--manifest", str(manifest)]
    )
    assert first.exit_code == 0

    with open(da, "a", encoding="utf-8") as fh:
        fh.write("# tampered\n")
    replay = runner.invoke(main, ["wcl", "--from-manifest", str(manifest)])
    assert replay.exit_code == 2
    assert "changed since the manifest was written" in replay.stderr


def test_wcl_refuses_mixing_files_with_a_manifest(runner, tmp_path):
    da, db, intr, pose = _write_scene_inputs(tmp_path)
    manifest = tmp_path / "run.manifest"
    first = runner.invoke(
        main, ["wcl", da, db, intr, pose, "--nc", "8", "--nr", "8", "--manifest", str(manifest)]
    )
    assert first.exit_code == 0
    mixed = runner.invoke(main, ["wcl", da, "--from-manifest", str(manifest)])
    assert mixed.exit_code == 2
    assert "not both" in mixed.stderr


def test_refine_command_recovers_and_writes_artifacts(runner, tmp_path):
    trace_path = tmp_path / "trace.csv"
    pose_path = tmp_path / "refined_pose.txt"
    result = runner.invoke(
        main,
        ["refine", "--perturb", "0.05", "--steps", "2",
         "--trace", str(trace_path), "--out-pose", str(pose_path)],
    )
    assert result.exit_code == 0
    report = _report(result.output)
    assert report["status"] in ("converged", "stalled", "max_steps")
    assert int(report["steps"]) >= 1
    assert float(report["final_loss"]) >= 0.0
    assert float(report["translation_error"]) < 0.05
    rotation = np.array(
        [[float(report[f"r{i}{j}"]) for j in range(3)] for i in range(3)]
    )
    np.testing.assert_allclose(rotation @ rotation.T, np.eye(3), atol=1e-9)

    lines = trace_path.read_text().splitlines()
    assert lines[0] == "step,loss,grad_norm,pose_error"
    assert len(lines) == int(report["steps"]) + 1

    recovered = read_transform(pose_path)
    np.testing.assert_allclose(recovered.rotation, rotation, atol=1e-15)


def test_refine_divergence_exits_4_and_still_writes_the_trace(runner, tmp_path):
    trace_path = tmp_path / "trace.csv"
    result = runner.invoke(
        main,
        ["refine", "--perturb", "0.1", "--step-size", "0.5", "--steps", "300",
         "--trace", str(trace_path)],
    )
    assert result.exit_code == 4
    assert "failed to decrease" in result.stderr
    lines = trace_path.read_text().splitlines()
    assert lines[0] == "step,loss,grad_norm,pose_error"
    assert len(lines) > 10


def test_validate_command_sweeps_epsilon(runner):
    result = runner.invoke(
        main,
        ["validate", "--n", "4", "--trials", "2", "--epsilon", "0.1", "--epsilon", "0.01"],
    )
    assert result.exit_code == 0
    lines = result.output.strip().splitlines()
    eps_lines = [l for l in lines if l.startswith("epsilon ")]
    assert len(eps_lines) == 2
    report = _report(result.output)
    assert report["trials"] == "2"
    assert report["n"] == "4"
    assert 0.0 <= float(report["monotone_fraction"]) <= 1.0


def test_validate_rejects_a_bad_thread_count(runner):
    result = runner.invoke(
        main,
        ["validate", "--n", "4", "--trials", "1"],
        env={"WCL_THREADS": "zebra"},
    )
    assert result.exit_code == 2
    assert "WCL_THREADS" in result.stderr


def test_bench_command_times_requested_sizes(runner):
    result = runner.invoke(main, ["bench", "--size", "8", "--iterations", "2"])
    assert result.exit_code == 0
    tokens = result.output.split()
    entry = dict(zip(tokens[0::2], tokens[1::2]))
    assert entry["size"] == "8"
    assert float(entry["seconds"]) > 0.0
    assert float(entry["rate"]) > 0.0
