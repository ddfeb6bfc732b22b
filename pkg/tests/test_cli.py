import json
import subprocess
import sys

import numpy as np
import pytest

from graspforge.cli import main
from graspforge.geometry import sample_surface, save_obj
from graspforge.io import read_grasp, read_matrix, read_ply, read_records, write_grasp, write_ply, write_records
from graspforge.kinematics import JointConfig, keypoint_fk, point_cloud_fk
from graspforge.records import GraspRecord
from graspforge.retarget import RetargetMapping


@pytest.fixture
def scene(tmp_path, block, pinch):
    save_obj(tmp_path / "block.obj", block)
    write_grasp(tmp_path / "pinch.json", GraspRecord("pinch", "gripper", "block", pinch, object_mesh="block.obj"))
    write_ply(tmp_path / "block.ply", sample_surface(block, 512, seed=0))
    return tmp_path


def run(*argv):
    return main([str(a) for a in argv])


def test_robot_info(capsys):
    assert run("robot", "info", "toy_hand") == 0
    info = json.loads(capsys.readouterr().out)
    assert info["dof"] == 10 and len(info["links"]) == 11


def test_robot_sample(tmp_path):
    assert run("robot", "sample", "gripper", "--out", tmp_path / "g.ply", "--points", 100) == 0
    cloud = read_ply(tmp_path / "g.ply")
    assert len(cloud) == 100 and set(cloud.labels) <= {0, 1, 2}


def test_mesh_commands(scene, capsys):
    assert run("mesh", "sample", scene / "block.obj", "-n", 64, "--out", scene / "s.ply") == 0
    assert len(read_ply(scene / "s.ply")) == 64
    np.save(scene / "q.npy", np.array([[0.0, 0.05, 0.0], [0.0, 0.05, 0.1]]))
    capsys.readouterr()
    assert run("mesh", "sdf", scene / "block.obj", "--points", scene / "q.npy") == 0
    sdf = json.loads(capsys.readouterr().out)["sdf"]
    assert sdf == pytest.approx([-0.015, 0.085], abs=1e-12)
    assert run("mesh", "d2", scene / "block.obj", "--target", scene / "block.obj", "--pairs", 2000) == 0
    assert json.loads(capsys.readouterr().out)["wasserstein"] == 0.0
    assert run("mesh", "icp", scene / "block.obj", "--target", scene / "block.obj", "-n", 300) == 0
    assert json.loads(capsys.readouterr().out)["residual"] < 1e-6


def test_retarget(tmp_path, hand):
    m = RetargetMapping.default()
    K = keypoint_fk(hand, JointConfig.rest(hand).with_angles(np.full(10, 0.4)))
    P = np.zeros((21, 3))
    for h, label, _ in m.pairs:
        P[h] = K[hand.keypoint_index(label)]
    (tmp_path / "kp.json").write_text(json.dumps({"keypoints": P.tolist()}))
    assert run("retarget", "--robot", "toy_hand", "--keypoints", tmp_path / "kp.json", "--out", tmp_path / "g.json") == 0
    # the default rest-pose prior pulls the fingers part of the way back
    shrunk = read_grasp(tmp_path / "g.json").q.angles
    assert np.all((shrunk > 0) & (shrunk < 0.4))
    (tmp_path / "map.json").write_text(json.dumps(RetargetMapping.default(regularization=0.0).to_dict()))
    assert run("retarget", "--robot", "toy_hand", "--keypoints", tmp_path / "kp.json", "--map", tmp_path / "map.json", "--out", tmp_path / "g.json") == 0
    assert np.max(np.abs(read_grasp(tmp_path / "g.json").q.angles - 0.4)) < 1e-6


def test_metrics(scene, capsys):
    assert run("metrics", scene / "pinch.json", "--robot", "gripper", "--object", scene / "block.obj", "--out", scene / "m.json") == 0
    m = json.loads((scene / "m.json").read_text())["metrics"]
    assert m["penetration_depth"] == pytest.approx(0.05, abs=1e-9)
    assert "Depth [cm]" in capsys.readouterr().err


def test_dro_encode_decode(scene, gripper, gripper_pts, pinch):
    assert run("dro", "encode", scene / "pinch.json", "--robot", "gripper", "--object-points", scene / "block.ply", "--out", scene / "d.drom") == 0
    D = read_matrix(scene / "d.drom")
    assert D.shape == (512, 512) and D.robot_hash == gripper_pts.identity_hash()
    assert run("dro", "decode", scene / "d.drom", "--robot", "gripper", "--object-points", scene / "block.ply", "--out", scene / "back.json") == 0
    rec = read_grasp(scene / "back.json")
    assert rec.provenance == "decoded"
    # float32 storage limits the fit to roughly micrometers
    assert np.max(np.abs(point_cloud_fk(gripper, rec.q, gripper_pts).points - point_cloud_fk(gripper, pinch, gripper_pts).points)) < 1e-5


def test_dro_decode_wrong_point_set(scene):
    run("dro", "encode", scene / "pinch.json", "--robot", "gripper", "--object-points", scene / "block.ply", "--out", scene / "d.drom")
    code = run("dro", "decode", scene / "d.drom", "--robot", "gripper", "--point-seed", 5, "--object-points", scene / "block.ply")
    assert code == 1


def test_eval(scene, capsys):
    write_records(scene / "g.jsonl", [read_grasp(scene / "pinch.json")])
    assert run("eval", scene / "g.jsonl", "--robot", "gripper", "--object", scene / "block.obj", "--out", scene / "v.jsonl") == 0
    assert read_records(scene / "v.jsonl")[0].verdict.success
    assert "success 100.0% (1/1)" in capsys.readouterr().out


def test_export(scene):
    assert run("export", scene / "pinch.json", "--robot", "gripper", "--object", scene / "block.obj", "--out", scene / "e.obj") == 0
    assert "o object_block" in (scene / "e.obj").read_text()


def test_pipeline_filter(scene, capsys):
    write_records(scene / "in.jsonl", [read_grasp(scene / "pinch.json")] * 3)
    cfg = {"robot": "gripper", "references": {"block": "block.obj"}, "filter": {"d2_pairs": 2000}}
    (scene / "f.json").write_text(json.dumps(cfg))
    assert run("pipeline", "filter", scene / "in.jsonl", "--config", scene / "f.json", "--out", scene / "kept.jsonl") == 0
    assert len(read_records(scene / "kept.jsonl")) == 3
    report = json.loads((scene / "kept.jsonl.report.json").read_text())
    assert report["stats"]["retained"] == 3
    assert "retained 100.0% (3/3)" in capsys.readouterr().out


def test_pipeline_augment(scene, capsys):
    cfg = {
        "robot": "gripper",
        "objects": [{"id": "block", "mesh": "block.obj"}],
        "predictor": {"type": "fixture", "grasps": {"block": "pinch.json"}},
        "per_object_target": 2,
        "seed": 1,
    }
    (scene / "a.json").write_text(json.dumps(cfg))
    assert run("pipeline", "augment", "--config", scene / "a.json", "--out", scene / "aug.jsonl") == 0
    recs = read_records(scene / "aug.jsonl")
    assert len(recs) == 2 and all(r.provenance == "sim-augmented" for r in recs)
    stats = json.loads((scene / "aug.jsonl.stats.json").read_text())
    assert stats[0]["accepted"] == 2 and stats[0]["attempts"] == 2
    assert "Success [%]" in capsys.readouterr().out


@pytest.mark.parametrize(
    "argv",
    [
        ["robot", "info", "/nonexistent.urdf"],
        ["mesh", "sample", "/nonexistent.obj", "--out", "x.ply"],
        ["robot", "frobnicate", "toy_hand"],
        ["nosuchcommand"],
        ["metrics", "g.json"],
        ["pipeline", "augment", "--robot", "gripper"],
    ],
)
def test_user_errors_exit_1(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    with pytest.raises(SystemExit) as exc:
        code = main(argv)
        raise SystemExit(code)
    assert exc.value.code == 1


def test_bad_config_exit_1(tmp_path):
    (tmp_path / "c.json").write_text("{broken")
    assert run("pipeline", "augment", "--config", tmp_path / "c.json") == 1


def test_invariant_violation_exit_2(tmp_path, monkeypatch, hand):
    import graspforge.retarget as rt

    real = rt.retarget

    def broken(*a, **k):
        res = real(*a, **k)
        res.q = res.q.with_angles(np.full(hand.dof, 9.0))
        return res

    monkeypatch.setattr(rt, "retarget", broken)
    (tmp_path / "kp.json").write_text(json.dumps({"keypoints": np.random.default_rng(0).normal(scale=0.05, size=(21, 3)).tolist()}))
    assert run("retarget", "--robot", "toy_hand", "--keypoints", tmp_path / "kp.json", "--max-iters", 2) == 2


def test_console_entry_point():
    out = subprocess.run([sys.executable, "-m", "graspforge.cli", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.startswith("graspforge")
