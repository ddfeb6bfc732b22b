import json
import time

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from graspforge.dro import DistanceMatrix
from graspforge.errors import GraspForgeError
from graspforge.geometry import PointCloud
from graspforge.io import (
    METRIC_HEADERS,
    DatasetManifest,
    decode_matrix_bytes,
    encode_matrix_bytes,
    export_posed_hand,
    load_obj_groups,
    read_grasp,
    read_matrix,
    read_ply,
    read_points,
    read_records,
    render_filter_stats,
    render_metrics,
    report_render,
    write_grasp,
    write_matrix,
    write_ply,
    write_records,
)
from graspforge.kinematics import JointConfig
from graspforge.pipeline import FilterStats
from graspforge.records import GraspRecord, GraspVerdict, QualityMetrics
from graspforge.transforms import SimilarityTransform

from conftest import random_config

# DROM | version 1 | rows 3 | cols 4 | 0.0 .. 2.75 step 0.25 as f32 LE | hashes 1, 2
GOLDEN = bytes.fromhex(
    "44524f4d" "0100" "03000000" "04000000"
    "00000000" "0000803e" "0000003f" "0000403f"
    "0000803f" "0000a03f" "0000c03f" "0000e03f"
    "00000040" "00001040" "00002040" "00003040"
    "0100000000000000" "0200000000000000"
)


def test_matrix_golden_bytes():
    D = DistanceMatrix(np.arange(12.0).reshape(3, 4) / 4, robot_hash=1, object_hash=2)
    assert encode_matrix_bytes(D) == GOLDEN
    assert decode_matrix_bytes(GOLDEN) == D


def test_matrix_file_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    D = DistanceMatrix(rng.random((7, 5)).astype(np.float32).astype(float), 2**63 + 5, 17)
    write_matrix(tmp_path / "d.drom", D)
    back = read_matrix(tmp_path / "d.drom")
    assert back == D
    assert encode_matrix_bytes(back) == (tmp_path / "d.drom").read_bytes()


@pytest.mark.parametrize(
    "buf",
    [
        b"",
        GOLDEN[:-1],
        GOLDEN + b"\x00",
        b"XXXX" + GOLDEN[4:],
        GOLDEN[:4] + b"\x02\x00" + GOLDEN[6:],
    ],
)
def test_matrix_bad_bytes(buf):
    with pytest.raises(GraspForgeError):
        decode_matrix_bytes(buf)


def _records(hand, n, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for k in range(n):
        m = QualityMetrics(*rng.random(3), rng.random(), 0.5, 0.2) if k % 2 else None
        out.append(
            GraspRecord(
                f"r{k}", hand.name, f"obj{k % 7}", random_config(hand, rng),
                provenance=("web", "decoded", "sim-augmented")[k % 3],
                object_pose=SimilarityTransform.from_matrix(np.eye(3), rng.normal(size=3), 1.0 + rng.random()),
                metrics=m, source_image=None if k % 5 else f"img{k}.jpg", extras={"k": k},
            )
        )
    return out


def test_jsonl_round_trip(tmp_path, hand):
    recs = _records(hand, 50)
    write_records(tmp_path / "a.jsonl", recs)
    back = read_records(tmp_path / "a.jsonl")
    assert [r.to_dict() for r in back] == [r.to_dict() for r in recs]
    # floats survive bit for bit
    assert back[3].q.angles.tobytes() == recs[3].q.angles.tobytes()


def test_jsonl_append(tmp_path, hand):
    recs = _records(hand, 4)
    write_records(tmp_path / "a.jsonl", recs[:2])
    write_records(tmp_path / "a.jsonl", recs[2:], append=True)
    assert [r.id for r in read_records(tmp_path / "a.jsonl")] == ["r0", "r1", "r2", "r3"]


def test_jsonl_10k_under_5s(tmp_path, hand):
    recs = _records(hand, 10_000)
    t0 = time.perf_counter()
    write_records(tmp_path / "big.jsonl", recs)
    back = read_records(tmp_path / "big.jsonl")
    elapsed = time.perf_counter() - t0
    assert len(back) == 10_000 and back[-1].to_dict() == recs[-1].to_dict()
    assert elapsed < 5.0


def test_jsonl_errors_name_line(tmp_path, hand):
    p = tmp_path / "bad.jsonl"
    good = json.dumps(_records(hand, 1)[0].to_dict())
    p.write_text(good + "\n" + "{not json\n")
    with pytest.raises(GraspForgeError, match=":2:"):
        read_records(p)
    d = _records(hand, 1)[0].to_dict()
    d["provenance"] = "scraped"
    p.write_text(good + "\n\n" + json.dumps(d) + "\n")
    with pytest.raises(GraspForgeError, match=":3:"):
        read_records(p)
    with pytest.raises(GraspForgeError):
        read_records(tmp_path / "missing.jsonl")


def test_record_with_verdict(tmp_path, hand):
    v = GraspVerdict(True, 0.2, 4, 0.05, True, 0.5, 8, 0.05, 0.5, 0.5, 0.005)
    r = GraspRecord("v", hand.name, "o", JointConfig.rest(hand), verdict=v)
    write_grasp(tmp_path / "g.json", r)
    assert read_grasp(tmp_path / "g.json").to_dict() == r.to_dict()


def test_inconsistent_verdict_rejected():
    with pytest.raises(GraspForgeError):
        GraspVerdict(True, 0.01, 4, 0.05, True, 0.5, 8, 0.05, 0.5, 0.5)


@given(st.lists(st.tuples(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3), st.floats(-1e3, 1e3)), min_size=1, max_size=30))
def test_ply_round_trip(tmp_path_factory, pts):
    p = tmp_path_factory.mktemp("ply") / "c.ply"
    cloud = PointCloud(np.array(pts), np.arange(len(pts)) % 3)
    write_ply(p, cloud)
    back = read_ply(p)
    assert np.array_equal(back.points, cloud.points) and np.array_equal(back.labels, cloud.labels)


def test_read_points_formats(tmp_path):
    P = np.random.default_rng(1).normal(size=(5, 3))
    np.save(tmp_path / "p.npy", P)
    np.savetxt(tmp_path / "p.txt", P, fmt="%.17g")
    assert np.array_equal(read_points(tmp_path / "p.npy").points, P)
    assert np.array_equal(read_points(tmp_path / "p.txt").points, P)


def test_export_reimports(tmp_path, gripper, block, pinch):
    r = GraspRecord("g", "gripper", "block", pinch)
    names = export_posed_hand(r, gripper, tmp_path / "g.obj", obj=block)
    groups = load_obj_groups(tmp_path / "g.obj")
    assert list(groups) == names
    assert names[-1] == "object_block"
    assert len(names) == gripper.n_links + 1
    for m in groups.values():
        assert m.watertight
    np.testing.assert_allclose(groups["object_block"].vertices, block.vertices, atol=1e-15)


def test_metrics_table_layout():
    rows = [("a", QualityMetrics(0.1, 2.0, 0.09, 0.25, 0.5, 0.2)), ("b", QualityMetrics(0.3, 4.0, 0.11, 0.35, 0.5, 0.2))]
    text = render_metrics(rows)
    lines = text.splitlines()
    for h in METRIC_HEADERS:
        assert h in lines[0]
    assert lines[-1].split() == ["mean", "0.20", "3.00", "0.10", "30.0"]
    assert report_render(rows) == text


def test_filter_stats_line():
    s = FilterStats(input=1000, rejected={"size": 500, "shape": 300, "penetration": 104}, retained=96)
    assert render_filter_stats(s).splitlines()[-1] == "retained 9.6% (96/1000)"
    assert report_render(s) == render_filter_stats(s)


def test_render_unknown():
    with pytest.raises(GraspForgeError):
        report_render([1, 2])


def _manifest_tree(tmp_path, hand):
    (tmp_path / "robot.urdf").write_text("<robot name='x'/>")
    (tmp_path / "ref.obj").write_text("v 0 0 0\n")
    write_records(tmp_path / "recs.jsonl", _records(hand, 2))
    cfgs = {"filter": {}, "eval": {}, "perturb": {}}
    return DatasetManifest.build(tmp_path, "robot.urdf", 0, [1, 2], {"cat": "ref.obj"}, cfgs, ["recs.jsonl"])


def test_manifest_round_trip(tmp_path, hand):
    m = _manifest_tree(tmp_path, hand)
    m.save(tmp_path / "manifest.json")
    assert DatasetManifest.load(tmp_path / "manifest.json") == m


def test_manifest_catches_every_byte_flip(tmp_path, hand):
    m = _manifest_tree(tmp_path, hand)
    for name in ("robot.urdf", "ref.obj"):
        p = tmp_path / name
        orig = p.read_bytes()
        for i in range(len(orig)):
            mutated = bytearray(orig)
            mutated[i] ^= 0x01
            p.write_bytes(bytes(mutated))
            with pytest.raises(GraspForgeError, match="hash mismatch"):
                m.verify(tmp_path)
        p.write_bytes(orig)
    m.verify(tmp_path)


def test_manifest_needs_all_configs(tmp_path, hand):
    d = _manifest_tree(tmp_path, hand).to_dict()
    del d["configs"]["perturb"]
    with pytest.raises(GraspForgeError, match="perturb"):
        DatasetManifest.from_dict(d)
