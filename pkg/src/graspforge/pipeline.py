"""Dataset lifecycle: object alignment, filtering gates, a retrieval
predictor for distance matrices, and the simulate-and-accumulate loop."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.spatial import cKDTree

from .dro import DistanceMatrix, cloud_hash, decode_grasp, encode_distance_matrix
from .errors import GraspForgeError
from .geometry import (
    PointCloud,
    TriMesh,
    as_points,
    d2_descriptor,
    icp_align,
    load_mesh,
    sample_surface,
    wasserstein_1d,
)
from .grasp_eval import EvalConfig, evaluate_grasp
from .kinematics import JointConfig, LinkPointSet, RobotModel, point_cloud_fk
from .metrics import quality_report
from .records import GraspRecord
from .transforms import SimilarityTransform, rotvec_to_matrix

log = logging.getLogger(__name__)

GATES = ("size", "shape", "penetration")


# ----------------------------------------------------------------------------
# alignment


def align_object(
    reconstructed,
    reference: TriMesh,
    scale_multiplier: float = 1.0,
    estimate_scale: bool = True,
    samples: int = 2048,
    seed: int = 0,
    **icp_opts,
):
    """Pose of the reference mesh in the reconstruction's (grasp) frame.

    ICP registers the reference surface onto the reconstruction. The
    category ``scale_multiplier`` (e.g. 1.5 for a large hand) enlarges the
    reference before registration and is folded into the returned scale.
    Returns ``(SimilarityTransform, rms_residual)``.
    """
    if not scale_multiplier > 0:
        raise GraspForgeError("scale_multiplier must be positive")
    if isinstance(reconstructed, TriMesh):
        target = sample_surface(reconstructed, samples, seed).points
    else:
        target = as_points(reconstructed)
    if len(target) < 3:
        raise GraspForgeError("degenerate reconstruction (fewer than 3 points)")
    src = sample_surface(reference, samples, seed).points * scale_multiplier
    T, residual = icp_align(src, target, estimate_scale=estimate_scale, **icp_opts)
    return SimilarityTransform(T.rotation, T.translation, T.scale * scale_multiplier), residual


# ----------------------------------------------------------------------------
# filtering


@dataclass(frozen=True)
class GateThresholds:
    size_min: float = 0.02  # m, bounding-box diagonal
    size_max: float = 0.5
    shape_tau: float = 0.01  # m, W1 between D2 histograms
    depth_tau_cm: float = 0.5
    volume_tau_cm3: float = 2.0

    def __post_init__(self):
        if not 0 < self.size_min < self.size_max:
            raise GraspForgeError("size gate needs 0 < min < max")
        for name in ("shape_tau", "depth_tau_cm", "volume_tau_cm3"):
            if not getattr(self, name) > 0:
                raise GraspForgeError(f"{name} must be positive")


@dataclass(frozen=True)
class FilterConfig:
    """Gate thresholds with per-category overrides.

    Shipped defaults are placeholders; thresholds are meant to be tuned per
    object category.
    """

    default: GateThresholds = field(default_factory=GateThresholds)
    overrides: dict = field(default_factory=dict)  # category -> GateThresholds
    d2_pairs: int = 20_000
    d2_bins: int = 64
    d2_samples: int = 2048
    seed: int = 0
    contact_threshold_cm: float = 0.5
    voxel_cm: float = 0.2

    def for_category(self, category: str) -> GateThresholds:
        return self.overrides.get(category, self.default)

    def to_dict(self) -> dict:
        return {
            "default": dict(self.default.__dict__),
            "overrides": {k: dict(v.__dict__) for k, v in self.overrides.items()},
            "d2_pairs": self.d2_pairs,
            "d2_bins": self.d2_bins,
            "d2_samples": self.d2_samples,
            "seed": self.seed,
            "contact_threshold_cm": self.contact_threshold_cm,
            "voxel_cm": self.voxel_cm,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FilterConfig":
        try:
            base = GateThresholds(**d.get("default", {}))
            overrides = {k: replace(base, **v) for k, v in d.get("overrides", {}).items()}
            rest = {k: d[k] for k in ("d2_pairs", "d2_bins", "d2_samples", "seed", "contact_threshold_cm", "voxel_cm") if k in d}
        except TypeError as exc:
            raise GraspForgeError(f"invalid filter config: {exc}") from exc
        return cls(base, overrides, **rest)


@dataclass
class FilterStats:
    input: int = 0
    rejected: dict = field(default_factory=lambda: {g: 0 for g in GATES})
    retained: int = 0

    @property
    def fraction(self) -> float:
        return self.retained / self.input if self.input else 0.0

    def to_dict(self) -> dict:
        return {"input": self.input, "rejected": dict(self.rejected), "retained": self.retained, "fraction": self.fraction}


@dataclass
class GateOutcome:
    passed: bool
    failed_gate: str | None
    size: float
    shape_w1: float | None = None
    metrics: object = None


class MeshCache:
    def __init__(self, loader: Callable[[str], TriMesh] = load_mesh):
        self.loader = loader
        self._cache: dict[str, TriMesh] = {}

    def __call__(self, path: str) -> TriMesh:
        if path not in self._cache:
            self._cache[path] = self.loader(path)
        return self._cache[path]


def check_gates(
    record: GraspRecord,
    robot: RobotModel,
    pts: LinkPointSet,
    mesh: TriMesh,
    reference: TriMesh,
    cfg: FilterConfig,
    ref_hist=None,
) -> GateOutcome:
    """Run the three gates in order and stop at the first failure."""
    th = cfg.for_category(record.category)
    size = mesh.bbox_diagonal() * record.object_pose.scale
    if not th.size_min <= size <= th.size_max:
        return GateOutcome(False, "size", size)
    range_max = 1.25 * reference.bbox_diagonal()
    if ref_hist is None:
        ref_hist = d2_descriptor(sample_surface(reference, cfg.d2_samples, cfg.seed), cfg.d2_pairs, cfg.d2_bins, range_max, cfg.seed)
    recon = sample_surface(mesh, cfg.d2_samples, cfg.seed).points * record.object_pose.scale
    w1 = wasserstein_1d(d2_descriptor(recon, cfg.d2_pairs, cfg.d2_bins, range_max, cfg.seed), ref_hist)
    if w1 > th.shape_tau:
        return GateOutcome(False, "shape", size, w1)
    m = quality_report(record, robot, pts, mesh, cfg.contact_threshold_cm, cfg.voxel_cm)
    if m.penetration_depth > th.depth_tau_cm or m.penetration_volume > th.volume_tau_cm3:
        return GateOutcome(False, "penetration", size, w1, m)
    return GateOutcome(True, None, size, w1, m)


def filter_dataset(
    records,
    robot: RobotModel,
    pts: LinkPointSet,
    references: dict,
    cfg: FilterConfig = FilterConfig(),
    meshes: Callable[[str], TriMesh] | None = None,
    export_dir: str | Path | None = None,
):
    """Apply size, shape and penetration gates in order.

    Rejections are attributed to the first failing gate. Retained records get
    freshly computed metrics attached. Returns ``(retained, stats, report)``
    where the report lists every retained grasp with the path of its posed
    hand/object OBJ export for manual review (written only if ``export_dir``).
    """
    meshes = meshes or MeshCache()
    stats = FilterStats()
    retained, report = [], []
    ref_hists: dict[str, object] = {}
    for rec in records:
        stats.input += 1
        cat = rec.category
        if cat not in references:
            raise GraspForgeError(f"no reference mesh for category {cat!r} (record {rec.id})")
        ref = references[cat]
        if cat not in ref_hists:
            ref_hists[cat] = d2_descriptor(
                sample_surface(ref, cfg.d2_samples, cfg.seed), cfg.d2_pairs, cfg.d2_bins, 1.25 * ref.bbox_diagonal(), cfg.seed
            )
        mesh = meshes(rec.object_mesh)
        out = check_gates(rec, robot, pts, mesh, ref, cfg, ref_hists[cat])
        if not out.passed:
            stats.rejected[out.failed_gate] += 1
            continue
        kept = replace(rec, metrics=out.metrics)
        retained.append(kept)
        export = None
        if export_dir is not None:
            from .io import export_posed_hand

            export = str(Path(export_dir) / f"{rec.id}.obj")
            export_posed_hand(kept, robot, export, obj=mesh)
        report.append({"id": rec.id, "category": cat, "metrics": out.metrics.to_dict(), "shape_w1": out.shape_w1, "export": export})
    stats.retained = len(retained)
    return retained, stats, report


# ----------------------------------------------------------------------------
# retrieval predictor


@dataclass
class TrainingEntry:
    record: GraspRecord
    matrix: DistanceMatrix
    cloud: np.ndarray  # object points the matrix columns refer to


class RetrievalPredictor:
    """Nearest training object by D2/W1, columns remapped onto the query cloud.

    The stored cloud is ICP-aligned onto the query; each query point takes the
    matrix column of its nearest aligned stored point.
    """

    def __init__(self, training, pairs: int = 20_000, bins: int = 64, seed: int = 0, robot_hash: int | None = None):
        self.training = [e if isinstance(e, TrainingEntry) else TrainingEntry(*e) for e in training]
        if not self.training:
            raise GraspForgeError("retrieval predictor needs a nonempty training set")
        hashes = {e.matrix.robot_hash for e in self.training}
        if robot_hash is not None and hashes != {robot_hash}:
            raise GraspForgeError("training matrices were encoded for a different robot point set")
        if len(hashes) != 1:
            raise GraspForgeError("training matrices mix robot point-set identities")
        for e in self.training:
            e.cloud = as_points(e.cloud)
            if e.matrix.shape[1] != len(e.cloud):
                raise GraspForgeError(f"training entry {e.record.id}: matrix columns do not match its cloud")
        self.pairs, self.bins, self.seed = pairs, bins, seed
        self.last_choice: int | None = None

    def choose(self, query: np.ndarray) -> int:
        range_max = 1.25 * float(np.linalg.norm(query.max(axis=0) - query.min(axis=0)))
        hq = d2_descriptor(query, self.pairs, self.bins, range_max, self.seed)
        dists = [wasserstein_1d(hq, d2_descriptor(e.cloud, self.pairs, self.bins, range_max, self.seed)) for e in self.training]
        return int(np.argmin(dists))

    def __call__(self, object_cloud) -> DistanceMatrix:
        Q = as_points(object_cloud)
        k = self.choose(Q)
        self.last_choice = k
        entry = self.training[k]
        T, _ = icp_align(entry.cloud, Q)
        _, idx = cKDTree(T.apply(entry.cloud)).query(Q)
        return DistanceMatrix(entry.matrix.values[:, idx], entry.matrix.robot_hash, cloud_hash(Q))


def retrieval_predictor(object_cloud, training, **kwargs) -> DistanceMatrix:
    return RetrievalPredictor(training, **kwargs)(object_cloud)


class FixturePredictor:
    """Ground-truth predictor for one known grasp on one object.

    Registers the query cloud onto the object mesh, carries the stored hand
    cloud (object frame) into the query frame and encodes exact distances.
    Closes the accumulation loop without a learned model.
    """

    def __init__(self, obj: TriMesh, hand_cloud, robot_hash: int = 0, **icp_opts):
        self.obj = obj
        self.hand = as_points(hand_cloud)
        self.robot_hash = robot_hash
        self.icp_opts = {"trim_fraction": 0.0, "tol": 1e-14, "multistart": False, **icp_opts}

    def __call__(self, object_cloud) -> DistanceMatrix:
        Q = as_points(object_cloud)
        T, _ = icp_align(Q, self.obj, **self.icp_opts)
        return encode_distance_matrix(T.inverse().apply(self.hand), Q, self.robot_hash)


def fixture_from_record(record: GraspRecord, robot: RobotModel, pts: LinkPointSet, mesh: TriMesh, **icp_opts) -> FixturePredictor:
    """FixturePredictor for a stored grasp; the hand is carried into the mesh frame."""
    if abs(record.object_pose.scale - 1.0) > 1e-12:
        raise GraspForgeError("fixture predictor needs a unit-scale object pose")
    hand = point_cloud_fk(robot, record.q, pts).points
    return FixturePredictor(mesh, record.object_pose.inverse().apply(hand), pts.identity_hash(), **icp_opts)


def predictor_from_config(cfg: dict, base_dir, robot: RobotModel, pts: LinkPointSet, meshes: dict):
    """Build a predictor from its config block.

    ``{"type": "fixture", "grasps": {object_id: grasp.json}}`` or
    ``{"type": "retrieval", "training": [{"grasp", "matrix", "cloud"}], "pairs", "bins", "seed"}``.
    Relative paths resolve against ``base_dir``.
    """
    from .io import read_grasp, read_matrix, read_points

    base = Path(base_dir)

    def path(p):
        return p if Path(p).is_absolute() else base / p

    kind = cfg.get("type")
    if kind == "fixture":
        grasps = cfg.get("grasps", {})
        missing = set(meshes) - set(grasps)
        if missing:
            raise GraspForgeError(f"fixture predictor has no grasp for objects {sorted(missing)}")
        return {oid: fixture_from_record(read_grasp(path(grasps[oid])), robot, pts, meshes[oid]) for oid in meshes}
    if kind == "retrieval":
        training = [
            TrainingEntry(read_grasp(path(e["grasp"])), read_matrix(path(e["matrix"])), read_points(path(e["cloud"])).points)
            for e in cfg.get("training", [])
        ]
        return RetrievalPredictor(
            training, int(cfg.get("pairs", 20_000)), int(cfg.get("bins", 64)), int(cfg.get("seed", 0)), pts.identity_hash()
        )
    raise GraspForgeError(f"unknown predictor type {kind!r} (expected 'fixture' or 'retrieval')")


# ----------------------------------------------------------------------------
# accumulation loop


@dataclass(frozen=True)
class PerturbConfig:
    points: int = 512
    rotation_deg: float = 5.0
    translation_m: float = 0.01

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d: dict) -> "PerturbConfig":
        return cls(**d)


@dataclass
class ObjectAugmentStats:
    object_id: str
    attempts: int = 0
    accepted: int = 0
    decode_failures: int = 0
    exhausted: bool = False

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.attempts if self.attempts else 0.0

    def to_dict(self) -> dict:
        return {**self.__dict__, "acceptance_rate": self.acceptance_rate}


@dataclass
class AugmentResult:
    records: list
    stats: list


def jitter_pose(rng: np.random.Generator, cfg: PerturbConfig) -> SimilarityTransform:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = np.deg2rad(rng.uniform(-cfg.rotation_deg, cfg.rotation_deg))
    t = rng.uniform(-cfg.translation_m, cfg.translation_m, size=3)
    return SimilarityTransform.from_matrix(rotvec_to_matrix(axis * angle), t)


def augment_object(
    predictor,
    obj_id: str,
    mesh: TriMesh,
    per_object_target: int,
    robot: RobotModel,
    pts: LinkPointSet,
    eval_cfg: EvalConfig,
    perturb_cfg: PerturbConfig,
    rng: np.random.Generator,
    budget: int,
    q0: JointConfig | None = None,
    mesh_path: str = "",
):
    stats = ObjectAugmentStats(obj_id)
    accepted = []
    while stats.accepted < per_object_target and stats.attempts < budget:
        attempt = stats.attempts
        stats.attempts += 1
        pose = jitter_pose(rng, perturb_cfg)
        sample_seed = int(rng.integers(0, 2**63 - 1))
        cloud = pose.apply(sample_surface(mesh, perturb_cfg.points, sample_seed).points)
        try:
            D = predictor(PointCloud(cloud))
            rec = decode_grasp(
                D, cloud, robot, pts, q0=q0,
                grasp_id=f"{obj_id}-{attempt:05d}", object_id=obj_id,
                object_category=obj_id, object_mesh=mesh_path, object_pose=pose,
            )
        except GraspForgeError as exc:
            stats.decode_failures += 1
            log.debug("attempt %s on %s failed to decode: %s", attempt, obj_id, exc)
            continue
        verdict = evaluate_grasp(rec, robot, pts, mesh, eval_cfg)
        if verdict.success:
            accepted.append(replace(rec, provenance="sim-augmented", verdict=verdict))
            stats.accepted += 1
    stats.exhausted = stats.accepted < per_object_target
    if stats.exhausted:
        log.info("object %s: budget of %d attempts exhausted with %d/%d accepted", obj_id, budget, stats.accepted, per_object_target)
    return accepted, stats


def augment_loop(
    predictor,
    objects,
    per_object_target: int,
    robot: RobotModel,
    pts: LinkPointSet,
    eval_cfg: EvalConfig = EvalConfig(),
    perturb_cfg: PerturbConfig = PerturbConfig(),
    seed: int = 0,
    budget_factor: int = 50,
    q0: JointConfig | None = None,
) -> AugmentResult:
    """Predict, decode and evaluate grasps on perturbed objects; keep successes.

    ``objects`` is a list of ``(id, TriMesh)`` or ``(id, TriMesh, mesh_path)``.
    ``predictor`` may be a single callable or a dict keyed by object id. Each
    object gets its own generator spawned from ``seed``, so objects can be
    processed in any order with identical results.
    """
    if per_object_target <= 0:
        raise GraspForgeError("per_object_target must be positive")
    streams = np.random.SeedSequence(seed).spawn(len(objects))
    records, stats = [], []
    for k, entry in enumerate(objects):
        obj_id, mesh = entry[0], entry[1]
        path = entry[2] if len(entry) > 2 else ""
        pred = predictor[obj_id] if isinstance(predictor, dict) else predictor
        acc, st = augment_object(
            pred, obj_id, mesh, per_object_target, robot, pts, eval_cfg, perturb_cfg,
            np.random.default_rng(streams[k]), budget_factor * per_object_target, q0, path,
        )
        records.extend(acc)
        stats.append(st)
    return AugmentResult(records, stats)
