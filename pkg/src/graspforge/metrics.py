"""Hand-object grasp quality metrics.

Inputs are in meters; outputs use centimeters (cm, cm^3) so reports line up
with the usual penetration / disjoint / contact-ratio tables.
"""
from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from .errors import GraspForgeError
from .geometry import TriMesh, as_points, inside_grid, sample_surface, signed_distance
from .kinematics import LinkPointSet, RobotModel, point_cloud_fk, posed_link_meshes
from .records import GraspRecord, QualityMetrics

CM = 100.0
DEFAULT_CONTACT_THRESHOLD_CM = 0.5
DEFAULT_VOXEL_CM = 0.2


def _require_watertight(mesh: TriMesh, what: str = "object"):
    if not mesh.watertight:
        raise GraspForgeError(f"{what} mesh {mesh.name!r} is not watertight")


def penetration_depth(hand_cloud, obj: TriMesh, sdf: np.ndarray | None = None) -> float:
    """Deepest hand point inside the object, in cm (0 when nothing penetrates)."""
    _require_watertight(obj)
    P = as_points(hand_cloud)
    if len(P) == 0:
        return 0.0
    s = signed_distance(obj, P) if sdf is None else sdf
    return float(max(0.0, -float(np.min(s))) * CM)


def penetration_volume(hand_links, obj: TriMesh, voxel_cm: float = DEFAULT_VOXEL_CM, frame=None) -> float:
    """Volume (cm^3) of voxel centers inside the object and inside any hand link.

    The lattice is axis-aligned in ``frame`` (4x4 rigid, default identity)
    with centers at ``(k + 0.5) * voxel``; pass the object pose so the value
    moves rigidly with the object.
    """
    if not voxel_cm > 0:
        raise GraspForgeError("voxel size must be positive")
    _require_watertight(obj)
    for m in hand_links:
        _require_watertight(m, "hand link")
    v = voxel_cm / CM
    if frame is not None:
        inv = np.linalg.inv(np.asarray(frame, dtype=float))
        obj = obj.transformed(inv)
        hand_links = [m.transformed(inv) for m in hand_links]
    olo, ohi = obj.bounds()
    boxes = [(m.bounds(), m) for m in hand_links]
    boxes = [(np.maximum(b[0], olo), np.minimum(b[1], ohi), m) for b, m in boxes]
    boxes = [(lo, hi, m) for lo, hi, m in boxes if np.all(hi > lo)]
    if not boxes:
        return 0.0
    lo = np.min([b[0] for b in boxes], axis=0)
    hi = np.max([b[1] for b in boxes], axis=0)
    i0 = np.floor(lo / v).astype(np.int64)
    i1 = np.ceil(hi / v).astype(np.int64)
    shape = i1 - i0
    hand = np.zeros(shape, dtype=bool)
    for blo, bhi, m in boxes:
        j0 = np.floor(blo / v).astype(np.int64)
        j1 = np.ceil(bhi / v).astype(np.int64)
        sub = inside_grid(m, j0 * v, j1 - j0, v)
        s0 = j0 - i0
        hand[s0[0] : s0[0] + sub.shape[0], s0[1] : s0[1] + sub.shape[1], s0[2] : s0[2] + sub.shape[2]] |= sub
    if not hand.any():
        return 0.0
    inside = inside_grid(obj, i0 * v, shape, v)
    return float(np.count_nonzero(inside & hand) * voxel_cm**3)


def disjoint_distance(finger_cloud, obj: TriMesh, sdf: np.ndarray | None = None) -> float:
    """Mean outside distance (cm) of finger points; penetrating points count as 0."""
    P = as_points(finger_cloud)
    if len(P) == 0:
        raise GraspForgeError("disjoint distance needs at least one finger point")
    _require_watertight(obj)
    s = signed_distance(obj, P) if sdf is None else sdf
    return float(np.mean(np.maximum(0.0, s)) * CM)


def contact_ratio(object_samples, hand_cloud, threshold_cm: float = DEFAULT_CONTACT_THRESHOLD_CM) -> float:
    """Fraction of object samples whose nearest hand point lies within the threshold."""
    O = as_points(object_samples)
    H = as_points(hand_cloud)
    if len(O) == 0:
        raise GraspForgeError("contact ratio needs object samples")
    if not threshold_cm > 0:
        raise GraspForgeError("contact threshold must be positive")
    if len(H) == 0:
        return 0.0
    d, _ = cKDTree(H).query(O)
    return float(np.count_nonzero(d <= threshold_cm / CM) / len(O))


def quality_report(
    grasp: GraspRecord,
    robot: RobotModel,
    pts: LinkPointSet,
    obj: TriMesh,
    contact_threshold_cm: float = DEFAULT_CONTACT_THRESHOLD_CM,
    voxel_cm: float = DEFAULT_VOXEL_CM,
    object_samples: int = 2048,
    seed: int = 0,
) -> QualityMetrics:
    """All four metrics for one grasp. ``obj`` is in mesh coordinates; the
    record's ``object_pose`` places it in the grasp frame."""
    posed = obj.transformed(grasp.object_pose)
    hand = point_cloud_fk(robot, grasp.q, pts)
    sdf = signed_distance(posed, hand.points) if len(hand) else np.zeros(0)
    depth = penetration_depth(hand, posed, sdf)
    frame = grasp.object_pose.matrix()
    frame[:3, :3] = grasp.object_pose.R
    volume = penetration_volume([m for _, m in posed_link_meshes(robot, grasp.q)], posed, voxel_cm, frame)
    fingers = np.isin(hand.labels, robot.finger_indices())
    disjoint = disjoint_distance(hand.points[fingers], posed, sdf[fingers])
    samples = grasp.object_pose.apply(sample_surface(obj, object_samples, seed).points)
    ratio = contact_ratio(samples, hand, contact_threshold_cm)
    return QualityMetrics(depth, volume, disjoint, ratio, float(contact_threshold_cm), float(voxel_cm))
