"""Quasi-static grasp evaluation: contact extraction and epsilon force closure.

Stands in for a dynamic disturbance test. A grasp succeeds when its
Ferrari-Canny epsilon reaches ``eps_min`` and its penetration depth stays
within the gate.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .errors import GraspForgeError
from .geometry import TriMesh, sdf_gradient, signed_distance
from .kinematics import LinkPointSet, RobotModel, clamp_to_limits, point_cloud_fk
from .metrics import CM, penetration_depth
from .records import GraspRecord, GraspVerdict


@dataclass(frozen=True)
class ContactPoint:
    position: np.ndarray  # on the object surface (m)
    normal: np.ndarray  # unit, pointing into the object
    link: int
    penetrating: bool


@dataclass(frozen=True)
class EvalConfig:
    mu: float = 0.5
    facets: int = 8
    eps_min: float = 0.05
    penetration_gate_cm: float = 0.5
    contact_threshold_cm: float = 0.5
    cluster_cm: float = 0.5
    torsional_friction: float = 0.005  # m; soft-finger torque per unit normal force

    def __post_init__(self):
        if not self.mu > 0:
            raise GraspForgeError("mu must be positive")
        if self.facets < 3:
            raise GraspForgeError("facets must be >= 3")
        if self.torsional_friction < 0:
            raise GraspForgeError("torsional_friction must be nonnegative")

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalConfig":
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise GraspForgeError(f"unknown eval config keys: {sorted(unknown)}")
        return cls(**known)


def contacts_from_points(
    points: np.ndarray,
    links: np.ndarray,
    obj: TriMesh,
    threshold_cm: float = 0.5,
    cluster_cm: float = 0.5,
    sdf: np.ndarray | None = None,
) -> list[ContactPoint]:
    """Hand points within ``threshold_cm`` of the surface, projected onto it.

    Normals are the normalized central-difference SDF gradient (step 1e-4 m),
    negated to point into the object. Candidates are visited by increasing
    |sdf| and dropped when closer than ``cluster_cm`` to a kept contact on the
    same link.
    """
    if not obj.watertight:
        raise GraspForgeError(f"object mesh {obj.name!r} is not watertight")
    if len(points) == 0:
        return []
    s = signed_distance(obj, points) if sdf is None else sdf
    cand = np.flatnonzero(np.abs(s) <= threshold_cm / CM)
    if len(cand) == 0:
        return []
    grad = sdf_gradient(obj, points[cand])
    norm = np.linalg.norm(grad, axis=1)
    ok = norm > 1e-12
    cand, grad, norm = cand[ok], grad[ok], norm[ok]
    unit = grad / norm[:, None]
    proj = points[cand] - s[cand][:, None] * unit
    order = np.lexsort((cand, np.abs(s[cand])))
    kept: list[ContactPoint] = []
    r = cluster_cm / CM
    for k in order:
        link = int(links[cand[k]])
        p = proj[k]
        if any(c.link == link and np.linalg.norm(c.position - p) < r for c in kept):
            continue
        kept.append(ContactPoint(p, -unit[k], link, bool(s[cand[k]] < 0)))
    return kept


def extract_contacts(
    grasp: GraspRecord,
    robot: RobotModel,
    pts: LinkPointSet,
    obj: TriMesh,
    threshold_cm: float = 0.5,
    cluster_cm: float = 0.5,
) -> list[ContactPoint]:
    posed = obj.transformed(grasp.object_pose)
    hand = point_cloud_fk(robot, grasp.q, pts)
    return contacts_from_points(hand.points, hand.labels, posed, threshold_cm, cluster_cm)


def _tangent_basis(n: np.ndarray, refs=()):
    """Orthonormal tangents at a contact.

    The first tangent follows the first reference direction with a usable
    component in the tangent plane, so the pyramid turns with the contact
    under rigid motion. A world axis is the fallback.
    """
    for ref in refs:
        v = ref - (ref @ n) * n
        nv = np.linalg.norm(v)
        if nv > 1e-6 * max(np.linalg.norm(ref), 1e-300):
            t1 = v / nv
            return t1, np.cross(n, t1)
    a = np.eye(3)[np.argmin(np.abs(n))]
    t1 = np.cross(n, a)
    t1 /= np.linalg.norm(t1)
    return t1, np.cross(n, t1)


def contact_wrenches(
    contacts,
    mu: float,
    facets: int,
    torque_scale: float,
    center,
    torsional_friction: float = 0.0,
) -> np.ndarray:
    """Linearized friction-cone wrench primitives, one row per primitive.

    Each primitive has unit normal force. With torsional friction (soft
    finger) every contact adds two pure-normal primitives carrying
    +/- ``torsional_friction`` torque about the normal.
    """
    center = np.asarray(center, dtype=float)
    theta = 2.0 * np.pi * np.arange(facets) / facets
    rows = []
    for c in contacts:
        n = np.asarray(c.normal, float)
        r = np.asarray(c.position, float) - center
        t1, t2 = _tangent_basis(n, (-r,))
        F = n[None, :] + mu * (np.cos(theta)[:, None] * t1 + np.sin(theta)[:, None] * t2)
        tau = np.cross(r, F)
        if torsional_friction > 0:
            spin = np.cross(r, n)
            F = np.vstack([F, n, n])
            tau = np.vstack([tau, spin + torsional_friction * n, spin - torsional_friction * n])
        rows.append(np.hstack([F, tau / torque_scale]))
    return np.concatenate(rows) if rows else np.zeros((0, 6))


def hull_epsilon(W: np.ndarray) -> float:
    """Radius of the largest origin-centered ball inside conv(W); 0 if the origin is not interior."""
    if len(W) < 7 or np.linalg.matrix_rank(W - W.mean(axis=0), tol=1e-10) < 6:
        return 0.0
    hull = None
    # flat-on-flat contacts give many coplanar wrenches; retry with joggled input
    for opts in (None, "QJ"):
        try:
            hull = ConvexHull(W, qhull_options=opts)
            break
        except QhullError:
            continue
    if hull is None:
        return 0.0
    offsets = hull.equations[:, -1]
    if np.any(offsets >= 0):
        return 0.0
    return float(np.min(-offsets))


def force_closure_epsilon(
    contacts,
    mu: float = 0.5,
    facets: int = 8,
    torque_scale: float = 1.0,
    center=(0.0, 0.0, 0.0),
    torsional_friction: float = 0.0,
) -> float:
    """Ferrari-Canny epsilon of the contact set (0 with fewer than two contacts or no closure)."""
    if not mu > 0:
        raise GraspForgeError("mu must be positive")
    if facets < 3:
        raise GraspForgeError("facets must be >= 3")
    if not contacts:
        return 0.0
    return hull_epsilon(contact_wrenches(contacts, mu, facets, torque_scale, center, torsional_friction))


def object_frame_size(obj: TriMesh, grasp: GraspRecord) -> float:
    """Bounding-box diagonal in the object's own frame, scaled by the pose (rotation-invariant)."""
    return obj.bbox_diagonal() * grasp.object_pose.scale


def surface_centroid(mesh: TriMesh) -> np.ndarray:
    return (mesh.areas @ mesh.centroids) / mesh.total_area


def evaluate_grasp(
    grasp: GraspRecord,
    robot: RobotModel,
    pts: LinkPointSet,
    obj: TriMesh,
    cfg: EvalConfig = EvalConfig(),
) -> GraspVerdict:
    posed = obj.transformed(grasp.object_pose)
    hand = point_cloud_fk(robot, grasp.q, pts)
    sdf = signed_distance(posed, hand.points)
    depth = penetration_depth(hand, posed, sdf)
    contacts = contacts_from_points(hand.points, hand.labels, posed, cfg.contact_threshold_cm, cfg.cluster_cm, sdf)
    eps = force_closure_epsilon(
        contacts,
        cfg.mu,
        cfg.facets,
        torque_scale=object_frame_size(obj, grasp),
        center=surface_centroid(posed),
        torsional_friction=cfg.torsional_friction,
    )
    pen_ok = depth <= cfg.penetration_gate_cm
    return GraspVerdict(
        success=bool(eps >= cfg.eps_min and pen_ok),
        epsilon=eps,
        contact_count=len(contacts),
        penetration_depth_cm=depth,
        penetration_ok=bool(pen_ok),
        mu=cfg.mu,
        facets=cfg.facets,
        eps_min=cfg.eps_min,
        penetration_gate_cm=cfg.penetration_gate_cm,
        contact_threshold_cm=cfg.contact_threshold_cm,
        torsional_friction=cfg.torsional_friction,
    )


def depenetrate(
    grasp: GraspRecord,
    robot: RobotModel,
    pts: LinkPointSet,
    obj: TriMesh,
    iters: int = 10,
    margin: float = 1e-4,
    damping: float = 1e-6,
) -> GraspRecord:
    """Push penetrating hand points out along the SDF gradient.

    Each iteration linearizes sdf(p_i(q)) for the penetrating points and takes
    a damped least-squares step in joint space toward sdf = margin; steps
    that do not reduce the summed penetration are halved, then abandoned.
    """
    posed = obj.transformed(grasp.object_pose)
    q = grasp.q

    def pen(qq):
        s = signed_distance(posed, point_cloud_fk(robot, qq, pts).points)
        return s, float(np.sum(np.minimum(s - margin, 0.0) ** 2))

    s, cost = pen(q)
    n = 6 + robot.dof
    h = 1e-6
    for _ in range(iters):
        bad = np.flatnonzero(s < margin)
        if len(bad) == 0 or cost == 0.0:
            break
        P = point_cloud_fk(robot, q, pts).points
        grad = sdf_gradient(posed, P[bad])
        J = np.empty((len(bad), n))
        for k in range(n):
            dx = np.zeros(n)
            dx[k] = h
            dp = (point_cloud_fk(robot, q.perturbed(dx), pts).points[bad] - point_cloud_fk(robot, q.perturbed(-dx), pts).points[bad]) / (2 * h)
            J[:, k] = np.einsum("ij,ij->i", grad, dp)
        r = s[bad] - margin
        delta = np.linalg.solve(J.T @ J + damping * np.eye(n), -J.T @ r)
        alpha, moved = 1.0, False
        for _ in range(6):
            cand = clamp_to_limits(robot, q.perturbed(alpha * delta))
            sc, cc = pen(cand)
            if cc < cost:
                q, s, cost, moved = cand, sc, cc, True
                break
            alpha *= 0.5
        if not moved:
            break
    extras = dict(grasp.extras)
    extras["depenetrated"] = True
    return replace(grasp, q=q, extras=extras)
