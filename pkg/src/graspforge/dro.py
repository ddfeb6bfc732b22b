"""Distance-matrix grasp codec.

A grasp is encoded as the dense matrix of Euclidean distances between the
posed robot point cloud (rows) and the object point cloud (columns).
Decoding recovers each robot point by multilateration against the object
points, then fits the joint configuration to the recovered cloud.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import GraspForgeError
from .geometry import PointCloud, as_points
from .kinematics import JointConfig, LinkPointSet, RobotModel, point_cloud_fk
from .optim import levenberg_marquardt
from .records import GraspRecord
from .transforms import kabsch, make_transform


class DecodeError(GraspForgeError):
    pass


def cloud_hash(points) -> int:
    """64-bit content hash of a point array (little-endian float64 bytes)."""
    P = np.ascontiguousarray(as_points(points), dtype="<f8")
    h = hashlib.blake2b(digest_size=8)
    h.update(np.int64(len(P)).tobytes())
    h.update(P.tobytes())
    return int.from_bytes(h.digest(), "little")


@dataclass(frozen=True)
class DistanceMatrix:
    values: np.ndarray  # (N_R, N_O) meters
    robot_hash: int = 0
    object_hash: int = 0

    def __post_init__(self):
        V = np.asarray(self.values, dtype=float)
        if V.ndim != 2:
            raise GraspForgeError("distance matrix must be 2-D")
        if not np.all(np.isfinite(V)) or np.any(V < 0):
            raise GraspForgeError("distance matrix entries must be finite and nonnegative")
        object.__setattr__(self, "values", V)

    @property
    def shape(self):
        return self.values.shape

    def __eq__(self, other):
        if not isinstance(other, DistanceMatrix):
            return NotImplemented
        return (
            np.array_equal(self.values, other.values)
            and self.robot_hash == other.robot_hash
            and self.object_hash == other.object_hash
        )

    __hash__ = None


def encode_distance_matrix(robot_cloud, object_cloud, robot_hash: int = 0) -> DistanceMatrix:
    """D[i, j] = |robot_i - object_j|.

    ``robot_hash`` should be the LinkPointSet identity the robot cloud was
    posed from; 0 leaves the matrix unbound.
    """
    R, O = as_points(robot_cloud), as_points(object_cloud)
    if len(R) == 0 or len(O) == 0:
        raise GraspForgeError("cannot encode an empty point cloud")
    diff = R[:, None, :] - O[None, :, :]
    D = np.sqrt((diff * diff).sum(axis=2))
    return DistanceMatrix(D, int(robot_hash), cloud_hash(O))


# ----------------------------------------------------------------------------
# multilateration


def _linear_system(anchors: np.ndarray):
    if len(anchors) < 4:
        raise GraspForgeError("multilateration needs at least 4 anchors")
    center = anchors.mean(axis=0)
    A0 = anchors - center
    A = 2.0 * (A0[1:] - A0[0])
    s = np.linalg.svd(A, compute_uv=False)
    if s[-1] <= 1e-10 * s[0]:
        raise GraspForgeError("rank-deficient anchor geometry (anchors coplanar or coincident)")
    sq = np.sum(A0 * A0, axis=1)
    return A, sq, center, A0


def _multilaterate_rows(anchors: np.ndarray, dists: np.ndarray, refine_steps: int = 10):
    """Batched algebraic solve + Gauss-Newton refinement. ``dists`` is (rows, n_anchors)."""
    A, sq, center, A0 = _linear_system(anchors)
    d2 = dists * dists
    # |x - a_j|^2 - |x - a_0|^2 = d_j^2 - d_0^2, linear in x
    B = (d2[:, :1] - d2[:, 1:]) + (sq[1:] - sq[0])[None, :]
    X = np.linalg.lstsq(A, B.T, rcond=None)[0].T
    cost = _range_cost(X, A0, dists)
    for _ in range(refine_steps):
        diff = X[:, None, :] - A0[None, :, :]
        rng = np.linalg.norm(diff, axis=2)
        safe = np.maximum(rng, 1e-300)
        J = diff / safe[:, :, None]
        r = rng - dists
        H = np.einsum("nki,nkj->nij", J, J)
        g = np.einsum("nki,nk->ni", J, r)
        try:
            step = -np.linalg.solve(H + 1e-15 * np.eye(3), g[:, :, None])[:, :, 0]
        except np.linalg.LinAlgError:
            break
        Xn = X + step
        cn = _range_cost(Xn, A0, dists)
        better = cn < cost
        if not better.any():
            break
        X[better], cost[better] = Xn[better], cn[better]
        if np.max(np.abs(step[better])) < 1e-15:
            break
    rms = np.sqrt(cost / dists.shape[1])
    return X + center, rms


def _range_cost(X, A0, dists):
    r = np.linalg.norm(X[:, None, :] - A0[None, :, :], axis=2) - dists
    return np.sum(r * r, axis=1)


def multilaterate_point(anchors, dists):
    """Recover one point from its distances to >= 4 non-coplanar anchors.

    Linearizes by subtracting the first sphere equation from the others,
    solves the least-squares system, then takes up to 10 Gauss-Newton steps
    on the range residuals. Returns ``(point, rms_range_residual)``.
    """
    anchors = as_points(anchors)
    d = np.asarray(dists, dtype=float).reshape(-1)
    if len(d) != len(anchors):
        raise GraspForgeError(f"{len(anchors)} anchors but {len(d)} distances")
    if np.any(d < 0) or not np.all(np.isfinite(d)):
        raise GraspForgeError("distances must be finite and nonnegative")
    X, rms = _multilaterate_rows(anchors, d[None, :])
    return X[0], float(rms[0])


@dataclass
class Multilateration:
    cloud: PointCloud
    residuals: np.ndarray  # per-row RMS range residual (m)
    feasible: np.ndarray  # bool per row


def multilaterate_cloud(
    D: DistanceMatrix,
    object_cloud,
    abs_tol: float = 1e-3,
    rel_tol: float = 0.2,
) -> Multilateration:
    """Row-wise multilateration of a distance matrix against the object points.

    A row is flagged infeasible when its RMS range residual exceeds
    ``abs_tol + rel_tol * mean(row)``; flagged rows keep their (unreliable)
    position so global indexing is preserved.
    """
    O = as_points(object_cloud)
    if D.shape[1] != len(O):
        raise GraspForgeError(f"distance matrix has {D.shape[1]} columns but object cloud has {len(O)} points")
    X, rms = _multilaterate_rows(O, D.values)
    feasible = np.isfinite(rms) & (rms <= abs_tol + rel_tol * D.values.mean(axis=1))
    X = np.where(np.isfinite(X), X, 0.0)
    return Multilateration(PointCloud(X), rms, feasible)


# ----------------------------------------------------------------------------
# configuration fitting


@dataclass
class FitResult:
    q: JointConfig
    rms: float
    history: list
    iterations: int


def fit_configuration(
    robot: RobotModel,
    pts: LinkPointSet,
    target,
    q0: JointConfig | None = None,
    weights=None,
    max_iters: int = 100,
    tol: float = 1e-10,
) -> FitResult:
    """Fit ``q`` so that ``point_cloud_fk(q)`` matches ``target`` point by point.

    Stage 1 places the base by a Kabsch fit of the root-link samples; stage 2
    runs damped Gauss-Newton over base and joints with limits clamped.
    ``weights`` (per point, >= 0) drop flagged rows.
    """
    T = as_points(target)
    if len(T) != len(pts):
        raise GraspForgeError(f"target has {len(T)} points, robot point set has {len(pts)}")
    w = np.ones(len(T)) if weights is None else np.asarray(weights, dtype=float)
    if len(w) != len(T) or np.any(w < 0):
        raise GraspForgeError("weights must be nonnegative, one per point")
    if q0 is None:
        q0 = JointConfig.rest(robot)
    if len(q0.angles) != robot.dof:
        raise GraspForgeError("q0 dimension does not match robot")
    root = (pts.labels == robot.root) & (w > 0)
    if root.sum() < 3:
        raise DecodeError(f"need >= 3 usable root-link points for the base fit, have {int(root.sum())}")
    local = pts.points[root]
    sv = np.linalg.svd(local - local.mean(axis=0), compute_uv=False)
    if sv[1] <= 1e-9 * max(sv[0], 1e-300):
        raise DecodeError("root-link points are collinear; base pose is undetermined")
    R, t, _ = kabsch(local, T[root], weights=w[root])
    q = q0.with_base(make_transform(R, t))
    sw = np.sqrt(w)[:, None]

    def residual(qq: JointConfig) -> np.ndarray:
        return (sw * (point_cloud_fk(robot, qq, pts).points - T)).ravel()

    res = levenberg_marquardt(residual, robot, q, max_iters=max_iters, tol=tol * np.sqrt(max(w.sum(), 1e-300)))
    rms = float(np.sqrt(res.cost / max(w.sum(), 1e-300)))
    return FitResult(res.q, rms, res.history, res.iterations)


def decode_grasp(
    D: DistanceMatrix,
    object_cloud,
    robot: RobotModel,
    pts: LinkPointSet,
    q0: JointConfig | None = None,
    grasp_id: str = "decoded",
    object_id: str = "",
    check_identity: bool = True,
    **record_fields,
) -> GraspRecord:
    """Multilaterate then fit; returns a record with provenance ``decoded``.

    Residual diagnostics go into ``record.extras``.
    """
    if D.shape[0] != len(pts):
        raise GraspForgeError(f"distance matrix has {D.shape[0]} rows, robot point set has {len(pts)}")
    if check_identity and D.robot_hash not in (0, pts.identity_hash()):
        raise GraspForgeError("distance matrix was encoded against a different robot point set")
    ml = multilaterate_cloud(D, object_cloud)
    if not ml.feasible.any():
        raise DecodeError("every multilaterated row is infeasible")
    fit = fit_configuration(robot, pts, ml.cloud, q0=q0, weights=ml.feasible.astype(float))
    extras = {
        "fit_rms": fit.rms,
        "multilateration_rms_median": float(np.median(ml.residuals[ml.feasible])),
        "infeasible_rows": [int(i) for i in np.flatnonzero(~ml.feasible)],
    }
    extras.update(record_fields.pop("extras", {}))
    return GraspRecord(
        id=grasp_id,
        robot=robot.name,
        object_id=object_id,
        q=fit.q,
        provenance="decoded",
        extras=extras,
        **record_fields,
    )
