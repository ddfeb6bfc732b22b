"""Human-hand keypoints to robot joint configuration by position matching."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GraspForgeError
from .kinematics import JointConfig, RobotModel, keypoint_fk
from .optim import levenberg_marquardt
from .transforms import kabsch, make_transform

N_HAND_KEYPOINTS = 21
FINGERS = ("thumb", "index", "middle", "ring", "little")
# 21-point layout: wrist, then 4 joints per finger from base to tip
TIP_INDEX = {"thumb": 4, "index": 8, "middle": 12, "ring": 16, "little": 20}
MID_INDEX = {"thumb": 2, "index": 6, "middle": 10, "ring": 14, "little": 18}


@dataclass
class HumanHandKeypoints:
    points: np.ndarray  # (21, 3) meters, object frame
    confidence: np.ndarray | None = None

    def __post_init__(self):
        P = np.asarray(self.points, dtype=float)
        if P.shape != (N_HAND_KEYPOINTS, 3):
            raise GraspForgeError(f"expected {N_HAND_KEYPOINTS} keypoints, got shape {P.shape}")
        if not np.all(np.isfinite(P)):
            raise GraspForgeError("keypoints must be finite")
        c = np.ones(N_HAND_KEYPOINTS) if self.confidence is None else np.asarray(self.confidence, dtype=float)
        if c.shape != (N_HAND_KEYPOINTS,) or np.any((c < 0) | (c > 1)) or not np.all(np.isfinite(c)):
            raise GraspForgeError("confidence must be 21 values in [0, 1]")
        self.points, self.confidence = P, c

    @classmethod
    def from_dict(cls, d: dict) -> "HumanHandKeypoints":
        try:
            return cls(np.array(d["keypoints"], dtype=float), d.get("confidence"))
        except (KeyError, TypeError, ValueError) as exc:
            raise GraspForgeError(f"invalid keypoint file: {exc}") from exc

    def to_dict(self) -> dict:
        return {"keypoints": self.points.tolist(), "confidence": self.confidence.tolist()}


@dataclass
class RetargetMapping:
    pairs: list = field(default_factory=list)  # (human index, robot keypoint label, weight)
    scale: float = 1.0
    regularization: float = 1e-3

    def validate(self, robot: RobotModel) -> None:
        if not self.scale > 0:
            raise GraspForgeError("mapping scale must be positive")
        if self.regularization < 0:
            raise GraspForgeError("regularization weight must be nonnegative")
        for h, label, w in self.pairs:
            if not 0 <= int(h) < N_HAND_KEYPOINTS:
                raise GraspForgeError(f"human keypoint index {h} out of range")
            if w < 0:
                raise GraspForgeError("pair weights must be nonnegative")
            robot.keypoint_index(label)
        if sum(1 for *_, w in self.pairs if w > 0) < 4:
            raise GraspForgeError("mapping needs at least 4 pairs with positive weight")

    @classmethod
    def default(cls, scale: float = 1.0, regularization: float = 1e-3) -> "RetargetMapping":
        """Wrist, five middle-phalanx points and five fingertips (tips weighted 2x)."""
        pairs = [(0, "wrist", 1.0)]
        pairs += [(MID_INDEX[f], f"{f}_mid", 1.0) for f in FINGERS]
        pairs += [(TIP_INDEX[f], f"{f}_tip", 2.0) for f in FINGERS]
        return cls(pairs, scale, regularization)

    def to_dict(self) -> dict:
        return {
            "pairs": [[int(h), str(l), float(w)] for h, l, w in self.pairs],
            "scale": self.scale,
            "regularization": self.regularization,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RetargetMapping":
        return cls([(int(h), str(l), float(w)) for h, l, w in d["pairs"]], float(d.get("scale", 1.0)), float(d.get("regularization", 1e-3)))


@dataclass
class RetargetResult:
    q: JointConfig
    residual: float  # RMS keypoint position error over mapped pairs (m)
    history: list  # objective after each accepted step
    iterations: int


def retarget(
    kp: HumanHandKeypoints,
    robot: RobotModel,
    mapping: RetargetMapping | None = None,
    q0: JointConfig | None = None,
    max_iters: int = 200,
    tol: float = 1e-10,
    init_base: bool = True,
) -> RetargetResult:
    """Minimize  sum_i w_i c_i |kp_fk(q)_i - s kp_i|^2 + lambda |angles - rest|^2.

    ``c_i`` is the keypoint confidence. Base pose and joint angles are
    optimized jointly; with ``init_base`` the base of ``q0`` is first replaced
    by a weighted Kabsch fit of the robot keypoints onto the targets.
    """
    mapping = RetargetMapping.default() if mapping is None else mapping
    mapping.validate(robot)
    q0 = JointConfig.rest(robot) if q0 is None else q0
    if len(q0.angles) != robot.dof:
        raise GraspForgeError("q0 dimension does not match robot")
    if np.any(q0.angles < robot.lower - 1e-12) or np.any(q0.angles > robot.upper + 1e-12):
        raise GraspForgeError("q0 violates joint limits")
    rob_idx = np.array([robot.keypoint_index(l) for _, l, _ in mapping.pairs])
    hum_idx = np.array([int(h) for h, _, _ in mapping.pairs])
    w = np.array([float(x) for *_, x in mapping.pairs]) * kp.confidence[hum_idx]
    targets = mapping.scale * kp.points[hum_idx]
    sw = np.sqrt(w)[:, None]
    rest = robot.rest_angles()
    sl = np.sqrt(mapping.regularization)

    def residual(q: JointConfig) -> np.ndarray:
        e = sw * (keypoint_fk(robot, q)[rob_idx] - targets)
        return np.concatenate([e.ravel(), sl * (q.angles - rest)])

    if init_base and np.count_nonzero(w) >= 3:
        local = keypoint_fk(robot, q0.with_base(np.eye(4)))[rob_idx]
        R, t, _ = kabsch(local[w > 0], targets[w > 0], weights=w[w > 0])
        q1 = q0.with_base(make_transform(R, t))
        r0, r1 = residual(q0), residual(q1)
        if r1 @ r1 < r0 @ r0:  # keep q0 when it is already as good
            q0 = q1

    res = levenberg_marquardt(residual, robot, q0, max_iters=max_iters, tol=tol)
    err = keypoint_fk(robot, res.q)[rob_idx] - targets
    rms = float(np.sqrt(np.mean(np.sum(err * err, axis=1))))
    return RetargetResult(res.q, rms, res.history, res.iterations)
