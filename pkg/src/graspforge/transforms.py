"""Rigid and similarity transform helpers.

Quaternions are scalar-first ``(w, x, y, z)`` throughout the package.
Homogeneous transforms are 4x4 float arrays.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

UNIT_TOL = 1e-9


def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if not np.isfinite(n) or n == 0.0:
        raise ValueError("cannot normalize a zero or non-finite quaternion")
    q = q / n
    # canonical hemisphere keeps serialization stable
    return -q if q[0] < 0 else q


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = np.asarray(q, dtype=float)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(R) -> np.ndarray:
    """Shepperd's method; returns a canonical (w >= 0) unit quaternion."""
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    return quat_normalize(q)


def skew(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def axis_angle_matrix(axis, angle: float) -> np.ndarray:
    """Rodrigues rotation about a unit axis."""
    K = skew(axis)
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


def rotvec_to_matrix(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    theta = np.linalg.norm(v)
    if theta < 1e-300:
        return np.eye(3)
    return axis_angle_matrix(v / theta, theta)


def rpy_to_matrix(rpy) -> np.ndarray:
    """Fixed-axis roll/pitch/yaw: R = Rz(yaw) Ry(pitch) Rx(roll)."""
    r, p, y = rpy
    cr, sr, cp, sp, cy, sy = np.cos(r), np.sin(r), np.cos(p), np.sin(p), np.cos(y), np.sin(y)
    Rx = np.array([[1, 0, 0], [0, cr, -sr], [0, sr, cr]])
    Ry = np.array([[cp, 0, sp], [0, 1, 0], [-sp, 0, cp]])
    Rz = np.array([[cy, -sy, 0], [sy, cy, 0], [0, 0, 1]])
    return Rz @ Ry @ Rx


def make_transform(R=None, t=None) -> np.ndarray:
    T = np.eye(4)
    if R is not None:
        T[:3, :3] = R
    if t is not None:
        T[:3, 3] = t
    return T


def apply_transform(T, points) -> np.ndarray:
    points = np.asarray(points, dtype=float)
    return points @ T[:3, :3].T + T[:3, 3]


def rotation_angle_between(Ra, Rb) -> float:
    """Geodesic angle (radians) between two rotation matrices."""
    c = (np.trace(Ra.T @ Rb) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    return quat_to_matrix(quat_normalize(rng.normal(size=4)))


def kabsch(src, dst, weights=None, with_scale: bool = False):
    """Least-squares similarity ``dst ~ s R src + t`` (Umeyama).

    Returns ``(R, t, s)``. ``s`` is 1 unless ``with_scale``.
    """
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    if weights is None:
        w = np.full(len(src), 1.0 / len(src))
    else:
        w = np.asarray(weights, dtype=float)
        w = w / w.sum()
    mu_s = w @ src
    mu_d = w @ dst
    xs = src - mu_s
    xd = dst - mu_d
    cov = (xd * w[:, None]).T @ xs
    U, S, Vt = np.linalg.svd(cov)
    D = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        D[2, 2] = -1.0
    R = U @ D @ Vt
    s = 1.0
    if with_scale:
        var_s = float(w @ np.sum(xs * xs, axis=1))
        s = float(np.sum(S * np.diag(D)) / var_s)
    t = mu_d - s * R @ mu_s
    return R, t, s


@dataclass(frozen=True)
class SimilarityTransform:
    """``x -> scale * R(rotation) x + translation``."""

    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    scale: float = 1.0

    def __post_init__(self):
        q = np.asarray(self.rotation, dtype=float)
        if abs(np.linalg.norm(q) - 1.0) > UNIT_TOL:
            raise ValueError("rotation quaternion must have unit norm")
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        object.__setattr__(self, "rotation", q)
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float))
        object.__setattr__(self, "scale", float(self.scale))

    @classmethod
    def from_matrix(cls, R, t, scale: float = 1.0) -> "SimilarityTransform":
        return cls(matrix_to_quat(R), np.asarray(t, dtype=float), scale)

    @property
    def R(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    def matrix(self) -> np.ndarray:
        return make_transform(self.scale * self.R, self.translation)

    def apply(self, points) -> np.ndarray:
        return self.scale * (np.asarray(points, dtype=float) @ self.R.T) + self.translation

    def compose(self, other: "SimilarityTransform") -> "SimilarityTransform":
        """``self ∘ other``."""
        R = self.R @ other.R
        t = self.scale * self.R @ other.translation + self.translation
        return SimilarityTransform.from_matrix(R, t, self.scale * other.scale)

    def inverse(self) -> "SimilarityTransform":
        Rt = self.R.T
        return SimilarityTransform.from_matrix(Rt, -(Rt @ self.translation) / self.scale, 1.0 / self.scale)

    def to_dict(self) -> dict:
        return {
            "rotation": [float(v) for v in self.rotation],
            "translation": [float(v) for v in self.translation],
            "scale": self.scale,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SimilarityTransform":
        return cls(np.array(d["rotation"], float), np.array(d["translation"], float), float(d.get("scale", 1.0)))

    def __eq__(self, other):
        if not isinstance(other, SimilarityTransform):
            return NotImplemented
        return (
            np.array_equal(self.rotation, other.rotation)
            and np.array_equal(self.translation, other.translation)
            and self.scale == other.scale
        )

    __hash__ = None
