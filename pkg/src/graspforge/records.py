"""Dataset record types shared across the pipeline.

Every type round-trips through plain dicts (``to_dict``/``from_dict``) so
JSON-lines persistence stays a thin layer.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .errors import GraspForgeError
from .kinematics import JointConfig
from .transforms import SimilarityTransform

PROVENANCES = ("web", "decoded", "sim-augmented")


@dataclass(frozen=True)
class QualityMetrics:
    """Grasp quality in table units: cm, cm^3, cm, fraction."""

    penetration_depth: float
    penetration_volume: float
    disjoint_mean: float
    contact_ratio: float
    contact_threshold_cm: float
    voxel_cm: float

    def __post_init__(self):
        for name in ("penetration_depth", "penetration_volume", "disjoint_mean", "contact_ratio"):
            if not getattr(self, name) >= 0:
                raise GraspForgeError(f"{name} must be nonnegative")
        if self.contact_ratio > 1:
            raise GraspForgeError("contact_ratio cannot exceed 1")

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d: dict) -> "QualityMetrics":
        return cls(**{k: float(d[k]) for k in cls.__dataclass_fields__})


@dataclass(frozen=True)
class GraspVerdict:
    success: bool
    epsilon: float
    contact_count: int
    penetration_depth_cm: float
    penetration_ok: bool
    mu: float
    facets: int
    eps_min: float
    penetration_gate_cm: float
    contact_threshold_cm: float
    torsional_friction: float = 0.0

    def __post_init__(self):
        if self.epsilon < 0:
            raise GraspForgeError("epsilon must be nonnegative")
        if self.success and not (self.epsilon >= self.eps_min and self.penetration_ok):
            raise GraspForgeError("verdict marked successful but fails its own gates")

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d: dict) -> "GraspVerdict":
        return cls(
            success=bool(d["success"]),
            epsilon=float(d["epsilon"]),
            contact_count=int(d["contact_count"]),
            penetration_depth_cm=float(d["penetration_depth_cm"]),
            penetration_ok=bool(d["penetration_ok"]),
            mu=float(d["mu"]),
            facets=int(d["facets"]),
            eps_min=float(d["eps_min"]),
            penetration_gate_cm=float(d["penetration_gate_cm"]),
            contact_threshold_cm=float(d["contact_threshold_cm"]),
            torsional_friction=float(d.get("torsional_friction", 0.0)),
        )


@dataclass
class GraspRecord:
    """One grasp: robot configuration relative to a posed object mesh.

    ``object_pose`` maps object-mesh coordinates into the grasp frame, the
    frame in which ``q`` is expressed.
    """

    id: str
    robot: str
    object_id: str
    q: JointConfig
    provenance: str = "web"
    object_category: str = ""
    object_mesh: str = ""
    object_pose: SimilarityTransform = field(default_factory=SimilarityTransform)
    metrics: QualityMetrics | None = None
    verdict: GraspVerdict | None = None
    source_image: str | None = None
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise GraspForgeError(f"unknown provenance {self.provenance!r}")

    @property
    def category(self) -> str:
        return self.object_category or self.object_id

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "robot": self.robot,
            "object_id": self.object_id,
            "object_category": self.object_category,
            "object_mesh": self.object_mesh,
            "object_pose": self.object_pose.to_dict(),
            "q": self.q.to_dict(),
            "provenance": self.provenance,
            "metrics": None if self.metrics is None else self.metrics.to_dict(),
            "verdict": None if self.verdict is None else self.verdict.to_dict(),
            "source_image": self.source_image,
            "extras": self.extras,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GraspRecord":
        try:
            return cls(
                id=str(d["id"]),
                robot=str(d["robot"]),
                object_id=str(d["object_id"]),
                object_category=str(d.get("object_category", "")),
                object_mesh=str(d.get("object_mesh", "")),
                object_pose=SimilarityTransform.from_dict(d["object_pose"]) if d.get("object_pose") else SimilarityTransform(),
                q=JointConfig.from_dict(d["q"]),
                provenance=str(d.get("provenance", "web")),
                metrics=None if d.get("metrics") is None else QualityMetrics.from_dict(d["metrics"]),
                verdict=None if d.get("verdict") is None else GraspVerdict.from_dict(d["verdict"]),
                source_image=d.get("source_image"),
                extras=dict(d.get("extras") or {}),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise GraspForgeError(f"invalid grasp record: {exc}") from exc

    def __eq__(self, other):
        if not isinstance(other, GraspRecord):
            return NotImplemented
        return self.to_dict() == other.to_dict()
