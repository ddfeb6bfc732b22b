"""Kinematic trees, joint configurations and point-cloud forward kinematics.

Robot descriptions use a strict subset of the URDF XML format:

* ``<link>`` with at most one ``<collision>`` holding an optional
  ``<origin>`` and a ``<geometry><mesh filename=... scale=.../></geometry>``
* ``<joint type="revolute|prismatic|fixed">`` with ``<parent>``,
  ``<child>``, ``<origin>``, ``<axis>`` and ``<limit lower= upper=>``
* two extensions: ``<keypoint name= link= xyz=/>`` anchors used for
  retargeting, and ``<finger_links names="a b c"/>`` naming the links
  that count as fingers for the disjoint-distance metric

Any other tag is rejected. Revolute joints rotate about ``axis`` through the
joint origin; prismatic joints translate along it.
"""
from __future__ import annotations

import hashlib
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import GraspForgeError
from .geometry import PointCloud, TriMesh, load_mesh, sample_surface
from .transforms import (
    UNIT_TOL,
    axis_angle_matrix,
    make_transform,
    matrix_to_quat,
    quat_to_matrix,
    rotvec_to_matrix,
    rpy_to_matrix,
)

JOINT_TYPES = ("revolute", "prismatic", "fixed")


@dataclass(frozen=True)
class Link:
    name: str
    mesh_path: str | None = None
    mesh_origin: np.ndarray = field(default_factory=lambda: np.eye(4))
    mesh_scale: np.ndarray = field(default_factory=lambda: np.ones(3))
    parent_joint: int | None = None


@dataclass(frozen=True)
class Joint:
    name: str
    type: str
    parent: int
    child: int
    origin: np.ndarray
    axis: np.ndarray
    lower: float = 0.0
    upper: float = 0.0

    def motion(self, value: float) -> np.ndarray:
        if self.type == "revolute":
            return make_transform(axis_angle_matrix(self.axis, value))
        if self.type == "prismatic":
            return make_transform(t=self.axis * value)
        return np.eye(4)


@dataclass(frozen=True)
class Keypoint:
    label: str
    link: int
    offset: np.ndarray


class RobotModel:
    """Validated kinematic tree. Treat as immutable."""

    def __init__(self, name, links, joints, keypoints=(), finger_links=None, root: int | None = None):
        self.name = name
        self.links = tuple(links)
        self.joints = tuple(joints)
        self.keypoints = tuple(keypoints)
        n = len(self.links)
        if n == 0:
            raise GraspForgeError("robot has no links")
        parents = [None] * n
        for j, jt in enumerate(self.joints):
            if jt.type not in JOINT_TYPES:
                raise GraspForgeError(f"joint {jt.name!r}: unsupported type {jt.type!r}")
            if not (0 <= jt.parent < n and 0 <= jt.child < n):
                raise GraspForgeError(f"joint {jt.name!r} references a missing link")
            if parents[jt.child] is not None:
                raise GraspForgeError(f"link {self.links[jt.child].name!r} has two parent joints")
            parents[jt.child] = j
            if abs(np.linalg.norm(jt.axis) - 1.0) > UNIT_TOL:
                raise GraspForgeError(f"joint {jt.name!r}: axis is not unit length")
            if jt.lower > jt.upper:
                raise GraspForgeError(f"joint {jt.name!r}: lower limit exceeds upper limit")
        roots = [i for i in range(n) if parents[i] is None]
        if len(roots) != 1:
            # a cycle leaves no root or strands a subtree; both are rejected
            raise GraspForgeError(f"joint graph must have exactly one root, found {len(roots)} (cycle or forest)")
        self.root = roots[0] if root is None else root
        if self.root != roots[0]:
            raise GraspForgeError("declared root link has a parent joint")
        self.links = tuple(
            Link(l.name, l.mesh_path, l.mesh_origin, l.mesh_scale, parents[i]) for i, l in enumerate(self.links)
        )
        children: dict[int, list[int]] = {}
        for j, jt in enumerate(self.joints):
            children.setdefault(jt.parent, []).append(j)
        order, stack, seen = [], [self.root], {self.root}
        while stack:
            link = stack.pop()
            for j in reversed(children.get(link, [])):
                c = self.joints[j].child
                if c in seen:
                    raise GraspForgeError("cycle in joint graph")
                seen.add(c)
                order.append(j)
                stack.append(c)
        if len(seen) != n:
            raise GraspForgeError("cycle in joint graph (unreachable links)")
        self.joint_order = tuple(order)
        self.actuated = tuple(j for j, jt in enumerate(self.joints) if jt.type != "fixed")
        self.lower = np.array([self.joints[j].lower for j in self.actuated])
        self.upper = np.array([self.joints[j].upper for j in self.actuated])
        for kp in self.keypoints:
            if not 0 <= kp.link < n:
                raise GraspForgeError(f"keypoint {kp.label!r} references a missing link")
        names = [l.name for l in self.links]
        if len(set(names)) != n:
            raise GraspForgeError("duplicate link names")
        if finger_links is None:
            finger_links = [l.name for i, l in enumerate(self.links) if i != self.root]
        missing = set(finger_links) - set(names)
        if missing:
            raise GraspForgeError(f"finger_links references unknown links: {sorted(missing)}")
        self.finger_links = tuple(finger_links)
        self._meshes: dict[int, TriMesh | None] = {}

    @property
    def n_links(self) -> int:
        return len(self.links)

    @property
    def dof(self) -> int:
        return len(self.actuated)

    def link_index(self, name: str) -> int:
        for i, l in enumerate(self.links):
            if l.name == name:
                return i
        raise GraspForgeError(f"unknown link {name!r}")

    def finger_indices(self) -> np.ndarray:
        return np.array(sorted(self.link_index(n) for n in self.finger_links), dtype=np.int64)

    def keypoint_index(self, label: str) -> int:
        for i, kp in enumerate(self.keypoints):
            if kp.label == label:
                return i
        raise GraspForgeError(f"robot {self.name!r} has no keypoint {label!r}")

    def link_mesh(self, i: int) -> TriMesh | None:
        """Collision mesh of link ``i`` in link coordinates (origin and scale applied)."""
        if i not in self._meshes:
            link = self.links[i]
            if link.mesh_path is None:
                self._meshes[i] = None
            else:
                raw = load_mesh(link.mesh_path)
                V = raw.vertices * link.mesh_scale
                V = V @ link.mesh_origin[:3, :3].T + link.mesh_origin[:3, 3]
                self._meshes[i] = TriMesh(V, raw.triangles, link.name)
        return self._meshes[i]

    def rest_angles(self) -> np.ndarray:
        return np.clip(np.zeros(self.dof), self.lower, self.upper)

    def __repr__(self):
        return f"RobotModel({self.name!r}, links={self.n_links}, dof={self.dof})"


def _floats(text, n, what):
    try:
        vals = [float(v) for v in text.split()]
    except ValueError as exc:
        raise GraspForgeError(f"malformed {what}: {text!r}") from exc
    if len(vals) != n:
        raise GraspForgeError(f"{what} needs {n} numbers, got {text!r}")
    return np.array(vals)


def _origin(elem) -> np.ndarray:
    if elem is None:
        return np.eye(4)
    _check_keys(elem, {"xyz", "rpy"})
    xyz = _floats(elem.get("xyz", "0 0 0"), 3, "origin xyz")
    rpy = _floats(elem.get("rpy", "0 0 0"), 3, "origin rpy")
    return make_transform(rpy_to_matrix(rpy), xyz)


def _check_children(elem, allowed):
    for child in elem:
        if child.tag not in allowed:
            raise GraspForgeError(f"unsupported tag <{child.tag}> inside <{elem.tag}>")


def _check_keys(elem, allowed):
    extra = set(elem.attrib) - set(allowed)
    if extra:
        raise GraspForgeError(f"unsupported attributes {sorted(extra)} on <{elem.tag}>")


def parse_robot(description: str, base_dir: str | Path | None = None) -> RobotModel:
    """Parse a robot description document into a validated :class:`RobotModel`.

    Mesh filenames are resolved relative to ``base_dir``.
    """
    try:
        root = ET.fromstring(description)
    except ET.ParseError as exc:
        raise GraspForgeError(f"malformed robot description: {exc}") from exc
    if root.tag != "robot":
        raise GraspForgeError("robot description root must be <robot>")
    _check_keys(root, {"name"})
    _check_children(root, {"link", "joint", "keypoint", "finger_links"})
    base = Path(base_dir) if base_dir is not None else Path.cwd()

    links, names = [], {}
    for el in root.findall("link"):
        _check_keys(el, {"name"})
        _check_children(el, {"collision"})
        name = el.get("name")
        if not name:
            raise GraspForgeError("link without a name")
        if name in names:
            raise GraspForgeError(f"duplicate link {name!r}")
        cols = el.findall("collision")
        if len(cols) > 1:
            raise GraspForgeError(f"link {name!r}: only one <collision> is supported")
        mesh_path, origin, scale = None, np.eye(4), np.ones(3)
        if cols:
            col = cols[0]
            _check_keys(col, {"name"})
            _check_children(col, {"origin", "geometry"})
            origin = _origin(col.find("origin"))
            geom = col.find("geometry")
            if geom is None:
                raise GraspForgeError(f"link {name!r}: <collision> without <geometry>")
            _check_children(geom, {"mesh"})
            mesh = geom.find("mesh")
            if mesh is None:
                raise GraspForgeError(f"link {name!r}: only mesh geometry is supported")
            _check_keys(mesh, {"filename", "scale"})
            fname = mesh.get("filename")
            if not fname:
                raise GraspForgeError(f"link {name!r}: mesh without filename")
            mesh_path = str((base / fname).resolve())
            if mesh.get("scale"):
                scale = _floats(mesh.get("scale"), 3, "mesh scale")
        names[name] = len(links)
        links.append(Link(name, mesh_path, origin, scale))

    joints = []
    for el in root.findall("joint"):
        _check_keys(el, {"name", "type"})
        _check_children(el, {"parent", "child", "origin", "axis", "limit"})
        jname, jtype = el.get("name"), el.get("type")
        if jtype not in JOINT_TYPES:
            raise GraspForgeError(f"joint {jname!r}: unsupported type {jtype!r}")
        p, c = el.find("parent"), el.find("child")
        if p is None or c is None:
            raise GraspForgeError(f"joint {jname!r} needs <parent> and <child>")
        for ref in (p.get("link"), c.get("link")):
            if ref not in names:
                raise GraspForgeError(f"joint {jname!r} references missing link {ref!r}")
        axis_el = el.find("axis")
        axis = _floats(axis_el.get("xyz", "1 0 0"), 3, "axis") if axis_el is not None else np.array([1.0, 0, 0])
        lo = hi = 0.0
        lim = el.find("limit")
        if jtype != "fixed":
            if lim is None:
                raise GraspForgeError(f"joint {jname!r}: {jtype} joints need <limit>")
            _check_keys(lim, {"lower", "upper", "effort", "velocity"})
            try:
                lo, hi = float(lim.get("lower", "0")), float(lim.get("upper", "0"))
            except ValueError as exc:
                raise GraspForgeError(f"joint {jname!r}: malformed limits") from exc
        joints.append(Joint(jname, jtype, names[p.get("link")], names[c.get("link")], _origin(el.find("origin")), axis, lo, hi))

    keypoints = []
    for el in root.findall("keypoint"):
        _check_keys(el, {"name", "link", "xyz"})
        if el.get("link") not in names:
            raise GraspForgeError(f"keypoint {el.get('name')!r} references missing link {el.get('link')!r}")
        keypoints.append(Keypoint(el.get("name"), names[el.get("link")], _floats(el.get("xyz", "0 0 0"), 3, "keypoint xyz")))

    fingers = None
    fl = root.findall("finger_links")
    if len(fl) > 1:
        raise GraspForgeError("at most one <finger_links> element")
    if fl:
        _check_keys(fl[0], {"names"})
        fingers = fl[0].get("names", "").split()

    return RobotModel(root.get("name", "robot"), links, joints, keypoints, fingers)


def load_robot(path) -> RobotModel:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise GraspForgeError(f"cannot read robot description {path}: {exc}") from exc
    return parse_robot(text, path.parent)


# ----------------------------------------------------------------------------
# configurations


@dataclass(frozen=True)
class JointConfig:
    """Floating base pose plus one value per actuated joint.

    ``base_rotation`` is a unit quaternion (w, x, y, z).
    """

    base_translation: np.ndarray
    base_rotation: np.ndarray
    angles: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.base_rotation, dtype=float).reshape(4)
        if abs(np.linalg.norm(q) - 1.0) > UNIT_TOL:
            raise GraspForgeError("base quaternion must have unit norm")
        object.__setattr__(self, "base_rotation", q)
        object.__setattr__(self, "base_translation", np.asarray(self.base_translation, dtype=float).reshape(3))
        object.__setattr__(self, "angles", np.asarray(self.angles, dtype=float).reshape(-1))

    @classmethod
    def rest(cls, model: RobotModel, base: np.ndarray | None = None) -> "JointConfig":
        q = cls.identity(model.dof)
        q = JointConfig(q.base_translation, q.base_rotation, model.rest_angles())
        return q if base is None else q.with_base(base)

    @classmethod
    def identity(cls, dof: int) -> "JointConfig":
        return cls(np.zeros(3), np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(dof))

    @property
    def base_R(self) -> np.ndarray:
        return quat_to_matrix(self.base_rotation)

    def base_matrix(self) -> np.ndarray:
        return make_transform(self.base_R, self.base_translation)

    def with_base(self, T) -> "JointConfig":
        T = np.asarray(T, dtype=float)
        return JointConfig(T[:3, 3], matrix_to_quat(T[:3, :3]), self.angles)

    def with_angles(self, angles) -> "JointConfig":
        return JointConfig(self.base_translation, self.base_rotation, np.asarray(angles, dtype=float))

    def transformed(self, T) -> "JointConfig":
        """Left-compose a rigid 4x4 transform onto the base."""
        return self.with_base(np.asarray(T, dtype=float) @ self.base_matrix())

    def perturbed(self, dx) -> "JointConfig":
        """Local update ``[dt(3), drot(3), dangles]``; rotation is left-multiplied in world frame."""
        dx = np.asarray(dx, dtype=float)
        R = rotvec_to_matrix(dx[3:6]) @ self.base_R
        return JointConfig(self.base_translation + dx[:3], matrix_to_quat(R), self.angles + dx[6:])

    def to_dict(self) -> dict:
        return {
            "base_translation": [float(v) for v in self.base_translation],
            "base_rotation": [float(v) for v in self.base_rotation],
            "angles": [float(v) for v in self.angles],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "JointConfig":
        return cls(np.array(d["base_translation"], float), np.array(d["base_rotation"], float), np.array(d["angles"], float))

    def __eq__(self, other):
        if not isinstance(other, JointConfig):
            return NotImplemented
        return (
            np.array_equal(self.base_translation, other.base_translation)
            and np.array_equal(self.base_rotation, other.base_rotation)
            and np.array_equal(self.angles, other.angles)
        )

    __hash__ = None


def _check_dims(model: RobotModel, q: JointConfig):
    if len(q.angles) != model.dof:
        raise GraspForgeError(f"configuration has {len(q.angles)} angles, robot {model.name!r} has {model.dof} DoF")


def forward_kinematics(model: RobotModel, q: JointConfig) -> np.ndarray:
    """World transform of every link, shape (n_links, 4, 4)."""
    _check_dims(model, q)
    values = np.zeros(len(model.joints))
    values[list(model.actuated)] = q.angles
    T = np.empty((model.n_links, 4, 4))
    T[model.root] = q.base_matrix()
    for j in model.joint_order:
        jt = model.joints[j]
        T[jt.child] = T[jt.parent] @ jt.origin @ jt.motion(values[j])
    return T


def clamp_to_limits(model: RobotModel, q: JointConfig) -> JointConfig:
    _check_dims(model, q)
    return q.with_angles(np.clip(q.angles, model.lower, model.upper))


def keypoint_fk(model: RobotModel, q: JointConfig, transforms: np.ndarray | None = None) -> np.ndarray:
    T = forward_kinematics(model, q) if transforms is None else transforms
    if not model.keypoints:
        return np.zeros((0, 3))
    idx = np.array([kp.link for kp in model.keypoints])
    off = np.array([kp.offset for kp in model.keypoints])
    return np.einsum("kij,kj->ki", T[idx, :3, :3], off) + T[idx, :3, 3]


# ----------------------------------------------------------------------------
# link point sets


@dataclass(frozen=True)
class LinkPointSet:
    """Per-link surface samples in link coordinates, concatenated in link order."""

    points: np.ndarray  # (N_R, 3)
    labels: np.ndarray  # (N_R,) link index per point
    counts: tuple
    seed: int

    def __post_init__(self):
        P = np.asarray(self.points, dtype=float).reshape(-1, 3)
        L = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if len(P) != len(L) or len(P) != sum(self.counts):
            raise GraspForgeError("LinkPointSet sizes are inconsistent")
        P.flags.writeable = False
        L.flags.writeable = False
        object.__setattr__(self, "points", P)
        object.__setattr__(self, "labels", L)
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))

    def __len__(self):
        return len(self.points)

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.counts)]).astype(np.int64)

    def link_points(self, i: int) -> np.ndarray:
        o = self.offsets
        return self.points[o[i] : o[i + 1]]

    def identity_hash(self) -> int:
        """64-bit content hash binding distance matrices to this point set."""
        h = hashlib.blake2b(digest_size=8)
        h.update(np.asarray(self.counts, dtype="<i8").tobytes())
        h.update(np.ascontiguousarray(self.points, dtype="<f8").tobytes())
        return int.from_bytes(h.digest(), "little")


def allocate_counts(model: RobotModel, total: int) -> list[int]:
    """Split ``total`` samples across links proportionally to surface area (largest remainder)."""
    areas = np.array([0.0 if (m := model.link_mesh(i)) is None else m.total_area for i in range(model.n_links)])
    if areas.sum() <= 0:
        raise GraspForgeError("robot has no link surface to sample")
    exact = total * areas / areas.sum()
    counts = np.floor(exact).astype(int)
    rem = total - counts.sum()
    order = np.argsort(-(exact - counts), kind="stable")
    counts[order[:rem]] += 1
    return counts.tolist()


def sample_link_points(model: RobotModel, counts, seed: int = 0) -> LinkPointSet:
    """Area-weighted surface samples per link.

    Each link draws from its own PCG64 stream spawned from ``SeedSequence(seed)``,
    so changing one link's count leaves the others untouched.
    """
    if isinstance(counts, dict):
        counts = [int(counts.get(l.name, 0)) for l in model.links]
    counts = [int(c) for c in counts]
    if len(counts) != model.n_links:
        raise GraspForgeError(f"need {model.n_links} per-link counts, got {len(counts)}")
    if any(c < 0 for c in counts):
        raise GraspForgeError("per-link counts must be nonnegative")
    streams = np.random.SeedSequence(seed).spawn(model.n_links)
    pts, labels = [], []
    for i, c in enumerate(counts):
        if c == 0:
            continue
        mesh = model.link_mesh(i)
        if mesh is None:
            raise GraspForgeError(f"link {model.links[i].name!r} has no collision mesh to sample")
        pts.append(sample_surface(mesh, c, seed=np.random.default_rng(streams[i])).points)
        labels.append(np.full(c, i))
    P = np.concatenate(pts) if pts else np.zeros((0, 3))
    L = np.concatenate(labels) if labels else np.zeros(0, dtype=np.int64)
    return LinkPointSet(P, L, tuple(counts), int(seed))


def point_cloud_fk(model: RobotModel, q: JointConfig, pts: LinkPointSet, transforms: np.ndarray | None = None) -> PointCloud:
    """Pose every link sample: FK(q, {P_l}) with labels = link index."""
    if len(pts.counts) != model.n_links:
        raise GraspForgeError("LinkPointSet does not match robot link count")
    T = forward_kinematics(model, q) if transforms is None else transforms
    R = T[pts.labels, :3, :3]
    t = T[pts.labels, :3, 3]
    return PointCloud(np.einsum("nij,nj->ni", R, pts.points) + t, pts.labels.copy())


def posed_link_meshes(model: RobotModel, q: JointConfig) -> list[tuple[int, TriMesh]]:
    T = forward_kinematics(model, q)
    out = []
    for i in range(model.n_links):
        m = model.link_mesh(i)
        if m is not None:
            out.append((i, m.transformed(T[i])))
    return out


__all__ = [
    "Link",
    "Joint",
    "Keypoint",
    "RobotModel",
    "JointConfig",
    "LinkPointSet",
    "parse_robot",
    "load_robot",
    "forward_kinematics",
    "clamp_to_limits",
    "keypoint_fk",
    "allocate_counts",
    "sample_link_points",
    "point_cloud_fk",
    "posed_link_meshes",
]
