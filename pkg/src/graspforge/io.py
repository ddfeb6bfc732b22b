"""File formats: grasp JSON-lines, distance-matrix binary, PLY point clouds,
posed-hand OBJ exports, text report tables and the dataset manifest."""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dro import DistanceMatrix
from .errors import GraspForgeError
from .geometry import PointCloud, TriMesh, format_obj
from .kinematics import RobotModel, posed_link_meshes
from .records import GraspRecord, GraspVerdict, QualityMetrics

# ----------------------------------------------------------------------------
# JSON / JSON-lines
#
# Python's float repr is the shortest string that round-trips, so plain
# json.dumps is already lossless for every double.


def dumps_record(rec: GraspRecord) -> str:
    return json.dumps(rec.to_dict(), separators=(",", ":"), allow_nan=False)


def write_records(path, records, append: bool = False) -> int:
    n = 0
    with open(path, "a" if append else "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(dumps_record(rec))
            fh.write("\n")
            n += 1
    return n


def iter_records(path):
    """Yield records lazily; schema errors name the offending line."""
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise GraspForgeError(f"cannot read {path}: {exc}") from exc
    with fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
            except json.JSONDecodeError as exc:
                raise GraspForgeError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(d, dict):
                raise GraspForgeError(f"{path}:{lineno}: expected a JSON object")
            try:
                yield GraspRecord.from_dict(d)
            except GraspForgeError as exc:
                raise GraspForgeError(f"{path}:{lineno}: {exc}") from exc


def read_records(path) -> list[GraspRecord]:
    return list(iter_records(path))


def read_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise GraspForgeError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise GraspForgeError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from exc


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, allow_nan=False) + "\n", encoding="utf-8")


def read_grasp(path) -> GraspRecord:
    """Single grasp JSON, or the first record of a JSON-lines file."""
    text = Path(path).read_text(encoding="utf-8") if Path(path).exists() else None
    if text is None:
        raise GraspForgeError(f"cannot read {path}")
    try:
        return GraspRecord.from_dict(json.loads(text))
    except json.JSONDecodeError:
        recs = read_records(path)
        if not recs:
            raise GraspForgeError(f"{path}: no grasp records")
        return recs[0]


def write_grasp(path, rec: GraspRecord) -> None:
    write_json(path, rec.to_dict())


# ----------------------------------------------------------------------------
# distance-matrix binary
#
# magic "DROM" | u16 version | u32 rows | u32 cols | f32[rows*cols] row-major
# | u64 robot hash | u64 object hash, all little-endian.

DROM_MAGIC = b"DROM"
DROM_VERSION = 1
_HEADER = struct.Struct("<4sHII")
_TRAILER = struct.Struct("<QQ")


def encode_matrix_bytes(D: DistanceMatrix) -> bytes:
    rows, cols = D.shape
    body = np.ascontiguousarray(D.values, dtype="<f4").tobytes()
    return _HEADER.pack(DROM_MAGIC, DROM_VERSION, rows, cols) + body + _TRAILER.pack(D.robot_hash, D.object_hash)


def decode_matrix_bytes(buf: bytes) -> DistanceMatrix:
    if len(buf) < _HEADER.size + _TRAILER.size:
        raise GraspForgeError("distance matrix file is truncated")
    magic, version, rows, cols = _HEADER.unpack_from(buf, 0)
    if magic != DROM_MAGIC:
        raise GraspForgeError(f"bad magic {magic!r}; not a distance matrix file")
    if version != DROM_VERSION:
        raise GraspForgeError(f"unsupported distance matrix version {version}")
    need = _HEADER.size + 4 * rows * cols + _TRAILER.size
    if len(buf) != need:
        raise GraspForgeError(f"distance matrix file has {len(buf)} bytes, expected {need}")
    vals = np.frombuffer(buf, dtype="<f4", count=rows * cols, offset=_HEADER.size).reshape(rows, cols)
    rh, oh = _TRAILER.unpack_from(buf, need - _TRAILER.size)
    return DistanceMatrix(vals.astype(np.float64), rh, oh)


def write_matrix(path, D: DistanceMatrix) -> None:
    Path(path).write_bytes(encode_matrix_bytes(D))


def read_matrix(path) -> DistanceMatrix:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise GraspForgeError(f"cannot read {path}: {exc}") from exc
    return decode_matrix_bytes(buf)


# ----------------------------------------------------------------------------
# ASCII PLY point clouds


def format_ply(cloud: PointCloud) -> str:
    has_labels = cloud.labels is not None
    head = ["ply", "format ascii 1.0", f"element vertex {len(cloud)}", "property double x", "property double y", "property double z"]
    if has_labels:
        head.append("property int segment")
    head.append("end_header")
    lines = head
    for k, (x, y, z) in enumerate(cloud.points.tolist()):
        row = f"{x!r} {y!r} {z!r}"
        if has_labels:
            row += f" {int(cloud.labels[k])}"
        lines.append(row)
    return "\n".join(lines) + "\n"


def write_ply(path, cloud: PointCloud) -> None:
    Path(path).write_text(format_ply(cloud), encoding="ascii")


def parse_ply(text: str, source: str = "<ply>") -> PointCloud:
    lines = text.splitlines()
    if not lines or lines[0].strip() != "ply":
        raise GraspForgeError(f"{source}: missing 'ply' header")
    n, props, k = None, [], 1
    while k < len(lines):
        parts = lines[k].split()
        k += 1
        if not parts or parts[0] == "comment":
            continue
        if parts[0] == "format":
            if parts[1:2] != ["ascii"]:
                raise GraspForgeError(f"{source}: only ASCII PLY is supported")
        elif parts[0] == "element":
            if parts[1] != "vertex" or n is not None:
                raise GraspForgeError(f"{source}:{k}: only a single vertex element is supported")
            n = int(parts[2])
        elif parts[0] == "property":
            props.append(parts[-1])
        elif parts[0] == "end_header":
            break
        else:
            raise GraspForgeError(f"{source}:{k}: unexpected header line")
    if n is None or props[:3] != ["x", "y", "z"]:
        raise GraspForgeError(f"{source}: vertex element needs x, y, z properties")
    body = [l for l in lines[k:] if l.strip()]
    if len(body) != n:
        raise GraspForgeError(f"{source}: expected {n} vertices, found {len(body)}")
    try:
        rows = np.array([[float(v) for v in l.split()] for l in body]).reshape(n, len(props))
    except ValueError as exc:
        raise GraspForgeError(f"{source}: malformed vertex row ({exc})") from exc
    labels = rows[:, props.index("segment")].astype(np.int64) if "segment" in props else None
    return PointCloud(rows[:, :3], labels)


def read_ply(path) -> PointCloud:
    try:
        text = Path(path).read_text(encoding="ascii")
    except OSError as exc:
        raise GraspForgeError(f"cannot read {path}: {exc}") from exc
    return parse_ply(text, str(path))


def read_points(path) -> PointCloud:
    """Point cloud from .ply, .npy or whitespace text (x y z per line)."""
    p = Path(path)
    if p.suffix == ".ply":
        return read_ply(p)
    try:
        arr = np.load(p) if p.suffix == ".npy" else np.loadtxt(p, ndmin=2)
    except (OSError, ValueError) as exc:
        raise GraspForgeError(f"cannot read points from {p}: {exc}") from exc
    return PointCloud(arr)


# ----------------------------------------------------------------------------
# posed-hand export


def export_posed_hand(record: GraspRecord, robot: RobotModel, path, obj: TriMesh | None = None) -> list[str]:
    """Write every link mesh posed by FK(q) as its own ``o`` block; the
    object, posed by the record, is appended when given. Returns the names."""
    meshes, names = [], []
    for i, m in posed_link_meshes(robot, record.q):
        meshes.append(m)
        names.append(robot.links[i].name)
    if obj is not None:
        meshes.append(obj.transformed(record.object_pose))
        names.append(f"object_{record.object_id or 'mesh'}")
    Path(path).write_text(format_obj(meshes, names))
    return names


def parse_obj_groups(text: str, source: str = "<obj>") -> dict[str, TriMesh]:
    """Split a multi-object OBJ into one TriMesh per ``o`` block (global vertex indexing)."""
    V, groups, order, current = [], {}, [], "default"
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tag, *rest = line.split()
        if tag == "v":
            V.append([float(x) for x in rest[:3]])
        elif tag == "o":
            current = rest[0] if rest else f"object{len(order)}"
        elif tag == "f":
            if len(rest) != 3:
                raise GraspForgeError(f"{source}:{lineno}: non-triangular face")
            if current not in groups:
                groups[current] = []
                order.append(current)
            groups[current].append([int(t.split("/")[0]) - 1 for t in rest])
        elif tag in ("vn", "vt", "g", "s", "usemtl", "mtllib"):
            continue
        else:
            raise GraspForgeError(f"{source}:{lineno}: unsupported OBJ statement {tag!r}")
    V = np.asarray(V, dtype=float).reshape(-1, 3)
    out = {}
    for name in order:
        F = np.asarray(groups[name], dtype=np.int64)
        used, local = np.unique(F, return_inverse=True)
        out[name] = TriMesh(V[used], local.reshape(F.shape), name)
    return out


def load_obj_groups(path) -> dict[str, TriMesh]:
    return parse_obj_groups(Path(path).read_text(), str(path))


# ----------------------------------------------------------------------------
# report tables


def render_table(headers, rows, aligns=None) -> str:
    cells = [[str(h) for h in headers]] + [[str(c) for c in r] for r in rows]
    widths = [max(len(r[k]) for r in cells) for k in range(len(headers))]
    aligns = aligns or ["<"] + [">"] * (len(headers) - 1)

    def fmt(r):
        return "  ".join(f"{c:{a}{w}}" for c, a, w in zip(r, aligns, widths)).rstrip()

    rule = "  ".join("-" * w for w in widths)
    return "\n".join([fmt(cells[0]), rule] + [fmt(r) for r in cells[1:]]) + "\n"


METRIC_HEADERS = ("Method", "Depth [cm]", "Volume [cm^3]", "Disjoint Mean [cm]", "Contact Ratio [%]")


def render_metrics(rows) -> str:
    """``rows``: iterable of ``(label, QualityMetrics)``; one line each plus a mean row when > 1."""
    rows = list(rows)
    out = [(label, f"{m.penetration_depth:.2f}", f"{m.penetration_volume:.2f}", f"{m.disjoint_mean:.2f}", f"{100 * m.contact_ratio:.1f}") for label, m in rows]
    if len(rows) > 1:
        M = np.array([[m.penetration_depth, m.penetration_volume, m.disjoint_mean, m.contact_ratio] for _, m in rows]).mean(axis=0)
        out.append(("mean", f"{M[0]:.2f}", f"{M[1]:.2f}", f"{M[2]:.2f}", f"{100 * M[3]:.1f}"))
    return render_table(METRIC_HEADERS, out)


def render_filter_stats(stats) -> str:
    rows = [("input", stats.input)]
    rows += [(f"rejected: {g}", n) for g, n in stats.rejected.items()]
    rows.append(("retained", stats.retained))
    table = render_table(("Stage", "Count"), rows)
    return table + f"retained {100 * stats.fraction:.1f}% ({stats.retained}/{stats.input})\n"


def render_verdicts(items) -> str:
    """``items``: iterable of ``(grasp id, GraspVerdict)``."""
    items = list(items)
    rows = [(gid, "yes" if v.success else "no", f"{v.epsilon:.4f}", v.contact_count, f"{v.penetration_depth_cm:.3f}") for gid, v in items]
    table = render_table(("Grasp", "Success", "Epsilon", "Contacts", "Depth [cm]"), rows)
    ok = sum(v.success for _, v in items)
    rate = 100 * ok / len(items) if items else 0.0
    return table + f"success {rate:.1f}% ({ok}/{len(items)})\n"


def render_augment_stats(stats) -> str:
    """Per-object success rates, one column per object and a mean, as in a success-rate table."""
    stats = list(stats)
    headers = ["", *(s.object_id for s in stats), "Mean"]
    rates = [100 * s.acceptance_rate for s in stats]
    mean = float(np.mean(rates)) if rates else 0.0
    rows = [
        ["Success [%]", *(f"{r:.1f}" for r in rates), f"{mean:.1f}"],
        ["Accepted", *(s.accepted for s in stats), sum(s.accepted for s in stats)],
        ["Attempts", *(s.attempts for s in stats), sum(s.attempts for s in stats)],
    ]
    note = "".join(f"budget exhausted: {s.object_id}\n" for s in stats if s.exhausted)
    return render_table(headers, rows) + note


def report_render(obj) -> str:
    """Dispatch on the value type: FilterStats, QualityMetrics, verdicts or augment stats."""
    from .pipeline import FilterStats, ObjectAugmentStats

    if isinstance(obj, FilterStats):
        return render_filter_stats(obj)
    if isinstance(obj, QualityMetrics):
        return render_metrics([("grasp", obj)])
    if isinstance(obj, GraspVerdict):
        return render_verdicts([("grasp", obj)])
    items = list(obj)
    if items and all(isinstance(x, ObjectAugmentStats) for x in items):
        return render_augment_stats(items)
    if items and all(isinstance(x, tuple) and isinstance(x[1], QualityMetrics) for x in items):
        return render_metrics(items)
    if items and all(isinstance(x, tuple) and isinstance(x[1], GraspVerdict) for x in items):
        return render_verdicts(items)
    raise GraspForgeError(f"cannot render {type(obj).__name__}")


# ----------------------------------------------------------------------------
# dataset manifest


def file_sha256(path) -> str:
    h = hashlib.sha256()
    try:
        with open(path, "rb") as fh:
            for chunk in iter(lambda: fh.read(1 << 20), b""):
                h.update(chunk)
    except OSError as exc:
        raise GraspForgeError(f"cannot hash {path}: {exc}") from exc
    return h.hexdigest()


_CONFIG_KEYS = ("filter", "eval", "perturb")


@dataclass
class DatasetManifest:
    """Reproducibility envelope. Paths are relative to the manifest file."""

    robot: str
    robot_sha256: str
    point_seed: int
    point_counts: list
    references: dict = field(default_factory=dict)  # category -> {"path", "sha256"}
    configs: dict = field(default_factory=dict)  # filter / eval / perturb snapshots
    records: list = field(default_factory=list)  # [{"path", "sha256"}]

    @classmethod
    def build(cls, base_dir, robot, point_seed, point_counts, references, configs, records) -> "DatasetManifest":
        base = Path(base_dir)

        def entry(p):
            return {"path": str(p), "sha256": file_sha256(base / p)}

        return cls(
            robot=str(robot),
            robot_sha256=file_sha256(base / robot),
            point_seed=int(point_seed),
            point_counts=[int(c) for c in point_counts],
            references={k: entry(v) for k, v in references.items()},
            configs=dict(configs),
            records=[entry(p) for p in records],
        )

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetManifest":
        try:
            m = cls(**{k: d[k] for k in ("robot", "robot_sha256", "point_seed", "point_counts")},
                    references=d.get("references", {}), configs=d.get("configs", {}), records=d.get("records", []))
        except (KeyError, TypeError) as exc:
            raise GraspForgeError(f"invalid manifest: {exc}") from exc
        missing = [k for k in _CONFIG_KEYS if k not in m.configs]
        if missing:
            raise GraspForgeError(f"manifest is missing config snapshots: {missing}")
        return m

    def verify(self, base_dir) -> None:
        """Raise on the first referenced file whose content hash differs."""
        base = Path(base_dir)
        checks = [(self.robot, self.robot_sha256)]
        checks += [(e["path"], e["sha256"]) for e in self.references.values()]
        checks += [(e["path"], e["sha256"]) for e in self.records]
        for rel, want in checks:
            got = file_sha256(base / rel)
            if got != want:
                raise GraspForgeError(f"hash mismatch for {rel}: manifest {want[:12]}…, file {got[:12]}…")

    def save(self, path) -> None:
        write_json(path, self.to_dict())

    @classmethod
    def load(cls, path, verify: bool = True) -> "DatasetManifest":
        m = cls.from_dict(read_json(path))
        if verify:
            m.verify(Path(path).parent)
        return m
