"""Triangle meshes, point clouds and the geometric queries built on them.

Lengths are meters. Signed distance is negative inside a mesh.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np
from scipy.spatial import cKDTree

from .errors import GraspForgeError
from .transforms import SimilarityTransform, kabsch

OBJECT_LABEL = -1
_DEGENERATE_AREA = 1e-20


class GeometryWarning(UserWarning):
    pass


class TriMesh:
    """Immutable triangle mesh with a nearest-triangle index.

    Zero-area triangles are dropped on construction. ``watertight`` is true
    when every undirected edge is shared by exactly two triangles with
    opposite orientation.
    """

    def __init__(self, vertices, triangles, name: str = ""):
        V = np.array(vertices, dtype=float).reshape(-1, 3)
        F = np.array(triangles, dtype=np.int64).reshape(-1, 3)
        if F.size and (F.min() < 0 or F.max() >= len(V)):
            raise GraspForgeError("triangle index out of range")
        if not np.all(np.isfinite(V)):
            raise GraspForgeError("non-finite vertex coordinates")
        a, b, c = V[F[:, 0]], V[F[:, 1]], V[F[:, 2]]
        cross = np.cross(b - a, c - a)
        areas = 0.5 * np.linalg.norm(cross, axis=1)
        keep = areas > _DEGENERATE_AREA
        F, areas, cross = F[keep], areas[keep], cross[keep]
        self.name = name
        self.vertices = V
        self.triangles = F
        self.areas = areas
        self.normals = cross / (2.0 * areas[:, None]) if len(F) else np.zeros((0, 3))
        self.centroids = V[F].mean(axis=1) if len(F) else np.zeros((0, 3))
        self.radii = (
            np.linalg.norm(V[F] - self.centroids[:, None, :], axis=2).max(axis=1) if len(F) else np.zeros(0)
        )
        self.watertight = _is_watertight(F)
        self._tree = cKDTree(self.centroids) if len(F) else None
        for arr in (self.vertices, self.triangles, self.areas, self.normals, self.centroids, self.radii):
            arr.flags.writeable = False

    def __repr__(self):
        return f"TriMesh({self.name!r}, V={len(self.vertices)}, F={len(self.triangles)}, watertight={self.watertight})"

    @property
    def total_area(self) -> float:
        return float(self.areas.sum())

    def bounds(self) -> np.ndarray:
        used = self.vertices[np.unique(self.triangles)] if len(self.triangles) else self.vertices
        return np.stack([used.min(axis=0), used.max(axis=0)])

    def bbox_diagonal(self) -> float:
        lo, hi = self.bounds()
        return float(np.linalg.norm(hi - lo))

    def volume(self) -> float:
        V = self.vertices[self.triangles]
        return float(np.einsum("ij,ij->i", V[:, 0], np.cross(V[:, 1], V[:, 2])).sum() / 6.0)

    def transformed(self, T) -> "TriMesh":
        """Apply a 4x4 matrix or a SimilarityTransform to the vertices."""
        if isinstance(T, SimilarityTransform):
            V = T.apply(self.vertices)
        else:
            T = np.asarray(T, dtype=float)
            V = self.vertices @ T[:3, :3].T + T[:3, 3]
        return TriMesh(V, self.triangles, self.name)


def _is_watertight(F: np.ndarray) -> bool:
    if len(F) == 0:
        return False
    directed = np.concatenate([F[:, [0, 1]], F[:, [1, 2]], F[:, [2, 0]]])
    # each directed edge once, and its reverse present exactly once
    if len(np.unique(directed, axis=0)) != len(directed):
        return False
    fwd = {tuple(e) for e in directed.tolist()}
    return all((b, a) in fwd for a, b in fwd)


@dataclass
class PointCloud:
    """Ordered points, optionally labelled by segment (link index or -1 for object)."""

    points: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(self.points)):
            raise GraspForgeError("point cloud has non-finite coordinates")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
            if len(self.labels) != len(self.points):
                raise GraspForgeError("label count does not match point count")

    def __len__(self):
        return len(self.points)

    def select(self, mask) -> "PointCloud":
        return PointCloud(self.points[mask], None if self.labels is None else self.labels[mask])

    def transformed(self, T) -> "PointCloud":
        if isinstance(T, SimilarityTransform):
            P = T.apply(self.points)
        else:
            T = np.asarray(T, dtype=float)
            P = self.points @ T[:3, :3].T + T[:3, 3]
        return PointCloud(P, self.labels)

    def bbox_diagonal(self) -> float:
        if len(self.points) == 0:
            return 0.0
        return float(np.linalg.norm(self.points.max(axis=0) - self.points.min(axis=0)))


def as_points(x) -> np.ndarray:
    if isinstance(x, PointCloud):
        return x.points
    return np.asarray(x, dtype=float).reshape(-1, 3)


# ----------------------------------------------------------------------------
# construction and OBJ files


def box_mesh(extents, center=(0.0, 0.0, 0.0), name: str = "box") -> TriMesh:
    """Axis-aligned box with outward-facing triangles."""
    hx, hy, hz = np.asarray(extents, dtype=float) / 2.0
    c = np.asarray(center, dtype=float)
    V = np.array(
        [[-hx, -hy, -hz], [hx, -hy, -hz], [hx, hy, -hz], [-hx, hy, -hz],
         [-hx, -hy, hz], [hx, -hy, hz], [hx, hy, hz], [-hx, hy, hz]]
    ) + c
    F = [
        [0, 2, 1], [0, 3, 2],  # -z
        [4, 5, 6], [4, 6, 7],  # +z
        [0, 1, 5], [0, 5, 4],  # -y
        [3, 7, 6], [3, 6, 2],  # +y
        [0, 4, 7], [0, 7, 3],  # -x
        [1, 2, 6], [1, 6, 5],  # +x
    ]
    return TriMesh(V, F, name)


def icosphere(radius: float = 1.0, subdivisions: int = 3, center=(0.0, 0.0, 0.0), name: str = "sphere") -> TriMesh:
    t = (1.0 + 5.0 ** 0.5) / 2.0
    V = [[-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0], [0, -1, t], [0, 1, t],
         [0, -1, -t], [0, 1, -t], [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1]]
    F = [[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11], [1, 5, 9], [5, 11, 4],
         [11, 10, 2], [10, 7, 6], [7, 1, 8], [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8],
         [3, 8, 9], [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]]
    V = [np.array(v, float) / np.linalg.norm(v) for v in V]
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = V[i] + V[j]
                V.append(m / np.linalg.norm(m))
                cache[key] = len(V) - 1
            return cache[key]

        new = []
        for a, b, c in F:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        F = new
    return TriMesh(np.array(V) * radius + np.asarray(center, float), F, name)


def merge_meshes(meshes, name: str = "") -> TriMesh:
    V, F, off = [], [], 0
    for m in meshes:
        V.append(m.vertices)
        F.append(m.triangles + off)
        off += len(m.vertices)
    return TriMesh(np.concatenate(V), np.concatenate(F), name)


def load_mesh(path) -> TriMesh:
    """Read an ASCII OBJ containing triangles only."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise GraspForgeError(f"cannot read mesh {path}: {exc}") from exc
    return parse_obj(text, name=path.stem, source=str(path))


def parse_obj(text: str, name: str = "", source: str = "<obj>") -> TriMesh:
    V, F = [], []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tag, *rest = line.split()
        if tag == "v":
            if len(rest) < 3:
                raise GraspForgeError(f"{source}:{lineno}: vertex needs 3 coordinates")
            V.append([float(x) for x in rest[:3]])
        elif tag == "f":
            if len(rest) != 3:
                raise GraspForgeError(f"{source}:{lineno}: non-triangular face ({len(rest)} vertices)")
            idx = []
            for tok in rest:
                i = int(tok.split("/")[0])
                idx.append(i - 1 if i > 0 else len(V) + i)
            F.append(idx)
        elif tag in ("vn", "vt", "o", "g", "s", "usemtl", "mtllib"):
            continue
        else:
            raise GraspForgeError(f"{source}:{lineno}: unsupported OBJ statement {tag!r}")
    if not F:
        raise GraspForgeError(f"{source}: mesh has no faces")
    mesh = TriMesh(V, F, name)
    if len(mesh.triangles) == 0:
        raise GraspForgeError(f"{source}: every face has zero area")
    return mesh


def format_obj(meshes, names=None) -> str:
    if isinstance(meshes, TriMesh):
        meshes = [meshes]
    out, off = [], 0
    for k, m in enumerate(meshes):
        label = (names[k] if names else m.name) or f"mesh{k}"
        out.append(f"o {label}")
        out.extend(f"v {x!r} {y!r} {z!r}" for x, y, z in m.vertices.tolist())
        out.extend(f"f {a + off + 1} {b + off + 1} {c + off + 1}" for a, b, c in m.triangles.tolist())
        off += len(m.vertices)
    return "\n".join(out) + "\n"


def save_obj(path, meshes, names=None) -> None:
    Path(path).write_text(format_obj(meshes, names))


# ----------------------------------------------------------------------------
# sampling


def sample_surface(mesh: TriMesh, n: int, seed: int = 0) -> PointCloud:
    """Area-weighted uniform surface samples (numpy PCG64 seeded with ``seed``)."""
    if n < 0:
        raise GraspForgeError("sample count must be nonnegative")
    if n == 0:
        return PointCloud(np.zeros((0, 3)))
    total = mesh.total_area
    if not total > 0:
        raise GraspForgeError(f"mesh {mesh.name!r} has zero surface area")
    rng = np.random.default_rng(seed)
    tri = rng.choice(len(mesh.triangles), size=n, p=mesh.areas / total)
    u, v = rng.random((2, n))
    su = np.sqrt(u)
    V = mesh.vertices[mesh.triangles[tri]]
    pts = (1 - su)[:, None] * V[:, 0] + (su * (1 - v))[:, None] * V[:, 1] + (su * v)[:, None] * V[:, 2]
    return PointCloud(pts)


# ----------------------------------------------------------------------------
# distance queries


def closest_point_on_triangles(p, a, b, c) -> np.ndarray:
    """Closest point on triangle (a, b, c) to p; all arrays (..., 3), broadcast row-wise."""
    ab, ac, ap = b - a, c - a, p - a
    d1 = np.einsum("...i,...i->...", ab, ap)
    d2 = np.einsum("...i,...i->...", ac, ap)
    bp = p - b
    d3 = np.einsum("...i,...i->...", ab, bp)
    d4 = np.einsum("...i,...i->...", ac, bp)
    cp = p - c
    d5 = np.einsum("...i,...i->...", ab, cp)
    d6 = np.einsum("...i,...i->...", ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2
    with np.errstate(divide="ignore", invalid="ignore"):
        denom = va + vb + vc
        v = vb / denom
        w = vc / denom
        out = a + ab * v[..., None] + ac * w[..., None]
        # edge and vertex regions; later assignments take precedence
        bc_w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        m = (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0)
        out = np.where(m[..., None], b + (c - b) * bc_w[..., None], out)
        ac_w = d2 / (d2 - d6)
        m = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
        out = np.where(m[..., None], a + ac * ac_w[..., None], out)
        m = (d6 >= 0) & (d5 <= d6)
        out = np.where(m[..., None], c, out)
        ab_v = d1 / (d1 - d3)
        m = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
        out = np.where(m[..., None], a + ab * ab_v[..., None], out)
        m = (d3 >= 0) & (d4 <= d3)
        out = np.where(m[..., None], b, out)
        m = (d1 <= 0) & (d2 <= 0)
        out = np.where(m[..., None], a, out)
    return out


@numba.njit(cache=True)
def _closest_kernel(P, V, C, rad, upper):
    n = P.shape[0]
    best_d = np.empty(n)
    best_t = np.zeros(n, dtype=np.int64)
    best_p = np.zeros((n, 3))
    for i in range(n):
        p = P[i]
        bd2 = upper[i] * upper[i] * (1.0 + 1e-12) + 1e-30
        found = False
        for t in range(V.shape[0]):
            dc = np.sqrt((p[0] - C[t, 0]) ** 2 + (p[1] - C[t, 1]) ** 2 + (p[2] - C[t, 2]) ** 2)
            lim = dc - rad[t]
            if lim > 0.0 and lim * lim > bd2:
                continue
            a, b, c = V[t, 0], V[t, 1], V[t, 2]
            ab, ac, ap = b - a, c - a, p - a
            d1 = ab[0] * ap[0] + ab[1] * ap[1] + ab[2] * ap[2]
            d2 = ac[0] * ap[0] + ac[1] * ap[1] + ac[2] * ap[2]
            bp = p - b
            d3 = ab[0] * bp[0] + ab[1] * bp[1] + ab[2] * bp[2]
            d4 = ac[0] * bp[0] + ac[1] * bp[1] + ac[2] * bp[2]
            cp = p - c
            d5 = ab[0] * cp[0] + ab[1] * cp[1] + ab[2] * cp[2]
            d6 = ac[0] * cp[0] + ac[1] * cp[1] + ac[2] * cp[2]
            va = d3 * d6 - d5 * d4
            vb = d5 * d2 - d1 * d6
            vc = d1 * d4 - d3 * d2
            if d1 <= 0.0 and d2 <= 0.0:
                q = a.copy()
            elif d3 >= 0.0 and d4 <= d3:
                q = b.copy()
            elif vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
                q = a + ab * (d1 / (d1 - d3))
            elif d6 >= 0.0 and d5 <= d6:
                q = c.copy()
            elif vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
                q = a + ac * (d2 / (d2 - d6))
            elif va <= 0.0 and d4 - d3 >= 0.0 and d5 - d6 >= 0.0:
                q = b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)))
            else:
                den = va + vb + vc
                q = a + ab * (vb / den) + ac * (vc / den)
            e = q - p
            dd = e[0] * e[0] + e[1] * e[1] + e[2] * e[2]
            if not found or dd < best_d[i]:
                best_d[i] = dd
                best_t[i] = t
                best_p[i] = q
                found = True
                if dd < bd2:
                    bd2 = dd
    return np.sqrt(best_d), best_p, best_t


def closest_points(mesh: TriMesh, points):
    """Exact nearest surface point for each query.

    The centroid KD-tree gives an upper bound; every triangle whose bounding
    sphere could beat it is then tested (lowest index wins exact ties).
    Returns ``(dist, closest, tri_index)``.
    """
    P = np.ascontiguousarray(as_points(points), dtype=np.float64)
    n = len(P)
    if len(mesh.triangles) == 0:
        raise GraspForgeError("distance query on an empty mesh")
    if n == 0:
        return np.zeros(0), np.zeros((0, 3)), np.zeros(0, dtype=np.int64)
    V = np.ascontiguousarray(mesh.vertices[mesh.triangles], dtype=np.float64)
    k = min(4, len(mesh.triangles))
    _, near = mesh._tree.query(P, k=k)
    near = np.asarray(near).reshape(n, k)
    cp = closest_point_on_triangles(P[:, None, :], V[near, 0], V[near, 1], V[near, 2])
    upper = np.linalg.norm(cp - P[:, None, :], axis=2).min(axis=1)
    C = np.ascontiguousarray(mesh.centroids, dtype=np.float64)
    return _closest_kernel(P, V, C, np.ascontiguousarray(mesh.radii, dtype=np.float64), upper)


@numba.njit(cache=True)
def _winding_kernel(P, V):
    out = np.zeros(P.shape[0])
    for i in range(P.shape[0]):
        px, py, pz = P[i, 0], P[i, 1], P[i, 2]
        acc = 0.0
        for t in range(V.shape[0]):
            ax, ay, az = V[t, 0, 0] - px, V[t, 0, 1] - py, V[t, 0, 2] - pz
            bx, by, bz = V[t, 1, 0] - px, V[t, 1, 1] - py, V[t, 1, 2] - pz
            cx, cy, cz = V[t, 2, 0] - px, V[t, 2, 1] - py, V[t, 2, 2] - pz
            la = np.sqrt(ax * ax + ay * ay + az * az)
            lb = np.sqrt(bx * bx + by * by + bz * bz)
            lc = np.sqrt(cx * cx + cy * cy + cz * cz)
            det = ax * (by * cz - bz * cy) - ay * (bx * cz - bz * cx) + az * (bx * cy - by * cx)
            den = (
                la * lb * lc
                + (ax * bx + ay * by + az * bz) * lc
                + (bx * cx + by * cy + bz * cz) * la
                + (cx * ax + cy * ay + cz * az) * lb
            )
            acc += 2.0 * np.arctan2(det, den)
        out[i] = acc / (4.0 * np.pi)
    return out


def winding_number(mesh: TriMesh, points) -> np.ndarray:
    """Generalized winding number (solid-angle sum / 4π, Van Oosterom-Strackee)."""
    P = np.ascontiguousarray(as_points(points), dtype=np.float64)
    V = np.ascontiguousarray(mesh.vertices[mesh.triangles], dtype=np.float64)
    return _winding_kernel(P, V)


def signed_distance(mesh: TriMesh, points) -> np.ndarray | float:
    """Distance to the surface, negative inside.

    The sign comes from the winding number (> 0.5 means inside). On a
    non-watertight mesh the magnitude is returned and a GeometryWarning is raised.
    """
    scalar = np.ndim(points) == 1
    P = as_points(points)
    dist, _, _ = closest_points(mesh, P)
    if not mesh.watertight:
        warnings.warn(f"mesh {mesh.name!r} is not watertight; returning unsigned distance", GeometryWarning)
        out = dist
    else:
        out = np.where(winding_number(mesh, P) > 0.5, -dist, dist)
    return float(out[0]) if scalar else out


def sdf_gradient(mesh: TriMesh, points, step: float = 1e-4) -> np.ndarray:
    """Central-difference gradient of the signed distance (points outward)."""
    P = as_points(points)
    n = len(P)
    offsets = np.concatenate([np.eye(3), -np.eye(3)]) * step
    Q = (P[:, None, :] + offsets[None]).reshape(-1, 3)
    s = signed_distance(mesh, Q).reshape(n, 6)
    return (s[:, :3] - s[:, 3:]) / (2.0 * step)


def inside_grid(mesh: TriMesh, origin, shape, voxel: float, chunk: int = 4_000_000) -> np.ndarray:
    """Inside mask for voxel centers ``origin + (ijk + 0.5) * voxel``.

    Casts one +z ray per (i, j) column and fills between crossing pairs.
    Centers are nudged by a tiny irrational offset so rays never pass through
    a shared triangle edge and no center sits exactly on an axis-aligned face.
    """
    nx, ny, nz = (int(v) for v in shape)
    origin = np.asarray(origin, dtype=float)
    mask = np.zeros((nx, ny, nz), dtype=bool)
    if nx * ny * nz == 0:
        return mask
    nudge = voxel * np.array([1.4142135623e-7, 1.7320508075e-7, 2.2360679775e-7])
    xs = origin[0] + (np.arange(nx) + 0.5) * voxel + nudge[0]
    ys = origin[1] + (np.arange(ny) + 0.5) * voxel + nudge[1]
    zs = origin[2] + (np.arange(nz) + 0.5) * voxel + nudge[2]
    V = mesh.vertices[mesh.triangles]
    # drop triangles whose xy footprint misses the grid
    lo, hi = V[:, :, :2].min(axis=1), V[:, :, :2].max(axis=1)
    keep = (hi[:, 0] >= xs[0]) & (lo[:, 0] <= xs[-1]) & (hi[:, 1] >= ys[0]) & (lo[:, 1] <= ys[-1])
    V = V[keep]
    if len(V) == 0:
        return mask
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    cols = np.stack([X.ravel(), Y.ravel()], axis=1)
    a, b, c = V[:, 0], V[:, 1], V[:, 2]
    area2 = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    flat = mask.reshape(nx * ny, nz)
    rows = max(1, chunk // len(V))
    for s in range(0, len(cols), rows):
        px, py = cols[s : s + rows, 0:1], cols[s : s + rows, 1:2]

        def edge(p, q):
            return (q[:, 0] - p[:, 0]) * (py - p[:, 1]) - (q[:, 1] - p[:, 1]) * (px - p[:, 0])

        e0, e1, e2 = edge(b, c), edge(c, a), edge(a, b)
        with np.errstate(divide="ignore", invalid="ignore"):
            hit = ((e0 > 0) & (e1 > 0) & (e2 > 0)) | ((e0 < 0) & (e1 < 0) & (e2 < 0))
            hit &= area2 != 0
            z = (e0 * a[:, 2] + e1 * b[:, 2] + e2 * c[:, 2]) / area2
        z = np.where(hit, z, np.inf)
        z.sort(axis=1)
        ncross = hit.sum(axis=1)
        block = np.zeros((len(px), nz), dtype=bool)
        for k in range(0, int(ncross.max(initial=0)) - 1, 2):
            z0, z1 = z[:, k : k + 1], z[:, k + 1 : k + 2]
            block |= (zs[None, :] > z0) & (zs[None, :] < z1)
        flat[s : s + rows] = block
    return mask


def point_in_mesh(mesh: TriMesh, points) -> np.ndarray:
    return winding_number(mesh, points) > 0.5


# ----------------------------------------------------------------------------
# ICP


@dataclass
class IcpRun:
    transform: SimilarityTransform
    residual: float
    history: list = field(default_factory=list)
    iterations: int = 0


def _principal_frame(P: np.ndarray):
    mu = P.mean(axis=0)
    X = P - mu
    _, s, Vt = np.linalg.svd(X, full_matrices=False)
    return mu, Vt.T, s


def _nearest_fn(target):
    if isinstance(target, TriMesh):
        return lambda X: closest_points(target, X)[:2]
    tree = cKDTree(as_points(target))
    T = tree.data

    def nn(X):
        d, i = tree.query(X)
        return d, T[i]

    return nn


def _icp_single(src, nearest, R, t, s, estimate_scale, max_iters, tol, trim_fraction) -> IcpRun:
    n = len(src)
    n_keep = max(3, int(np.ceil((1.0 - trim_fraction) * n)))
    history: list[float] = []
    best = (R, t, s)
    prev = np.inf
    it = 0
    for it in range(max_iters + 1):
        moved = s * src @ R.T + t
        d, corr = nearest(moved)
        keep = np.argsort(d, kind="stable")[:n_keep]
        residual = float(np.sqrt(np.mean(d[keep] ** 2)))
        if residual > prev:
            break
        best = (R, t, s)
        history.append(residual)
        if prev - residual < tol or residual == 0.0 or it == max_iters:
            prev = residual
            break
        prev = residual
        R, t, s = kabsch(src[keep], corr[keep], with_scale=estimate_scale)
    R, t, s = best
    return IcpRun(SimilarityTransform.from_matrix(R, t, s), history[-1], history, it)


def icp_align(
    source,
    target,
    estimate_scale: bool = False,
    max_iters: int = 100,
    tol: float = 1e-12,
    trim_fraction: float = 0.1,
    init: SimilarityTransform | None = None,
    return_run: bool = False,
    multistart: bool = True,
):
    """Register ``source`` points onto ``target`` (TriMesh or points).

    Point-to-point ICP with trimmed correspondences and a closed-form
    similarity update. Starts from centroid alignment, the four proper
    principal-axis rotations and ``init`` if given; the lowest final residual
    wins (earlier candidates win ties). ``multistart=False`` skips the
    principal-axis starts, which is enough for small misalignments.

    Returns ``(transform, rms_residual)`` mapping source into target frame,
    or the full :class:`IcpRun` when ``return_run``.
    """
    src = as_points(source)
    if len(src) < 3:
        raise GraspForgeError("ICP needs at least 3 source points")
    if not 0.0 <= trim_fraction < 1.0:
        raise GraspForgeError("trim_fraction must lie in [0, 1)")
    mu_s, axes_s, sv = _principal_frame(src)
    if sv[0] < 1e-12 or sv[1] <= 1e-9 * sv[0]:
        raise GraspForgeError("degenerate ICP source (coincident or collinear points)")
    if isinstance(target, TriMesh):
        tgt_stats = sample_surface(target, 4096, seed=0).points
    else:
        tgt_stats = as_points(target)
    mu_t, axes_t, _ = _principal_frame(tgt_stats)
    s0 = 1.0
    if estimate_scale:
        rs = np.sqrt(np.mean(np.sum((src - mu_s) ** 2, axis=1)))
        rt = np.sqrt(np.mean(np.sum((tgt_stats - mu_t) ** 2, axis=1)))
        s0 = float(rt / rs)

    starts = []
    if init is not None:
        starts.append((init.R, init.translation, init.scale if estimate_scale else 1.0))
    starts.append((np.eye(3), mu_t - s0 * mu_s, s0))
    for signs in ((1, 1, 1), (1, -1, -1), (-1, 1, -1), (-1, -1, 1)) if multistart else ():
        Ra = axes_t @ np.diag(signs) @ axes_s.T
        if np.linalg.det(Ra) < 0:
            Ra = axes_t @ np.diag(signs) @ np.diag([1, 1, -1]) @ axes_s.T
        starts.append((Ra, mu_t - s0 * Ra @ mu_s, s0))

    nearest = _nearest_fn(target)
    best: IcpRun | None = None
    for R, t, s in starts:
        run = _icp_single(src, nearest, R, np.asarray(t, float), s, estimate_scale, max_iters, tol, trim_fraction)
        if best is None or run.residual < best.residual:
            best = run
        if best.residual == 0.0:
            break
    if return_run:
        return best
    return best.transform, best.residual


# ----------------------------------------------------------------------------
# D2 shape distribution


@dataclass(frozen=True)
class D2Histogram:
    edges: np.ndarray
    masses: np.ndarray
    pairs: int
    seed: int

    @property
    def width(self) -> np.ndarray:
        return np.diff(self.edges)

    def to_dict(self) -> dict:
        return {
            "edges": self.edges.tolist(),
            "masses": self.masses.tolist(),
            "pairs": self.pairs,
            "seed": self.seed,
        }


def d2_distances(cloud, pairs: int, seed: int = 0, exhaustive: bool = False) -> np.ndarray:
    P = as_points(cloud)
    n = len(P)
    if n < 2:
        raise GraspForgeError("D2 descriptor needs at least two points")
    if exhaustive:
        i, j = np.triu_indices(n, k=1)
    else:
        if pairs < 1:
            raise GraspForgeError("pairs must be >= 1")
        rng = np.random.default_rng(seed)
        i = rng.integers(0, n, size=pairs)
        j = (i + rng.integers(1, n, size=pairs)) % n
    return np.linalg.norm(P[i] - P[j], axis=1)


def d2_descriptor(
    cloud,
    pairs: int = 100_000,
    bins: int = 64,
    range_max: float | None = None,
    seed: int = 0,
    exhaustive: bool = False,
) -> D2Histogram:
    """Normalized histogram of distances between random point pairs.

    ``range_max`` defaults to 1.25x the cloud's bounding-box diagonal;
    longer distances land in the last bin. ``exhaustive`` uses every
    unordered pair instead of sampling.
    """
    if bins < 1:
        raise GraspForgeError("bins must be >= 1")
    P = as_points(cloud)
    d = d2_distances(P, pairs, seed, exhaustive)
    if range_max is None:
        range_max = 1.25 * float(np.linalg.norm(P.max(axis=0) - P.min(axis=0)))
    if not range_max > 0:
        raise GraspForgeError("range_max must be positive")
    edges = np.linspace(0.0, range_max, bins + 1)
    counts, _ = np.histogram(np.clip(d, 0.0, range_max), bins=edges)
    return D2Histogram(edges, counts / counts.sum(), int(len(d)), int(seed))


def wasserstein_1d(a: D2Histogram, b: D2Histogram) -> float:
    """Earth mover's distance between two histograms on identical bins."""
    if a.edges.shape != b.edges.shape or not np.array_equal(a.edges, b.edges):
        raise GraspForgeError("wasserstein_1d needs identical bin edges")
    diff = np.cumsum(a.masses) - np.cumsum(b.masses)
    return float(np.sum(np.abs(diff) * np.diff(a.edges)))

