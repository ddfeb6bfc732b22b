"""Slow, obviously-correct reference implementations used only by tests.

Nothing here imports the package's own geometry kernels.
"""
import itertools
import math

import numpy as np


def _segment_distance(p, a, b):
    ab = b - a
    t = np.clip(np.dot(p - a, ab) / np.dot(ab, ab), 0.0, 1.0)
    return np.linalg.norm(p - (a + t * ab))


def point_triangle_distance(p, a, b, c):
    """Plane projection if it lands inside (barycentric test), else nearest edge."""
    n = np.cross(b - a, c - a)
    n = n / np.linalg.norm(n)
    h = np.dot(p - a, n)
    proj = p - h * n
    # barycentric coordinates of the projection
    v0, v1, v2 = b - a, c - a, proj - a
    d00, d01, d11 = v0 @ v0, v0 @ v1, v1 @ v1
    d20, d21 = v2 @ v0, v2 @ v1
    den = d00 * d11 - d01 * d01
    v = (d11 * d20 - d01 * d21) / den
    w = (d00 * d21 - d01 * d20) / den
    if v >= 0 and w >= 0 and v + w <= 1:
        return abs(h)
    return min(_segment_distance(p, a, b), _segment_distance(p, b, c), _segment_distance(p, c, a))


def mesh_distance(vertices, triangles, p):
    V = np.asarray(vertices)
    return min(point_triangle_distance(np.asarray(p, float), *V[t]) for t in triangles)


def encode_double_loop(R, O):
    D = np.zeros((len(R), len(O)))
    for i in range(len(R)):
        for j in range(len(O)):
            D[i, j] = math.sqrt(sum((R[i][k] - O[j][k]) ** 2 for k in range(3)))
    return D


def contact_ratio_all_pairs(obj, hand, threshold_m):
    hits = 0
    for o in obj:
        best = min(math.dist(o, h) for h in hand)
        hits += best <= threshold_m
    return hits / len(obj)


def w1_sorted_samples(x, y):
    """Exact W1 between two equal-size empirical distributions."""
    return float(np.mean(np.abs(np.sort(x) - np.sort(y))))


def support_sweep_epsilon(W, directions):
    """min over unit directions u of max_i <w_i, u>: an upper bound on the inscribed-ball radius."""
    U = directions / np.linalg.norm(directions, axis=1, keepdims=True)
    return float(np.min(np.max(W @ U.T, axis=0)))


def planar_arm_end(l1, l2, a1, a2):
    return np.array([l1 * math.cos(a1) + l2 * math.cos(a1 + a2), l1 * math.sin(a1) + l2 * math.sin(a1 + a2), 0.0])


def pair_distances_exhaustive(P):
    return np.array([np.linalg.norm(P[i] - P[j]) for i, j in itertools.combinations(range(len(P)), 2)])


def unit_cube_mesh():
    """Hand-written cube [0,1]^3, outward-facing triangles."""
    V = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], float)
    F = [
        (0, 1, 3), (0, 3, 2),  # x = 0
        (4, 6, 7), (4, 7, 5),  # x = 1
        (0, 4, 5), (0, 5, 1),  # y = 0
        (2, 3, 7), (2, 7, 6),  # y = 1
        (0, 2, 6), (0, 6, 4),  # z = 0
        (1, 5, 7), (1, 7, 3),  # z = 1
    ]
    return V, np.array(F)
