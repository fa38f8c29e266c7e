"""Shared fixtures-by-function for the test-suite (no package code here)."""

import math

import numpy as np


def offsets(d):
    """Body-frame centroid-to-vertex offsets of an equilateral triangle."""
    s3 = math.sqrt(3.0)
    return np.array(
        [[s3 * d / 3, -s3 * d / 6, -s3 * d / 6], [0.0, d / 2, -d / 2], [0.0, 0.0, 0.0]]
    )


def random_rotation(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def random_on_manifold(rng, d, center_scale=3.0):
    """Random pose of the equilateral triangle, returned as a vertex matrix."""
    R = random_rotation(rng)
    t = rng.normal(scale=center_scale, size=3)
    return t[:, None] + R @ offsets(d)


def constraint_loop(P, d, c=0.5):
    """Scalar-loop evaluation of the two constraint residuals."""
    r1 = 0.0
    r2 = 0.0
    for k in range(3):
        r1 += (P[k][0] - P[k][1]) * (P[k][1] - P[k][2])
        r2 += (P[k][0] - P[k][2]) * (P[k][1] - P[k][2])
    return r1 + c * d * d, r2 - c * d * d


def nearest_four_step(Z, d):
    """Geometric construction: center, rescale base, slide apex, un-center."""
    Z = np.array(Z, dtype=float)
    c = [sum(Z[k][j] for j in range(3)) / 3.0 for k in range(3)]
    Zc = [[Z[k][j] - c[k] for j in range(3)] for k in range(3)]
    base = math.sqrt(sum((Zc[k][2] - Zc[k][1]) ** 2 for k in range(3)))
    lam = d / base
    Zs = [[lam * Zc[k][j] for j in range(3)] for k in range(3)]
    mid = [(Zs[k][1] + Zs[k][2]) / 2 for k in range(3)]
    u = [(Zs[k][2] - Zs[k][1]) / d for k in range(3)]
    along = sum((Zs[k][0] - mid[k]) * u[k] for k in range(3))
    for k in range(3):
        Zs[k][0] -= along * u[k]
    return np.array([[Zs[k][j] + c[k] for j in range(3)] for k in range(3)])


def tangent_basis(P):
    """Orthonormal basis of the tangent space, from the constraint Jacobian."""
    p1, p2, p3 = P[:, 0], P[:, 1], P[:, 2]
    # gradients of the two constraints w.r.t. vec(P) (column-major)
    g1 = np.concatenate([p2 - p3, p1 - 2 * p2 + p3, -(p1 - p2)])
    g2 = np.concatenate([p2 - p3, p1 - p3, -(p1 - p3) - (p2 - p3)])
    N = np.stack([g1, g2], axis=1)
    Q, _ = np.linalg.qr(N, mode="complete")
    return [Q[:, 2 + k].reshape(3, 3, order="F") for k in range(7)]


def random_tangent(rng, P, scale=1.0):
    B = tangent_basis(P)
    coef = rng.normal(size=len(B))
    return scale * sum(c * b for c, b in zip(coef, B))
