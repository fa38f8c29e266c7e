"""Pure numpy implementations of the hot numerical kernels.

Every function here has a twin with the same signature in the compiled
``_ckernels`` extension.  The two are kept numerically interchangeable; the
test-suite compares them directly.

Conventions
-----------
P, Z, G, V : (3, 3) arrays whose columns are the three receiver positions
    (or perturbations of them).
B : (m, 3) beacon matrix, one beacon per row.
Y : (3, m) linearized targets, row ``i`` is ``y_i``.
State vectors are 15-long ``[p, v, vec(C)]`` with column-major ``vec``.
"""

import math

import numpy as np

from .errors import DegenerateBase, PoleEncountered, SingularGeometry

U10 = np.array([[0.0, 1.0, -1.0], [1.0, -2.0, 1.0], [-1.0, 1.0, 0.0]])
U01 = np.array([[0.0, 1.0, -1.0], [1.0, 0.0, -1.0], [-1.0, -1.0, 2.0]])

_S_REL_TOL = 1e-14


def _skew(w):
    return np.array(
        [[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]]
    )


def cost(P, B, Y):
    E = B @ P - 0.5 * np.sum(P * P, axis=0) - Y.T
    return float(np.sum(E * E))


def cost_egrad(P, B, Y):
    # residual columns e_i = B p_i - |p_i|^2/2 - y_i
    E = B @ P - 0.5 * np.sum(P * P, axis=0) - Y.T
    G = 2.0 * (B.T @ E - P * np.sum(E, axis=0))
    return float(np.sum(E * E)), G


def ehess(P, B, Y, V):
    E = B @ P - 0.5 * np.sum(P * P, axis=0) - Y.T
    JV = B @ V - np.sum(P * V, axis=0)
    return 2.0 * (B.T @ JV - P * np.sum(JV, axis=0) - V * np.sum(E, axis=0))


def _normal_system(P):
    A1 = P @ U10
    A2 = P @ U01
    s11 = float(np.sum(A1 * A1))
    s12 = float(np.sum(A1 * A2))
    s22 = float(np.sum(A2 * A2))
    det = s11 * s22 - s12 * s12
    if not det > _S_REL_TOL * s11 * s22 or s11 == 0.0 or s22 == 0.0:
        raise SingularGeometry("normal-space Gram matrix is singular")
    return A1, A2, s11, s12, s22, det


def _solve2(s11, s12, s22, det, r1, r2):
    return (s22 * r1 - s12 * r2) / det, (s11 * r2 - s12 * r1) / det


def s_matrix(P):
    A1 = P @ U10
    A2 = P @ U01
    s12 = float(np.sum(A1 * A2))
    return np.array([[float(np.sum(A1 * A1)), s12], [s12, float(np.sum(A2 * A2))]])


def correction(P, G):
    A1, A2, s11, s12, s22, det = _normal_system(P)
    return _solve2(s11, s12, s22, det, float(np.sum(G * A1)), float(np.sum(G * A2)))


def tangent_project(P, Z):
    A1, A2, s11, s12, s22, det = _normal_system(P)
    a, b = _solve2(s11, s12, s22, det, float(np.sum(Z * A1)), float(np.sum(Z * A2)))
    return Z - (a * A1 + b * A2), a, b


def rhess(P, G, alpha, beta, xi, Hxi):
    A1, A2, s11, s12, s22, det = _normal_system(P)
    X1 = xi @ U10
    X2 = xi @ U01
    sd11 = 2.0 * float(np.sum(X1 * A1))
    sd12 = float(np.sum(X2 * A1)) + float(np.sum(A2 * X1))
    sd22 = 2.0 * float(np.sum(X2 * A2))
    r1 = float(np.sum(Hxi * A1)) + float(np.sum(G * X1)) - (sd11 * alpha + sd12 * beta)
    r2 = float(np.sum(Hxi * A2)) + float(np.sum(G * X2)) - (sd12 * alpha + sd22 * beta)
    ad, bd = _solve2(s11, s12, s22, det, r1, r2)
    W = Hxi - (alpha * X1 + beta * X2) - (ad * A1 + bd * A2)
    out, _, _ = tangent_project(P, W)
    return out, ad, bd


def retract_nearest(Z, base):
    zc = Z.mean(axis=1)
    e = Z[:, 2] - Z[:, 1]
    length = math.sqrt(float(e @ e))
    if not length >= 1e-9 * base:
        raise DegenerateBase(f"base length {length:.3e} is degenerate")
    lam = base / length
    median = Z[:, 0] - 0.5 * (Z[:, 1] + Z[:, 2])
    gamma = lam * lam * float(median @ e) / base
    out = lam * (Z - zc[:, None]) + zc[:, None]
    out[:, 0] -= (gamma / base) * lam * e
    return out


def retract_scaling(Z, base, pole_tol):
    z1 = Z[:, 0]
    z2 = Z[:, 1]
    z3 = Z[:, 2]
    e = z2 - z3
    ne = math.sqrt(float(e @ e))
    den = 2.0 * float(z1 @ e)
    if not abs(den) > 2.0 * pole_tol * math.sqrt(float(z1 @ z1)) * ne:
        raise PoleEncountered("z1 is orthogonal to the base")
    gamma = float((z2 + z3) @ e) / den
    U = np.column_stack((gamma * z1, z2, z3))
    rad_den = float((U[:, 0] - z3) @ e)
    if not rad_den > 1e-12 * ne * ne:
        raise PoleEncountered("scaling radicand is not positive")
    U *= math.sqrt(0.5 * base * base / rad_den)
    k = float((U[:, 0] - U[:, 2]) @ (U[:, 1] - U[:, 2]))
    return U * math.sqrt(0.5 * base * base / k)


def transition_matrix(a, w, dt):
    O = _skew(w)
    I3 = np.eye(3)
    Ak = np.kron(a[None, :], I3)
    F = np.eye(15)
    F[0:3, 3:6] = dt * I3
    F[0:3, 6:15] = 0.5 * dt * dt * Ak
    F[3:6, 6:15] = dt * Ak + 0.5 * dt * dt * Ak @ np.kron(O.T, I3)
    F[6:15, 6:15] += dt * np.kron(O.T, I3) + 0.5 * dt * dt * np.kron(O @ O, I3)
    return F


def _omega_sq_partials(w):
    wx, wy, wz = w
    return (
        np.array([[0.0, wy, wz], [wy, -2.0 * wx, 0.0], [wz, 0.0, -2.0 * wx]]),
        np.array([[-2.0 * wy, wx, 0.0], [wx, 0.0, wz], [0.0, wz, -2.0 * wy]]),
        np.array([[-2.0 * wz, 0.0, wx], [0.0, -2.0 * wz, wy], [wx, wy, 0.0]]),
    )


def input_jacobian(a, w, C, dt):
    I3 = np.eye(3)
    O = _skew(w)
    c = C.reshape(9, order="F")
    Fu = np.zeros((15, 6))
    Fu[0:3, 0:3] = 0.5 * dt * dt * C
    Fu[3:6, 0:3] = dt * C + 0.5 * dt * dt * C @ O
    Fu[3:6, 3:6] = 0.5 * dt * dt * C @ (-_skew(a))
    for i, dO2 in enumerate(_omega_sq_partials(w)):
        E = _skew(I3[i])
        Fu[6:15, 3 + i] = dt * np.kron(E, I3).T @ c + 0.5 * dt * dt * np.kron(dO2, I3) @ c
    return Fu


def ekf_predict(x, P, a, w, q, dt, jitter):
    F = transition_matrix(a, w, dt)
    Fu = input_jacobian(a, w, x[6:15].reshape(3, 3, order="F"), dt)
    xn = F @ x
    Pn = F @ P @ F.T + (Fu * q) @ Fu.T
    Pn[range(6, 15), range(6, 15)] += jitter
    return xn, 0.5 * (Pn + Pn.T)


def gn_receiver(B, y, p0, max_iter, xtol, damping):
    """Gauss-Newton on one receiver's residual ``B p - |p|^2/2 - y``.

    Returns ``(p, iterations, cost, grad_norm)``.
    """
    p = np.array(p0, dtype=float)
    it = 0
    for it in range(1, max_iter + 1):
        e = B @ p - 0.5 * float(p @ p) - y
        J = B - p[None, :]
        JtJ = J.T @ J
        g = J.T @ e
        try:
            L = np.linalg.cholesky(JtJ)
            step = -np.linalg.solve(L.T, np.linalg.solve(L, g))
            if not np.all(np.isfinite(step)):
                raise np.linalg.LinAlgError
        except np.linalg.LinAlgError:
            mu = damping * max(float(np.trace(JtJ)), 1.0)
            step = -np.linalg.solve(JtJ + mu * np.eye(3), g)
        p = p + step
        if math.sqrt(float(step @ step)) <= xtol * (1.0 + math.sqrt(float(p @ p))):
            break
    e = B @ p - 0.5 * float(p @ p) - y
    g = 2.0 * ((B - p[None, :]).T @ e)
    return p, it, float(e @ e), math.sqrt(float(g @ g))
