# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twins of the kernels in ``_pykernels``.

Signatures and results match the numpy versions; only the loops are
hand-unrolled over the fixed 3x3 / 15x15 shapes.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs

from .errors import DegenerateBase, PoleEncountered, SingularGeometry

cnp.import_array()

cdef double S_REL_TOL = 1e-14
cdef double U10[3][3]
cdef double U01[3][3]
U10[0][:] = [0.0, 1.0, -1.0]
U10[1][:] = [1.0, -2.0, 1.0]
U10[2][:] = [-1.0, 1.0, 0.0]
U01[0][:] = [0.0, 1.0, -1.0]
U01[1][:] = [1.0, 0.0, -1.0]
U01[2][:] = [-1.0, -1.0, 2.0]


cdef inline void _matmul3(const double[:, ::1] A, double M[3][3], double out[3][3]) noexcept nogil:
    cdef int i, j, k
    cdef double s
    for i in range(3):
        for j in range(3):
            s = 0.0
            for k in range(3):
                s += A[i, k] * M[k][j]
            out[i][j] = s


cdef inline void _matmul3c(double A[3][3], double M[3][3], double out[3][3]) noexcept nogil:
    cdef int i, j, k
    cdef double s
    for i in range(3):
        for j in range(3):
            s = 0.0
            for k in range(3):
                s += A[i][k] * M[k][j]
            out[i][j] = s


cdef inline double _frob(double A[3][3], double Bm[3][3]) noexcept nogil:
    cdef int i, j
    cdef double s = 0.0
    for i in range(3):
        for j in range(3):
            s += A[i][j] * Bm[i][j]
    return s


cdef inline double _frob_mv(const double[:, ::1] A, double Bm[3][3]) noexcept nogil:
    cdef int i, j
    cdef double s = 0.0
    for i in range(3):
        for j in range(3):
            s += A[i, j] * Bm[i][j]
    return s


cdef inline void _residuals(const double[:, ::1] P, const double[:, ::1] B,
                            const double[:, ::1] Y, double[:, ::1] E) noexcept nogil:
    cdef Py_ssize_t m = B.shape[0]
    cdef Py_ssize_t j
    cdef int i
    cdef double half_sq
    for i in range(3):
        half_sq = 0.5 * (P[0, i] * P[0, i] + P[1, i] * P[1, i] + P[2, i] * P[2, i])
        for j in range(m):
            E[j, i] = B[j, 0] * P[0, i] + B[j, 1] * P[1, i] + B[j, 2] * P[2, i] - half_sq - Y[i, j]


def cost(const double[:, ::1] P, const double[:, ::1] B, const double[:, ::1] Y):
    cdef Py_ssize_t m = B.shape[0]
    cdef double[:, ::1] E = np.empty((m, 3))
    cdef Py_ssize_t j
    cdef int i
    cdef double f = 0.0
    _residuals(P, B, Y, E)
    for j in range(m):
        for i in range(3):
            f += E[j, i] * E[j, i]
    return f


def cost_egrad(const double[:, ::1] P, const double[:, ::1] B, const double[:, ::1] Y):
    cdef Py_ssize_t m = B.shape[0]
    cdef double[:, ::1] E = np.empty((m, 3))
    G_arr = np.empty((3, 3))
    cdef double[:, ::1] G = G_arr
    cdef Py_ssize_t j
    cdef int i, r
    cdef double f = 0.0, se, s
    _residuals(P, B, Y, E)
    for i in range(3):
        se = 0.0
        for j in range(m):
            f += E[j, i] * E[j, i]
            se += E[j, i]
        for r in range(3):
            s = 0.0
            for j in range(m):
                s += B[j, r] * E[j, i]
            G[r, i] = 2.0 * (s - P[r, i] * se)
    return f, G_arr


def ehess(const double[:, ::1] P, const double[:, ::1] B, const double[:, ::1] Y,
          const double[:, ::1] V):
    cdef Py_ssize_t m = B.shape[0]
    cdef double[:, ::1] E = np.empty((m, 3))
    cdef double[:, ::1] JV = np.empty((m, 3))
    H_arr = np.empty((3, 3))
    cdef double[:, ::1] H = H_arr
    cdef Py_ssize_t j
    cdef int i, r
    cdef double pv, se, sjv, s
    _residuals(P, B, Y, E)
    for i in range(3):
        pv = P[0, i] * V[0, i] + P[1, i] * V[1, i] + P[2, i] * V[2, i]
        se = 0.0
        sjv = 0.0
        for j in range(m):
            JV[j, i] = B[j, 0] * V[0, i] + B[j, 1] * V[1, i] + B[j, 2] * V[2, i] - pv
            se += E[j, i]
            sjv += JV[j, i]
        for r in range(3):
            s = 0.0
            for j in range(m):
                s += B[j, r] * JV[j, i]
            H[r, i] = 2.0 * (s - P[r, i] * sjv - V[r, i] * se)
    return H_arr


cdef int _normal_system(const double[:, ::1] P, double A1[3][3], double A2[3][3],
                        double *s11, double *s12, double *s22, double *det) noexcept nogil:
    _matmul3(P, U10, A1)
    _matmul3(P, U01, A2)
    s11[0] = _frob(A1, A1)
    s12[0] = _frob(A1, A2)
    s22[0] = _frob(A2, A2)
    det[0] = s11[0] * s22[0] - s12[0] * s12[0]
    if not det[0] > S_REL_TOL * s11[0] * s22[0] or s11[0] == 0.0 or s22[0] == 0.0:
        return 1
    return 0


def s_matrix(const double[:, ::1] P):
    cdef double A1[3][3]
    cdef double A2[3][3]
    _matmul3(P, U10, A1)
    _matmul3(P, U01, A2)
    cdef double s12 = _frob(A1, A2)
    return np.array([[_frob(A1, A1), s12], [s12, _frob(A2, A2)]])


def correction(const double[:, ::1] P, const double[:, ::1] G):
    cdef double A1[3][3]
    cdef double A2[3][3]
    cdef double s11, s12, s22, det, r1, r2
    if _normal_system(P, A1, A2, &s11, &s12, &s22, &det):
        raise SingularGeometry("normal-space Gram matrix is singular")
    r1 = _frob_mv(G, A1)
    r2 = _frob_mv(G, A2)
    return (s22 * r1 - s12 * r2) / det, (s11 * r2 - s12 * r1) / det


def tangent_project(const double[:, ::1] P, const double[:, ::1] Z):
    cdef double A1[3][3]
    cdef double A2[3][3]
    cdef double s11, s12, s22, det, r1, r2, a, b
    cdef int i, j
    if _normal_system(P, A1, A2, &s11, &s12, &s22, &det):
        raise SingularGeometry("normal-space Gram matrix is singular")
    r1 = _frob_mv(Z, A1)
    r2 = _frob_mv(Z, A2)
    a = (s22 * r1 - s12 * r2) / det
    b = (s11 * r2 - s12 * r1) / det
    out_arr = np.empty((3, 3))
    cdef double[:, ::1] out = out_arr
    for i in range(3):
        for j in range(3):
            out[i, j] = Z[i, j] - (a * A1[i][j] + b * A2[i][j])
    return out_arr, a, b


def rhess(const double[:, ::1] P, const double[:, ::1] G, double alpha, double beta,
          const double[:, ::1] xi, const double[:, ::1] Hxi):
    cdef double A1[3][3]
    cdef double A2[3][3]
    cdef double X1[3][3]
    cdef double X2[3][3]
    cdef double W[3][3]
    cdef double s11, s12, s22, det, sd11, sd12, sd22, r1, r2, ad, bd, a, b
    cdef int i, j
    if _normal_system(P, A1, A2, &s11, &s12, &s22, &det):
        raise SingularGeometry("normal-space Gram matrix is singular")
    _matmul3(xi, U10, X1)
    _matmul3(xi, U01, X2)
    sd11 = 2.0 * _frob(X1, A1)
    sd12 = _frob(X2, A1) + _frob(A2, X1)
    sd22 = 2.0 * _frob(X2, A2)
    r1 = _frob_mv(Hxi, A1) + _frob_mv(G, X1) - (sd11 * alpha + sd12 * beta)
    r2 = _frob_mv(Hxi, A2) + _frob_mv(G, X2) - (sd12 * alpha + sd22 * beta)
    ad = (s22 * r1 - s12 * r2) / det
    bd = (s11 * r2 - s12 * r1) / det
    for i in range(3):
        for j in range(3):
            W[i][j] = Hxi[i, j] - (alpha * X1[i][j] + beta * X2[i][j]) - (ad * A1[i][j] + bd * A2[i][j])
    r1 = _frob(W, A1)
    r2 = _frob(W, A2)
    a = (s22 * r1 - s12 * r2) / det
    b = (s11 * r2 - s12 * r1) / det
    out_arr = np.empty((3, 3))
    cdef double[:, ::1] out = out_arr
    for i in range(3):
        for j in range(3):
            out[i, j] = W[i][j] - (a * A1[i][j] + b * A2[i][j])
    return out_arr, ad, bd


def retract_nearest(const double[:, ::1] Z, double base):
    cdef double zc[3]
    cdef double e[3]
    cdef double med[3]
    cdef double length, lam, gamma, dot
    cdef int r, c
    for r in range(3):
        zc[r] = (Z[r, 0] + Z[r, 1] + Z[r, 2]) / 3.0
        e[r] = Z[r, 2] - Z[r, 1]
        med[r] = Z[r, 0] - 0.5 * (Z[r, 1] + Z[r, 2])
    length = sqrt(e[0] * e[0] + e[1] * e[1] + e[2] * e[2])
    if not length >= 1e-9 * base:
        raise DegenerateBase(f"base length {length:.3e} is degenerate")
    lam = base / length
    dot = med[0] * e[0] + med[1] * e[1] + med[2] * e[2]
    gamma = lam * lam * dot / base
    out_arr = np.empty((3, 3))
    cdef double[:, ::1] out = out_arr
    for r in range(3):
        for c in range(3):
            out[r, c] = lam * (Z[r, c] - zc[r]) + zc[r]
        out[r, 0] -= (gamma / base) * lam * e[r]
    return out_arr


def retract_scaling(const double[:, ::1] Z, double base, double pole_tol):
    cdef double e[3]
    cdef double u1[3]
    cdef double ne, nz1, den, gamma, rad_den, lam, k
    cdef int r
    for r in range(3):
        e[r] = Z[r, 1] - Z[r, 2]
    ne = sqrt(e[0] * e[0] + e[1] * e[1] + e[2] * e[2])
    nz1 = sqrt(Z[0, 0] * Z[0, 0] + Z[1, 0] * Z[1, 0] + Z[2, 0] * Z[2, 0])
    den = 2.0 * (Z[0, 0] * e[0] + Z[1, 0] * e[1] + Z[2, 0] * e[2])
    if not fabs(den) > 2.0 * pole_tol * nz1 * ne:
        raise PoleEncountered("z1 is orthogonal to the base")
    gamma = ((Z[0, 1] + Z[0, 2]) * e[0] + (Z[1, 1] + Z[1, 2]) * e[1]
             + (Z[2, 1] + Z[2, 2]) * e[2]) / den
    rad_den = 0.0
    for r in range(3):
        u1[r] = gamma * Z[r, 0]
        rad_den += (u1[r] - Z[r, 2]) * e[r]
    if not rad_den > 1e-12 * ne * ne:
        raise PoleEncountered("scaling radicand is not positive")
    lam = sqrt(0.5 * base * base / rad_den)
    out_arr = np.empty((3, 3))
    cdef double[:, ::1] out = out_arr
    for r in range(3):
        out[r, 0] = lam * u1[r]
        out[r, 1] = lam * Z[r, 1]
        out[r, 2] = lam * Z[r, 2]
    k = 0.0
    for r in range(3):
        k += (out[r, 0] - out[r, 2]) * (out[r, 1] - out[r, 2])
    lam = sqrt(0.5 * base * base / k)
    for r in range(3):
        out[r, 0] *= lam
        out[r, 1] *= lam
        out[r, 2] *= lam
    return out_arr


cdef void _skew(const double[::1] w, double O[3][3]) noexcept nogil:
    O[0][0] = 0.0
    O[0][1] = -w[2]
    O[0][2] = w[1]
    O[1][0] = w[2]
    O[1][1] = 0.0
    O[1][2] = -w[0]
    O[2][0] = -w[1]
    O[2][1] = w[0]
    O[2][2] = 0.0


cdef void _fill_transition(const double[::1] a, const double[::1] w, double dt,
                           double[:, ::1] F) noexcept nogil:
    cdef double O[3][3]
    cdef double O2[3][3]
    cdef double Oa[3]
    cdef double h = 0.5 * dt * dt
    cdef int i, j, k
    _skew(w, O)
    _matmul3c(O, O, O2)
    for i in range(3):
        Oa[i] = O[i][0] * a[0] + O[i][1] * a[1] + O[i][2] * a[2]
    for i in range(15):
        for j in range(15):
            F[i, j] = 0.0
        F[i, i] = 1.0
    for i in range(3):
        F[i, 3 + i] = dt
        for k in range(3):
            # (a^T kron I) picks a_k for column block k
            F[i, 6 + 3 * k + i] = h * a[k]
            F[3 + i, 6 + 3 * k + i] = dt * a[k] + h * Oa[k]
    # C block: (O^T kron I) + (O^2 kron I); entry (3j+i, 3k+i) carries M[j, k]
    for j in range(3):
        for k in range(3):
            for i in range(3):
                F[6 + 3 * j + i, 6 + 3 * k + i] += dt * O[k][j] + h * O2[j][k]


def transition_matrix(const double[::1] a, const double[::1] w, double dt):
    F_arr = np.empty((15, 15))
    _fill_transition(a, w, dt, F_arr)
    return F_arr


cdef void _fill_input_jacobian(const double[::1] a, const double[::1] w,
                               const double[:, ::1] C, double dt,
                               double[:, ::1] Fu) noexcept nogil:
    cdef double O[3][3]
    cdef double Xi[3][3]
    cdef double D[3][3]
    cdef double h = 0.5 * dt * dt
    cdef double s, t
    cdef int i, j, k, n
    _skew(w, O)
    # Xi^T = -skew(a)
    Xi[0][0] = 0.0
    Xi[0][1] = a[2]
    Xi[0][2] = -a[1]
    Xi[1][0] = -a[2]
    Xi[1][1] = 0.0
    Xi[1][2] = a[0]
    Xi[2][0] = a[1]
    Xi[2][1] = -a[0]
    Xi[2][2] = 0.0
    for i in range(15):
        for j in range(6):
            Fu[i, j] = 0.0
    for i in range(3):
        for j in range(3):
            s = 0.0
            t = 0.0
            for k in range(3):
                s += C[i, k] * O[k][j]
                t += C[i, k] * Xi[k][j]
            Fu[i, j] = h * C[i, j]
            Fu[3 + i, j] = dt * C[i, j] + h * s
            Fu[3 + i, 3 + j] = h * t
    for n in range(3):
        # d(C Omega)/d w_n = C E_n, with E_n = skew(e_n)
        for i in range(3):
            for j in range(3):
                D[i][j] = 0.0
        if n == 0:
            D[1][2] = -1.0
            D[2][1] = 1.0
        elif n == 1:
            D[0][2] = 1.0
            D[2][0] = -1.0
        else:
            D[0][1] = -1.0
            D[1][0] = 1.0
        for i in range(3):
            for j in range(3):
                D[i][j] *= dt
        # d(Omega^2)/d w_n
        if n == 0:
            D[0][1] += h * w[1]
            D[0][2] += h * w[2]
            D[1][0] += h * w[1]
            D[1][1] += h * -2.0 * w[0]
            D[2][0] += h * w[2]
            D[2][2] += h * -2.0 * w[0]
        elif n == 1:
            D[0][0] += h * -2.0 * w[1]
            D[0][1] += h * w[0]
            D[1][0] += h * w[0]
            D[1][2] += h * w[2]
            D[2][1] += h * w[2]
            D[2][2] += h * -2.0 * w[1]
        else:
            D[0][0] += h * -2.0 * w[2]
            D[0][2] += h * w[0]
            D[1][1] += h * -2.0 * w[2]
            D[1][2] += h * w[1]
            D[2][0] += h * w[0]
            D[2][1] += h * w[1]
        # column = vec(C D), column-major
        for j in range(3):
            for i in range(3):
                s = 0.0
                for k in range(3):
                    s += C[i, k] * D[k][j]
                Fu[6 + 3 * j + i, 3 + n] = s


def input_jacobian(const double[::1] a, const double[::1] w, C, double dt):
    Fu_arr = np.empty((15, 6))
    cdef double[:, ::1] Cv = np.ascontiguousarray(C, dtype=np.float64)
    _fill_input_jacobian(a, w, Cv, dt, Fu_arr)
    return Fu_arr


def ekf_predict(const double[::1] x, const double[:, ::1] P, const double[::1] a,
                const double[::1] w, const double[::1] q, double dt, double jitter):
    cdef double[:, ::1] F = np.empty((15, 15))
    cdef double[:, ::1] Fu = np.empty((15, 6))
    cdef double[:, ::1] C = np.empty((3, 3))
    cdef double[:, ::1] T = np.empty((15, 15))
    xn_arr = np.empty(15)
    Pn_arr = np.empty((15, 15))
    cdef double[::1] xn = xn_arr
    cdef double[:, ::1] Pn = Pn_arr
    cdef int i, j, k
    cdef double s
    for j in range(3):
        for i in range(3):
            C[i, j] = x[6 + 3 * j + i]
    _fill_transition(a, w, dt, F)
    _fill_input_jacobian(a, w, C, dt, Fu)
    for i in range(15):
        s = 0.0
        for k in range(15):
            s += F[i, k] * x[k]
        xn[i] = s
    # T = F P
    for i in range(15):
        for j in range(15):
            s = 0.0
            for k in range(15):
                if F[i, k] != 0.0:
                    s += F[i, k] * P[k, j]
            T[i, j] = s
    # Pn = T F^T + Fu diag(q) Fu^T
    for i in range(15):
        for j in range(i, 15):
            s = 0.0
            for k in range(15):
                s += T[i, k] * F[j, k]
            for k in range(6):
                s += Fu[i, k] * q[k] * Fu[j, k]
            Pn[i, j] = s
    for i in range(15):
        for j in range(i):
            Pn[i, j] = Pn[j, i]
    # symmetrize (upper triangle computed, mirrored)
    for i in range(6, 15):
        Pn[i, i] += jitter
    return xn_arr, Pn_arr


cdef int _chol3_solve(double A[3][3], double b[3], double x[3]) noexcept nogil:
    cdef double L00, L10, L11, L20, L21, L22, y0, y1, y2, t
    t = A[0][0]
    if not t > 0.0:
        return 1
    L00 = sqrt(t)
    L10 = A[1][0] / L00
    L20 = A[2][0] / L00
    t = A[1][1] - L10 * L10
    if not t > 0.0:
        return 1
    L11 = sqrt(t)
    L21 = (A[2][1] - L20 * L10) / L11
    t = A[2][2] - L20 * L20 - L21 * L21
    if not t > 0.0:
        return 1
    L22 = sqrt(t)
    y0 = b[0] / L00
    y1 = (b[1] - L10 * y0) / L11
    y2 = (b[2] - L20 * y0 - L21 * y1) / L22
    x[2] = y2 / L22
    x[1] = (y1 - L21 * x[2]) / L11
    x[0] = (y0 - L10 * x[1] - L20 * x[2]) / L00
    return 0


def gn_receiver(const double[:, ::1] B, const double[::1] y, p0, int max_iter,
                double xtol, double damping):
    """Gauss-Newton on one receiver's residual ``B p - |p|^2/2 - y``.

    Returns ``(p, iterations, cost, grad_norm)``.
    """
    cdef Py_ssize_t m = B.shape[0]
    cdef double p[3]
    cdef double g[3]
    cdef double step[3]
    cdef double JtJ[3][3]
    cdef double e, half_sq, tr, mu, ns, npn, f
    cdef double Jr[3]
    cdef int it = 0, r, c, failed
    cdef Py_ssize_t j
    p[0] = p0[0]
    p[1] = p0[1]
    p[2] = p0[2]
    for it in range(1, max_iter + 1):
        half_sq = 0.5 * (p[0] * p[0] + p[1] * p[1] + p[2] * p[2])
        for r in range(3):
            g[r] = 0.0
            for c in range(3):
                JtJ[r][c] = 0.0
        for j in range(m):
            e = B[j, 0] * p[0] + B[j, 1] * p[1] + B[j, 2] * p[2] - half_sq - y[j]
            for r in range(3):
                Jr[r] = B[j, r] - p[r]
            for r in range(3):
                g[r] += Jr[r] * e
                for c in range(3):
                    JtJ[r][c] += Jr[r] * Jr[c]
        for r in range(3):
            g[r] = -g[r]
        failed = _chol3_solve(JtJ, g, step)
        if not failed:
            for r in range(3):
                if step[r] != step[r] or fabs(step[r]) == float("inf"):
                    failed = 1
        if failed:
            tr = JtJ[0][0] + JtJ[1][1] + JtJ[2][2]
            mu = damping * (tr if tr > 1.0 else 1.0)
            for r in range(3):
                JtJ[r][r] += mu
            if _chol3_solve(JtJ, g, step):
                # damped system still indefinite: fall back to numpy's LU
                sol = np.linalg.solve(
                    np.array([[JtJ[0][0], JtJ[0][1], JtJ[0][2]],
                              [JtJ[1][0], JtJ[1][1], JtJ[1][2]],
                              [JtJ[2][0], JtJ[2][1], JtJ[2][2]]]),
                    np.array([g[0], g[1], g[2]]))
                step[0] = sol[0]
                step[1] = sol[1]
                step[2] = sol[2]
        for r in range(3):
            p[r] += step[r]
        ns = sqrt(step[0] * step[0] + step[1] * step[1] + step[2] * step[2])
        npn = sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2])
        if ns <= xtol * (1.0 + npn):
            break
    half_sq = 0.5 * (p[0] * p[0] + p[1] * p[1] + p[2] * p[2])
    f = 0.0
    for r in range(3):
        g[r] = 0.0
    for j in range(m):
        e = B[j, 0] * p[0] + B[j, 1] * p[1] + B[j, 2] * p[2] - half_sq - y[j]
        f += e * e
        for r in range(3):
            g[r] += 2.0 * (B[j, r] - p[r]) * e
    return (np.array([p[0], p[1], p[2]]), it, f,
            sqrt(g[0] * g[0] + g[1] * g[1] + g[2] * g[2]))
