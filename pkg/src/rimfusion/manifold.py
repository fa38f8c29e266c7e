"""Isosceles-triangle manifold of three rigidly mounted receivers.

A point is a 3x3 matrix ``P`` whose columns are the vertex positions.  It lies
on the manifold when

    <p1 - p2, p2 - p3> = -c d^2      and      <p1 - p3, p2 - p3> = c d^2,

with ``c = apex_angle_cos`` (0.5 for the equilateral array).  Together the two
constraints fix the base ``|p2 - p3|`` and put vertex 1 on the perpendicular
bisector of the base.  All inner products are the trace inner product and all
norms are Frobenius.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._core import kernels
from .errors import PoleEncountered

__all__ = [
    "ManifoldParams",
    "CorrectionCoefficients",
    "skew",
    "constraint_residuals",
    "is_on_manifold",
    "u_matrix",
    "s_matrix",
    "solve_correction",
    "tangent_project",
    "riemannian_gradient",
    "riemannian_hessian",
    "retract_scaling",
    "retract_nearest",
    "retract",
]

MEMBERSHIP_TOL = 1e-9


@dataclass(frozen=True)
class ManifoldParams:
    """Geometry of the receiver triangle.

    Parameters
    ----------
    d : float
        Side length in meters.
    apex_angle_cos : float
        Cosine term of the constraints.  0.5 gives an equilateral triangle.
    """

    d: float
    apex_angle_cos: float = 0.5

    def __post_init__(self):
        if not (math.isfinite(self.d) and self.d > 0):
            raise ValueError(f"side length must be positive, got {self.d!r}")
        if not 0.0 < self.apex_angle_cos < 1.0:
            raise ValueError("apex_angle_cos must lie in (0, 1)")

    @property
    def base_length(self) -> float:
        """Length of the p2-p3 edge implied by the constraints."""
        return self.d * math.sqrt(2.0 * self.apex_angle_cos)

    @property
    def rhs(self) -> float:
        """Right-hand side ``c d^2`` of the constraints."""
        return self.apex_angle_cos * self.d * self.d


@dataclass(frozen=True)
class CorrectionCoefficients:
    """Normal-space coordinates and their directional derivatives."""

    alpha: float
    beta: float
    alpha_dot: float = 0.0
    beta_dot: float = 0.0


def _as_mat(X) -> np.ndarray:
    return np.ascontiguousarray(X, dtype=np.float64).reshape(3, 3)


def skew(omega) -> np.ndarray:
    """Cross-product matrix, ``skew(w) @ v == np.cross(w, v)``."""
    wx, wy, wz = (float(c) for c in omega)
    return np.array([[0.0, -wz, wy], [wz, 0.0, -wx], [-wy, wx, 0.0]])


def constraint_residuals(P, params: ManifoldParams) -> np.ndarray:
    """Return the two constraint residuals of ``P``; both vanish on the manifold."""
    P = np.asarray(P, dtype=float)
    p1, p2, p3 = P[:, 0], P[:, 1], P[:, 2]
    return np.array(
        [(p1 - p2) @ (p2 - p3) + params.rhs, (p1 - p3) @ (p2 - p3) - params.rhs]
    )


def is_on_manifold(P, params: ManifoldParams, tol: float = MEMBERSHIP_TOL) -> bool:
    """Membership test with a scale-aware tolerance ``tol * d**2``."""
    res = constraint_residuals(P, params)
    return bool(np.all(np.abs(res) <= tol * params.d * params.d))


def u_matrix(alpha: float, beta: float) -> np.ndarray:
    """Symmetric matrix ``U`` whose image ``P U`` spans the normal space."""
    s = alpha + beta
    t = alpha - beta
    return np.array([[0.0, s, -s], [s, -2.0 * alpha, t], [-s, t, 2.0 * beta]])


def s_matrix(P) -> np.ndarray:
    """Gram matrix of ``P U(1, 0)`` and ``P U(0, 1)``."""
    return kernels.s_matrix(_as_mat(P))


def solve_correction(P, G) -> CorrectionCoefficients:
    """Normal-space coordinates ``(alpha, beta)`` of ``G`` at ``P``.

    Raises
    ------
    SingularGeometry
        If the Gram matrix is singular (collinear vertices).
    """
    a, b = kernels.correction(_as_mat(P), _as_mat(G))
    return CorrectionCoefficients(a, b)


def tangent_project(P, Z) -> np.ndarray:
    """Orthogonal projection of ``Z`` onto the tangent space at ``P``."""
    out, _, _ = kernels.tangent_project(_as_mat(P), _as_mat(Z))
    return out


def riemannian_gradient(P, egrad) -> np.ndarray:
    """Riemannian gradient from the Euclidean one."""
    return tangent_project(P, egrad)


def riemannian_hessian(P, xi, egrad, ehess_xi, return_coefficients=False):
    """Riemannian Hessian applied to the tangent vector ``xi``.

    Parameters
    ----------
    P : (3, 3) array
    xi : (3, 3) array
        Tangent vector at ``P``.
    egrad : (3, 3) array
        Euclidean gradient at ``P``.
    ehess_xi : (3, 3) array
        Euclidean Hessian applied to ``xi``.
    return_coefficients : bool
        Also return the :class:`CorrectionCoefficients` used.

    Returns
    -------
    ndarray or (ndarray, CorrectionCoefficients)
    """
    P = _as_mat(P)
    G = _as_mat(egrad)
    a, b = kernels.correction(P, G)
    out, ad, bd = kernels.rhess(P, G, a, b, _as_mat(xi), _as_mat(ehess_xi))
    if return_coefficients:
        return out, CorrectionCoefficients(a, b, ad, bd)
    return out


def retract_scaling(P, xi, eta: float, params: ManifoldParams, pole_tol: float = 1e-3):
    """Scaling retraction of ``P + eta * xi``.

    Vertex 1 is rescaled by ``gamma`` so that the triangle becomes isosceles,
    then the whole matrix is scaled about the origin to fix the base.

    Raises
    ------
    PoleEncountered
        If ``z1`` is (relatively) orthogonal to the base or the scaling
        radicand is not positive.
    """
    Z = _as_mat(np.asarray(P, dtype=float) + eta * np.asarray(xi, dtype=float))
    return kernels.retract_scaling(Z, params.base_length, pole_tol)


def retract_nearest(Z, params: ManifoldParams) -> np.ndarray:
    """Project an arbitrary triangle onto the manifold.

    The triangle is centered, scaled about its centroid so the base has the
    right length, vertex 1 is slid parallel to the base until its median is
    perpendicular to the base, and the centroid is restored.

    Raises
    ------
    DegenerateBase
        If ``|z3 - z2| < 1e-9 d``.
    """
    return kernels.retract_nearest(_as_mat(Z), params.base_length)


def retract(P, xi, eta: float, params: ManifoldParams, pole_tol: float = 1e-3):
    """Scaling retraction with a fallback to :func:`retract_nearest` at poles."""
    try:
        return retract_scaling(P, xi, eta, params, pole_tol)
    except PoleEncountered:
        Z = np.asarray(P, dtype=float) + eta * np.asarray(xi, dtype=float)
        return retract_nearest(Z, params)

