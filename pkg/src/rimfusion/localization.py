"""Range-based localization of the receiver triangle.

Three interchangeable solvers minimize the linearized range cost

    f(P) = sum_i || B p_i - |p_i|^2 / 2 - y_i ||^2,     y_i = (b^2 - r_i^2) / 2,

Riemannian steepest descent (:func:`rsd_solve`) and Riemannian trust region
(:func:`rtr_solve`) stay on the isosceles-triangle manifold, while
:func:`gn_solve` runs an unconstrained Gauss-Newton per receiver.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from ._core import kernels
from .errors import (
    DegenerateTriangle,
    NonFiniteCost,
    PoleEncountered,
    SingularNormalEquations,
)
from .manifold import ManifoldParams, retract_nearest

__all__ = [
    "BeaconSet",
    "RangeSet",
    "Pose",
    "SolverOptions",
    "SolverReport",
    "corner_beacons",
    "triangle_offsets",
    "linearize_targets",
    "cost",
    "euclidean_gradient",
    "euclidean_hessian",
    "rsd_solve",
    "rtr_solve",
    "gn_solve",
    "centroid_orientation",
    "vertices_from_pose",
]


@dataclass(frozen=True)
class BeaconSet:
    """Beacon positions, one per row of ``B`` (meters)."""

    B: np.ndarray

    def __post_init__(self):
        B = np.array(self.B, dtype=float)
        if B.ndim != 2 or B.shape[1] != 3 or B.shape[0] < 1:
            raise ValueError(f"beacon matrix must be (m, 3), got {B.shape}")
        if not np.all(np.isfinite(B)):
            raise ValueError("beacon coordinates must be finite")
        B.setflags(write=False)
        object.__setattr__(self, "B", B)
        if B.shape[0] >= 3:
            spread = np.linalg.svd(B[1:] - B[0], compute_uv=False)
            if spread[1] <= 1e-9 * max(spread[0], 1e-300):
                warnings.warn("beacons are collinear; trilateration is ill-posed", stacklevel=2)

    @property
    def count(self) -> int:
        return self.B.shape[0]

    def subset(self, mask) -> "BeaconSet":
        return BeaconSet(self.B[np.asarray(mask, dtype=bool)])


@dataclass(frozen=True)
class RangeSet:
    """Receiver-to-beacon distances with line-of-sight flags.

    Parameters
    ----------
    r : (3, m) array
        ``r[i, j]`` is the distance from receiver ``i`` to beacon ``j``.
    los : (m,) bool array
        True where beacon ``j`` is in line of sight.
    """

    r: np.ndarray
    los: np.ndarray = None

    def __post_init__(self):
        r = np.array(self.r, dtype=float)
        if r.ndim != 2 or r.shape[0] != 3:
            raise ValueError(f"range matrix must be (3, m), got {r.shape}")
        los = np.ones(r.shape[1], dtype=bool) if self.los is None else np.array(self.los, dtype=bool)
        if los.shape != (r.shape[1],):
            raise ValueError("one LOS flag per beacon is required")
        r.setflags(write=False)
        los.setflags(write=False)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "los", los)

    def gated(self, beacons: BeaconSet):
        """Drop non-line-of-sight beacons; returns ``(BeaconSet, RangeSet)``."""
        return beacons.subset(self.los), RangeSet(self.r[:, self.los])


@dataclass(frozen=True)
class Pose:
    """Centroid position ``p`` and body-to-navigation rotation ``C``."""

    p: np.ndarray
    C: np.ndarray


@dataclass(frozen=True)
class SolverOptions:
    """Tuning knobs shared by the three solvers.

    ``max_iters=None`` picks 200 for steepest descent and 50 for trust region.
    ``delta0``/``delta_max`` default to ``d`` and ``10 d``.  With
    ``local_frame`` the Riemannian solvers work in coordinates whose origin
    is the starting position of vertex 3, which keeps the origin-centred
    scaling retraction well conditioned anywhere in the room.
    """

    gtol: float = 1e-8
    max_iters: int | None = None
    ftol: float = 1e-12
    c1: float = 1e-4
    c2: float = 0.9
    max_linesearch: int = 50
    delta0: float | None = None
    delta_max: float | None = None
    tcg_kappa: float = 0.1
    tcg_theta: float = 0.5
    pole_tol: float = 1e-3
    gn_max_iters: int = 50
    gn_xtol: float = 1e-12
    gn_damping: float = 1e-9
    local_frame: bool = True


@dataclass
class SolverReport:
    """Outcome of one solve.

    ``history`` holds the cost of every accepted iterate (including the
    start) and ``max_residual`` the largest constraint residual seen along
    the way.
    """

    P: np.ndarray
    iterations: int
    final_cost: float
    final_grad_norm: float
    converged: bool
    history: list = field(default_factory=list)
    max_residual: float = 0.0


def corner_beacons(room=(10.0, 5.0, 3.0)) -> BeaconSet:
    """Beacons at the four upper corners of an axis-aligned room."""
    x, y, z = room
    return BeaconSet(np.array([[0.0, 0.0, z], [x, 0.0, z], [x, y, z], [0.0, y, z]]))


def triangle_offsets(d: float) -> np.ndarray:
    """Body-frame centroid-to-vertex offsets, one vertex per column."""
    s3 = math.sqrt(3.0)
    return np.array(
        [[s3 * d / 3, -s3 * d / 6, -s3 * d / 6], [0.0, d / 2, -d / 2], [0.0, 0.0, 0.0]]
    )


def _beacon_matrix(beacons) -> np.ndarray:
    B = beacons.B if isinstance(beacons, BeaconSet) else beacons
    return np.ascontiguousarray(B, dtype=np.float64)


def _range_matrix(ranges) -> np.ndarray:
    r = ranges.r if isinstance(ranges, RangeSet) else ranges
    return np.asarray(r, dtype=np.float64)


def linearize_targets(beacons, ranges) -> np.ndarray:
    """Targets ``y_i = (|b_j|^2 - r_ij^2) / 2`` as a (3, m) array."""
    B = _beacon_matrix(beacons)
    r = _range_matrix(ranges)
    return np.ascontiguousarray(0.5 * (np.sum(B * B, axis=1)[None, :] - r * r))


def cost(P, beacons, Y) -> float:
    """Summed squared residual of the linearized range equations."""
    return kernels.cost(np.ascontiguousarray(P, dtype=float), _beacon_matrix(beacons), np.ascontiguousarray(Y))


def euclidean_gradient(P, beacons, Y) -> np.ndarray:
    return kernels.cost_egrad(np.ascontiguousarray(P, dtype=float), _beacon_matrix(beacons), np.ascontiguousarray(Y))[1]


def euclidean_hessian(P, beacons, Y, V) -> np.ndarray:
    """Euclidean Hessian of :func:`cost` applied to ``V``."""
    return kernels.ehess(
        np.ascontiguousarray(P, dtype=float),
        _beacon_matrix(beacons),
        np.ascontiguousarray(Y),
        np.ascontiguousarray(V, dtype=float),
    )


class _Problem:
    """Cost, gradients and retraction bundled for the Riemannian solvers."""

    def __init__(self, beacons, ranges, P0, params, opts):
        P0 = np.asarray(P0, dtype=float)
        self.origin = P0[:, 2].copy() if opts.local_frame else np.zeros(3)
        self.B = _beacon_matrix(beacons) - self.origin
        self.Y = linearize_targets(self.B, ranges)
        self.params = params
        self.base = params.base_length
        self.opts = opts
        self.max_residual = 0.0

    def evaluate(self, P):
        f, G = kernels.cost_egrad(P, self.B, self.Y)
        if not math.isfinite(f):
            raise NonFiniteCost(f"cost evaluated to {f}")
        g, a, b = kernels.tangent_project(P, G)
        return f, G, g, a, b

    def retract(self, P, xi, eta):
        Z = P + eta * xi
        try:
            out = kernels.retract_scaling(Z, self.base, self.opts.pole_tol)
        except PoleEncountered:
            out = kernels.retract_nearest(Z, self.base)
        return out

    def track(self, P):
        e12 = P[:, 0] - P[:, 1]
        e23 = P[:, 1] - P[:, 2]
        e13 = P[:, 0] - P[:, 2]
        rhs = self.params.rhs
        res = max(abs(float(e12 @ e23) + rhs), abs(float(e13 @ e23) - rhs))
        if res > self.max_residual:
            self.max_residual = res


def _inner(X, Y):
    return float(np.vdot(X, Y))


def _stop_tol(opts, f):
    return opts.gtol * max(1.0, f)


def rsd_solve(beacons, ranges, P0, params: ManifoldParams, opts: SolverOptions | None = None):
    """Riemannian steepest descent with a weak-Wolfe line search.

    Parameters
    ----------
    beacons : BeaconSet or (m, 3) array
    ranges : RangeSet or (3, m) array
    P0 : (3, 3) array
        Feasible starting point.
    params : ManifoldParams
    opts : SolverOptions, optional

    Returns
    -------
    SolverReport
    """
    opts = opts or SolverOptions()
    max_iters = 200 if opts.max_iters is None else opts.max_iters
    prob = _Problem(beacons, ranges, P0, params, opts)
    P = np.ascontiguousarray(np.asarray(P0, dtype=float) - prob.origin[:, None])
    prob.track(P)
    f, _, g, _, _ = prob.evaluate(P)
    gnorm = math.sqrt(_inner(g, g))
    history = [f]
    eta_prev = None
    it = 0
    converged = gnorm <= _stop_tol(opts, f)
    while not converged and it < max_iters:
        xi = -g / gnorm
        slope = -gnorm
        lo, hi = 0.0, math.inf
        eta = 1.0 if eta_prev is None else min(1.0, 2.0 * eta_prev)
        best = None
        for _ in range(opts.max_linesearch):
            Pn = prob.retract(P, xi, eta)
            fn, _, gn, _, _ = prob.evaluate(Pn)
            if fn > f + opts.c1 * eta * slope:
                hi = eta
                eta = 0.5 * (lo + hi)
                continue
            best = (eta, Pn, fn, gn)
            if _inner(gn, xi) < opts.c2 * slope:
                lo = eta
                eta = 2.0 * eta if math.isinf(hi) else 0.5 * (lo + hi)
                continue
            break
        if best is None:
            break
        eta_prev, Pn, fn, gn = best
        it += 1
        decrease = f - fn
        P, f, g = Pn, fn, gn
        prob.track(P)
        history.append(f)
        gnorm = math.sqrt(_inner(g, g))
        converged = gnorm <= _stop_tol(opts, f)
        if decrease <= opts.ftol * f:
            break
    return SolverReport(P + prob.origin[:, None], it, f, gnorm, converged, history, prob.max_residual)


def _truncated_cg(prob, P, G, g, a, b, delta, opts):
    """Steihaug-Toint truncated CG on the tangent-space quadratic model."""
    B, Y = prob.B, prob.Y

    def hess(v):
        return kernels.rhess(P, G, a, b, v, kernels.ehess(P, B, Y, v))[0]

    eta = np.zeros((3, 3))
    Heta = np.zeros((3, 3))
    r = g.copy()
    rr = _inner(r, r)
    r0 = math.sqrt(rr)
    tol = r0 * min(opts.tcg_kappa, r0 ** opts.tcg_theta)
    d = -r
    for _ in range(20):
        Hd = hess(d)
        dHd = _inner(d, Hd)
        alpha = rr / dHd if dHd > 0 else math.inf
        ee = _inner(eta, eta)
        en = _inner(eta + alpha * d, eta + alpha * d) if math.isfinite(alpha) else math.inf
        if dHd <= 0 or en >= delta * delta:
            # step to the trust-region boundary along d
            ed = _inner(eta, d)
            dd = _inner(d, d)
            tau = (-ed + math.sqrt(ed * ed + dd * (delta * delta - ee))) / dd
            return eta + tau * d, Heta + tau * Hd
        eta = eta + alpha * d
        Heta = Heta + alpha * Hd
        r = r + alpha * Hd
        rr_new = _inner(r, r)
        if math.sqrt(rr_new) <= tol:
            break
        d = -r + (rr_new / rr) * d
        rr = rr_new
    return eta, Heta


def rtr_solve(beacons, ranges, P0, params: ManifoldParams, opts: SolverOptions | None = None):
    """Riemannian trust-region method with a truncated-CG inner solver.

    Steps with ``rho < 1/4`` are rejected and the radius is halved; steps
    with ``rho > 3/4`` are accepted and the radius doubled up to
    ``delta_max``; anything in between is accepted with the radius held.
    """
    opts = opts or SolverOptions()
    max_iters = 50 if opts.max_iters is None else opts.max_iters
    delta = params.d if opts.delta0 is None else opts.delta0
    delta_max = 10.0 * params.d if opts.delta_max is None else opts.delta_max
    prob = _Problem(beacons, ranges, P0, params, opts)
    P = np.ascontiguousarray(np.asarray(P0, dtype=float) - prob.origin[:, None])
    prob.track(P)
    f, G, g, a, b = prob.evaluate(P)
    gnorm = math.sqrt(_inner(g, g))
    history = [f]
    it = 0
    converged = gnorm <= _stop_tol(opts, f)
    eps = np.finfo(float).eps
    while not converged and it < max_iters:
        it += 1
        eta, Heta = _truncated_cg(prob, P, G, g, a, b, delta, opts)
        Pn = prob.retract(P, eta, 1.0)
        fn, Gn, gn, an, bn = prob.evaluate(Pn)
        model_dec = -(_inner(g, eta) + 0.5 * _inner(eta, Heta))
        reg = max(1.0, abs(f)) * eps * 1e3
        rho = (f - fn + reg) / (model_dec + reg)
        if rho < 0.25:
            delta *= 0.5
            if delta <= 1e-12 * params.d:
                break
            continue
        if rho > 0.75:
            delta = min(2.0 * delta, delta_max)
        decrease = f - fn
        P, f, G, g, a, b = Pn, fn, Gn, gn, an, bn
        prob.track(P)
        history.append(f)
        gnorm = math.sqrt(_inner(g, g))
        converged = gnorm <= _stop_tol(opts, f)
        if decrease <= opts.ftol * f and not converged:
            break
    return SolverReport(P + prob.origin[:, None], it, f, gnorm, converged, history, prob.max_residual)


def gn_solve(beacons, ranges, P0, opts: SolverOptions | None = None):
    """Unconstrained Gauss-Newton, run independently for each receiver.

    Raises
    ------
    SingularNormalEquations
        If fewer than three beacons are given or the normal equations are
        rank deficient at the solution.
    """
    opts = opts or SolverOptions()
    B = _beacon_matrix(beacons)
    Y = linearize_targets(B, ranges)
    if B.shape[0] < 3:
        raise SingularNormalEquations(f"{B.shape[0]} beacons cannot fix a 3-D position")
    P0 = np.asarray(P0, dtype=float)
    P = np.empty((3, 3))
    total = 0.0
    gsq = 0.0
    iters = 0
    for i in range(3):
        p, k, fi, gi = kernels.gn_receiver(
            B, np.ascontiguousarray(Y[i]), np.ascontiguousarray(P0[:, i]),
            opts.gn_max_iters, opts.gn_xtol, opts.gn_damping,
        )
        sv = np.linalg.svd(B - p[None, :], compute_uv=False)
        if not sv[-1] > 1e-9 * sv[0]:
            raise SingularNormalEquations(f"receiver {i + 1}: normal equations are rank deficient")
        P[:, i] = p
        total += fi
        gsq += gi * gi
        iters = max(iters, k)
    gnorm = math.sqrt(gsq)
    return SolverReport(P, iters, total, gnorm, gnorm <= _stop_tol(opts, total), [total])


def centroid_orientation(P, tol: float = 1e-12) -> Pose:
    """Centroid and orientation of a vertex triangle.

    The x axis points from the centroid to vertex 1, the y axis is the part
    of the centroid-to-vertex-2 direction orthogonal to x, and z completes a
    right-handed frame.

    Raises
    ------
    DegenerateTriangle
        If vertex 1 sits on the centroid or the triangle is collinear.
    """
    P = np.asarray(P, dtype=float)
    pc = P.mean(axis=1)
    x = P[:, 0] - pc
    nx = math.sqrt(float(x @ x))
    if nx <= tol:
        raise DegenerateTriangle("vertex 1 coincides with the centroid")
    x /= nx
    y = P[:, 1] - pc
    ny0 = math.sqrt(float(y @ y))
    y -= (y @ x) * x
    ny = math.sqrt(float(y @ y))
    if ny <= tol or ny <= 1e-9 * ny0:
        raise DegenerateTriangle("vertices are collinear")
    y /= ny
    z = np.cross(x, y)
    return Pose(pc, np.column_stack((x, y, z)))


def vertices_from_pose(pose: Pose, params: ManifoldParams) -> np.ndarray:
    """Vertex matrix ``[p, p, p] + C D`` of a pose."""
    return np.asarray(pose.p, dtype=float)[:, None] + np.asarray(pose.C, dtype=float) @ triangle_offsets(params.d)


def default_options(**overrides) -> SolverOptions:
    return replace(SolverOptions(), **overrides)
