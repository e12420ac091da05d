"""Levenberg-Marquardt refinement of individual superquadrics.

Each primitive is refined on its own residual vector: assignment-weighted
radial distances of the points, stacked with ``K`` coverage residuals measuring
how far surface samples lie from the point cloud.

Optimization happens in an unconstrained local chart (log scales, logistic
exponents, axis-angle increment on the current rotation, raw translation), so
every iterate is a valid superquadric.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import expit

from ._kernels import surface_points_batch, weighted_radial_batch
from .geometry import (
    EPS_MAX,
    EPS_MIN,
    PointCloud,
    Superquadric,
    matrix_to_quat,
    radial_distance,
    surface_angles,
    surface_points,
)

MIN_WEIGHT = 1e-3
MAX_POINTS = 1024
FD_STEP = 1e-6
MAX_DAMPING = 1e8


@dataclass
class LMSettings:
    max_iters: int = 30
    initial_damping: float = 1e-3
    damping_up: float = 2.0
    damping_down: float = 1.0 / 3.0
    param_tolerance: float = 1e-6
    residual_tolerance: float = 1e-10
    relative_tolerance: float = 1e-6

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if min(self.initial_damping, self.param_tolerance, self.residual_tolerance) <= 0:
            raise ValueError("damping and tolerances must be positive")
        if not self.damping_up > 1 > self.damping_down > 0:
            raise ValueError("need damping_up > 1 > damping_down > 0")


@dataclass
class RefineLog:
    costs: list = field(default_factory=list)
    stalled: bool = False
    iterations: int = 0


def _logit_exponent(e):
    u = (np.clip(e, EPS_MIN + 1e-9, EPS_MAX - 1e-9) - EPS_MIN) / (EPS_MAX - EPS_MIN)
    return np.log(u) - np.log1p(-u)


def _exponent_from_logit(z):
    return EPS_MIN + (EPS_MAX - EPS_MIN) * expit(z)


def _rodrigues(v):
    angle = np.linalg.norm(v)
    K = np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]])
    if angle < 1e-12:
        return np.eye(3) + K
    K = K / angle
    return np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * K @ K


def coverage_angles(sq: Superquadric, K: int):
    """Surface angles for ``K`` coverage samples, held fixed during one refine call."""
    if K >= 8:
        return surface_angles(sq, K)
    # the lattice needs 8 points; thin it evenly
    tm, tw = surface_angles(sq, 8)
    idx = np.linspace(0, 7, K).round().astype(int)
    return tm[idx], tw[idx]


def _rodrigues_batch(V):
    angle = np.linalg.norm(V, axis=1)
    safe = np.where(angle < 1e-12, 1.0, angle)
    K = np.zeros((len(V), 3, 3))
    K[:, 0, 1], K[:, 0, 2], K[:, 1, 2] = -V[:, 2], V[:, 1], -V[:, 0]
    K[:, 1, 0], K[:, 2, 0], K[:, 2, 1] = V[:, 2], -V[:, 1], V[:, 0]
    small = angle < 1e-12
    a = np.where(small, 1.0, np.sin(angle) / safe)
    b = np.where(small, 0.5, (1 - np.cos(angle)) / safe**2)
    return np.eye(3) + a[:, None, None] * K + b[:, None, None] * (K @ K)


class SuperquadricResidual:
    """Residual vector of one primitive as a function of its local chart.

    ``batch`` evaluates many parameter vectors at once; the finite-difference
    Jacobian uses it to perturb all coordinates in a single pass.
    """

    def __init__(self, sq: Superquadric, points, weights, tree, K=25):
        self.R0 = sq.rotation_matrix
        self.existence = sq.existence
        self.points = np.asarray(points, dtype=float)
        self.weights = np.asarray(weights, dtype=float)
        self.tree = tree
        self.theta_m, self.theta_w = coverage_angles(sq, K)
        self.x0 = np.concatenate([np.log(sq.scale), _logit_exponent(sq.exponents), np.zeros(3), sq.translation])

    def decode(self, p) -> Superquadric:
        R = _rodrigues(p[5:8]) @ self.R0
        return Superquadric(np.exp(p[0:3]), _exponent_from_logit(p[3:5]), matrix_to_quat(R), p[8:11], self.existence)

    def batch(self, ps) -> np.ndarray:
        ps = np.atleast_2d(ps)
        scale = np.exp(ps[:, 0:3])
        e1 = _exponent_from_logit(ps[:, 3])
        e2 = _exponent_from_logit(ps[:, 4])
        R = _rodrigues_batch(ps[:, 5:8]) @ self.R0
        t = np.ascontiguousarray(ps[:, 8:11])
        r_pts = weighted_radial_batch(self.points, self.weights, scale, e1, e2, R, t)
        cover = surface_points_batch(self.theta_m, self.theta_w, scale, e1, e2, R, t)
        r_cov = self.tree.query(cover)[0].reshape(len(ps), -1)
        return np.concatenate([r_pts, r_cov], axis=1)

    def __call__(self, p) -> np.ndarray:
        return self.batch(p[None])[0]

    def jacobian(self, p, r=None, step=FD_STEP) -> np.ndarray:
        out = self.batch(np.vstack([p, p + step * np.eye(len(p))]))
        r = out[0] if r is None else r
        return (out[1:] - r).T / step


def levenberg_marquardt(fun, x0, settings: LMSettings, jac=None):
    """Minimize ``||fun(x)||^2`` with Marquardt-scaled damping.

    Returns ``(x, log)``; ``log.costs`` lists the accepted sums of squares,
    starting with the initial cost.
    """
    jac = jac or (lambda x, r: _forward_jacobian(fun, x, r))
    x = np.asarray(x0, dtype=float).copy()
    r = fun(x)
    cost = float(r @ r)
    log = RefineLog(costs=[cost])
    lam = settings.initial_damping
    accepted_any = False
    for it in range(settings.max_iters):
        log.iterations = it + 1
        if cost < settings.residual_tolerance:
            break
        J = jac(x, r)
        A = J.T @ J
        g = J.T @ r
        diag = np.diag(A).copy()
        diag = np.maximum(diag, 1e-12 * max(diag.max(), 1e-12))
        step_taken = False
        converged = False
        while lam <= MAX_DAMPING:
            try:
                delta = np.linalg.solve(A + lam * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                lam *= settings.damping_up
                continue
            x_new = x + delta
            r_new = fun(x_new)
            cost_new = float(r_new @ r_new)
            if np.isfinite(cost_new) and cost_new < cost:
                rel = (cost - cost_new) / max(cost, 1e-300)
                x, r, cost = x_new, r_new, cost_new
                log.costs.append(cost)
                lam = max(lam * settings.damping_down, 1e-15)
                step_taken = accepted_any = True
                converged = np.max(np.abs(delta)) < settings.param_tolerance or rel < settings.relative_tolerance
                break
            lam *= settings.damping_up
        if not step_taken:
            log.stalled = not accepted_any
            break
        if converged:
            break
    return x, log


def _forward_jacobian(fun, x, r, step=FD_STEP):
    J = np.empty((len(r), len(x)))
    for k in range(len(x)):
        q = x.copy()
        q[k] += step
        J[:, k] = (fun(q) - r) / step
    return J


def residuals_point(sqs, pc, M) -> np.ndarray:
    """``r_ij = m_ij * radial_distance(sq_j, x_i)`` as an (N, P) matrix."""
    X = pc.positions if isinstance(pc, PointCloud) else np.asarray(pc, dtype=float)
    M = np.asarray(M, dtype=float)
    if M.shape != (len(X), len(sqs)):
        raise ValueError(f"assignment shape {M.shape} does not match ({len(X)}, {len(sqs)})")
    D = np.stack([radial_distance(sq, X) for sq in sqs], axis=1)
    return M * D


def residuals_coverage(sq: Superquadric, pc, K: int = 25, tree=None) -> np.ndarray:
    """Distance from each of ``K`` surface samples to its nearest cloud point."""
    X = pc.positions if isinstance(pc, PointCloud) else np.asarray(pc, dtype=float)
    if K < 1 or len(X) == 0:
        raise ValueError("need K >= 1 and a non-empty point cloud")
    tree = tree or cKDTree(X)
    return tree.query(surface_points(sq, *coverage_angles(sq, K)))[0]


def refine_one(sq: Superquadric, X, weights, settings: LMSettings, K=25, tree=None, max_points=MAX_POINTS):
    """Refine a single primitive; ``weights`` is its assignment column.

    At most ``max_points`` of the weighted points enter the residual.
    """
    tree = tree or cKDTree(X)
    keep = np.flatnonzero(weights > MIN_WEIGHT)
    w = weights[keep]
    if len(keep) > max_points:
        # even stride; scale up so the point block keeps its weight against coverage
        pick = np.linspace(0, len(keep) - 1, max_points).round().astype(int)
        w = w[pick] * np.sqrt(len(keep) / max_points)
        keep = keep[pick]
    res = SuperquadricResidual(sq, X[keep], w, tree, K)
    x, log = levenberg_marquardt(res, res.x0, settings, jac=res.jacobian)
    if log.stalled:
        return sq, log
    return res.decode(x), log


def refine(sqs, pc, M, settings: LMSettings | None = None, K: int = 25, threads: int = 1, tree=None):
    """Refine every primitive against its assignment column.

    Primitives with zero existence or no assigned mass are returned unchanged.
    Returns ``(refined, logs)`` with one :class:`RefineLog` per primitive.
    """
    settings = settings or LMSettings()
    X = pc.positions if isinstance(pc, PointCloud) else np.asarray(pc, dtype=float)
    M = np.asarray(M, dtype=float)
    if M.shape != (len(X), len(sqs)):
        raise ValueError(f"assignment shape {M.shape} does not match ({len(X)}, {len(sqs)})")
    tree = tree or cKDTree(X)

    def work(j):
        sq = sqs[j]
        if sq.existence <= 0 or not np.any(M[:, j] > MIN_WEIGHT):
            return sq, RefineLog()
        return refine_one(sq, X, M[:, j], settings, K, tree)

    if threads > 1 and len(sqs) > 1:
        with ThreadPoolExecutor(threads) as pool:
            out = list(pool.map(work, range(len(sqs))))
    else:
        out = [work(j) for j in range(len(sqs))]
    return [o[0] for o in out], [o[1] for o in out]
