"""Decomposition losses and the distance-based soft assignment.

The assignment ``M`` is an ``(N, P)`` row-stochastic array; there is no wrapper
type, ``check_assignment`` validates one.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import logsumexp

from .geometry import PointCloud, Superquadric, radial_distance, sample_surface

BCE_CLAMP = 1e-7


def _positions(pc) -> np.ndarray:
    return pc.positions if isinstance(pc, PointCloud) else np.asarray(pc, dtype=float)


def check_assignment(M, n_points=None, n_prims=None) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise ValueError(f"assignment must be 2-D, got shape {M.shape}")
    if n_points is not None and M.shape[0] != n_points:
        raise ValueError(f"assignment has {M.shape[0]} rows, expected {n_points}")
    if n_prims is not None and M.shape[1] != n_prims:
        raise ValueError(f"assignment has {M.shape[1]} columns, expected {n_prims}")
    return M


def radial_distance_matrix(pc, sqs: Sequence[Superquadric]) -> np.ndarray:
    X = _positions(pc)
    return np.stack([radial_distance(sq, X) for sq in sqs], axis=1)


def soft_assign(pc, sqs: Sequence[Superquadric], beta: float) -> np.ndarray:
    """Row-wise softmax of ``-beta * radial_distance``."""
    if len(sqs) == 0:
        raise ValueError("soft_assign needs at least one superquadric")
    if beta <= 0:
        raise ValueError("beta must be positive")
    logits = -beta * radial_distance_matrix(pc, sqs)
    return np.exp(logits - logsumexp(logits, axis=1, keepdims=True))


def sample_all(sqs, S) -> list[np.ndarray]:
    return [sample_surface(sq, S) for sq in sqs]


def pc_to_sq_distances(X, samples: Sequence[np.ndarray]) -> np.ndarray:
    """(N, P) matrix of nearest-sample distances per primitive."""
    return np.stack([cKDTree(s).query(X)[0] for s in samples], axis=1)


def loss_pc_to_sq(pc, sqs, M, S: int = 4096, samples=None) -> float:
    X = _positions(pc)
    M = check_assignment(M, len(X), len(sqs))
    if samples is None:
        samples = sample_all(sqs, S)
    D = pc_to_sq_distances(X, samples)
    return float(np.sum(M * D) / len(X))


def loss_sq_to_pc(pc, sqs, existence, S: int = 4096, samples=None, tree=None) -> float:
    X = _positions(pc)
    alpha = np.asarray(existence, dtype=float)
    if alpha.shape != (len(sqs),):
        raise ValueError("need one existence value per superquadric")
    if np.any(alpha < 0):
        raise ValueError("existence weights must be non-negative")
    if alpha.sum() <= 0:
        raise ValueError("no active primitives: existence weights sum to zero")
    if samples is None:
        samples = sample_all(sqs, S)
    tree = tree or cKDTree(X)
    total = 0.0
    n_samples = 0
    for a, s in zip(alpha, samples):
        n_samples = len(s)
        if a > 0:
            total += a * tree.query(s)[0].sum()
    return float(total / (n_samples * alpha.sum()))


def column_mass(M) -> np.ndarray:
    """Fraction of points per primitive (column sums over N)."""
    M = check_assignment(M)
    return M.sum(axis=0) / M.shape[0]


def loss_parsimony(M, n_prims=None) -> float:
    """Squared mean of ``sqrt(column mass) / P``.

    ``n_prims`` overrides P when pruned columns have been dropped from ``M``;
    they contribute zero mass.
    """
    m = column_mass(M)
    P = n_prims or len(m)
    return float((np.sum(np.sqrt(m)) / P**2) ** 2)


def existence_from_assignment(M, eps_exist: float) -> np.ndarray:
    """A primitive exists when its expected point count exceeds ``eps_exist``."""
    if eps_exist < 0:
        raise ValueError("eps_exist must be non-negative")
    return check_assignment(M).sum(axis=0) > eps_exist


def loss_existence(alpha, alpha_hat) -> float:
    alpha = np.asarray(alpha, dtype=float)
    target = np.asarray(alpha_hat, dtype=float)
    if alpha.shape != target.shape:
        raise ValueError(f"length mismatch: {alpha.shape} vs {target.shape}")
    p = np.clip(alpha, BCE_CLAMP, 1 - BCE_CLAMP)
    bce = -(target * np.log(p) + (1 - target) * np.log1p(-p))
    return float(np.mean(bce))


@dataclass
class LossBreakdown:
    pc_to_sq: float
    sq_to_pc: float
    parsimony: float
    existence: float
    lambda_par: float
    lambda_exist: float

    @property
    def total(self) -> float:
        return (self.pc_to_sq + self.sq_to_pc + self.lambda_par * self.parsimony
                + self.lambda_exist * self.existence)

    def as_dict(self) -> dict:
        return {
            "pc_to_sq": self.pc_to_sq,
            "sq_to_pc": self.sq_to_pc,
            "parsimony": self.parsimony,
            "existence": self.existence,
            "lambda_par": self.lambda_par,
            "lambda_exist": self.lambda_exist,
            "total": self.total,
        }


def total_objective(pc, sqs, M, alpha, lambda_par=0.6, lambda_exist=0.01, S=4096,
                    eps_exist=24.0, n_prims=None) -> LossBreakdown:
    X = _positions(pc)
    samples = sample_all(sqs, S)
    M = check_assignment(M, len(X), len(sqs))
    return LossBreakdown(
        pc_to_sq=loss_pc_to_sq(X, sqs, M, samples=samples),
        sq_to_pc=loss_sq_to_pc(X, sqs, alpha, samples=samples),
        parsimony=loss_parsimony(M, n_prims),
        existence=loss_existence(alpha, existence_from_assignment(M, eps_exist)),
        lambda_par=lambda_par,
        lambda_exist=lambda_exist,
    )
