"""Single-object decomposition into superquadrics.

Pipeline: normalize to the radius-0.5 ball, seed ``P`` primitives from a
k-means partition, then alternate soft assignment and LM refinement. After two
outer iterations, primitives whose expected point count does not
exceed ``eps_exist`` are pruned and adjacent primitives are greedily merged
while the parsimony-weighted objective decreases.

The raw parsimony term is at most ``1/P**3`` and cannot move a discrete model
choice against chamfer terms of order ``1e-2``. Merge decisions therefore use
it rescaled by ``P**3`` (range ``[1/P, 1]``); reported losses keep the raw value.
"""
from __future__ import annotations

import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .geometry import PointCloud, Superquadric, matrix_to_quat, sample_surface
from .lm_refine import LMSettings, refine, refine_one
from .losses import LossBreakdown, existence_from_assignment, soft_assign, total_objective

log = logging.getLogger(__name__)

HIERARCHY_MIN_POINTS = 32
MERGE_FIT_POINTS = 256
PRUNE_FROM = 2  # outer iterations run before pruning and merging start


@dataclass
class DecomposeConfig:
    P: int = 16
    S: int = 4096
    K: int = 25
    eps_exist: float = 24.0
    lambda_par: float = 0.6
    lambda_exist: float = 0.01
    beta: float = 20.0
    beta_growth: float = 1.5
    beta_max: float = 200.0
    outer_iters: int = 8
    lm: LMSettings = field(default_factory=LMSettings)
    hierarchy_depth: int = 1
    seed: int = 0
    max_points: int = 4096
    merge_radius: float = 0.05
    merge_lm_iters: int = 10
    kmeans_iters: int = 20

    def __post_init__(self):
        if isinstance(self.lm, dict):
            self.lm = LMSettings(**self.lm)
        if self.P < 1 or self.S < 8 or self.K < 1 or self.outer_iters < 1:
            raise ValueError("need P >= 1, S >= 8, K >= 1, outer_iters >= 1")
        if self.hierarchy_depth < 1:
            raise ValueError("hierarchy_depth must be >= 1")
        if self.beta <= 0 or self.beta_growth < 1:
            raise ValueError("beta must be positive and beta_growth >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DecomposeConfig":
        d = dict(d)
        lm = d.pop("lm", {})
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(lm=LMSettings(**lm), **known)


@dataclass
class Decomposition:
    superquadrics: list  # world frame
    assignment: Optional[np.ndarray]
    center: np.ndarray
    scale: float
    losses: Optional[LossBreakdown] = None
    iterations_run: int = 0
    fallback: bool = False

    @property
    def n_primitives(self) -> int:
        return len(self.superquadrics)

    def labels(self) -> np.ndarray:
        """Hard assignment, ties going to the lowest primitive index."""
        return np.argmax(self.assignment, axis=1)


def _positions(pc) -> np.ndarray:
    return pc.positions if isinstance(pc, PointCloud) else np.asarray(pc, dtype=float)


def normalize_object(pc):
    """Center on the bounding-box midpoint and scale into the radius-0.5 ball.

    Returns ``(normalized, center, scale)`` with ``normalized = (x - center) * scale``.
    """
    X = _positions(pc)
    center = 0.5 * (X.min(axis=0) + X.max(axis=0))
    radius = np.linalg.norm(X - center, axis=1).max()
    scale = 0.5 / radius if radius > 0 else 1.0
    return (X - center) * scale, center, float(scale)


def sq_to_world(sq: Superquadric, center, scale) -> Superquadric:
    return sq.with_(scale=sq.scale / scale, translation=sq.translation / scale + center)


def sq_to_normalized(sq: Superquadric, center, scale) -> Superquadric:
    return sq.with_(scale=sq.scale * scale, translation=(sq.translation - center) * scale)


def farthest_point_seeds(X, k, start) -> np.ndarray:
    idx = np.empty(k, dtype=int)
    idx[0] = start
    d = np.linalg.norm(X - X[start], axis=1)
    for i in range(1, k):
        idx[i] = int(np.argmax(d))
        d = np.minimum(d, np.linalg.norm(X - X[idx[i]], axis=1))
    return idx


def kmeans(X, k, seed, iters=20) -> np.ndarray:
    """Lloyd iterations from farthest-point seeds; returns labels."""
    rng = np.random.default_rng(seed)
    centers = X[farthest_point_seeds(X, k, int(rng.integers(len(X))))]
    labels = np.zeros(len(X), dtype=int)
    for it in range(iters):
        new = cKDTree(centers).query(X)[1]
        if it > 0 and np.array_equal(new, labels):
            break
        labels = new
        for j in range(k):
            sel = labels == j
            if sel.any():
                centers[j] = X[sel].mean(axis=0)
    return labels


def pca_superquadric(X, existence=1.0) -> Superquadric:
    """Ellipsoid from the cluster's principal axes, semi-axes 1.5 standard deviations."""
    mean = X.mean(axis=0)
    cov = (X - mean).T @ (X - mean) / len(X)
    evals, evecs = np.linalg.eigh(cov)
    if np.linalg.det(evecs) < 0:
        evecs[:, 0] = -evecs[:, 0]
    scale = np.clip(1.5 * np.sqrt(np.maximum(evals, 0)), 1e-3, 0.5)
    return Superquadric(scale, [1.0, 1.0], matrix_to_quat(evecs), mean, existence)


def init_superquadrics(pc_normalized, P, seed=0, kmeans_iters=20):
    """Seed ``P`` primitives from a k-means partition.

    Returns ``(sqs, M)`` where ``M`` is the hard one-hot assignment. Empty
    clusters (and all clusters beyond ``N`` when ``P > N``) get existence 0.
    """
    X = _positions(pc_normalized)
    N = len(X)
    k = min(P, N)
    labels = kmeans(X, k, seed, kmeans_iters)
    sqs = []
    for j in range(P):
        sel = labels == j
        if j < k and sel.any():
            sqs.append(pca_superquadric(X[sel]))
        else:
            sqs.append(Superquadric([1e-3] * 3, [1.0, 1.0], existence=0.0))
    M = np.zeros((N, P))
    M[np.arange(N), labels] = 1.0
    return sqs, M


def _subsample(X, max_points, seed):
    if len(X) <= max_points:
        return X
    rng = np.random.default_rng(seed)
    return X[np.sort(rng.choice(len(X), max_points, replace=False))]


class _MergeState:
    """Per-primitive chamfer bookkeeping for greedy merging under hard assignment."""

    def __init__(self, X, tree, S, P_total, lambda_par):
        self.X, self.tree, self.S = X, tree, S
        self.P_total, self.lambda_par = P_total, lambda_par

    def stats(self, sq, pts):
        """(sum of point-to-surface distances, mean surface-to-cloud distance)."""
        samples = sample_surface(sq, self.S)
        e = cKDTree(samples).query(pts)[0].sum() if len(pts) else 0.0
        c = self.tree.query(samples)[0].mean()
        return float(e), float(c)

    def criterion(self, e, c, counts):
        N = len(self.X)
        par = np.sum(np.sqrt(np.asarray(counts) / N)) ** 2 / self.P_total
        return np.sum(e) / N + np.mean(c) + self.lambda_par * par


def merge_primitives(X, sqs, labels, config: DecomposeConfig, tree, threads=1):
    """Greedily merge adjacent primitives while the selection criterion decreases.

    ``labels`` is the hard assignment of ``X``. Returns ``(sqs, labels, n_merges)``.
    """
    state = _MergeState(X, tree, config.S, config.P, config.lambda_par)
    lm = replace(config.lm, max_iters=min(config.lm.max_iters, config.merge_lm_iters))
    groups = [np.flatnonzero(labels == j) for j in range(len(sqs))]
    stats = [state.stats(sq, X[g]) for sq, g in zip(sqs, groups)]
    cache = {}
    n_merges = 0
    ids = list(range(len(sqs)))  # stable identities for cache keys
    next_id = len(sqs)

    while len(sqs) > 1:
        trees = [cKDTree(X[g]) if len(g) else None for g in groups]
        pairs = []
        for a in range(len(sqs)):
            for b in range(a + 1, len(sqs)):
                if trees[a] is None or trees[b] is None:
                    continue
                key = (ids[a], ids[b])
                if key not in cache:
                    gap = trees[b].query(X[groups[a]], distance_upper_bound=config.merge_radius)[0]
                    if not np.isfinite(gap).any():
                        cache[key] = None
                        continue
                    pairs.append((a, b))
                elif cache[key] is not None:
                    pairs.append((a, b))

        todo = [(a, b) for a, b in pairs if (ids[a], ids[b]) not in cache]

        def fit(pair):
            a, b = pair
            g = np.concatenate([groups[a], groups[b]])
            init = pca_superquadric(X[g])
            merged, _ = refine_one(init, X[g], np.ones(len(g)), lm, config.K, tree, MERGE_FIT_POINTS)
            return merged, state.stats(merged, X[g])

        if threads > 1 and len(todo) > 1:
            with ThreadPoolExecutor(threads) as pool:
                fitted = list(pool.map(fit, todo))
        else:
            fitted = [fit(p) for p in todo]
        for (a, b), res in zip(todo, fitted):
            cache[(ids[a], ids[b])] = res

        counts = np.array([len(g) for g in groups])
        e = np.array([s[0] for s in stats])
        c = np.array([s[1] for s in stats])
        current = state.criterion(e, c, counts)
        best, best_delta = None, 0.0
        for a, b in pairs:
            merged, (e_m, c_m) = cache[(ids[a], ids[b])]
            keep = np.ones(len(sqs), dtype=bool)
            keep[[a, b]] = False
            value = state.criterion(
                np.append(e[keep], e_m), np.append(c[keep], c_m),
                np.append(counts[keep], counts[a] + counts[b]),
            )
            delta = value - current
            if delta < best_delta - 1e-12:
                best, best_delta = (a, b), delta
        if best is None:
            break
        a, b = best
        merged, st = cache[(ids[a], ids[b])]
        log.debug("merge %d+%d delta=%.3g", a, b, best_delta)
        sqs[a], stats[a] = merged, st
        groups[a] = np.sort(np.concatenate([groups[a], groups[b]]))
        ids[a] = next_id
        next_id += 1
        del sqs[b], stats[b], groups[b], ids[b]
        n_merges += 1

    new_labels = np.empty(len(X), dtype=int)
    for j, g in enumerate(groups):
        new_labels[g] = j
    return sqs, new_labels, n_merges


def _one_hot(labels, P):
    M = np.zeros((len(labels), P))
    M[np.arange(len(labels)), labels] = 1.0
    return M


def _renormalize_rows(M, X, sqs):
    rows = M.sum(axis=1)
    empty = rows <= 1e-12
    if np.any(empty):
        # rows whose mass sat entirely on pruned columns go to the closest survivor
        M[empty] = soft_assign(X[empty], sqs, 1e6)
        rows = M.sum(axis=1)
    return M / rows[:, None]


def decompose_object(pc, config: DecomposeConfig | None = None, threads: int = 1) -> Decomposition:
    """Decompose one object; primitives in the result are in world coordinates."""
    config = config or DecomposeConfig()
    X_all = _positions(pc)
    if len(X_all) < 16:
        warnings.warn(f"decomposing only {len(X_all)} points; at least 16 recommended", stacklevel=2)
    Xn_all, center, scale = normalize_object(X_all)
    Xn = _subsample(Xn_all, config.max_points, config.seed)
    tree = cKDTree(Xn)

    sqs, _ = init_superquadrics(Xn, config.P, config.seed, config.kmeans_iters)
    sqs = [sq for sq in sqs if sq.existence > 0]
    beta = config.beta
    prev_total = np.inf
    iterations = 0
    for it in range(config.outer_iters):
        iterations = it + 1
        M = soft_assign(Xn, sqs, beta)
        sqs, _ = refine(sqs, Xn, M, config.lm, config.K, threads, tree)
        changed = False
        if it >= PRUNE_FROM:
            keep = existence_from_assignment(M, config.eps_exist)
            if not keep.all():
                changed = True
                sqs = [sq for sq, k in zip(sqs, keep) if k]
                if not sqs:
                    break
                M = _renormalize_rows(M[:, keep], Xn, sqs)
            sqs, labels, n_merges = merge_primitives(Xn, sqs, np.argmax(M, axis=1), config, tree, threads)
            if n_merges:
                changed = True
        M = soft_assign(Xn, sqs, beta)
        total = total_objective(Xn, sqs, M, np.ones(len(sqs)), config.lambda_par, config.lambda_exist,
                                config.S, config.eps_exist, config.P).total
        log.debug("outer %d: %d primitives, total %.6g", it, len(sqs), total)
        if not changed and prev_total - total < 1e-6:
            break
        prev_total = total
        beta = min(beta * config.beta_growth, config.beta_max)

    fallback = not sqs
    if fallback:
        warnings.warn("all primitives were pruned; falling back to a single PCA ellipsoid", stacklevel=2)
        sqs = [pca_superquadric(Xn)]
    sqs = [sq.with_(existence=1.0) for sq in sqs]
    M_eval = soft_assign(Xn, sqs, beta)
    losses = total_objective(Xn, sqs, M_eval, np.ones(len(sqs)), config.lambda_par, config.lambda_exist,
                             config.S, config.eps_exist, config.P)
    return Decomposition(
        superquadrics=[sq_to_world(sq, center, scale) for sq in sqs],
        assignment=soft_assign(Xn_all, sqs, beta),
        center=center,
        scale=scale,
        losses=losses,
        iterations_run=iterations,
        fallback=fallback,
    )


@dataclass
class HierarchyNode:
    decomposition: Decomposition
    point_index: np.ndarray
    children: dict = field(default_factory=dict)  # primitive index -> HierarchyNode

    def level(self, depth: int) -> list:
        """Primitives at ``depth`` (1 = this node); leaves stand in for missing children."""
        if depth <= 1:
            return list(self.decomposition.superquadrics)
        out = []
        for j, sq in enumerate(self.decomposition.superquadrics):
            child = self.children.get(j)
            out.extend(child.level(depth - 1) if child is not None else [sq])
        return out


def hierarchical_decompose(pc, config: DecomposeConfig | None = None, depth: int | None = None,
                           threads: int = 1, _index=None) -> HierarchyNode:
    """Recursively decompose the points hard-assigned to each primitive."""
    config = config or DecomposeConfig()
    depth = config.hierarchy_depth if depth is None else depth
    if depth < 1:
        raise ValueError("depth must be >= 1")
    X = _positions(pc)
    index = np.arange(len(X)) if _index is None else _index
    node = HierarchyNode(decompose_object(X, config, threads), index)
    if depth == 1:
        return node
    labels = node.decomposition.labels()
    for j in range(node.decomposition.n_primitives):
        sel = np.flatnonzero(labels == j)
        if len(sel) < HIERARCHY_MIN_POINTS:
            continue
        node.children[j] = hierarchical_decompose(X[sel], config, depth - 1, threads, index[sel])
    return node
