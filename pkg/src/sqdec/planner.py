"""Sampling-based path planning over interchangeable scene representations.

Every representation answers one question: is a sphere of a given radius
centred at ``x`` collision free? The planner (RRT* with a fixed sample budget)
only sees that predicate, so representations can be compared on equal terms.
"""
from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from ._kernels import clearance_batch
from .geometry import Superquadric

HEADER_BYTES = 64
SQ_FLOATS = 12
BENCH_HEADER = ["rep", "query_id", "check_time_ms", "success", "optimality", "memory_bytes"]


class PlanningError(RuntimeError):
    pass


class InvalidEndpointError(PlanningError):
    """Start or goal violates the clearance test."""


class PlanningTimeout(PlanningError):
    """No path found within the time or sample budget."""


@dataclass(frozen=True)
class Bounds:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo, hi = np.asarray(self.lo, dtype=float), np.asarray(self.hi, dtype=float)
        if lo.shape != (3,) or hi.shape != (3,) or np.any(hi <= lo):
            raise ValueError("bounds need lo < hi in all three axes")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def around(cls, points, margin=0.0) -> "Bounds":
        P = np.asarray(points, dtype=float).reshape(-1, 3)
        return cls(P.min(axis=0) - margin, P.max(axis=0) + margin)

    def contains(self, X) -> np.ndarray:
        X = np.atleast_2d(X)
        return np.all((X >= self.lo) & (X <= self.hi), axis=1)

    def union(self, other: "Bounds") -> "Bounds":
        return Bounds(np.minimum(self.lo, other.lo), np.maximum(self.hi, other.hi))

    @property
    def volume(self) -> float:
        return float(np.prod(self.hi - self.lo))


class SceneRepresentation:
    name = "base"

    def __init__(self, bounds: Bounds):
        self.bounds = bounds

    def _valid(self, X, radius) -> np.ndarray:
        raise NotImplementedError

    def is_valid(self, x, radius) -> np.ndarray | bool:
        """Clearance test for one point (returns bool) or an (n, 3) batch."""
        X = np.asarray(x, dtype=float)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        ok = self.bounds.contains(X)
        if ok.any():
            ok[ok] = self._valid(X[ok], radius)
        return bool(ok[0]) if single else ok

    def memory_bytes(self) -> int:
        raise NotImplementedError


class SuperquadricSet(SceneRepresentation):
    """Clearance is the radial distance; points inside any primitive are invalid.

    Only primitives with existence 1 are obstacles. ``margin`` scales the radius.
    """

    name = "superquadrics"

    def __init__(self, sqs, bounds: Bounds, margin: float = 1.0):
        super().__init__(bounds)
        if margin <= 0:
            raise ValueError("margin must be positive")
        self.sqs = [sq for sq in sqs if sq.existence >= 1.0]
        self.n_stored = len(sqs)
        self.margin = margin
        B = len(self.sqs)
        self._scale = np.array([sq.scale for sq in self.sqs]).reshape(B, 3)
        self._e1 = np.array([sq.exponents[0] for sq in self.sqs], dtype=float)
        self._e2 = np.array([sq.exponents[1] for sq in self.sqs], dtype=float)
        self._R = np.array([sq.rotation_matrix for sq in self.sqs]).reshape(B, 3, 3)
        self._t = np.array([sq.translation for sq in self.sqs]).reshape(B, 3)

    def clearance(self, X) -> np.ndarray:
        X = np.ascontiguousarray(np.atleast_2d(X), dtype=float)
        return clearance_batch(X, self._scale, self._e1, self._e2, self._R, self._t)

    def _valid(self, X, radius):
        return self.clearance(X) > radius * self.margin

    def memory_bytes(self) -> int:
        return HEADER_BYTES + SQ_FLOATS * 8 * self.n_stored


class RawPoints(SceneRepresentation):
    name = "points"

    def __init__(self, points, bounds: Optional[Bounds] = None):
        P = np.asarray(points, dtype=float).reshape(-1, 3)
        super().__init__(bounds or Bounds.around(P, 0.1))
        self.n_points = len(P)
        self.tree = cKDTree(P) if len(P) else None

    def clearance(self, X) -> np.ndarray:
        X = np.atleast_2d(X)
        if self.tree is None:
            return np.full(len(X), np.inf)
        return self.tree.query(X)[0]

    def _valid(self, X, radius):
        return self.clearance(X) > radius

    def memory_bytes(self) -> int:
        return HEADER_BYTES + 3 * 4 * self.n_points


class VoxelGrid(SceneRepresentation):
    """Cells containing at least one point are occupied.

    Clearance is the distance to the nearest occupied cell centre, taken from
    one exact distance transform at build time and interpolated between cells.
    """

    name = "voxels"
    bits_per_cell = 1

    def __init__(self, points, bounds: Bounds, cell: float = 0.1):
        super().__init__(bounds)
        if cell <= 0:
            raise ValueError("cell size must be positive")
        self.cell = float(cell)
        self.shape = tuple(int(v) for v in np.maximum(np.ceil((bounds.hi - bounds.lo) / cell), 1))
        P = np.asarray(points, dtype=float).reshape(-1, 3)
        occ = np.zeros(self.shape, dtype=bool)
        if len(P):
            occ[tuple(self._index(P).T)] = True
        self.occupied = self._finish(occ)
        self.dist_occupied = self._edt(~self.occupied)

    def _finish(self, occ):
        return occ

    def _edt(self, mask):
        # distance from each cell to the nearest cell where mask is False
        if mask.all():
            return np.full(self.shape, 1e9)  # finite so interpolation stays exact
        return ndimage.distance_transform_edt(mask, sampling=self.cell)

    def _index(self, X) -> np.ndarray:
        idx = np.floor((np.atleast_2d(X) - self.bounds.lo) / self.cell).astype(int)
        return np.clip(idx, 0, np.array(self.shape) - 1)

    def lookup(self, grid, X) -> np.ndarray:
        """Trilinear interpolation of a per-cell field (values live at cell centres)."""
        coords = ((np.atleast_2d(X) - self.bounds.lo) / self.cell - 0.5).T
        return ndimage.map_coordinates(grid, coords, order=1, mode="nearest")

    def clearance(self, X) -> np.ndarray:
        return self.lookup(self.dist_occupied, X)

    def _valid(self, X, radius):
        return self.clearance(X) > radius

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.shape))

    def memory_bytes(self) -> int:
        return HEADER_BYTES + math.ceil(self.bits_per_cell * self.n_cells / 8)


class OccupancyGrid(VoxelGrid):
    """Dense grid with closed cavities filled; free cells are the complement.

    A location is valid when no occupied cell is within the radius and some
    free cell is within it.
    """

    name = "occupancy"
    bits_per_cell = 2  # occupied / free / unknown states

    def __init__(self, points, bounds: Bounds, cell: float = 0.1):
        super().__init__(points, bounds, cell)
        self.dist_free = self._edt(self.occupied)

    def _finish(self, occ):
        return ndimage.binary_fill_holes(occ)

    def _valid(self, X, radius):
        return (self.lookup(self.dist_occupied, X) > radius) & (self.lookup(self.dist_free, X) <= radius)


# --- planning -------------------------------------------------------------------


@dataclass
class PlanQuery:
    start: np.ndarray
    goal: np.ndarray
    collision_radius: float = 0.25
    time_budget: float = 2.0
    waypoint_step: float = 0.05

    def __post_init__(self):
        self.start = np.asarray(self.start, dtype=float).reshape(3)
        self.goal = np.asarray(self.goal, dtype=float).reshape(3)
        if self.collision_radius <= 0 or self.time_budget <= 0 or self.waypoint_step <= 0:
            raise ValueError("radius, time budget and waypoint step must be positive")


@dataclass
class PlannerSettings:
    steer: float = 0.25
    goal_bias: float = 0.05
    max_samples: int = 3000
    extra_samples: int = 300  # kept sampling after the first solution
    shortcut: bool = False
    seed: int = 0


@dataclass
class PlanResult:
    path: np.ndarray
    samples: int
    check_calls: int
    check_points: int
    check_time: float

    @property
    def length(self) -> float:
        return path_length(self.path)

    @property
    def check_time_ms(self) -> float:
        """Average wall time of one single-state validity check."""
        return 1e3 * self.check_time / max(self.check_points, 1)


def path_length(path) -> float:
    path = np.asarray(path, dtype=float)
    return float(np.linalg.norm(np.diff(path, axis=0), axis=1).sum()) if len(path) > 1 else 0.0


class _Checker:
    def __init__(self, rep, radius, step):
        self.rep, self.radius, self.step = rep, radius, step
        self.calls = self.points = 0
        self.elapsed = 0.0

    def states(self, X) -> np.ndarray:
        t = time.perf_counter()
        ok = self.rep.is_valid(np.atleast_2d(X), self.radius)
        self.elapsed += time.perf_counter() - t
        self.calls += 1
        self.points += len(np.atleast_2d(X))
        return ok

    def edge(self, a, b) -> bool:
        n = max(int(math.ceil(np.linalg.norm(b - a) / self.step)), 1)
        s = np.linspace(0.0, 1.0, n + 1)[1:, None]
        return bool(np.all(self.states(a + s * (b - a))))


def _shortcut(path, checker) -> np.ndarray:
    out = [path[0]]
    i = 0
    while i < len(path) - 1:
        j = len(path) - 1
        while j > i + 1 and not checker.edge(path[i], path[j]):
            j -= 1
        out.append(path[j])
        i = j
    return np.array(out)


def plan(rep: SceneRepresentation, query: PlanQuery, settings: Optional[PlannerSettings] = None) -> PlanResult:
    """RRT* from ``query.start`` to ``query.goal``.

    The sample budget makes runs reproducible for a fixed seed; the time
    budget only aborts runs that would exceed it.
    """
    settings = settings or PlannerSettings()
    chk = _Checker(rep, query.collision_radius, query.waypoint_step)
    start, goal = query.start, query.goal
    ends = chk.states(np.stack([start, goal]))
    if not ends.all():
        which = " and ".join(n for n, ok in zip(("start", "goal"), ends) if not ok)
        raise InvalidEndpointError(f"{which} not valid at radius {query.collision_radius}")
    t0 = time.monotonic()
    rng = np.random.default_rng(settings.seed)
    lo, hi = rep.bounds.lo, rep.bounds.hi
    # shrinking-ball constant for d = 3
    gamma = 2.0 * (4.0 / 3.0) ** (1 / 3) * (rep.bounds.volume / (4.0 / 3.0 * math.pi)) ** (1 / 3)

    cap = settings.max_samples + 2
    nodes = np.empty((cap, 3))
    parent = np.full(cap, -1, dtype=int)
    cost = np.zeros(cap)
    nodes[0] = start
    n = 1
    goal_node = -1
    solved_at = None
    samples = 0

    if chk.edge(start, goal):
        path = np.stack([start, goal])
        return PlanResult(path, 0, chk.calls, chk.points, chk.elapsed)

    while samples < settings.max_samples:
        if solved_at is not None and samples - solved_at >= settings.extra_samples:
            break
        if time.monotonic() - t0 > query.time_budget:
            break
        samples += 1
        target = goal if rng.random() < settings.goal_bias else rng.uniform(lo, hi)
        d = np.linalg.norm(nodes[:n] - target, axis=1)
        near_i = int(np.argmin(d))
        step = target - nodes[near_i]
        if d[near_i] > settings.steer:
            step *= settings.steer / d[near_i]
        x = nodes[near_i] + step
        if d[near_i] < 1e-12 or not chk.states(x[None])[0]:
            continue
        r = min(gamma * (math.log(n + 1) / (n + 1)) ** (1 / 3), settings.steer)
        dist = np.linalg.norm(nodes[:n] - x, axis=1)
        near = np.flatnonzero(dist <= r)
        if near_i not in near:
            near = np.append(near, near_i)
        order = near[np.argsort(cost[near] + dist[near], kind="stable")]
        best = -1
        for j in order:
            if j == goal_node:
                continue
            if chk.edge(nodes[j], x):
                best = j
                break
        if best < 0:
            continue
        k = n
        nodes[k], parent[k], cost[k] = x, best, cost[best] + dist[best]
        n += 1
        for j in near:
            if j == best or j == 0:
                continue
            c = cost[k] + dist[j]
            if c + 1e-12 < cost[j] and chk.edge(x, nodes[j]):
                delta = c - cost[j]
                parent[j] = k
                _propagate(parent, cost, n, j, delta)
        dg = float(np.linalg.norm(goal - x))
        if dg <= settings.steer:
            if goal_node < 0:
                if chk.edge(x, goal):
                    goal_node = n
                    nodes[n], parent[n], cost[n] = goal, k, cost[k] + dg
                    n += 1
                    solved_at = samples
            elif cost[k] + dg + 1e-12 < cost[goal_node] and chk.edge(x, goal):
                parent[goal_node], cost[goal_node] = k, cost[k] + dg

    if goal_node < 0:
        raise PlanningTimeout(f"no path after {samples} samples ({time.monotonic() - t0:.2f} s)")
    chain = [goal_node]
    while parent[chain[-1]] >= 0:
        chain.append(parent[chain[-1]])
    path = nodes[chain[::-1]].copy()
    path[0], path[-1] = start, goal
    if settings.shortcut:
        path = _shortcut(path, chk)
    return PlanResult(path, samples, chk.calls, chk.points, chk.elapsed)


def _propagate(parent, cost, n, root, delta):
    # cost change flows to every descendant of root
    children = {}
    for c in range(n):
        children.setdefault(parent[c], []).append(c)
    cost[root] += delta
    stack = [root]
    while stack:
        for c in children.get(stack.pop(), ()):
            cost[c] += delta
            stack.append(c)


def interpolate_path(path, step) -> np.ndarray:
    """Waypoints every ``step`` of arc length, both endpoints included."""
    path = np.asarray(path, dtype=float)
    seg = np.linalg.norm(np.diff(path, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    total = s[-1]
    m = max(int(math.ceil(total / step)), 1)
    q = np.linspace(0.0, total, m + 1)
    return np.stack([np.interp(q, s, path[:, k]) for k in range(3)], axis=1)


@dataclass
class PathCheck:
    passed: bool
    violation_fraction: float
    n_waypoints: int


def validate_path(path, occupancy: OccupancyGrid, radius: float = 0.25, step: float = 0.05,
                  max_violation: float = 0.10) -> PathCheck:
    path = np.asarray(path, dtype=float)
    if len(path) < 2:
        raise ValueError("path needs at least two waypoints")
    W = interpolate_path(path, step)
    ok = occupancy.is_valid(W, radius)
    frac = float(1.0 - ok.mean())
    return PathCheck(frac <= max_violation, frac, len(W))


def memory_footprint(rep: SceneRepresentation) -> int:
    return rep.memory_bytes()


# --- benchmark ------------------------------------------------------------------


def sample_queries(occupancy: OccupancyGrid, n: int, seed: int = 0, radius: float = 0.25,
                   z_band=(0.4, 0.6), min_distance: float = 2.0, max_tries: int = 100000):
    """Seeded start/goal pairs, uniform over valid states in a height band."""
    rng = np.random.default_rng(seed)
    lo, hi = occupancy.bounds.lo.copy(), occupancy.bounds.hi.copy()
    lo[2], hi[2] = z_band
    out = []
    for _ in range(max_tries):
        if len(out) == n:
            break
        s, g = rng.uniform(lo, hi, size=(2, 3))
        if np.linalg.norm(g - s) < min_distance:
            continue
        if occupancy.is_valid(np.stack([s, g]), radius).all():
            out.append((s, g))
    if len(out) < n:
        raise RuntimeError(f"found only {len(out)} of {n} valid query pairs")
    return out


def reference_queries(occupancy: OccupancyGrid, n: int, seed: int = 0, radius: float = 0.25,
                      settings: Optional[PlannerSettings] = None, time_budget: float = 2.0,
                      step: float = 0.05, **kwargs):
    """Query pairs the occupancy planner solves, drawn in sample order.

    Candidates come from :func:`sample_queries`; each is kept when planning on
    ``occupancy`` with the seed it will get in :func:`benchmark` (``seed + index``)
    succeeds and validates. Returns ``(queries, n_rejected)``.
    """
    settings = settings or PlannerSettings()
    candidates = sample_queries(occupancy, 4 * n, seed, radius, **kwargs)
    out, rejected = [], 0
    for s, g in candidates:
        if len(out) == n:
            break
        qs = PlannerSettings(**{**settings.__dict__, "seed": settings.seed + len(out)})
        try:
            res = plan(occupancy, PlanQuery(s, g, radius, time_budget, step), qs)
        except PlanningError:
            rejected += 1
            continue
        if validate_path(res.path, occupancy, radius, step).passed:
            out.append((s, g))
        else:
            rejected += 1
    if len(out) < n:
        raise RuntimeError(f"occupancy planner solved only {len(out)} of {len(candidates)} candidates")
    return out, rejected


@dataclass
class BenchRow:
    rep: str
    query_id: int
    check_time_ms: float
    success: bool
    optimality: float
    memory_bytes: int
    path: Optional[np.ndarray] = field(default=None, repr=False)


def benchmark(reps, queries, occupancy: OccupancyGrid, settings: Optional[PlannerSettings] = None,
              radius: float = 0.25, time_budget: float = 2.0, step: float = 0.05) -> list[BenchRow]:
    """Plan every query on every representation and validate against ``occupancy``.

    ``reps`` is a list of representations; the occupancy reference is planned
    first so optimality (path length over reference length) is available.
    """
    settings = settings or PlannerSettings()
    reps = [occupancy] + [r for r in reps if r is not occupancy]
    reference = {}
    rows = []
    for rep in reps:
        mem = memory_footprint(rep)
        for qi, (s, g) in enumerate(queries):
            q = PlanQuery(s, g, radius, time_budget, step)
            qs = PlannerSettings(**{**settings.__dict__, "seed": settings.seed + qi})
            try:
                res = plan(rep, q, qs)
            except PlanningError:
                rows.append(BenchRow(rep.name, qi, float("nan"), False, float("nan"), mem))
                continue
            ok = validate_path(res.path, occupancy, radius, step).passed
            if rep is occupancy and ok:
                reference[qi] = res.length
            opt = res.length / reference[qi] if ok and qi in reference else float("nan")
            rows.append(BenchRow(rep.name, qi, res.check_time_ms, ok, opt, mem, res.path))
    return rows


def bench_csv(rows, timing: bool = True) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(BENCH_HEADER)
    for r in rows:
        w.writerow([r.rep, r.query_id, f"{r.check_time_ms:.6f}" if timing else "", int(r.success),
                    f"{r.optimality:.6f}", r.memory_bytes])
    return buf.getvalue()


def bench_summary(rows) -> dict:
    """Per representation: success rate, mean check time, mean optimality, memory."""
    out = {}
    for name in dict.fromkeys(r.rep for r in rows):
        rs = [r for r in rows if r.rep == name]
        times = [r.check_time_ms for r in rs if np.isfinite(r.check_time_ms)]
        opts = [r.optimality for r in rs if np.isfinite(r.optimality)]
        out[name] = {
            "success": float(np.mean([r.success for r in rs])),
            "check_time_ms": float(np.mean(times)) if times else float("nan"),
            "optimality": float(np.mean(opts)) if opts else float("nan"),
            "memory_bytes": rs[0].memory_bytes,
        }
    return out
