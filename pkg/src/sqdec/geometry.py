"""Superquadric primitives: implicit function, radial distance, sampling and meshing.

All point-wise functions accept a single 3-vector or an ``(..., 3)`` array and
broadcast over the leading dimensions.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

EPS_MIN = 0.1
EPS_MAX = 2.0
BASE_FLOOR = 1e-12
ARC_KNOTS = 1024


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = np.asarray(q, dtype=float) / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(R) -> np.ndarray:
    """Rotation matrix to unit quaternion (w, x, y, z) with w >= 0."""
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif R[1, 1] > R[2, 2]:
        s = np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    q = np.array(q)
    q /= np.linalg.norm(q)
    return -q if q[0] < 0 else q


def quat_multiply(a, b) -> np.ndarray:
    w1, x1, y1, z1 = a
    w2, x2, y2, z2 = b
    return np.array([
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    ])


def rotvec_to_quat(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    angle = np.linalg.norm(v)
    if angle < 1e-12:
        q = np.array([1.0, 0.5 * v[0], 0.5 * v[1], 0.5 * v[2]])
        return q / np.linalg.norm(q)
    axis = v / angle
    return np.concatenate([[np.cos(angle / 2)], np.sin(angle / 2) * axis])


@dataclass(frozen=True)
class Superquadric:
    """A posed superquadric with an existence probability.

    ``rotation`` is a unit quaternion (w, x, y, z) mapping canonical axes to
    world axes; it is renormalized on construction.
    """

    scale: np.ndarray
    exponents: np.ndarray
    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    existence: float = 1.0

    def __post_init__(self):
        scale = np.asarray(self.scale, dtype=float).reshape(3)
        exps = np.asarray(self.exponents, dtype=float).reshape(2)
        q = np.asarray(self.rotation, dtype=float).reshape(4)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        for name, arr in (("scale", scale), ("exponents", exps), ("rotation", q), ("translation", t)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite {name}: {arr}")
        if np.any(scale <= 0):
            raise ValueError(f"scale must be positive, got {scale}")
        if np.any(exps < EPS_MIN - 1e-12) or np.any(exps > EPS_MAX + 1e-12):
            raise ValueError(f"exponents must lie in [{EPS_MIN}, {EPS_MAX}], got {exps}")
        norm = np.linalg.norm(q)
        if norm == 0:
            raise ValueError("zero quaternion")
        if not 0.0 <= self.existence <= 1.0:
            raise ValueError(f"existence must lie in [0, 1], got {self.existence}")
        object.__setattr__(self, "scale", scale)
        object.__setattr__(self, "exponents", np.clip(exps, EPS_MIN, EPS_MAX))
        object.__setattr__(self, "rotation", q / norm)
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "existence", float(self.existence))

    @classmethod
    def sphere(cls, radius=1.0, center=(0.0, 0.0, 0.0)) -> "Superquadric":
        return cls(scale=[radius] * 3, exponents=[1.0, 1.0], translation=center)

    @property
    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    def with_(self, **changes) -> "Superquadric":
        return replace(self, **changes)

    def params(self) -> np.ndarray:
        """Flat 12-vector: scale, exponents, quaternion, translation."""
        return np.concatenate([self.scale, self.exponents, self.rotation, self.translation])


def _as_points(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != 3:
        raise ValueError(f"expected trailing dimension 3, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite coordinates")
    return x


def to_canonical(sq: Superquadric, x_world) -> np.ndarray:
    x = _as_points(x_world)
    # row-vector form of R^T (x - t)
    return (x - sq.translation) @ sq.rotation_matrix


def to_world(sq: Superquadric, x_canonical) -> np.ndarray:
    x = _as_points(x_canonical)
    return x @ sq.rotation_matrix.T + sq.translation


def log_implicit_canonical(scale, exponents, xc) -> np.ndarray:
    """log f for canonical-frame points, evaluated without overflow."""
    e1, e2 = exponents
    base = np.maximum(np.abs(xc) / scale, BASE_FLOOR)
    lb = np.log(base)
    lxy = np.logaddexp((2.0 / e2) * lb[..., 0], (2.0 / e2) * lb[..., 1])
    return np.logaddexp((e2 / e1) * lxy, (2.0 / e1) * lb[..., 2])


def implicit_value(sq: Superquadric, x_world) -> np.ndarray:
    """Inside-outside function: 1 on the surface, < 1 inside, > 1 outside."""
    xc = to_canonical(sq, x_world)
    return np.exp(log_implicit_canonical(sq.scale, sq.exponents, xc))


def radial_distance_canonical(scale, exponents, xc) -> np.ndarray:
    norm = np.linalg.norm(xc, axis=-1)
    logf = log_implicit_canonical(scale, exponents, xc)
    # -expm1(-a) = 1 - exp(-a) keeps precision close to the surface
    d = norm * np.abs(np.expm1(-0.5 * exponents[0] * logf))
    return np.where(norm == 0.0, np.min(scale), d)


def radial_distance(sq: Superquadric, x_world) -> np.ndarray:
    """Distance to the surface measured along the ray through the center.

    At the center itself the ray is undefined; ``min(scale)`` is returned.
    """
    xc = to_canonical(sq, x_world)
    return radial_distance_canonical(sq.scale, sq.exponents, xc)


# --- sampling -------------------------------------------------------------------


def superellipse_point(theta, eps) -> tuple[np.ndarray, np.ndarray]:
    """Point on |c|^(2/eps) + |s|^(2/eps) = 1 in polar direction ``theta``."""
    c, s = np.cos(theta), np.sin(theta)
    ac = np.maximum(np.abs(c), BASE_FLOOR)
    as_ = np.maximum(np.abs(s), BASE_FLOOR)
    lr = -0.5 * eps * np.logaddexp((2.0 / eps) * np.log(ac), (2.0 / eps) * np.log(as_))
    r = np.exp(lr)
    return r * c, r * s


def _inverse_arc_table(theta_lo, theta_hi, curve, weight=None, knots=ARC_KNOTS):
    theta = np.linspace(theta_lo, theta_hi, knots)
    pts = curve(theta)
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    if weight is not None:
        w = weight(theta)
        seg = seg * 0.5 * (w[1:] + w[:-1])
    seg = seg + 1e-15
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    return cum / cum[-1], theta


def surface_angles(sq: Superquadric, S: int) -> tuple[np.ndarray, np.ndarray]:
    """Polar angles (meridian, azimuth) of ``S`` near equal-area surface samples.

    A golden-ratio lattice on the unit square is pushed through the inverse
    cumulative arc length of the two generating superellipses. The meridian
    density is weighted by the ring size so that samples do not bunch at poles.
    """
    if S < 8:
        raise ValueError(f"need at least 8 surface samples, got {S}")
    sx, sy, sz = sq.scale
    e1, e2 = sq.exponents

    def azimuth_curve(t):
        c, s = superellipse_point(t, e2)
        return np.stack([sx * c, sy * s], axis=1)

    cdf_w, knots_w = _inverse_arc_table(-np.pi, np.pi, azimuth_curve)
    ring_pts = azimuth_curve(knots_w)
    mean_radius = np.mean(np.linalg.norm(ring_pts, axis=1))

    def meridian_curve(t):
        c, s = superellipse_point(t, e1)
        return np.stack([mean_radius * c, sz * s], axis=1)

    def ring_weight(t):
        return superellipse_point(t, e1)[0] + 1e-3

    cdf_m, knots_m = _inverse_arc_table(-np.pi / 2, np.pi / 2, meridian_curve, ring_weight)

    k = np.arange(S)
    u = (k + 0.5) / S
    v = np.mod(k * 0.6180339887498949 + 0.5, 1.0)
    return np.interp(u, cdf_m, knots_m), np.interp(v, cdf_w, knots_w)


def surface_points_canonical(scale, exponents, theta_m, theta_w) -> np.ndarray:
    cm, sm = superellipse_point(theta_m, exponents[0])
    cw, sw = superellipse_point(theta_w, exponents[1])
    return np.stack([scale[0] * cm * cw, scale[1] * cm * sw, scale[2] * sm], axis=-1)


def surface_points(sq: Superquadric, theta_m, theta_w) -> np.ndarray:
    """World points for fixed polar angles; exact surface members for any shape."""
    return to_world(sq, surface_points_canonical(sq.scale, sq.exponents, theta_m, theta_w))


def sample_surface(sq: Superquadric, S: int) -> np.ndarray:
    """Deterministic ``(S, 3)`` world-frame samples spread near-uniformly over the surface."""
    theta_m, theta_w = surface_angles(sq, S)
    return surface_points(sq, theta_m, theta_w)


# --- meshing --------------------------------------------------------------------


@dataclass
class TriangleMesh:
    vertices: np.ndarray
    faces: np.ndarray

    @property
    def area(self) -> float:
        a, b, c = (self.vertices[self.faces[:, i]] for i in range(3))
        return float(0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1).sum())

    def euler_characteristic(self) -> int:
        f = self.faces
        edges = np.sort(np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]]), axis=1)
        n_edges = len(np.unique(edges, axis=0))
        return len(self.vertices) - n_edges + len(f)


def surface_mesh(sq: Superquadric, resolution: int) -> TriangleMesh:
    """Closed triangle mesh: ``resolution`` latitude rings by ``resolution`` longitudes plus two poles."""
    if resolution < 4:
        raise ValueError(f"resolution must be >= 4, got {resolution}")
    n = resolution
    lat = -np.pi / 2 + np.pi * (np.arange(n) + 1) / (n + 1)
    lon = -np.pi + 2 * np.pi * np.arange(n) / n
    tm, tw = np.meshgrid(lat, lon, indexing="ij")
    ring = surface_points_canonical(sq.scale, sq.exponents, tm.ravel(), tw.ravel())
    poles = np.array([[0.0, 0.0, -sq.scale[2]], [0.0, 0.0, sq.scale[2]]])
    verts = to_world(sq, np.vstack([ring, poles]))
    south, north = n * n, n * n + 1

    def vid(i, j):
        return i * n + (j % n)

    faces = []
    for i in range(n - 1):
        for j in range(n):
            a, b, c, d = vid(i, j), vid(i, j + 1), vid(i + 1, j + 1), vid(i + 1, j)
            faces.append((a, b, c))
            faces.append((a, c, d))
    for j in range(n):
        faces.append((south, vid(0, j + 1), vid(0, j)))
        faces.append((north, vid(n - 1, j), vid(n - 1, j + 1)))
    return TriangleMesh(verts, np.asarray(faces, dtype=np.int64))


@dataclass
class PointCloud:
    positions: np.ndarray
    normals: Optional[np.ndarray] = None
    instance_ids: Optional[np.ndarray] = None

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim != 2 or pos.shape[1] != 3 or len(pos) < 1:
            raise ValueError(f"positions must be (N>=1, 3), got {pos.shape}")
        if not np.all(np.isfinite(pos)):
            raise ValueError("non-finite point coordinates")
        self.positions = pos
        if self.normals is not None:
            nrm = np.asarray(self.normals, dtype=float)
            if nrm.shape != pos.shape:
                raise ValueError("normals shape must match positions")
            if np.any(np.abs(np.linalg.norm(nrm, axis=1) - 1.0) > 1e-6):
                raise ValueError("normals must be unit length")
            self.normals = nrm
        if self.instance_ids is not None:
            ids = np.asarray(self.instance_ids)
            if ids.shape != (len(pos),):
                raise ValueError("instance_ids must have one entry per point")
            if ids.size and (not np.issubdtype(ids.dtype, np.integer) or ids.min() < 0):
                raise ValueError("instance_ids must be non-negative integers")
            self.instance_ids = ids

    def __len__(self):
        return len(self.positions)

    def subset(self, mask) -> "PointCloud":
        return PointCloud(
            self.positions[mask],
            None if self.normals is None else self.normals[mask],
            None if self.instance_ids is None else self.instance_ids[mask],
        )
