"""Synthetic point-cloud fixtures: boxes, cylinders, furniture and a small room.

Every generator is deterministic given its ``seed``.
"""
from __future__ import annotations

import numpy as np

from .geometry import PointCloud, Superquadric, quat_to_matrix, sample_surface


def box_surface(center, half, n, rng, rotation=None) -> np.ndarray:
    """``n`` points uniformly distributed over the surface of a box."""
    half = np.asarray(half, dtype=float)
    hx, hy, hz = half
    areas = np.array([hy * hz, hy * hz, hx * hz, hx * hz, hx * hy, hx * hy])
    face = rng.choice(6, size=n, p=areas / areas.sum())
    uv = rng.uniform(-1, 1, size=(n, 2))
    pts = np.empty((n, 3))
    axis = face // 2
    sign = np.where(face % 2 == 0, -1.0, 1.0)
    for a in range(3):
        sel = axis == a
        others = [k for k in range(3) if k != a]
        pts[sel, a] = sign[sel] * half[a]
        pts[sel, others[0]] = uv[sel, 0] * half[others[0]]
        pts[sel, others[1]] = uv[sel, 1] * half[others[1]]
    if rotation is not None:
        pts = pts @ quat_to_matrix(rotation).T
    return pts + np.asarray(center, dtype=float)


def cylinder_surface(center, radius, half_height, n, rng) -> np.ndarray:
    """Vertical (z-aligned) closed cylinder surface."""
    side = 2 * np.pi * radius * 2 * half_height
    cap = np.pi * radius**2
    kind = rng.choice(3, size=n, p=np.array([side, cap, cap]) / (side + 2 * cap))
    phi = rng.uniform(0, 2 * np.pi, n)
    r = np.where(kind == 0, radius, radius * np.sqrt(rng.uniform(0, 1, n)))
    z = np.where(kind == 0, rng.uniform(-half_height, half_height, n),
                 np.where(kind == 1, -half_height, half_height))
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1) + np.asarray(center, dtype=float)


def _allocate(areas, n):
    areas = np.asarray(areas, dtype=float)
    counts = np.floor(areas / areas.sum() * n).astype(int)
    counts[np.argmax(areas)] += n - counts.sum()
    return counts


def _box_area(half):
    hx, hy, hz = half
    return 8 * (hx * hy + hy * hz + hx * hz)


def boxes_cloud(boxes, n, seed=0) -> tuple[np.ndarray, np.ndarray]:
    """Sample a union of boxes ``[(center, half), ...]``; returns points and part labels."""
    rng = np.random.default_rng(seed)
    counts = _allocate([_box_area(h) for _, h in boxes], n)
    pts = [box_surface(c, h, k, rng) for (c, h), k in zip(boxes, counts)]
    labels = np.concatenate([np.full(k, i) for i, k in enumerate(counts)])
    return np.vstack(pts), labels


TWO_BOXES = [
    ((-0.25, 0.0, 0.0), (0.15, 0.10, 0.10)),
    ((0.27, 0.05, 0.02), (0.10, 0.12, 0.08)),
]


def two_boxes(n=4096, seed=0):
    return boxes_cloud(TWO_BOXES, n, seed)


def chair_parts(center=(0.0, 0.0, 0.0), yaw=0.0):
    """Six boxes: seat, backrest and four legs (metres)."""
    parts = [
        ((0.0, 0.0, 0.45), (0.22, 0.22, 0.03)),
        ((0.0, 0.20, 0.72), (0.22, 0.02, 0.24)),
    ]
    for sx in (-0.18, 0.18):
        for sy in (-0.18, 0.18):
            parts.append(((sx, sy, 0.21), (0.025, 0.025, 0.21)))
    c, s = np.cos(yaw), np.sin(yaw)
    out = []
    for ctr, half in parts:
        x, y, z = ctr
        p = (c * x - s * y + center[0], s * x + c * y + center[1], z + center[2])
        # only quarter turns keep boxes axis aligned
        h = half if abs(s) < 0.5 else (half[1], half[0], half[2])
        out.append((p, h))
    return out


def chair(n=4096, seed=0):
    return boxes_cloud(chair_parts(), n, seed)


def table_parts(center=(0.0, 0.0, 0.0)):
    cx, cy, cz = center
    parts = [((cx, cy, cz + 0.72), (0.6, 0.4, 0.03))]
    for sx in (-0.52, 0.52):
        for sy in (-0.32, 0.32):
            parts.append(((cx + sx, cy + sy, cz + 0.345), (0.035, 0.035, 0.345)))
    return parts


def table_and_chairs(n=8192, seed=0):
    """A table with two chairs facing it; labels are object ids (0 table, 1..2 chairs)."""
    objects = [table_parts()]
    objects.append(chair_parts(center=(0.0, -0.85, 0.0)))
    objects.append(chair_parts(center=(0.0, 0.85, 0.0), yaw=np.pi))
    flat = [b for obj in objects for b in obj]
    owner = np.concatenate([np.full(len(obj), i) for i, obj in enumerate(objects)])
    pts, part = boxes_cloud(flat, n, seed)
    return pts, owner[part]


def superquadric_cloud(sq: Superquadric, n=4096) -> np.ndarray:
    return sample_surface(sq, n)


ROOM_SIZE = (8.0, 6.0, 3.0)


def room_obstacles(seed=0):
    """Twelve obstacles placed on the floor of the 8 x 6 m room.

    Returns a list of ``("box", center, half)`` or ``("cylinder", center, radius, half_height)``.
    """
    rng = np.random.default_rng(seed)
    layout = [
        (1.5, 1.2), (3.2, 1.0), (5.0, 1.4), (6.7, 1.1),
        (1.2, 3.0), (3.0, 3.2), (4.9, 2.9), (6.8, 3.1),
        (1.6, 4.9), (3.4, 4.8), (5.2, 5.0), (6.6, 4.8),
    ]
    obstacles = []
    for k, (x, y) in enumerate(layout):
        height = rng.uniform(0.4, 1.8)
        if k % 3 == 2:
            r = rng.uniform(0.2, 0.35)
            obstacles.append(("cylinder", (x, y, height / 2), r, height / 2))
        else:
            half = (rng.uniform(0.2, 0.45), rng.uniform(0.2, 0.4), height / 2)
            obstacles.append(("box", (x, y, height / 2), half))
    return obstacles


def room(points_per_m2=400, seed=0) -> PointCloud:
    """8 x 6 x 3 m room (floor and walls, open ceiling) with twelve obstacles.

    Instance ids: 0 floor, 1-4 walls, 5.. obstacles.
    """
    rng = np.random.default_rng(seed)
    L, W, H = ROOM_SIZE
    t = 0.05
    structure = [
        ((L / 2, W / 2, -t), (L / 2, W / 2, t)),
        ((-t, W / 2, H / 2), (t, W / 2, H / 2)),
        ((L + t, W / 2, H / 2), (t, W / 2, H / 2)),
        ((L / 2, -t, H / 2), (L / 2, t, H / 2)),
        ((L / 2, W + t, H / 2), (L / 2, t, H / 2)),
    ]
    pts, ids = [], []
    for k, (c, h) in enumerate(structure):
        n = int(points_per_m2 * _box_area(h) / 2)
        pts.append(box_surface(c, h, n, rng))
        ids.append(np.full(n, k))
    for k, obs in enumerate(room_obstacles(seed)):
        if obs[0] == "box":
            _, c, h = obs
            n = int(points_per_m2 * _box_area(h))
            pts.append(box_surface(c, h, n, rng))
        else:
            _, c, r, hh = obs
            n = int(points_per_m2 * (2 * np.pi * r * 2 * hh + 2 * np.pi * r * r))
            pts.append(cylinder_surface(c, r, hh, n, rng))
        ids.append(np.full(n, 5 + k))
    return PointCloud(np.vstack(pts), instance_ids=np.concatenate(ids).astype(np.int64))
