"""Fused numba kernels for the LM residuals and planner clearance.

They evaluate the same formulas as :mod:`sqdec.geometry` for a batch of
parameter sets; the test suite checks the two agree.
"""
import math

import numpy as np
from numba import njit

_FLOOR = 1e-12


@njit(cache=True, inline="always")
def _logaddexp(a, b):
    m = max(a, b)
    return m + math.log1p(math.exp(-abs(a - b)))


@njit(cache=True)
def weighted_radial_batch(points, weights, scale, e1, e2, R, t):
    """``weights * radial_distance`` for B parameter sets -> (B, n)."""
    B = scale.shape[0]
    n = points.shape[0]
    out = np.empty((B, n))
    for b in range(B):
        p2 = 2.0 / e2[b]
        p1 = 2.0 / e1[b]
        ratio = e2[b] / e1[b]
        half = -0.5 * e1[b]
        smin = min(scale[b, 0], min(scale[b, 1], scale[b, 2]))
        for i in range(n):
            d0 = points[i, 0] - t[b, 0]
            d1 = points[i, 1] - t[b, 1]
            d2 = points[i, 2] - t[b, 2]
            x = d0 * R[b, 0, 0] + d1 * R[b, 1, 0] + d2 * R[b, 2, 0]
            y = d0 * R[b, 0, 1] + d1 * R[b, 1, 1] + d2 * R[b, 2, 1]
            z = d0 * R[b, 0, 2] + d1 * R[b, 1, 2] + d2 * R[b, 2, 2]
            norm = math.sqrt(x * x + y * y + z * z)
            if norm == 0.0:
                out[b, i] = weights[i] * smin
                continue
            lx = math.log(max(abs(x) / scale[b, 0], _FLOOR))
            ly = math.log(max(abs(y) / scale[b, 1], _FLOOR))
            lz = math.log(max(abs(z) / scale[b, 2], _FLOOR))
            logf = _logaddexp(ratio * _logaddexp(p2 * lx, p2 * ly), p1 * lz)
            out[b, i] = weights[i] * norm * abs(math.expm1(half * logf))
    return out


@njit(cache=True, inline="always")
def _superellipse(theta, eps):
    c = math.cos(theta)
    s = math.sin(theta)
    lc = (2.0 / eps) * math.log(max(abs(c), _FLOOR))
    ls = (2.0 / eps) * math.log(max(abs(s), _FLOOR))
    r = math.exp(-0.5 * eps * _logaddexp(lc, ls))
    return r * c, r * s


@njit(cache=True)
def surface_points_batch(theta_m, theta_w, scale, e1, e2, R, t):
    """World surface points at fixed polar angles for B parameter sets -> (B*K, 3)."""
    B = scale.shape[0]
    K = theta_m.shape[0]
    out = np.empty((B * K, 3))
    for b in range(B):
        for k in range(K):
            cm, sm = _superellipse(theta_m[k], e1[b])
            cw, sw = _superellipse(theta_w[k], e2[b])
            x = scale[b, 0] * cm * cw
            y = scale[b, 1] * cm * sw
            z = scale[b, 2] * sm
            for j in range(3):
                out[b * K + k, j] = R[b, j, 0] * x + R[b, j, 1] * y + R[b, j, 2] * z + t[b, j]
    return out


@njit(cache=True)
def clearance_batch(points, scale, e1, e2, R, t):
    """Smallest radial clearance over B primitives per point; -1 inside any of them."""
    B = scale.shape[0]
    n = points.shape[0]
    out = np.full(n, np.inf)
    for i in range(n):
        best = np.inf
        for b in range(B):
            d0 = points[i, 0] - t[b, 0]
            d1 = points[i, 1] - t[b, 1]
            d2 = points[i, 2] - t[b, 2]
            x = d0 * R[b, 0, 0] + d1 * R[b, 1, 0] + d2 * R[b, 2, 0]
            y = d0 * R[b, 0, 1] + d1 * R[b, 1, 1] + d2 * R[b, 2, 1]
            z = d0 * R[b, 0, 2] + d1 * R[b, 1, 2] + d2 * R[b, 2, 2]
            norm = math.sqrt(x * x + y * y + z * z)
            if norm == 0.0:
                best = -1.0
                break
            p2 = 2.0 / e2[b]
            lx = math.log(max(abs(x) / scale[b, 0], _FLOOR))
            ly = math.log(max(abs(y) / scale[b, 1], _FLOOR))
            lz = math.log(max(abs(z) / scale[b, 2], _FLOOR))
            logf = _logaddexp((e2[b] / e1[b]) * _logaddexp(p2 * lx, p2 * ly), (2.0 / e1[b]) * lz)
            if logf <= 0.0:
                best = -1.0
                break
            d = norm * abs(math.expm1(-0.5 * e1[b] * logf))
            if d < best:
                best = d
        out[i] = best
    return out
