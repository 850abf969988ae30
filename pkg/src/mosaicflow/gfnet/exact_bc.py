"""Hard boundary enforcement ``u = G(g, x) + phi(x) * N(g, x)``.

``G`` blends the trace by inverse squared distance to the trace points and
``phi = x (l - x) y (l - y)`` vanishes on the genome boundary. Both come with
first and second directional derivatives so the wrapped model can be
differentiated exactly.
"""

from __future__ import annotations

import numpy as np

from ..field import perimeter_points

EPS = 1e-10


def phi(x, y, l: float = 1.0):
    return x * (l - x) * y * (l - y)


def phi_jets(points: np.ndarray, dirs, l: float = 1.0):
    """Value, directional first and second derivatives of ``phi`` at ``points`` (M, 2)."""
    x, y = points[:, 0], points[:, 1]
    px, py = x * (l - x), y * (l - y)
    dpx, dpy = l - 2.0 * x, l - 2.0 * y
    fx, fy = dpx * py, px * dpy
    fxx, fyy, fxy = -2.0 * py, -2.0 * px, dpx * dpy
    d1 = [vx * fx + vy * fy for vx, vy in dirs]
    d2 = [vx * vx * fxx + 2.0 * vx * vy * fxy + vy * vy * fyy for vx, vy in dirs]
    return px * py, d1, d2


def extrapolation_weights(points: np.ndarray, n_per_edge: int, l: float = 1.0, dirs=(), order: int = 0):
    """Normalized inverse-squared-distance weights (M, N_bc) and their directional derivatives."""
    bc = perimeter_points(n_per_edge, l)
    r = points[:, None, :] - bc[None, :, :]
    dist = np.sqrt(np.einsum("mkc,mkc->mk", r, r))
    q = 1.0 / (dist + EPS)
    w = q * q
    total = w.sum(axis=1, keepdims=True)
    wn = w / total
    if order == 0:
        return wn, [], []
    safe = np.maximum(dist, 1e-300)
    q3 = w * q
    q4 = w * w
    d1, d2 = [], []
    for vx, vy in dirs:
        rv = r[..., 0] * vx + r[..., 1] * vy
        w_v = -2.0 * q3 * rv / safe
        s_v = w_v.sum(axis=1, keepdims=True)
        wn_v = (w_v - wn * s_v) / total
        d1.append(wn_v)
        if order > 1:
            vv = vx * vx + vy * vy
            w_vv = 6.0 * q4 * (rv / safe) ** 2 - 2.0 * q3 * (vv / safe - rv * rv / safe**3)
            s_vv = w_vv.sum(axis=1, keepdims=True)
            d2.append((w_vv - wn * s_vv - 2.0 * wn_v * s_v) / total)
    return wn, d1, d2


def extrapolate_bc(trace, points, l: float = 1.0) -> np.ndarray:
    """``G(g, x)`` for one trace at query points (M, 2)."""
    g = np.asarray(getattr(trace, "values", trace), dtype=float)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    wn, _, _ = extrapolation_weights(pts, g.size // 4, l)
    return wn @ g
