"""Model-level evaluation: raw network plus the optional exact-BC wrapper."""

from __future__ import annotations

import numpy as np

from ..errors import ContractError, DomainError
from .exact_bc import extrapolation_weights, phi_jets
from .model import AXES, AXES_AND_DIAGONAL, MlpModel, NetworkPass


class ModelPass:
    """Outputs ``u``, ``ud[d]``, ``udd[d]`` of the full model; same layouts as :class:`NetworkPass`."""

    def __init__(self, model: MlpModel, traces, points, pairs=None, order: int = 0, dirs=AXES):
        self.model = model
        self.net = NetworkPass(model, traces, points, pairs, order, dirs)
        self.pairs = self.net.pairs
        if not model.exact_bc:
            self.u, self.ud, self.udd = self.net.u, self.net.ud, self.net.udd
            return
        n_dirs = len(dirs) if order else 0
        pts = self.net.points.astype(float)
        l = model.edge_length
        ph, ph_d, ph_dd = phi_jets(pts, dirs[:n_dirs], l)
        wn, wn_d, wn_dd = extrapolation_weights(pts, model.n_bc // 4, l, dirs[:n_dirs], order)
        self._phi = self._spread(ph)
        self._phi_d = [self._spread(v) for v in ph_d]
        self._phi_dd = [self._spread(v) for v in ph_dd] if order > 1 else []
        G = self._blend(wn)
        N, Nd, Ndd = self.net.u, self.net.ud, self.net.udd
        self.u = G + self._phi * N
        self.ud = [self._blend(wn_d[d]) + self._phi_d[d] * N + self._phi * Nd[d] for d in range(len(Nd))]
        self.udd = [
            self._blend(wn_dd[d]) + self._phi_dd[d] * N + 2.0 * self._phi_d[d] * Nd[d] + self._phi * Ndd[d]
            for d in range(len(Ndd))
        ]

    def _spread(self, per_point):
        if self.pairs is None:
            return per_point[None, :]
        return per_point[self.pairs[1]]

    def _blend(self, weights):
        traces = self.net.traces.astype(float)
        if self.pairs is None:
            return traces @ weights.T
        t, p = self.pairs
        return np.einsum("rj,rj->r", traces[t], weights[p])

    def backward(self, adj_u, adj_ud=None, adj_udd=None) -> list:
        if not self.model.exact_bc:
            return self.net.backward(adj_u, adj_ud, adj_udd)
        n_d = len(self.ud)
        adj_ud = list(adj_ud) if adj_ud is not None else [None] * n_d
        adj_udd = list(adj_udd) if adj_udd is not None else [None] * len(self.udd)
        shape = np.shape(self.u)
        A = np.zeros(shape) if adj_u is None else self._phi * adj_u
        An_d, An_dd = [], []
        for d in range(n_d):
            Ad = adj_ud[d]
            Add = adj_udd[d] if d < len(adj_udd) else None
            acc_d = None
            if Ad is not None:
                A = A + self._phi_d[d] * Ad
                acc_d = self._phi * Ad
            if Add is not None:
                A = A + self._phi_dd[d] * Add
                extra = 2.0 * self._phi_d[d] * Add
                acc_d = extra if acc_d is None else acc_d + extra
                An_dd.append(self._phi * Add)
            else:
                An_dd.append(None)
            An_d.append(None if acc_d is None else np.broadcast_to(acc_d, shape))
        return self.net.backward(np.broadcast_to(A, shape), An_d or None, An_dd or None)


def _check_points(model: MlpModel, points) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    l = model.edge_length
    tol = 1e-12 * l
    if pts.shape[1] != 2:
        raise ContractError("query points must have shape (M, 2)")
    if np.any((pts < -tol) | (pts > l + tol)):
        raise DomainError("query point outside the genome")
    return pts


def _trace_values(model: MlpModel, trace) -> np.ndarray:
    g = np.asarray(getattr(trace, "values", trace), dtype=float)
    if g.shape[-1] != model.n_bc:
        raise ContractError(f"trace length {g.shape[-1]} does not match model N_bc={model.n_bc}")
    return g


def forward(model: MlpModel, trace, points) -> np.ndarray:
    """Prediction at each query point (M,) for a single trace."""
    g = _trace_values(model, trace)
    return np.asarray(ModelPass(model, g[None, :], _check_points(model, points)).u[0], dtype=float)


def forward_batch(model: MlpModel, traces, points) -> np.ndarray:
    """Predictions for every trace against every point, shape (K, M)."""
    g = np.atleast_2d(_trace_values(model, traces))
    return np.asarray(ModelPass(model, g, _check_points(model, points)).u, dtype=float)


def spatial_derivatives(model: MlpModel, trace, points, mixed: bool = False):
    """``(u_x, u_y, u_xx, u_yy)`` at each point, plus ``u_xy`` when ``mixed``.

    The trace is held constant; derivatives are exact up to rounding.
    """
    g = _trace_values(model, trace)
    dirs = AXES_AND_DIAGONAL if mixed else AXES
    mp = ModelPass(model, g[None, :], _check_points(model, points), order=2, dirs=dirs)
    ux, uy = (np.asarray(v[0], dtype=float) for v in mp.ud[:2])
    uxx, uyy = (np.asarray(v[0], dtype=float) for v in mp.udd[:2])
    if not mixed:
        return ux, uy, uxx, uyy
    # second derivative along (1, 1) is u_xx + 2 u_xy + u_yy
    uxy = 0.5 * (np.asarray(mp.udd[2][0], dtype=float) - uxx - uyy)
    return ux, uy, uxx, uyy, uxy


def laplacian(model: MlpModel, trace, points) -> np.ndarray:
    _, _, uxx, uyy = spatial_derivatives(model, trace, points)
    return uxx + uyy
