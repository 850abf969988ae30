"""Training loss ``L1 + alpha * L2 + beta * L3`` with reverse-mode gradients, and adaptive collocation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ContractError
from ..field import perimeter_points
from .model import AXES, MlpModel
from .ops import ModelPass


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 1e-3
    beta: float = 0.0
    n_collocation: int = 400
    adaptive_collocation: bool = True

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ContractError("alpha and beta must be nonnegative")
        if self.n_collocation < 0:
            raise ContractError("n_collocation must be nonnegative")


@dataclass
class Batch:
    """Supervised rows ``(trace_index, point_index, target)`` plus a shared collocation set.

    Points are stored once in ``points`` (Q, 2); rows refer to them by index so an
    LPFC hidden stack runs once per distinct location.
    """

    traces: np.ndarray  # (K, N_bc)
    points: np.ndarray  # (Q, 2)
    row_trace: np.ndarray  # (R,)
    row_point: np.ndarray  # (R,)
    targets: np.ndarray  # (R,)
    collocation: np.ndarray | None = None  # (C, 2), applied to every trace

    @property
    def n_rows(self) -> int:
        return int(self.targets.size)

    def with_collocation(self, points) -> "Batch":
        return Batch(self.traces, self.points, self.row_trace, self.row_point, self.targets, points)


def make_batch(traces, data_points, include_boundary: bool = True, edge_length: float = 1.0, collocation=None) -> Batch:
    """Batch from traces (K, N_bc) and per-trace data arrays (K, P, 3) of ``x, y, u``.

    With ``include_boundary`` every trace also supervises its own boundary points.
    Coordinates are merged after rounding to 1e-6 of the edge so grid points are shared.
    """
    traces = np.atleast_2d(np.asarray(traces, dtype=float))
    K, n_bc = traces.shape
    data = np.asarray(data_points, dtype=float).reshape(K, -1, 3)
    xy = [data[:, :, :2].reshape(-1, 2)]
    tid = [np.repeat(np.arange(K), data.shape[1])]
    tgt = [data[:, :, 2].ravel()]
    if include_boundary:
        bp = perimeter_points(n_bc // 4, edge_length)
        xy.append(np.tile(bp, (K, 1)))
        tid.append(np.repeat(np.arange(K), n_bc))
        tgt.append(traces.ravel())
    xy = np.concatenate(xy)
    key = np.round(xy * (1e6 / edge_length)).astype(np.int64)
    key = key[:, 0] * 4_000_003 + key[:, 1]
    _, first, inverse = np.unique(key, return_index=True, return_inverse=True)
    return Batch(traces, xy[first], np.concatenate(tid), inverse.ravel(), np.concatenate(tgt), collocation)


@dataclass
class LossResult:
    total: float
    data: float
    residual: float
    tikhonov: float
    grads: list


def loss_and_gradients(model: MlpModel, batch: Batch, config: LossConfig, need_grad: bool = True) -> LossResult:
    """Total loss and its gradient with respect to ``model.params()`` (same order)."""
    no_colloc = batch.collocation is None or len(batch.collocation) == 0
    if batch.traces.shape[0] == 0 or (batch.n_rows == 0 and no_colloc):
        raise ContractError("empty batch: no supervised rows and no collocation points")
    params = model.params()
    grads = [np.zeros_like(p) for p in params]

    l1 = 0.0
    if batch.n_rows:
        mp = ModelPass(model, batch.traces, batch.points, pairs=(batch.row_trace, batch.row_point))
        err = mp.u.astype(float) - batch.targets
        l1 = float(np.mean(err * err))
        if need_grad:
            _accumulate(grads, mp.backward((2.0 / err.size) * err))

    l2 = 0.0
    colloc = batch.collocation
    if config.alpha > 0 and colloc is not None and len(colloc):
        mp = ModelPass(model, batch.traces, colloc, order=2, dirs=AXES)
        lap = mp.udd[0].astype(float) + mp.udd[1].astype(float)
        l2 = float(np.mean(lap * lap))
        if need_grad:
            adj = (2.0 * config.alpha / lap.size) * lap
            _accumulate(grads, mp.backward(None, None, [adj, adj]))

    l3 = 0.0
    if config.beta > 0:
        l3 = float(sum(np.sum(p.astype(float) ** 2) for p in params))
        if need_grad:
            for g, p in zip(grads, params):
                g += 2.0 * config.beta * p
    total = l1 + config.alpha * l2 + config.beta * l3
    return LossResult(total, l1, l2, l3, grads)


def _accumulate(acc, grads):
    for a, g in zip(acc, grads):
        if g is not None:
            a += g


def resample_collocation(model: MlpModel, traces, n_collocation: int, seed=0, max_traces: int = 8) -> np.ndarray:
    """Draw collocation points with density rising where ``|grad u|`` is large.

    ``4 * n_collocation`` uniform candidates are scored by the gradient norm averaged
    over at most ``max_traces`` traces; ``n_collocation`` are kept by weighted sampling
    without replacement using weights ``score + 0.1 * mean(score)``.
    """
    rng = np.random.default_rng(seed)
    l = model.edge_length
    n_cand = 4 * n_collocation
    cand = rng.uniform(0.0, l, size=(n_cand, 2))
    if n_collocation == 0:
        return cand
    traces = np.atleast_2d(np.asarray(traces, dtype=float))[:max_traces]
    mp = ModelPass(model, traces, cand, order=1, dirs=AXES)
    ux, uy = (v.astype(float) for v in mp.ud)
    score = np.sqrt(ux * ux + uy * uy).mean(axis=0)
    mean = score.mean()
    if not np.isfinite(mean) or mean <= 0:
        weights = np.full(n_cand, 1.0 / n_cand)
    else:
        weights = score + 0.1 * mean
        weights = weights / weights.sum()
    pick = rng.choice(n_cand, size=n_collocation, replace=False, p=weights)
    return cand[np.sort(pick)]


def uniform_collocation(n: int, seed=0, edge_length: float = 1.0) -> np.ndarray:
    return np.random.default_rng(seed).uniform(0.0, edge_length, size=(n, 2))
