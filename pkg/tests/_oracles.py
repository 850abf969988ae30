"""Finite-difference oracles and random-model factories shared by the test modules."""

import numpy as np

from mosaicflow.gfnet.loss import LossConfig, loss_and_gradients, make_batch
from mosaicflow.gfnet.model import init_model
from mosaicflow.gfnet.ops import forward


def random_model(kind: str, seed: int, hidden=(12, 10)):
    """``kind`` in {"fc", "lpfc", "fc-bc"}; LPFC's last hidden width is N_bc."""
    rng = np.random.default_rng(seed)
    if kind == "lpfc":
        m = init_model("LPFC", (*hidden, 128), seed=seed)
    else:
        m = init_model("FC", hidden, exact_bc=kind == "fc-bc", seed=seed)
    # nonzero biases so no derivative vanishes by symmetry
    params = [p if p.ndim == 2 else rng.normal(scale=0.3, size=p.shape) for p in m.params()]
    if m.arch == "FC":
        # Glorot over 130 inputs leaves the two coordinates nearly inert; give them O(1) weight
        params[0] = params[0].copy()
        params[0][:, -2:] = rng.normal(size=(params[0].shape[0], 2))
    return m.with_params(params)


def fd_spatial(model, trace, pts, h=1e-3):
    """Fourth-order central differences for (u_x, u_y, u_xx, u_yy)."""
    f = lambda p: forward(model, trace, p)
    u0 = f(pts)
    out_first, out_second = [], []
    for e in (np.array([h, 0.0]), np.array([0.0, h])):
        p1, m1, p2, m2 = f(pts + e), f(pts - e), f(pts + 2 * e), f(pts - 2 * e)
        out_first.append((8 * (p1 - m1) - (p2 - m2)) / (12 * h))
        out_second.append((16 * (p1 + m1) - (p2 + m2) - 30 * u0) / (12 * h**2))
    return (*out_first, *out_second)


def relative_error(a, b) -> float:
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b))) / max(np.max(np.abs(b)), 1e-300))


def random_batch(seed: int, k: int = 3, p: int = 6, n_colloc: int = 5):
    rng = np.random.default_rng(seed)
    traces = rng.normal(size=(k, 128))
    data = np.concatenate([rng.uniform(0.05, 0.95, size=(k, p, 2)), rng.normal(size=(k, p, 1))], axis=2)
    return make_batch(traces, data, collocation=rng.uniform(0.05, 0.95, size=(n_colloc, 2)))


def gradient_check(model, batch, config: LossConfig, n_checks: int, seed: int, step: float = 1e-6):
    """Worst relative mismatch between reverse-mode gradients and central differences of the loss.

    Each component is compared relative to the larger of its own size and 1e-3 of the
    largest gradient entry, so entries that are zero up to rounding do not dominate.
    """
    rng = np.random.default_rng(seed)
    grads = loss_and_gradients(model, batch, config).grads
    scale = max(np.max(np.abs(g)) for g in grads)
    params = model.params()
    worst = 0.0
    for _ in range(n_checks):
        k = int(rng.integers(len(params)))
        idx = tuple(int(rng.integers(s)) for s in params[k].shape)
        plus = [q.copy() for q in params]
        minus = [q.copy() for q in params]
        plus[k][idx] += step
        minus[k][idx] -= step
        lp = loss_and_gradients(model.with_params(plus), batch, config, need_grad=False).total
        lm = loss_and_gradients(model.with_params(minus), batch, config, need_grad=False).total
        fd = (lp - lm) / (2 * step)
        g = grads[k][idx]
        worst = max(worst, abs(g - fd) / max(abs(fd), 1e-3 * scale))
    return worst
