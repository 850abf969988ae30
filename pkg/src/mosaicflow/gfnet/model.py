"""Dense tanh networks with forward-mode spatial jets and reverse-mode weight gradients.

Two layouts are supported for a set of traces ``G`` (K x N_bc) and query points
``X`` (M x 2):

* product -- every trace against every point, outputs shaped ``(K, M)``;
* rows    -- explicit ``(trace_index, point_index)`` pairs, outputs shaped ``(R,)``.

Spatial derivatives are carried as second-order truncated Taylor coefficients
along a small set of directions in the (x, y) plane. For an LPFC network the
hidden stack only sees ``x``, so it is evaluated once per distinct point and
contracted against the traces afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from ..errors import ContractError
from ..field import DEFAULT_N_PER_EDGE

AXES = ((1.0, 0.0), (0.0, 1.0))
AXES_AND_DIAGONAL = ((1.0, 0.0), (0.0, 1.0), (1.0, 1.0))

_DENSE_ROWS_LIMIT = 4_000_000

# Layer widths from the Laplace experiments (hidden layers only).
PRESETS = {
    "fc": ("FC", (128, 128, 96, 96, 64, 64, 32, 32), False),
    "lpfc": ("LPFC", (32, 32, 64, 64, 96, 96, 128, 128), False),
    "lpfc-deep": ("LPFC", (32, 32, 64, 64, 96, 96, 96, 96, 96, 128, 128, 128, 128, 128), False),
    "fc-bc": ("FC", (128, 128, 96, 96, 64, 64, 32, 32), True),
    # desk presets keep one layer per width; LPFC's last hidden width is pinned to N_bc
    "fc-desk": ("FC", (128, 96, 64, 32), False),
    "lpfc-desk": ("LPFC", (32, 64, 96, 128), False),
    "fc-bc-desk": ("FC", (128, 96, 64, 32), True),
}


@dataclass(frozen=True)
class MlpModel:
    arch: str
    layer_sizes: tuple
    weights: tuple
    biases: tuple
    exact_bc: bool = False
    n_bc: int = 4 * DEFAULT_N_PER_EDGE
    edge_length: float = 1.0
    precision: str = "f64"
    activation: str = "tanh"
    fingerprint: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if self.arch not in ("FC", "LPFC"):
            raise ContractError(f"unknown architecture {self.arch!r}")
        if self.exact_bc and self.arch != "FC":
            raise ContractError("the exact-BC wrapper composes around an FC network only")
        if self.arch == "FC" and (sizes[0] != self.n_bc + 2 or sizes[-1] != 1):
            raise ContractError(f"FC needs input width {self.n_bc + 2} and output width 1, got {sizes}")
        if self.arch == "LPFC" and (sizes[0] != 2 or sizes[-1] != self.n_bc):
            raise ContractError(f"LPFC needs input width 2 and final width {self.n_bc}, got {sizes}")
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            raise ContractError("one weight matrix and bias per layer transition")
        dtype = self.dtype
        ws, bs = [], []
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            w = np.asarray(w, dtype=dtype)
            b = np.asarray(b, dtype=dtype)
            if w.shape != (sizes[k + 1], sizes[k]) or b.shape != (sizes[k + 1],):
                raise ContractError(f"layer {k}: expected W {(sizes[k + 1], sizes[k])}, got {w.shape}")
            ws.append(w)
            bs.append(b)
        object.__setattr__(self, "weights", tuple(ws))
        object.__setattr__(self, "biases", tuple(bs))

    @property
    def dtype(self):
        return np.float32 if self.precision == "f32" else np.float64

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def params(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def with_params(self, params) -> "MlpModel":
        return replace(self, weights=tuple(params[0::2]), biases=tuple(params[1::2]))

    def n_params(self) -> int:
        return sum(p.size for p in self.params())


def init_model(
    arch: str = "LPFC",
    hidden=(32, 64, 96, 128),
    n_bc: int = 4 * DEFAULT_N_PER_EDGE,
    exact_bc: bool = False,
    seed=0,
    precision: str = "f64",
    edge_length: float = 1.0,
) -> MlpModel:
    """Glorot-uniform weights, zero biases."""
    arch = arch.upper()
    hidden = tuple(hidden)
    sizes = (n_bc + 2, *hidden, 1) if arch == "FC" else (2, *hidden)
    rng = np.random.default_rng(seed)
    ws, bs = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        ws.append(rng.uniform(-lim, lim, size=(fan_out, fan_in)))
        bs.append(np.zeros(fan_out))
    return MlpModel(arch, sizes, tuple(ws), tuple(bs), exact_bc, n_bc, edge_length, precision)


def from_preset(name: str, seed=0, precision: str = "f64", n_bc: int = 4 * DEFAULT_N_PER_EDGE) -> MlpModel:
    try:
        arch, hidden, exact = PRESETS[name]
    except KeyError:
        raise ContractError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    if arch == "LPFC":
        hidden = (*hidden[:-1], n_bc)
    return init_model(arch, hidden, n_bc, exact, seed, precision)


class _Mlp:
    """One forward sweep through the dense stack with optional jets, plus its reverse sweep."""

    def __init__(self, model: MlpModel, inputs, input_dirs, order: int, linear_last: bool, split=None):
        # split = (traces, t, points, p): the first layer sees [traces[t], points[p]]
        # and is applied per trace and per point before gathering into rows
        self.model = model
        self.order = order
        self.linear_last = linear_last
        self.split = split
        dtype = model.dtype
        a = None if split is not None else np.asarray(inputs, dtype=dtype)
        n_dirs = len(input_dirs) if order else 0
        # derivatives of the inputs are constant row vectors; second derivatives vanish
        a_d = [np.asarray(v, dtype=dtype)[None, :] for v in input_dirs] if order else []
        a_dd = [None] * n_dirs
        self.tape = []
        last = model.n_layers - 1
        for k, (w, b) in enumerate(zip(model.weights, model.biases)):
            if k == 0 and split is not None:
                G, t, X, p = split
                nb = G.shape[1]
                z = (G @ w[:, :nb].T)[t] + (X @ w[:, nb:].T + b)[p]
            else:
                z = a @ w.T + b
            z_d = [v @ w.T for v in a_d]
            z_dd = [None if v is None else v @ w.T for v in a_dd] if order > 1 else [None] * n_dirs
            rec = {"a_prev": a, "a_prev_d": a_d, "a_prev_dd": a_dd, "z_d": z_d, "z_dd": z_dd}
            if k == last and linear_last:
                a, a_d, a_dd = z, z_d, z_dd
                rec["linear"] = True
            else:
                a = np.tanh(z)
                s = 1.0 - a * a
                s2 = -2.0 * a * s
                rec.update(linear=False, a=a, s=s, s2=s2)
                a_d = [s * v for v in z_d]
                if order > 1:
                    a_dd = [s2 * v * v + (0.0 if vv is None else s * vv) for v, vv in zip(z_d, z_dd)]
            self.tape.append(rec)
        rows = a.shape[0]
        self.out = a
        self.out_d = [np.broadcast_to(v, (rows, v.shape[1])) for v in a_d]
        self.out_dd = [np.broadcast_to(v, (rows, v.shape[1])) if v is not None else np.zeros_like(a) for v in a_dd] if order > 1 else []

    def backward(self, adj, adj_d=None, adj_dd=None) -> list:
        model = self.model
        n_dirs = len(self.out_d)
        adj_d = list(adj_d) if adj_d is not None else [None] * n_dirs
        adj_dd = list(adj_dd) if adj_dd is not None else [None] * n_dirs
        grads = [None] * (2 * model.n_layers)
        A = np.zeros_like(self.out) if adj is None else adj
        for k in range(model.n_layers - 1, -1, -1):
            rec = self.tape[k]
            w = model.weights[k]
            z_d, z_dd = rec["z_d"], rec["z_dd"]
            if rec["linear"]:
                Z, Zd, Zdd = A, adj_d, adj_dd
            else:
                s, s2, a = rec["s"], rec["s2"], rec["a"]
                Z = A * s
                Zd, Zdd = [], []
                s3 = None
                for d in range(n_dirs):
                    Ad, Add = adj_d[d], adj_dd[d]
                    zd = z_d[d]
                    if Ad is None and Add is None:
                        Zd.append(None)
                        Zdd.append(None)
                        continue
                    zd_full = np.broadcast_to(zd, Z.shape)
                    acc_d = np.zeros_like(Z)
                    if Ad is not None:
                        acc_d += Ad * s
                        Z = Z + Ad * zd_full * s2
                    if Add is not None:
                        if s3 is None:
                            s3 = -2.0 * s * s - 2.0 * a * s2
                        acc_d += 2.0 * Add * s2 * zd_full
                        Z = Z + Add * zd_full * zd_full * s3
                        if z_dd[d] is not None:
                            Z = Z + Add * z_dd[d] * s2
                        Zdd.append(Add * s)
                    else:
                        Zdd.append(None)
                    Zd.append(acc_d)
            a_prev, a_prev_d, a_prev_dd = rec["a_prev"], rec["a_prev_d"], rec["a_prev_dd"]
            if a_prev is None:
                gw = self._split_weight_grad(Z)
            else:
                gw = Z.T @ a_prev
            for d in range(n_dirs):
                if Zd[d] is not None:
                    if a_prev_d[d].shape[0] == 1:  # constant input direction
                        gw += np.outer(Zd[d].sum(axis=0), a_prev_d[d][0])
                    else:
                        gw += Zd[d].T @ a_prev_d[d]
                if Zdd[d] is not None and a_prev_dd[d] is not None:
                    gw += Zdd[d].T @ a_prev_dd[d]
            grads[2 * k] = gw
            grads[2 * k + 1] = Z.sum(axis=0)
            if k:
                A = Z @ w
                adj_d = [None if v is None else v @ w for v in Zd]
                adj_dd = [None if v is None else v @ w for v in Zdd]
        return grads

    def _split_weight_grad(self, Z):
        G, t, X, p = self.split
        nb = G.shape[1]
        R = Z.shape[0]
        rows = np.arange(R)
        by_trace = sp.csr_matrix((np.ones(R, Z.dtype), (t, rows)), shape=(G.shape[0], R)) @ Z
        by_point = sp.csr_matrix((np.ones(R, Z.dtype), (p, rows)), shape=(X.shape[0], R)) @ Z
        return np.concatenate([by_trace.T @ G, by_point.T @ X], axis=1)


class NetworkPass:
    """Raw network outputs (no exact-BC wrapper) for traces x points, with jets and a reverse sweep.

    ``order`` is 0 (values), 1 (plus first directional derivatives) or 2 (plus
    second directional derivatives along each of ``dirs``).
    """

    def __init__(self, model: MlpModel, traces, points, pairs=None, order: int = 0, dirs=AXES):
        dtype = model.dtype
        self.model = model
        self.traces = np.atleast_2d(np.asarray(traces, dtype=dtype))
        self.points = np.atleast_2d(np.asarray(points, dtype=dtype))
        if self.traces.shape[1] != model.n_bc:
            raise ContractError(f"trace length {self.traces.shape[1]} does not match model N_bc={model.n_bc}")
        if self.points.shape[1] != 2:
            raise ContractError("query points must be (M, 2)")
        self.pairs = None if pairs is None else (np.asarray(pairs[0]), np.asarray(pairs[1]))
        self.order = order
        self.dirs = dirs
        n_dirs = len(dirs) if order else 0
        in_dirs = []
        if model.arch == "LPFC":
            in_dirs = [np.array(v) for v in dirs[:n_dirs]]
            self._mlp = _Mlp(model, self.points, in_dirs, order, linear_last=False)
            H = self._mlp.out
            self.u = self._contract(H)
            self.ud = [self._contract(v) for v in self._mlp.out_d]
            self.udd = [self._contract(v) for v in self._mlp.out_dd]
        else:
            t, p = self._row_index()
            for v in dirs[:n_dirs]:
                e = np.zeros(model.n_bc + 2)
                e[-2:] = v
                in_dirs.append(e)
            split = (self.traces, t, self.points, p)
            self._mlp = _Mlp(model, None, in_dirs, order, linear_last=True, split=split)
            self.u = self._shape(self._mlp.out[:, 0])
            self.ud = [self._shape(v[:, 0]) for v in self._mlp.out_d]
            self.udd = [self._shape(v[:, 0]) for v in self._mlp.out_dd]

    def _row_index(self):
        if self.pairs is not None:
            return self.pairs
        K, M = self.traces.shape[0], self.points.shape[0]
        return np.repeat(np.arange(K), M), np.tile(np.arange(M), K)

    def _shape(self, flat):
        if self.pairs is not None:
            return flat
        return flat.reshape(self.traces.shape[0], self.points.shape[0])

    def _dense_rows(self) -> bool:
        return self.traces.shape[0] * self.points.shape[0] <= _DENSE_ROWS_LIMIT

    def _contract(self, H):
        if self.pairs is None:
            return self.traces @ H.T
        t, p = self.pairs
        if self._dense_rows():
            # full trace x point product is cheaper than gathering R x N_bc rows
            return (self.traces @ H.T)[t, p]
        return np.einsum("rj,rj->r", self.traces[t], H[p])

    def _expand(self, adj):
        """Adjoint of :meth:`_contract`: pull an output adjoint back onto the hidden features."""
        if adj is None:
            return None
        if self.pairs is None:
            return adj.T @ self.traces
        t, p = self.pairs
        K, Q = self.traces.shape[0], self.points.shape[0]
        if self._dense_rows():
            dense = np.bincount(t * Q + p, weights=adj, minlength=K * Q).reshape(K, Q).astype(self.traces.dtype)
            return dense.T @ self.traces
        scatter = sp.csr_matrix((np.ones(p.size), (p, np.arange(p.size))), shape=(Q, p.size))
        return np.asarray(scatter @ (adj[:, None] * self.traces[t]))

    def backward(self, adj_u, adj_ud=None, adj_udd=None) -> list:
        if self.model.arch == "LPFC":
            return self._mlp.backward(
                self._expand(adj_u),
                None if adj_ud is None else [self._expand(a) for a in adj_ud],
                None if adj_udd is None else [self._expand(a) for a in adj_udd],
            )
        col = lambda a: None if a is None else np.reshape(a, (-1, 1))
        return self._mlp.backward(
            col(adj_u),
            None if adj_ud is None else [col(a) for a in adj_ud],
            None if adj_udd is None else [col(a) for a in adj_udd],
        )
