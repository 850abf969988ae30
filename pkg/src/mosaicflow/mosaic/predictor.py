"""Iterative assembly of genome solutions over a large domain.

State lives on the global vertex lattice of the domain's bounding box:

* fixed vertices carry the domain boundary condition and never change;
* stored vertices are the interior points of basic-genome borders, the unknowns
  the iteration infers.

Every iteration visits the stages in order. A genome's trace reads fixed and
stored vertices directly; any other perimeter vertex takes the latest solution
of the most recent earlier-stage genome that contains it strictly inside
(averaged over ties). Auxiliary genomes then overwrite the stored vertices lying
strictly inside them; writes within a stage are averaged and committed when the
stage ends. Stored vertices that no auxiliary genome covers are refreshed right
after the basic stage by the discrete Laplace equation across the border, with
off-border neighbours taken from the adjacent basic solutions.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..errors import ArrangementError, ContractError, NumericalError
from ..field import BoundaryTrace, FieldGrid, perimeter_indices
from .arrangement import GenomeArrangement

log = logging.getLogger(__name__)

EPS_GFNET = 1e-4
EPS_ORACLE = 1e-10


@dataclass
class ConvergenceReport:
    iterations: int
    history: list  # per iteration: {"iteration", "max_change", "mean_change", ...}
    converged: bool
    tolerance: float
    reason: str = ""

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "converged": self.converged,
            "tolerance": self.tolerance,
            "reason": self.reason,
            "history": self.history,
        }


@dataclass
class BorderStore:
    """Values on the stored and fixed lattice vertices.

    ``segments()`` regroups the stored vertices by basic-genome border segment,
    ``n_per_edge + 1`` values each including endpoints.
    """

    values: np.ndarray  # (NY, NX) over the bounding-box lattice
    stored: np.ndarray  # bool mask of inferred vertices
    fixed: np.ndarray  # bool mask of domain-boundary vertices
    n_per_edge: int

    def segments(self) -> dict:
        n = self.n_per_edge
        ny, nx = self.values.shape
        out = {}
        for J in range(0, ny, n):
            for I in range(0, nx - n, n):
                seg = (slice(J, J + 1), slice(I, I + n + 1))
                if self.stored[seg].any():
                    out[(I // n, J // n, "h")] = self.values[seg].ravel().copy()
        for I in range(0, nx, n):
            for J in range(0, ny - n, n):
                seg = (slice(J, J + n + 1), slice(I, I + 1))
                if self.stored[seg].any():
                    out[(I // n, J // n, "v")] = self.values[seg].ravel().copy()
        return out

    def fixed_mask(self) -> dict:
        segs = self.segments()
        return {k: False for k in segs}


@dataclass
class MosaicResult:
    field: FieldGrid
    store: BorderStore
    report: ConvergenceReport
    timings: dict = field(default_factory=dict)


@dataclass
class _Plan:
    index: int
    perim: np.ndarray  # (N_bc,) flat lattice indices of the trace points
    direct: np.ndarray  # bool (N_bc,) read from the store / boundary
    sources: list  # (src genome, trace positions, query positions, weight)
    query_flat: list  # flat lattice indices this genome must report
    writes: tuple = (np.empty(0, int), np.empty(0, int))  # (flat store idx, query idx)


def _lattice_bc(arrangement: GenomeArrangement, bc, closed: np.ndarray) -> np.ndarray:
    n = arrangement.n_per_edge
    h = arrangement.edge_length / n
    gx0, gy0, _, _ = arrangement.domain.bbox
    ny, nx = closed.shape
    if callable(bc):
        x, y = np.meshgrid(gx0 * arrangement.edge_length + np.arange(nx) * h, gy0 * arrangement.edge_length + np.arange(ny) * h)
        vals = np.zeros((ny, nx))
        vals[closed] = np.broadcast_to(np.asarray(bc(x[closed], y[closed]), dtype=float), (int(closed.sum()),))
        return vals
    data = np.array(bc.data if isinstance(bc, FieldGrid) else bc, dtype=float)
    if data.shape != (ny, nx):
        raise ContractError(f"boundary values must cover the {ny}x{nx} lattice, got {data.shape}")
    return np.where(closed, data, 0.0)


def _default_evaluator(solver, points, n, l):
    if hasattr(solver, "evaluator"):
        return solver.evaluator(points, n, l)
    x, y = points[:, 0], points[:, 1]

    def run(traces):
        return np.stack([np.asarray(solver(BoundaryTrace(t, l))(x, y), dtype=float) for t in np.atleast_2d(traces)])

    return run


class MosaicPredictor:
    """Prepared iteration for one arrangement, boundary condition and genome solver."""

    def __init__(
        self,
        arrangement: GenomeArrangement,
        domain_bc,
        genome_solver,
        init: str = "zero",
        workers: int | None = None,
    ):
        if init not in ("zero", "extrapolate"):
            raise ContractError("init must be 'zero' or 'extrapolate'")
        self.arrangement = arrangement
        self.solver = genome_solver
        self.workers = workers
        n = self.n = arrangement.n_per_edge
        l = self.l = arrangement.edge_length
        closed, interior = arrangement.domain.vertex_masks(n)
        self.shape = closed.shape
        ny, nx = self.shape
        self.closed = closed
        self.fixed = closed & ~interior
        on_line = np.zeros(self.shape, bool)
        on_line[::n, :] = True
        on_line[:, ::n] = True
        self.stored = interior & on_line
        self.values = _lattice_bc(arrangement, domain_bc, closed)
        self.values[self.stored] = 0.0
        if init == "extrapolate":
            self._extrapolate_init()
        self.genomes = list(arrangement.placements)
        self._build_plans()
        self.outputs = [None] * len(self.genomes)

    # -- planning ---------------------------------------------------------------
    def _strictly_inside(self, I, J):
        n = self.n
        hits = []
        for g, p in enumerate(self.genomes):
            I0, J0 = p.lattice_origin
            if I0 < I < I0 + n and J0 < J < J0 + n:
                hits.append(g)
        return hits

    def _build_plans(self):
        n, (ny, nx) = self.n, self.shape
        bi, bj = perimeter_indices(n)
        direct_mask = (self.fixed | self.stored).ravel()
        # which genomes strictly contain each lattice vertex, as (stage, genome) lists
        containing = {}
        for g, p in enumerate(self.genomes):
            I0, J0 = p.lattice_origin
            jj, ii = np.mgrid[J0 + 1 : J0 + n, I0 + 1 : I0 + n]
            for f in (jj * nx + ii).ravel():
                containing.setdefault(int(f), []).append(g)
        queries = [dict() for _ in self.genomes]

        def request(g, flat):
            q = queries[g]
            if flat not in q:
                q[flat] = len(q)
            return q[flat]

        plans = []
        for g, p in enumerate(self.genomes):
            I0, J0 = p.lattice_origin
            perim = (J0 + bj) * nx + (I0 + bi)
            direct = direct_mask[perim]
            if not np.all(self.closed.ravel()[perim]):
                raise ArrangementError(f"genome {g} at {p.origin} leaves the domain")
            by_src = {}
            for k in np.flatnonzero(~direct):
                f = int(perim[k])
                cands = [c for c in containing.get(f, []) if self.genomes[c].stage < p.stage]
                if not cands:
                    raise ArrangementError(
                        f"genome {g} ({p.kind} at {p.origin}): perimeter point {divmod(f, nx)[::-1]} is not covered"
                    )
                top = max(self.genomes[c].stage for c in cands)
                cands = [c for c in cands if self.genomes[c].stage == top]
                for c in cands:
                    by_src.setdefault((c, len(cands)), []).append((k, request(c, f)))
            sources = [
                (c, np.array([a for a, _ in pairs]), np.array([b for _, b in pairs]), 1.0 / cnt)
                for (c, cnt), pairs in sorted(by_src.items())
            ]
            plans.append(_Plan(g, perim, direct, sources, []))

        # auxiliary writes onto stored vertices strictly inside them
        stored_flat = np.flatnonzero(self.stored.ravel())
        covered = np.zeros(ny * nx, bool)
        for g, p in enumerate(self.genomes):
            if p.is_basic:
                continue
            I0, J0 = p.lattice_origin
            sub = self.stored[J0 + 1 : J0 + n, I0 + 1 : I0 + n]
            jj, ii = np.nonzero(sub)
            flats = (jj + J0 + 1) * nx + (ii + I0 + 1)
            covered[flats] = True
            qidx = np.array([request(g, int(f)) for f in flats], dtype=int)
            plans[g].writes = (flats.astype(int), qidx)
        self.uncovered = np.array([f for f in stored_flat if not covered[f]], dtype=int)
        self._build_exchange(containing, request)

        self.plans = plans
        self.query_flat = [np.array(sorted(q, key=q.get), dtype=int) for q in queries]
        self.evaluators = []
        for g, p in enumerate(self.genomes):
            flats = self.query_flat[g]
            I0, J0 = p.lattice_origin
            jj, ii = np.divmod(flats, nx)
            local = np.stack([(ii - I0) * (self.l / n), (jj - J0) * (self.l / n)], axis=1) if flats.size else np.zeros((0, 2))
            self.evaluators.append(_default_evaluator(self.solver, local, n, self.l) if flats.size else None)

    def _build_exchange(self, containing, request):
        """Sparse system for stored vertices that no auxiliary genome covers."""
        self._exchange = None
        if self.uncovered.size == 0:
            return
        ny, nx = self.shape
        pos = {int(f): k for k, f in enumerate(self.uncovered)}
        rows, cols, vals = [], [], []
        rhs_terms = []  # (row, kind, payload)
        basics = [g for g, p in enumerate(self.genomes) if p.is_basic]
        direct = (self.fixed | self.stored).ravel()
        for k, f in enumerate(self.uncovered):
            rows.append(k)
            cols.append(k)
            vals.append(4.0)
            J, I = divmod(int(f), nx)
            for dI, dJ in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                nb = (J + dJ) * nx + (I + dI)
                if nb in pos:
                    rows.append(k)
                    cols.append(pos[nb])
                    vals.append(-1.0)
                elif direct[nb]:
                    rhs_terms.append((k, "store", nb))
                else:
                    srcs = [c for c in containing.get(nb, []) if c in basics]
                    if not srcs:
                        raise ArrangementError(f"no basic genome contains neighbour {divmod(nb, nx)[::-1]}")
                    for c in srcs:
                        rhs_terms.append((k, "genome", (c, request(c, nb), 1.0 / len(srcs))))
        m = self.uncovered.size
        matrix = sp.csc_matrix((vals, (rows, cols)), shape=(m, m))
        # right-hand side as sparse maps from the store and from each basic solution
        store_terms = [(k, nb) for k, kind, nb in rhs_terms if kind == "store"]
        from_store = sp.csr_matrix(
            (np.ones(len(store_terms)), ([k for k, _ in store_terms], [nb for _, nb in store_terms])),
            shape=(m, ny * nx),
        )
        by_genome = {}
        for k, kind, payload in rhs_terms:
            if kind == "genome":
                c, q, w = payload
                by_genome.setdefault(c, []).append((k, q, w))
        by_genome = {c: tuple(np.array(v) for v in zip(*items)) for c, items in by_genome.items()}
        self._exchange = (spla.splu(matrix), from_store, by_genome)

    def _extrapolate_init(self):
        """Inverse-squared-distance blend of the boundary values onto the stored vertices."""
        ny, nx = self.shape
        jj, ii = np.nonzero(self.fixed)
        bvals = self.values[jj, ii]
        sj, si = np.nonzero(self.stored)
        for start in range(0, si.size, 2048):
            dx = si[start : start + 2048, None] - ii[None, :]
            dy = sj[start : start + 2048, None] - jj[None, :]
            w = (np.hypot(dx, dy) * (self.l / self.n) + 1e-10) ** -2
            self.values[sj[start : start + 2048], si[start : start + 2048]] = (w @ bvals) / w.sum(axis=1)

    # -- iteration ------------------------------------------------------------------
    def trace_for(self, g: int) -> np.ndarray:
        """Assemble the boundary trace of genome ``g`` from the store and earlier solutions."""
        plan = self.plans[g]
        flat = self.values.ravel()
        trace = np.where(plan.direct, flat[plan.perim], 0.0)
        for src, tpos, qpos, w in plan.sources:
            out = self.outputs[src]
            if out is None:
                raise ArrangementError(f"genome {g} needs genome {src}, which has not been solved")
            np.add.at(trace, tpos, w * out[qpos])
        return trace

    def _solve_genome(self, g: int, trace: np.ndarray):
        ev = self.evaluators[g]
        if ev is None:
            return np.empty(0)
        out = np.asarray(ev(trace[None, :]), dtype=float)[0]
        if not np.all(np.isfinite(out)):
            p = self.genomes[g]
            raise NumericalError(f"genome {g} ({p.kind} at {p.origin}) produced non-finite values")
        return out

    def _run_stage(self, members):
        traces = [self.trace_for(g) for g in members]
        if self.workers and self.workers > 1 and len(members) > 1:
            with ThreadPoolExecutor(self.workers) as pool:
                outs = list(pool.map(self._solve_genome, members, traces))
        else:
            outs = [self._solve_genome(g, t) for g, t in zip(members, traces)]
        for g, out in zip(members, outs):
            self.outputs[g] = out
        total = np.zeros(self.values.size)
        count = np.zeros(self.values.size)
        for g in members:
            flats, qidx = self.plans[g].writes
            if flats.size:
                np.add.at(total, flats, self.outputs[g][qidx])
                np.add.at(count, flats, 1.0)
        hit = count > 0
        flat = self.values.ravel()
        flat[hit] = total[hit] / count[hit]

    def _exchange_step(self):
        if self._exchange is None:
            return
        lu, from_store, by_genome = self._exchange
        flat = self.values.ravel()
        rhs = from_store @ flat
        for c, (k, q, w) in by_genome.items():
            np.add.at(rhs, k, w * self.outputs[c][q])
        flat[self.uncovered] = lu.solve(rhs)

    def iterate(self) -> tuple[float, float]:
        """One sweep over all stages; returns (max, mean) absolute change of stored values."""
        before = self.values[self.stored].copy()
        by_stage = {}
        for g, p in enumerate(self.genomes):
            by_stage.setdefault(p.stage, []).append(g)
        for stage in sorted(by_stage):
            self._run_stage(by_stage[stage])
            if stage == 0:
                self._exchange_step()
        change = np.abs(self.values[self.stored] - before)
        if change.size == 0:
            return 0.0, 0.0
        return float(change.max()), float(change.mean())

    def store(self) -> BorderStore:
        return BorderStore(self.values.copy(), self.stored.copy(), self.fixed.copy(), self.n)

    def assemble(self) -> FieldGrid:
        """Solve every basic genome from the current store and average them on the lattice."""
        n, (ny, nx) = self.n, self.shape
        h = self.l / n
        basics = [g for g, p in enumerate(self.genomes) if p.is_basic]
        jj, ii = np.mgrid[0 : n + 1, 0 : n + 1]
        local = np.stack([ii.ravel() * h, jj.ravel() * h], axis=1)
        if not hasattr(self, "_grid_eval"):
            self._grid_eval = _default_evaluator(self.solver, local, n, self.l)
        traces = np.stack([self.trace_for(g) for g in basics])
        vals = np.asarray(self._grid_eval(traces), dtype=float)
        if not np.all(np.isfinite(vals)):
            raise NumericalError("basic genome solution produced non-finite values")
        total = np.zeros(ny * nx)
        count = np.zeros(ny * nx)
        for row, g in zip(vals, basics):
            I0, J0 = self.genomes[g].lattice_origin
            flats = ((jj + J0) * nx + (ii + I0)).ravel()
            np.add.at(total, flats, row)
            np.add.at(count, flats, 1.0)
        data = np.divide(total, count, out=np.full(ny * nx, np.nan), where=count > 0).reshape(ny, nx)
        gx0, gy0, _, _ = self.arrangement.domain.bbox
        return FieldGrid(nx, ny, (gx0 * self.l, gy0 * self.l), (h, h), data, self.closed)

    def run(
        self,
        eps: float = EPS_GFNET,
        max_iterations: int = 500,
        callback: Callable | None = None,
    ) -> ConvergenceReport:
        """Iterate until the max change of stored values drops below ``eps``.

        ``callback(iteration, predictor)`` may return a dict merged into the
        history record; a truthy ``"stop"`` entry ends the run as converged.
        """
        history = []
        converged, reason = False, "max_iterations"
        for it in range(1, max_iterations + 1):
            mx, mean = self.iterate()
            record = {"iteration": it, "max_change": mx, "mean_change": mean}
            extra = callback(it, self) if callback is not None else None
            stop = False
            if extra:
                stop = bool(extra.pop("stop", False))
                record.update(extra)
            history.append(record)
            log.debug("iteration %d max change %.3e", it, mx)
            if stop:
                converged, reason = True, "callback"
                break
            if mx < eps:
                converged, reason = True, "tolerance"
                break
        return ConvergenceReport(len(history), history, converged, eps, reason)


def mf_predict(
    arrangement: GenomeArrangement,
    domain_bc,
    genome_solver,
    eps: float | None = None,
    max_iterations: int = 500,
    init: str = "zero",
    workers: int | None = None,
    callback: Callable | None = None,
) -> MosaicResult:
    """Run the mosaic iteration and assemble the domain field.

    ``eps`` defaults to 1e-10 for the numeric oracle and 1e-4 otherwise.
    Non-convergence is reported in the result, not raised.
    """
    if eps is None:
        eps = EPS_ORACLE if getattr(genome_solver, "name", "") == "oracle" else EPS_GFNET
    pred = MosaicPredictor(arrangement, domain_bc, genome_solver, init=init, workers=workers)
    report = pred.run(eps, max_iterations, callback)
    return MosaicResult(pred.assemble(), pred.store(), report)
