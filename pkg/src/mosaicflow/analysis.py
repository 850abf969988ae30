"""Error decomposition and genome-density sweeps.

Breakdown CSV columns: ``optimization_error, generalization_error, assembly_error,
final_mae, final_mar, genomic_test_mae, iterations, converged``.
Sweep CSV columns: ``arrangement, n_genomes, iterations, converged, final_mae, final_mar``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError
from .fd import solve_dirichlet
from .field import BoundaryTrace, DomainMask, FieldGrid, compute_mae, compute_mar_fd, perimeter_indices
from .gfnet.model import MlpModel
from .gfnet.ops import ModelPass
from .gfnet.solver import GFNetGenomeSolver
from .mosaic.arrangement import GenomeArrangement, build_arrangement
from .mosaic.domains import BoundaryCondition
from .mosaic.predictor import mf_predict


def as_solver(model_or_solver):
    if isinstance(model_or_solver, MlpModel):
        return GFNetGenomeSolver(model_or_solver)
    return model_or_solver


def _bc_values(domain: DomainMask, bc, n: int, l: float):
    if isinstance(bc, BoundaryCondition):
        return bc.lattice_values(domain, n, l)
    return bc


def genomic_test_mae(model, domain: DomainMask, truth: FieldGrid, n_per_edge: int = 32, edge_length: float = 1.0) -> float:
    """MAE of one-shot genome predictions whose traces come from the ground truth.

    Every basic genome reads its trace from ``truth`` and is evaluated at all of
    its vertices; no mosaic iteration is involved.
    """
    solver = as_solver(model)
    n, l = n_per_edge, edge_length
    gx0, gy0, w, h = domain.bbox
    if (truth.ny, truth.nx) != (h * n + 1, w * n + 1) or not np.allclose(truth.spacing, (l / n, l / n)):
        raise ContractError(
            f"ground truth grid {truth.nx}x{truth.ny} with spacing {truth.spacing} does not match "
            f"{n} cells per genome on the {w}x{h} bounding box"
        )
    bi, bj = perimeter_indices(n)
    jj, ii = np.mgrid[0 : n + 1, 0 : n + 1]
    local = np.stack([ii.ravel() * (l / n), jj.ravel() * (l / n)], axis=1)
    evaluate = solver.evaluator(local, n, l) if hasattr(solver, "evaluator") else None
    errs = []
    data = truth.data
    for gx, gy in sorted(domain.cells, key=lambda c: (c[1], c[0])):
        I0, J0 = (gx - gx0) * n, (gy - gy0) * n
        trace = data[J0 + bj, I0 + bi]
        ref = data[J0 + jj, I0 + ii].ravel()
        if evaluate is not None:
            pred = np.asarray(evaluate(trace[None, :]))[0]
        else:
            pred = np.asarray(solver(BoundaryTrace(trace, l))(local[:, 0], local[:, 1]))
        errs.append(np.abs(pred - ref))
    return float(np.mean(np.concatenate(errs)))


def interior_vertices(n_per_edge: int = 32, edge_length: float = 1.0) -> np.ndarray:
    jj, ii = np.mgrid[1:n_per_edge, 1:n_per_edge]
    h = edge_length / n_per_edge
    return np.stack([ii.ravel() * h, jj.ravel() * h], axis=1)


def model_test_mar(model: MlpModel, traces, n_per_edge: int = 32, chunk: int = 16) -> float:
    """Mean ``|laplacian|`` of the network over the interior genome vertices of each trace."""
    traces = np.atleast_2d(np.asarray(traces, dtype=float))
    pts = interior_vertices(n_per_edge, model.edge_length)
    total = 0.0
    for start in range(0, len(traces), chunk):
        mp = ModelPass(model, traces[start : start + chunk], pts, order=2)
        total += float(np.abs(mp.udd[0] + mp.udd[1]).sum())
    return total / (len(traces) * len(pts))


@dataclass
class ErrorBreakdown:
    optimization_error: float
    generalization_error: float
    assembly_error: float
    final_mae: float
    final_mar: float
    genomic_test_mae: float = math.nan
    iterations: int = 0
    converged: bool = False

    def total(self) -> float:
        return self.optimization_error + self.generalization_error + self.assembly_error


def _closing_term(partial: float, final: float) -> float:
    """``x`` with ``partial + x == final`` in floating point where one exists (else the nearest)."""
    x = final - partial
    for _ in range(8):
        s = partial + x
        if s == final:
            break
        x = np.nextafter(x, math.inf if s < final else -math.inf)
    return float(x)


def decompose_errors(
    model,
    train_mae: float,
    domain: DomainMask,
    bc,
    arrangement: GenomeArrangement | None = None,
    eps: float | None = None,
    max_iterations: int = 500,
    n_per_edge: int = 32,
    edge_length: float = 1.0,
) -> ErrorBreakdown:
    """Optimization / generalization / assembly split of the final mosaic error.

    ``train_mae`` is the data-term MAE at the best-validation checkpoint (0 for
    the numeric oracle). The assembly term closes the sum exactly.
    """
    solver = as_solver(model)
    values = _bc_values(domain, bc, n_per_edge, edge_length)
    truth = solve_dirichlet(domain, values, n_per_edge + 1, edge_length)
    test = genomic_test_mae(solver, domain, truth, n_per_edge, edge_length)
    arrangement = arrangement or build_arrangement(domain, 1, edge_length, n_per_edge)
    result = mf_predict(arrangement, values, solver, eps=eps, max_iterations=max_iterations)
    final = compute_mae(result.field, truth)
    opt = float(train_mae)
    gen = test - opt
    asm = _closing_term(opt + gen, final)
    return ErrorBreakdown(
        opt, gen, asm, final, compute_mar_fd(result.field), test, result.report.iterations, result.report.converged
    )


def layer_label(config) -> str:
    if isinstance(config, int):
        config = ["vhc"] * config
    return "+".join(config) if config else "none"


def density_sweep(
    model,
    domain: DomainMask,
    bc,
    configurations,
    eps: float | None = None,
    max_iterations: int = 500,
    csv_path=None,
    n_per_edge: int = 32,
    edge_length: float = 1.0,
) -> list[dict]:
    """Run the mosaic predictor once per auxiliary-layer configuration."""
    solver = as_solver(model)
    values = _bc_values(domain, bc, n_per_edge, edge_length)
    truth = solve_dirichlet(domain, values, n_per_edge + 1, edge_length)
    rows = []
    for config in configurations:
        arrangement = build_arrangement(domain, config, edge_length, n_per_edge)
        result = mf_predict(arrangement, values, solver, eps=eps, max_iterations=max_iterations)
        rows.append(
            {
                "arrangement": layer_label(config),
                "n_genomes": len(arrangement),
                "iterations": result.report.iterations,
                "converged": result.report.converged,
                "final_mae": compute_mae(result.field, truth),
                "final_mar": compute_mar_fd(result.field),
            }
        )
    if csv_path is not None:
        write_rows(rows, csv_path)
    return rows


def write_rows(rows: list[dict], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]) if rows else [])
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def breakdown_row(b: ErrorBreakdown) -> dict:
    return asdict(b)
