"""Vertex-centred 5-point finite-difference Laplace solver.

Used three ways: to generate training targets, as the ground-truth oracle for
whole domains, and as an exact "genome solver" that can stand in for a trained
network inside the mosaic iteration.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ContractError, DomainError, NumericalError
from .field import DEFAULT_N_PER_EDGE, BoundaryTrace, DomainMask, FieldGrid, perimeter_indices

GENOME_RESOLUTION = DEFAULT_N_PER_EDGE + 1


@dataclass(frozen=True)
class SparseSystem:
    """Interior 5-point system ``matrix @ u = rhs`` (scaled by ``h**2``).

    ``unknowns`` holds flat indices into the vertex grid, ``boundary`` the flat
    indices of Dirichlet vertices and ``coupling`` maps boundary values to rhs
    contributions: ``rhs = coupling @ u[boundary]``.
    """

    matrix: sp.csc_matrix
    unknowns: np.ndarray
    boundary: np.ndarray
    coupling: sp.csr_matrix
    shape: tuple[int, int]

    @property
    def n(self) -> int:
        return self.unknowns.size


def assemble(interior: np.ndarray, closed: np.ndarray) -> SparseSystem:
    """Assemble the Laplacian over ``interior`` vertices; neighbours outside it must be in ``closed``."""
    ny, nx = interior.shape
    flat_int = np.flatnonzero(interior)
    flat_bnd = np.flatnonzero(closed & ~interior)
    if flat_int.size == 0:
        raise ContractError("domain has no interior vertices; the Dirichlet problem is empty")
    unk_id = np.full(ny * nx, -1)
    unk_id[flat_int] = np.arange(flat_int.size)
    bnd_id = np.full(ny * nx, -1)
    bnd_id[flat_bnd] = np.arange(flat_bnd.size)

    jj, ii = np.divmod(flat_int, nx)
    rows, cols, vals = [np.arange(flat_int.size)], [np.arange(flat_int.size)], [np.full(flat_int.size, 4.0)]
    crow, ccol = [], []
    for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        nb = (jj + dj) * nx + (ii + di)
        inner = unk_id[nb] >= 0
        rows.append(np.flatnonzero(inner))
        cols.append(unk_id[nb[inner]])
        vals.append(np.full(inner.sum(), -1.0))
        outer = ~inner
        if np.any(bnd_id[nb[outer]] < 0):
            raise ContractError("interior vertex has a neighbour outside the closed domain")
        crow.append(np.flatnonzero(outer))
        ccol.append(bnd_id[nb[outer]])
    matrix = sp.csc_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(flat_int.size, flat_int.size),
    )
    crow, ccol = np.concatenate(crow), np.concatenate(ccol)
    coupling = sp.csr_matrix((np.ones(crow.size), (crow, ccol)), shape=(flat_int.size, flat_bnd.size))
    return SparseSystem(matrix, flat_int, flat_bnd, coupling, (ny, nx))


def _solve(system: SparseSystem, rhs: np.ndarray, method: str) -> np.ndarray:
    if method == "direct":
        return spla.splu(system.matrix).solve(rhs)
    if method == "cg":
        diag = system.matrix.diagonal()
        precond = spla.LinearOperator(system.matrix.shape, matvec=lambda v: v / diag)
        sol, info = spla.cg(system.matrix, rhs, rtol=1e-12, atol=0.0, M=precond, maxiter=20 * system.n)
        if info != 0:
            raise NumericalError(f"CG did not reach relative residual 1e-12 (info={info})")
        return sol
    raise ContractError(f"unknown solver method {method!r}")


def _as_domain(domain) -> DomainMask:
    if isinstance(domain, DomainMask):
        return domain
    width, height = domain
    return DomainMask.rectangle(int(width), int(height))


def solve_dirichlet(
    domain,
    bc,
    resolution: int = GENOME_RESOLUTION,
    edge_length: float = 1.0,
    method: str = "direct",
) -> FieldGrid:
    """Discrete harmonic field on ``domain`` matching ``bc`` on its boundary vertices.

    Parameters
    ----------
    domain : DomainMask or (width, height)
        Union of genome cells; a pair means an axis-aligned rectangle of cells.
    bc : callable or array
        Either ``bc(x, y)`` (vectorized) or an array over the bounding-box vertex
        grid; only boundary vertices are read.
    resolution : int
        Vertices per genome edge, so the grid spacing is
        ``edge_length / (resolution - 1)``.
    """
    if resolution < 3:
        raise ContractError("resolution must be at least 3 vertices per genome edge")
    mask = _as_domain(domain)
    n = resolution - 1
    h = edge_length / n
    gx0, gy0, _, _ = mask.bbox
    closed, interior = mask.vertex_masks(n)
    ny, nx = closed.shape
    origin = (gx0 * edge_length, gy0 * edge_length)
    if callable(bc):
        x, y = np.meshgrid(origin[0] + np.arange(nx) * h, origin[1] + np.arange(ny) * h)
        values = np.zeros((ny, nx))
        values[closed] = np.broadcast_to(np.asarray(bc(x[closed], y[closed]), dtype=float), (closed.sum(),))
    else:
        values = np.array(bc.data if isinstance(bc, FieldGrid) else bc, dtype=float).reshape(ny, nx)

    system = assemble(interior, closed)
    flat = values.ravel().copy()
    ub = flat[system.boundary]
    if not np.all(np.isfinite(ub)):
        raise ContractError("boundary values must be finite at every boundary vertex")
    flat[system.unknowns] = _solve(system, system.coupling @ ub, method)
    if not np.all(np.isfinite(flat[system.unknowns])):
        raise NumericalError("Laplace solve produced non-finite values")
    return FieldGrid(nx, ny, origin, (h, h), flat.reshape(ny, nx), closed)


class GenomeSolution:
    """Vertex field on one genome, queried anywhere inside by bilinear interpolation."""

    def __init__(self, values: np.ndarray, edge_length: float = 1.0):
        self.values = np.asarray(values, dtype=float)
        self.values.setflags(write=False)
        self.edge_length = float(edge_length)
        self.n = self.values.shape[0] - 1

    def __call__(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        l = self.edge_length
        eps = 1e-12 * l
        if np.any((x < -eps) | (x > l + eps) | (y < -eps) | (y > l + eps)):
            raise DomainError("query point outside the genome")
        fx = np.clip(x, 0.0, l) * (self.n / l)
        fy = np.clip(y, 0.0, l) * (self.n / l)
        i0 = np.clip(np.floor(fx).astype(int), 0, self.n - 1)
        j0 = np.clip(np.floor(fy).astype(int), 0, self.n - 1)
        tx = fx - i0
        ty = fy - j0
        v = self.values
        return (
            (1 - tx) * (1 - ty) * v[j0, i0]
            + tx * (1 - ty) * v[j0, i0 + 1]
            + (1 - tx) * ty * v[j0 + 1, i0]
            + tx * ty * v[j0 + 1, i0 + 1]
        )

    def field(self) -> FieldGrid:
        h = self.edge_length / self.n
        return FieldGrid(self.n + 1, self.n + 1, (0.0, 0.0), (h, h), self.values)


def bilinear_matrix(x, y, n: int, edge_length: float = 1.0) -> sp.csr_matrix:
    """Sparse (Q, (n+1)^2) interpolation weights onto genome vertices, row-major x-fastest."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    l = edge_length
    eps = 1e-12 * l
    if np.any((x < -eps) | (x > l + eps) | (y < -eps) | (y > l + eps)):
        raise DomainError("query point outside the genome")
    fx = np.clip(x, 0.0, l) * (n / l)
    fy = np.clip(y, 0.0, l) * (n / l)
    i0 = np.clip(np.floor(fx).astype(int), 0, n - 1)
    j0 = np.clip(np.floor(fy).astype(int), 0, n - 1)
    tx, ty = fx - i0, fy - j0
    q = np.arange(x.size)
    nx = n + 1
    rows = np.concatenate([q, q, q, q])
    cols = np.concatenate([j0 * nx + i0, j0 * nx + i0 + 1, (j0 + 1) * nx + i0, (j0 + 1) * nx + i0 + 1])
    vals = np.concatenate([(1 - tx) * (1 - ty), tx * (1 - ty), (1 - tx) * ty, tx * ty])
    return sp.csr_matrix((vals, (rows, cols)), shape=(x.size, nx * nx))


@lru_cache(maxsize=8)
def _green_operator(n_per_edge: int) -> np.ndarray:
    """Dense map from a trace to every vertex of the ``(n+1)^2`` genome grid."""
    mask = DomainMask.rectangle(1, 1)
    closed, interior = mask.vertex_masks(n_per_edge)
    system = assemble(interior, closed)
    nx = n_per_edge + 1
    bi, bj = perimeter_indices(n_per_edge)
    trace_flat = bj * nx + bi
    # column k of the boundary block corresponds to trace index k
    pos = np.searchsorted(system.boundary, trace_flat)
    select = sp.csr_matrix((np.ones(pos.size), (pos, np.arange(pos.size))), shape=(system.boundary.size, pos.size))
    rhs = (system.coupling @ select).toarray()
    op = np.zeros((nx * nx, pos.size))
    op[system.unknowns] = spla.splu(system.matrix).solve(rhs)
    op[trace_flat, np.arange(pos.size)] = 1.0
    op.setflags(write=False)
    return op


class NumericGenomeSolver:
    """Exact FD solve of a genome BVP; satisfies the genome-solver contract used by the mosaic."""

    name = "oracle"

    def evaluator(self, points, n_per_edge: int = DEFAULT_N_PER_EDGE, edge_length: float = 1.0):
        """Linear map from traces (B, N_bc) to values at fixed local ``points`` (Q, 2)."""
        op = _green_operator(n_per_edge)
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        rows = bilinear_matrix(pts[:, 0], pts[:, 1], n_per_edge, edge_length) @ op
        return lambda traces: np.atleast_2d(traces) @ rows.T

    def __call__(self, trace: BoundaryTrace) -> GenomeSolution:
        n = trace.n_per_edge
        op = _green_operator(n)
        values = (op @ trace.values).reshape(n + 1, n + 1)
        if not np.all(np.isfinite(values)):
            raise NumericalError("genome solve produced non-finite values")
        return GenomeSolution(values, trace.genome_edge_length)


def genome_solver_numeric(trace: BoundaryTrace) -> GenomeSolution:
    return NumericGenomeSolver()(trace)


def sample_on_segment(solution: Callable, start, end, n_points: int, edge_length: float = 1.0) -> np.ndarray:
    """Values at ``n_points`` equispaced points from ``start`` to ``end`` inclusive."""
    (x0, y0), (x1, y1) = start, end
    if x0 != x1 and y0 != y1:
        raise ContractError("segment must be axis-aligned")
    l = edge_length
    for px, py in (start, end):
        if not (0.0 <= px <= l and 0.0 <= py <= l):
            raise DomainError(f"segment endpoint ({px}, {py}) escapes the genome")
    t = np.linspace(0.0, 1.0, n_points)
    return np.asarray(solution(x0 + t * (x1 - x0), y0 + t * (y1 - y0)), dtype=float)
