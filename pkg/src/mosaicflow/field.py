"""Geometric and field types, perimeter parameterization, and accuracy metrics.

Perimeter convention: arclength ``s`` runs counterclockwise from the lower-left
corner of a square of edge ``l`` -- bottom edge left to right, right edge bottom
to top, top edge right to left, left edge top to bottom. Each corner belongs to
the edge that starts there, so a trace of ``4 * n_per_edge`` values visits every
boundary vertex of an ``(n_per_edge + 1)``-point grid exactly once.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .errors import ContractError, DataError, DomainError, FormatError

DEFAULT_N_PER_EDGE = 32


def perimeter_to_point(s: float, l: float = 1.0) -> tuple[float, float]:
    if not 0.0 <= s < 4.0 * l:
        raise DomainError(f"arclength {s} outside [0, {4.0 * l})")
    edge, t = divmod(s, l)
    edge = int(edge)
    if edge == 0:
        return (t, 0.0)
    if edge == 1:
        return (l, t)
    if edge == 2:
        return (l - t, l)
    return (0.0, l - t)


def point_to_perimeter(x: float, y: float, l: float = 1.0, tol: float = 1e-12) -> float:
    """Inverse of :func:`perimeter_to_point` for points on the square's boundary."""
    tol = tol * max(l, 1.0)
    on_bottom = abs(y) <= tol
    on_right = abs(x - l) <= tol
    on_top = abs(y - l) <= tol
    on_left = abs(x) <= tol
    inside = -tol <= x <= l + tol and -tol <= y <= l + tol
    if not inside or not (on_bottom or on_right or on_top or on_left):
        raise DomainError(f"point ({x}, {y}) is not on the perimeter of [0, {l}]^2")
    # corner ownership: the edge that starts at the corner wins
    if on_bottom and not on_right:
        return float(np.clip(x, 0.0, l))
    if on_right and not on_top:
        return l + float(np.clip(y, 0.0, l))
    if on_top and not on_left:
        return 2.0 * l + float(np.clip(l - x, 0.0, l))
    return 3.0 * l + float(np.clip(l - y, 0.0, l))


def perimeter_points(n_per_edge: int = DEFAULT_N_PER_EDGE, l: float = 1.0) -> np.ndarray:
    """Positions of the ``4 * n_per_edge`` trace samples, shape ``(N_bc, 2)``."""
    t = np.arange(n_per_edge) * (l / n_per_edge)
    zeros = np.zeros(n_per_edge)
    full = np.full(n_per_edge, l)
    xs = np.concatenate([t, full, l - t, zeros])
    ys = np.concatenate([zeros, t, full, l - t])
    return np.stack([xs, ys], axis=1)


def perimeter_indices(n_per_edge: int = DEFAULT_N_PER_EDGE) -> tuple[np.ndarray, np.ndarray]:
    """Integer vertex indices ``(i, j)`` of each trace sample on the genome grid."""
    t = np.arange(n_per_edge)
    n = np.full(n_per_edge, n_per_edge)
    z = np.zeros(n_per_edge, dtype=int)
    i = np.concatenate([t, n, n_per_edge - t, z])
    j = np.concatenate([z, t, n, n_per_edge - t])
    return i, j


@dataclass(frozen=True)
class BoundaryTrace:
    values: np.ndarray
    genome_edge_length: float = 1.0

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 1 or values.size == 0 or values.size % 4:
            raise ContractError(f"trace length must be a positive multiple of 4, got {values.shape}")
        if self.genome_edge_length <= 0:
            raise ContractError("genome edge length must be positive")
        bad = np.flatnonzero(~np.isfinite(values))
        if bad.size:
            raise DataError(f"non-finite trace value at index {int(bad[0])}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def n_bc(self) -> int:
        return self.values.size

    @property
    def n_per_edge(self) -> int:
        return self.values.size // 4

    def arclengths(self) -> np.ndarray:
        return np.arange(self.n_bc) * (4.0 * self.genome_edge_length / self.n_bc)

    def points(self) -> np.ndarray:
        return perimeter_points(self.n_per_edge, self.genome_edge_length)


def trace_from_function(
    g: Callable, l: float = 1.0, n_per_edge: int = DEFAULT_N_PER_EDGE
) -> BoundaryTrace:
    """Sample ``g(x, y)`` at the trace positions. ``g`` may be vectorized or scalar."""
    pts = perimeter_points(n_per_edge, l)
    try:
        vals = np.broadcast_to(np.asarray(g(pts[:, 0], pts[:, 1]), dtype=float), (len(pts),))
    except (TypeError, ValueError):
        vals = np.array([float(g(x, y)) for x, y in pts])
    bad = np.flatnonzero(~np.isfinite(vals))
    if bad.size:
        raise DataError(f"boundary function is non-finite at trace index {int(bad[0])}")
    return BoundaryTrace(np.array(vals), l)


@dataclass(frozen=True)
class FieldGrid:
    """Scalar field on a uniform vertex grid; ``data[j, i]`` sits at ``(x0 + i dx, y0 + j dy)``.

    ``mask`` marks vertices that belong to the domain; ``None`` means all of them.
    Values outside the mask are stored as NaN.
    """

    nx: int
    ny: int
    origin: tuple[float, float]
    spacing: tuple[float, float]
    data: np.ndarray
    mask: np.ndarray | None = None

    def __post_init__(self):
        data = np.array(self.data, dtype=float).reshape(self.ny, self.nx)
        if self.nx < 1 or self.ny < 1 or min(self.spacing) <= 0:
            raise ContractError("FieldGrid needs positive sizes and spacing")
        mask = self.mask
        if mask is not None:
            mask = np.array(mask, dtype=bool).reshape(self.ny, self.nx)
            if mask.all():
                mask = None
        valid = data if mask is None else data[mask]
        if not np.all(np.isfinite(valid)):
            raise DataError("FieldGrid contains non-finite values inside its domain")
        if mask is not None:
            data = np.where(mask, data, np.nan)
            mask.setflags(write=False)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))
        object.__setattr__(self, "spacing", (float(self.spacing[0]), float(self.spacing[1])))

    @classmethod
    def from_function(cls, f: Callable, nx: int, ny: int, origin=(0.0, 0.0), spacing=(1.0, 1.0), mask=None):
        x, y = _coords(nx, ny, origin, spacing)
        vals = np.broadcast_to(np.asarray(f(x, y), dtype=float), x.shape)
        if mask is not None:
            vals = np.where(mask, vals, np.nan)
        return cls(nx, ny, origin, spacing, vals, mask)

    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        return _coords(self.nx, self.ny, self.origin, self.spacing)

    def valid(self) -> np.ndarray:
        if self.mask is None:
            return np.ones((self.ny, self.nx), dtype=bool)
        return self.mask

    def same_geometry(self, other: "FieldGrid") -> bool:
        if (self.nx, self.ny) != (other.nx, other.ny):
            return False
        scale = max(abs(self.spacing[0]), abs(self.spacing[1]))
        if not np.allclose(self.origin, other.origin, rtol=0, atol=1e-9 * scale):
            return False
        if not np.allclose(self.spacing, other.spacing, rtol=1e-12, atol=0):
            return False
        return bool(np.array_equal(self.valid(), other.valid()))

    def with_data(self, data: np.ndarray) -> "FieldGrid":
        return FieldGrid(self.nx, self.ny, self.origin, self.spacing, data, self.mask)


def _coords(nx, ny, origin, spacing):
    xs = origin[0] + np.arange(nx) * spacing[0]
    ys = origin[1] + np.arange(ny) * spacing[1]
    return np.meshgrid(xs, ys)


@dataclass(frozen=True)
class DomainMask:
    """Set of occupied unit genome cells ``(gx, gy)``; must be edge-connected."""

    cells: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        cells = frozenset((int(a), int(b)) for a, b in self.cells)
        if not cells:
            raise ContractError("domain mask is empty")
        start = next(iter(cells))
        seen = {start}
        queue = deque([start])
        while queue:
            cx, cy = queue.popleft()
            for nb in ((cx + 1, cy), (cx - 1, cy), (cx, cy + 1), (cx, cy - 1)):
                if nb in cells and nb not in seen:
                    seen.add(nb)
                    queue.append(nb)
        if len(seen) != len(cells):
            raise ContractError("domain mask is not edge-connected")
        object.__setattr__(self, "cells", cells)

    @classmethod
    def rectangle(cls, width: int, height: int) -> "DomainMask":
        return cls(frozenset((i, j) for i in range(width) for j in range(height)))

    @classmethod
    def from_cells(cls, cells: Iterable) -> "DomainMask":
        return cls(frozenset(tuple(c) for c in cells))

    def __contains__(self, cell) -> bool:
        return tuple(cell) in self.cells

    def __len__(self) -> int:
        return len(self.cells)

    @property
    def bbox(self) -> tuple[int, int, int, int]:
        """``(gx0, gy0, width, height)`` in cells."""
        xs = [c[0] for c in self.cells]
        ys = [c[1] for c in self.cells]
        return min(xs), min(ys), max(xs) - min(xs) + 1, max(ys) - min(ys) + 1

    def is_rectangle(self) -> bool:
        _, _, w, h = self.bbox
        return w * h == len(self.cells)

    def cell_array(self) -> np.ndarray:
        """Boolean occupancy over the bounding box, indexed ``[gy - gy0, gx - gx0]``."""
        gx0, gy0, w, h = self.bbox
        occ = np.zeros((h, w), dtype=bool)
        for cx, cy in self.cells:
            occ[cy - gy0, cx - gx0] = True
        return occ

    def vertex_masks(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        """Closed-domain and open-interior vertex masks with ``n`` grid cells per genome edge.

        Arrays have shape ``(h * n + 1, w * n + 1)`` over the bounding box.
        """
        occ = self.cell_array()
        fine = np.kron(occ, np.ones((n, n), dtype=bool))
        hh, ww = fine.shape
        pad = np.zeros((hh + 2, ww + 2), dtype=bool)
        pad[1:-1, 1:-1] = fine
        # the four fine cells touching vertex (i, j): (i-1|i, j-1|j)
        ll = pad[0:hh + 1, 0:ww + 1]
        lr = pad[0:hh + 1, 1:ww + 2]
        ul = pad[1:hh + 2, 0:ww + 1]
        ur = pad[1:hh + 2, 1:ww + 2]
        closed = ll | lr | ul | ur
        interior = ll & lr & ul & ur
        return closed, interior


@dataclass(frozen=True)
class Metrics:
    mae: float
    mar: float
    n_points: int


def compute_mae(pred: FieldGrid, truth: FieldGrid) -> float:
    if not pred.same_geometry(truth):
        raise ContractError("MAE needs fields with identical grids and masks")
    valid = pred.valid()
    return float(np.mean(np.abs(pred.data[valid] - truth.data[valid])))


def fd_residual(field: FieldGrid) -> np.ndarray:
    """5-point Laplacian at every vertex whose four neighbours lie in the domain (NaN elsewhere)."""
    if field.nx < 3 or field.ny < 3:
        raise ContractError("FD residual needs at least a 3x3 grid")
    u = field.data
    dx, dy = field.spacing
    res = np.full(u.shape, np.nan)
    c = u[1:-1, 1:-1]
    lap = (u[1:-1, :-2] - 2.0 * c + u[1:-1, 2:]) / dx**2 + (u[:-2, 1:-1] - 2.0 * c + u[2:, 1:-1]) / dy**2
    valid = field.valid()
    inner = valid[1:-1, 1:-1] & valid[1:-1, :-2] & valid[1:-1, 2:] & valid[:-2, 1:-1] & valid[2:, 1:-1]
    res[1:-1, 1:-1] = np.where(inner, lap, np.nan)
    return res


def compute_mar_fd(field: FieldGrid) -> float:
    res = fd_residual(field)
    vals = res[np.isfinite(res)]
    if vals.size == 0:
        raise ContractError("field has no interior vertices")
    return float(np.mean(np.abs(vals)))


def compute_metrics(pred: FieldGrid, truth: FieldGrid) -> Metrics:
    return Metrics(compute_mae(pred, truth), compute_mar_fd(pred), int(pred.valid().sum()))


def write_field_csv(field: FieldGrid, path) -> None:
    """First line ``nx,ny,x0,y0,dx,dy``; then one row per ``j``. Vertices outside the domain are ``nan``."""
    path = Path(path)
    dx, dy = field.spacing
    lines = [",".join(_fmt(v) for v in (field.nx, field.ny, *field.origin, dx, dy))]
    for row in field.data:
        lines.append(",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def read_field_csv(path) -> FieldGrid:
    path = Path(path)
    try:
        rows = [ln for ln in path.read_text().splitlines() if ln.strip()]
        head = [float(v) for v in rows[0].split(",")]
        nx, ny = int(head[0]), int(head[1])
        data = np.array([[float(v) for v in ln.split(",")] for ln in rows[1:]])
    except (IndexError, ValueError) as exc:
        raise FormatError(f"{path}: malformed field CSV ({exc})") from exc
    if len(head) != 6 or data.shape != (ny, nx):
        raise FormatError(f"{path}: header says {nx}x{ny}, body is {data.shape}")
    mask = np.isfinite(data)
    return FieldGrid(nx, ny, (head[2], head[3]), (head[4], head[5]), data, None if mask.all() else mask)


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "%.17g" % float(v) if np.isfinite(v) else "nan"
