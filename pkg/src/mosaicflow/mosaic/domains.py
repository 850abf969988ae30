"""Domain specification files, boundary-condition families and the logo mask.

Arclength ``s`` along a domain boundary follows each boundary loop with the
domain on the left (counterclockwise for the outer loop), starting from the
lowest, then leftmost, boundary vertex; further loops continue the count.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ContractError, DataError, FormatError
from ..field import DEFAULT_N_PER_EDGE, DomainMask

BC_FAMILIES = ("sin_perimeter", "harmonic_quadratic", "paper_g1", "paper_g2", "logo_bc", "constant", "gp", "file")


def _fine_cells(mask: DomainMask, n: int) -> np.ndarray:
    return np.kron(mask.cell_array(), np.ones((n, n), dtype=bool))


def boundary_arclength(mask: DomainMask, n: int = DEFAULT_N_PER_EDGE, edge_length: float = 1.0) -> np.ndarray:
    """Arclength at every boundary vertex of the bounding-box lattice (NaN elsewhere)."""
    occ = _fine_cells(mask, n)
    H, W = occ.shape
    pad = np.zeros((H + 2, W + 2), bool)
    pad[1:-1, 1:-1] = occ
    jj, ii = np.nonzero(occ)
    P, Jp = ii + 1, jj + 1
    edges = {}

    def add(a, b):
        edges.setdefault(a, []).append(b)

    for i, j, pi, pj in zip(ii, jj, P, Jp):
        if not pad[pj - 1, pi]:
            add((i, j), (i + 1, j))
        if not pad[pj, pi + 1]:
            add((i + 1, j), (i + 1, j + 1))
        if not pad[pj + 1, pi]:
            add((i + 1, j + 1), (i, j + 1))
        if not pad[pj, pi - 1]:
            add((i, j + 1), (i, j))
    s_grid = np.full((H + 1, W + 1), np.nan)
    h = edge_length / n
    s = 0.0
    while edges:
        start = min(edges, key=lambda v: (v[1], v[0]))
        v = start
        while v in edges:
            if np.isnan(s_grid[v[1], v[0]]):
                s_grid[v[1], v[0]] = s
            nxt = edges[v].pop(0)
            if not edges[v]:
                del edges[v]
            s += h
            v = nxt
    return s_grid


@dataclass(frozen=True)
class BoundaryCondition:
    """A named boundary-condition family with parameters.

    ``sin_perimeter``: sin(2 pi k s / P); ``harmonic_quadratic``: a + b x + c y + d xy + e (x^2 - y^2);
    ``paper_g1``: sin(2 pi s / sqrt(A)); ``paper_g2``: sin(2 pi s); ``logo_bc``: sin(2 pi (x/6 + y/5));
    ``constant``: c; ``gp``: a squared-exponential GP draw along the boundary arclength
    (``lengthscale``, ``variance``, ``seed``); ``file``: periodic linear interpolation of an ``arclength,value`` CSV.
    """

    family: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in BC_FAMILIES:
            raise ContractError(f"unknown boundary family {self.family!r}; choose from {BC_FAMILIES}")

    def lattice_values(self, mask: DomainMask, n: int = DEFAULT_N_PER_EDGE, edge_length: float = 1.0) -> np.ndarray:
        """Values on the bounding-box vertex lattice; only boundary vertices are meaningful."""
        gx0, gy0, w, hgt = mask.bbox
        h = edge_length / n
        x, y = np.meshgrid(gx0 * edge_length + np.arange(w * n + 1) * h, gy0 * edge_length + np.arange(hgt * n + 1) * h)
        f, p = self.family, self.params
        if f == "harmonic_quadratic":
            a, b, c, d, e = p.get("coefficients", (0.0, 0.0, 0.0, 1.0, 1.0))
            return a + b * x + c * y + d * x * y + e * (x * x - y * y)
        if f == "logo_bc":
            return np.sin(2 * np.pi * (x / 6.0 + y / 5.0))
        if f == "constant":
            return np.full(x.shape, float(p.get("value", 1.0)))
        s = np.nan_to_num(boundary_arclength(mask, n, edge_length))
        if f == "paper_g2":
            return np.sin(2 * np.pi * s)
        if f == "paper_g1":
            area = len(mask) * edge_length**2
            return np.sin(2 * np.pi * s / np.sqrt(area))
        if f == "gp":
            return gp_boundary_values(
                mask, float(p.get("lengthscale", 1.0)), float(p.get("variance", 1.0)), int(p.get("seed", 0)), n, edge_length
            )
        if f == "sin_perimeter":
            perim = _perimeter_length(mask, n, edge_length)
            return np.sin(2 * np.pi * float(p.get("frequency", 1.0)) * s / perim)
        return _interp_file(Path(p["path"]), s, _perimeter_length(mask, n, edge_length))

    def __call__(self, x, y):
        """Pointwise evaluation for the families that depend on position only."""
        if self.family == "harmonic_quadratic":
            a, b, c, d, e = self.params.get("coefficients", (0.0, 0.0, 0.0, 1.0, 1.0))
            return a + b * x + c * y + d * x * y + e * (x * x - y * y)
        if self.family == "logo_bc":
            return np.sin(2 * np.pi * (np.asarray(x) / 6.0 + np.asarray(y) / 5.0))
        if self.family == "constant":
            return np.full(np.shape(x), float(self.params.get("value", 1.0)))
        raise ContractError(f"{self.family} depends on boundary arclength; use lattice_values")


def _perimeter_length(mask, n, edge_length) -> float:
    occ = _fine_cells(mask, n)
    pad = np.pad(occ, 1)
    count = np.sum(pad[1:, :] != pad[:-1, :]) + np.sum(pad[:, 1:] != pad[:, :-1])
    return float(count) * edge_length / n


def gp_boundary_values(
    mask: DomainMask,
    lengthscale: float = 1.0,
    variance: float = 1.0,
    seed: int = 0,
    n: int = DEFAULT_N_PER_EDGE,
    edge_length: float = 1.0,
) -> np.ndarray:
    """One GP draw on the boundary vertices, periodic over the total boundary length."""
    from ..gp import KernelSpec, kernel_eval

    s = boundary_arclength(mask, n, edge_length)
    on = ~np.isnan(s)
    sv = s[on]
    perim = _perimeter_length(mask, n, edge_length)
    spec = KernelSpec(variance=variance, lengthscale=lengthscale)
    cov = kernel_eval(spec, sv[:, None], sv[None, :], perim / 4.0)
    chol = np.linalg.cholesky(cov + 1e-10 * variance * np.eye(len(sv)))
    out = np.zeros(s.shape)
    out[on] = chol @ np.random.default_rng(seed).standard_normal(len(sv))
    return out


def _interp_file(path: Path, s: np.ndarray, perimeter: float) -> np.ndarray:
    try:
        with path.open() as fh:
            rows = [r for r in csv.reader(fh) if r and not r[0].lstrip().startswith("#")]
    except OSError as exc:
        raise FormatError(f"cannot read boundary file {path}: {exc}") from exc
    try:
        if rows and not _is_number(rows[0][0]):
            rows = rows[1:]
        table = np.array([[float(a), float(b)] for a, b, *_ in rows])
    except (ValueError, TypeError) as exc:
        raise FormatError(f"{path}: expected 'arclength,value' rows") from exc
    if table.size == 0:
        raise FormatError(f"{path}: no samples")
    if not np.all(np.isfinite(table)):
        raise DataError(f"{path}: non-finite sample")
    order = np.argsort(table[:, 0])
    return np.interp(s, table[order, 0], table[order, 1], period=perimeter)


def _is_number(text: str) -> bool:
    try:
        float(text)
        return True
    except ValueError:
        return False


_GLYPHS = {
    "M": ["11111", "10101", "10101", "10101", "10101", "10001", "10001"],
    "O": ["11111", "10001", "10001", "10001", "10001", "10001", "11111"],
    "S": ["11111", "10000", "10000", "11111", "00001", "00001", "11111"],
    "A": ["11111", "10001", "10001", "11111", "10001", "10001", "10001"],
    "I": ["11111", "00100", "00100", "00100", "00100", "00100", "11111"],
    "C": ["11111", "10000", "10000", "10000", "10000", "10000", "11111"],
    "F": ["11111", "10000", "10000", "11110", "10000", "10000", "10000"],
    "L": ["10000", "10000", "10000", "10000", "10000", "10000", "11111"],
    "W": ["10001", "10001", "10101", "10101", "10101", "10101", "11111"],
}


def logo_mask(text: str = "MOSAIC FLOW", scale: int = 2) -> DomainMask:
    """Block-letter text standing on a baseline; each glyph pixel becomes ``scale x scale`` cells."""
    pixels = set()
    x = 0
    for ch in text:
        if ch == " ":
            x += 3
            continue
        rows = _GLYPHS[ch.upper()]
        for r, row in enumerate(rows):
            for c, bit in enumerate(row):
                if bit == "1":
                    pixels.add((x + c, 7 - r))
        x += 6
    for c in range(x - 1):
        pixels.add((c, 0))
    cells = {(px * scale + a, py * scale + b) for px, py in pixels for a in range(scale) for b in range(scale)}
    return DomainMask.from_cells(cells)


@dataclass
class DomainSpec:
    mask: DomainMask
    bc: BoundaryCondition
    edge_length: float = 1.0
    name: str = ""

    def bc_values(self, n: int = DEFAULT_N_PER_EDGE) -> np.ndarray:
        return self.bc.lattice_values(self.mask, n, self.edge_length)


def parse_domain_spec(spec: dict, base_dir: Path | None = None) -> DomainSpec:
    """Build a :class:`DomainSpec` from its JSON form.

    Keys: one of ``cells`` (list of [gx, gy]), ``rectangle`` ([w, h]) or
    ``builtin`` (``"logo"``); optional ``genome_edge_length``; and ``bc`` with
    either ``family`` plus parameters or ``file`` (an arclength,value CSV).
    """
    if not isinstance(spec, dict):
        raise ContractError("domain spec must be a JSON object")
    if "cells" in spec:
        mask = DomainMask.from_cells(tuple(c) for c in spec["cells"])
    elif "rectangle" in spec:
        w, h = spec["rectangle"]
        mask = DomainMask.rectangle(int(w), int(h))
    elif spec.get("builtin") == "logo":
        mask = logo_mask(spec.get("text", "MOSAIC FLOW"), int(spec.get("scale", 2)))
    else:
        raise ContractError("domain spec needs 'cells', 'rectangle' or 'builtin'")
    bc_spec = dict(spec.get("bc", {"family": "paper_g2"}))
    if "file" in bc_spec:
        path = Path(bc_spec.pop("file"))
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        bc = BoundaryCondition("file", {"path": str(path)})
    else:
        family = bc_spec.pop("family", None)
        if family is None:
            raise ContractError("bc needs 'family' or 'file'")
        bc = BoundaryCondition(family, bc_spec)
    edge = float(spec.get("genome_edge_length", 1.0))
    if edge <= 0:
        raise ContractError("genome_edge_length must be positive")
    return DomainSpec(mask, bc, edge, spec.get("name", ""))


def load_domain_spec(path) -> DomainSpec:
    path = Path(path)
    try:
        spec = json.loads(path.read_text())
    except OSError as exc:
        raise FormatError(f"cannot read domain spec {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ContractError(f"domain spec {path} is not valid JSON: {exc}") from exc
    return parse_domain_spec(spec, path.parent)
