"""Placement of basic and auxiliary genomes over a union of unit cells.

Positions are kept on the global vertex lattice (``n`` vertices per genome
edge, origin at the lower-left corner of the mask's bounding box) so every
genome trace lands exactly on lattice vertices.

Layer 0 auxiliaries are centred on interior border segments (vertical and
horizontal) and on interior corners shared by four cells. Layer ``k >= 1``
places genomes offset by ``delta = l / 2**(k + 1)`` on both sides of every
border, and two central genomes per interior corner shifted by
``(-delta, -delta)`` and ``(+delta, +delta)``; each such genome straddles a
border of the previous layer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ContractError
from ..field import DEFAULT_N_PER_EDGE, DomainMask

KINDS = ("basic", "aux_vertical", "aux_horizontal", "aux_corner")
_CATEGORY = {"v": "aux_vertical", "h": "aux_horizontal", "c": "aux_corner"}


@dataclass(frozen=True)
class GenomePlacement:
    origin: tuple  # (x, y) in domain coordinates
    kind: str
    stage: int
    layer: int  # -1 for basic genomes
    lattice_origin: tuple  # (I, J) vertex indices relative to the bounding box

    @property
    def is_basic(self) -> bool:
        return self.kind == "basic"


@dataclass(frozen=True)
class GenomeArrangement:
    placements: tuple
    domain: DomainMask
    edge_length: float = 1.0
    n_per_edge: int = DEFAULT_N_PER_EDGE

    def __len__(self) -> int:
        return len(self.placements)

    @property
    def basic(self) -> list:
        return [p for p in self.placements if p.is_basic]

    @property
    def auxiliary(self) -> list:
        return [p for p in self.placements if not p.is_basic]

    def stages(self) -> list[int]:
        return sorted({p.stage for p in self.placements})

    def counts(self) -> dict:
        out = {k: 0 for k in KINDS}
        for p in self.placements:
            out[p.kind] += 1
        return out


def _layer_spec(aux_layers) -> list[str]:
    if aux_layers is None:
        return []
    if isinstance(aux_layers, (int, np.integer)):
        if aux_layers < 0:
            raise ContractError("aux_layers must be nonnegative")
        return ["vhc"] * int(aux_layers)
    spec = [str(s).lower() for s in aux_layers]
    for s in spec:
        if not s or set(s) - set(_CATEGORY):
            raise ContractError(f"layer spec {s!r} must be a non-empty combination of 'v', 'h', 'c'")
    return spec


def build_arrangement(
    domain: DomainMask,
    aux_layers=1,
    edge_length: float = 1.0,
    n_per_edge: int = DEFAULT_N_PER_EDGE,
    order: str = "vh",
) -> GenomeArrangement:
    """Basic genomes on every cell plus the requested auxiliary layers.

    ``aux_layers`` is a layer count (all three categories per layer) or a
    sequence such as ``["vhc", "c"]`` naming the categories of each layer.
    ``order`` fixes whether vertical or horizontal auxiliaries go first within a layer.
    """
    if sorted(order) != ["h", "v"]:
        raise ContractError("order must be 'vh' or 'hv'")
    layers = _layer_spec(aux_layers)
    n = n_per_edge
    if len(layers) > 1 and (n % 2 ** len(layers)) != 0:
        raise ContractError(f"{len(layers)} layers need n_per_edge divisible by {2 ** len(layers)}")
    gx0, gy0, _, _ = domain.bbox
    cells = domain.cells
    placements = []

    def add(ox, oy, kind, stage, layer):
        # ox, oy in genome units relative to the bounding box
        I, J = ox * n, oy * n
        if abs(I - round(I)) > 1e-9 or abs(J - round(J)) > 1e-9:
            raise ContractError("genome origin does not land on the vertex lattice")
        I, J = int(round(I)), int(round(J))
        if not _fits(cells, I, J, n, gx0, gy0):
            return
        origin = ((gx0 + ox) * edge_length, (gy0 + oy) * edge_length)
        placements.append(GenomePlacement(origin, kind, stage, layer, (I, J)))

    for gx, gy in sorted(cells, key=lambda c: (c[1], c[0])):
        add(gx - gx0, gy - gy0, "basic", 0, -1)

    vert = sorted(((gx, gy) for gx, gy in cells if (gx + 1, gy) in cells), key=lambda c: (c[1], c[0]))
    horiz = sorted(((gx, gy) for gx, gy in cells if (gx, gy + 1) in cells), key=lambda c: (c[1], c[0]))
    corner = sorted(
        ((gx, gy) for gx, gy in cells if {(gx + 1, gy), (gx, gy + 1), (gx + 1, gy + 1)} <= cells),
        key=lambda c: (c[1], c[0]),
    )
    rank = {order[0]: 1, order[1]: 2, "c": 3}
    for L, cats in enumerate(layers):
        delta = 0.5 ** (L + 1)
        shifts = (0.0,) if L == 0 else (-delta, delta)
        for cat in sorted(cats, key=rank.get):
            stage = 3 * L + rank[cat]
            kind = _CATEGORY[cat]
            if cat == "v":
                for gx, gy in vert:
                    for s in shifts:
                        add(gx + 0.5 + s - gx0, gy - gy0, kind, stage, L)
            elif cat == "h":
                for gx, gy in horiz:
                    for s in shifts:
                        add(gx - gx0, gy + 0.5 + s - gy0, kind, stage, L)
            else:
                for gx, gy in corner:
                    for s in shifts:
                        add(gx + 0.5 + s - gx0, gy + 0.5 + s - gy0, kind, stage, L)
    return GenomeArrangement(tuple(placements), domain, edge_length, n_per_edge)


def _fits(cells, I, J, n, gx0, gy0) -> bool:
    """Whether the genome square with lattice origin (I, J) lies inside the union of cells."""
    for i in {I // n, (I + n - 1) // n}:
        for j in {J // n, (J + n - 1) // n}:
            if (gx0 + i, gy0 + j) not in cells:
                return False
    return True
