"""Two genomes on [0, 2] x [0, 1]: plain border exchange versus one auxiliary genome."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ContractError
from ..fd import NumericGenomeSolver, solve_dirichlet
from ..field import DomainMask, compute_mae
from .arrangement import build_arrangement
from .domains import BoundaryCondition
from .predictor import ConvergenceReport, MosaicPredictor

MODES = ("simple_exchange", "auxiliary")


def default_bc():
    return BoundaryCondition("harmonic_quadratic", {"coefficients": (0.0, 0.0, 0.0, 1.0, 1.0)})


@dataclass
class DemoResult:
    mode: str
    report: ConvergenceReport
    mae: list  # per iteration, against the direct solve

    @property
    def iterations(self) -> int:
        return self.report.iterations


def schwarz_two_genome_demo(
    mode: str = "simple_exchange",
    bc=None,
    tol: float = 1e-12,
    max_iterations: int = 600,
    genome_solver=None,
    init: str = "zero",
) -> DemoResult:
    """Iterate until the assembled field is within ``tol`` (MAE) of the direct solve."""
    if mode not in MODES:
        raise ContractError(f"mode must be one of {MODES}")
    domain = DomainMask.rectangle(2, 1)
    bc = default_bc() if bc is None else bc
    values = bc.lattice_values(domain) if isinstance(bc, BoundaryCondition) else bc
    truth = solve_dirichlet(domain, values)
    arrangement = build_arrangement(domain, 0 if mode == "simple_exchange" else ["v"])
    pred = MosaicPredictor(arrangement, values, genome_solver or NumericGenomeSolver(), init=init)
    maes = []

    def track(it, p):
        mae = compute_mae(p.assemble(), truth)
        maes.append(mae)
        return {"mae": mae, "stop": mae <= tol}

    # convergence is judged on the MAE alone
    report = pred.run(eps=-np.inf, max_iterations=max_iterations, callback=track)
    report.tolerance = tol
    return DemoResult(mode, report, maes)


def compare_modes(bc=None, tol: float = 1e-12, max_iterations: int = 600, init: str = "zero") -> dict:
    simple = schwarz_two_genome_demo("simple_exchange", bc, tol, max_iterations, init=init)
    aux = schwarz_two_genome_demo("auxiliary", bc, tol, max_iterations, init=init)
    speedup = simple.iterations / max(aux.iterations, 1)
    return {"simple_exchange": simple, "auxiliary": aux, "speedup": speedup}
