"""A trained network exposed through the genome-solver contract used by the mosaic predictor."""

from __future__ import annotations

import numpy as np

from ..errors import NumericalError
from ..field import BoundaryTrace
from .model import MlpModel, NetworkPass
from .ops import forward, forward_batch


class GFNetSolution:
    """Prediction for one trace, evaluable at any point of the genome."""

    def __init__(self, model: MlpModel, trace: BoundaryTrace):
        self.model = model
        self.trace = trace

    def __call__(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        pts = np.stack([x.ravel(), y.ravel()], axis=1)
        return forward(self.model, self.trace, pts).reshape(x.shape)


class GFNetGenomeSolver:
    name = "gfnet"

    def __init__(self, model: MlpModel):
        self.model = model

    def __call__(self, trace: BoundaryTrace) -> GFNetSolution:
        return GFNetSolution(self.model, trace)

    def evaluator(self, points, n_per_edge: int | None = None, edge_length: float | None = None):
        """Map traces (B, N_bc) to values at fixed local ``points``.

        An LPFC network is linear in the trace, so its hidden features at the
        points are computed once and reused for every call.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        model = self.model
        if model.arch == "LPFC":
            probe = np.eye(model.n_bc, dtype=model.dtype)[:1]
            hidden = NetworkPass(model, probe, pts)._mlp.out.astype(float)  # (Q, N_bc)

            def run(traces):
                out = np.atleast_2d(traces) @ hidden.T
                _check(out)
                return out

            return run

        def run(traces):
            out = forward_batch(model, np.atleast_2d(traces), pts)
            _check(out)
            return out

        return run


def _check(values):
    if not np.all(np.isfinite(values)):
        raise NumericalError("network produced non-finite values")
