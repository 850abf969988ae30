import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mosaicflow.errors import ContractError, DomainError
from mosaicflow.fd import NumericGenomeSolver, bilinear_matrix, genome_solver_numeric, sample_on_segment, solve_dirichlet
from mosaicflow.field import DomainMask, compute_mar_fd, trace_from_function
from mosaicflow.gp import KernelSpec, sample_trace
from mosaicflow.mosaic.domains import BoundaryCondition


def quad(x, y):
    return x * x - y * y + x * y


class TestSolveDirichlet:
    def test_constant(self):
        f = solve_dirichlet((1, 1), lambda x, y: 2.5 + 0 * x)
        np.testing.assert_allclose(f.data, 2.5, atol=1e-13)

    def test_quadratic_exact(self):
        f = solve_dirichlet((1, 1), quad, 33)
        x, y = f.coords()
        assert np.max(np.abs(f.data - quad(x, y))) <= 1e-9
        assert (f.nx, f.ny) == (33, 33)

    @settings(max_examples=20, deadline=None)
    @given(st.lists(st.floats(-2, 2), min_size=5, max_size=5))
    def test_stencil_exact_span(self, coef):
        a, b, c, d, e = coef
        u = lambda x, y: a + b * x + c * y + d * x * y + e * (x * x - y * y)
        f = solve_dirichlet((1, 1), u, 17)
        x, y = f.coords()
        assert np.max(np.abs(f.data - u(x, y))) <= 1e-9

    def test_residual_bound(self):
        f = solve_dirichlet((1, 1), lambda x, y: np.sin(3 * x) * np.cosh(y) + x**3, 33)
        assert compute_mar_fd(f) <= 1e-10 * 33**2

    def test_richardson_ratio(self):
        g2 = BoundaryCondition("paper_g2")
        unit = DomainMask.rectangle(1, 1)
        fine, mid, coarse = (solve_dirichlet(unit, g2.lattice_values(unit, n), n + 1) for n in (128, 64, 32))
        e1 = np.max(np.abs(coarse.data - fine.data[::4, ::4]))
        e2 = np.max(np.abs(mid.data - fine.data[::2, ::2]))
        # errors against the finest grid: (h^2 - h^2/16) / (h^2/4 - h^2/16) = 5
        assert 3.5 < e1 / e2 < 6.5

    def test_l_shape(self):
        mask = DomainMask.from_cells([(0, 0), (1, 0), (0, 1)])
        f = solve_dirichlet(mask, quad, 9)
        x, y = f.coords()
        v = f.valid()
        assert np.max(np.abs(f.data[v] - quad(x, y)[v])) < 1e-10
        assert np.isnan(f.data[~v]).all()

    def test_resolution_too_small(self):
        with pytest.raises(ContractError):
            solve_dirichlet((1, 1), quad, 2)

    def test_maximum_principle_gp(self):
        solver = NumericGenomeSolver()
        for seed in range(200):
            t = sample_trace(KernelSpec(lengthscale=0.5 + seed % 5), seed=seed)
            v = solver(t).values
            assert v.min() >= t.values.min() - 1e-12 and v.max() <= t.values.max() + 1e-12

    def test_linearity(self):
        rng = np.random.default_rng(3)
        g1, g2 = rng.normal(size=(2, 128))
        a, b = rng.normal(size=2)
        s = NumericGenomeSolver()
        from mosaicflow.field import BoundaryTrace

        lhs = s(BoundaryTrace(a * g1 + b * g2)).values
        rhs = a * s(BoundaryTrace(g1)).values + b * s(BoundaryTrace(g2)).values
        assert np.max(np.abs(lhs - rhs)) <= 1e-9 * np.max(np.abs(rhs))


class TestGenomeSolver:
    def test_constant(self):
        sol = genome_solver_numeric(trace_from_function(lambda x, y: 0 * x - 1.25))
        assert sol(0.3, 0.77) == pytest.approx(-1.25, abs=1e-12)

    def test_quadratic_center(self):
        sol = genome_solver_numeric(trace_from_function(quad))
        assert sol(0.5, 0.5) == pytest.approx(0.25, abs=1e-9)

    def test_boundary_vertex_exact(self):
        t = trace_from_function(lambda x, y: np.exp(x) * np.sin(3 * y))
        sol = genome_solver_numeric(t)
        pts = t.points()
        np.testing.assert_array_equal(sol(pts[:, 0], pts[:, 1]), t.values)

    def test_outside(self):
        sol = genome_solver_numeric(trace_from_function(quad))
        with pytest.raises(DomainError):
            sol(1.2, 0.5)

    def test_evaluator_matches_call(self):
        t = sample_trace(KernelSpec(), seed=4)
        pts = np.random.default_rng(0).uniform(size=(20, 2))
        s = NumericGenomeSolver()
        np.testing.assert_allclose(s.evaluator(pts)(t.values[None])[0], s(t)(pts[:, 0], pts[:, 1]), atol=1e-12)

    def test_bilinear_rows_sum_to_one(self):
        pts = np.random.default_rng(1).uniform(size=(30, 2))
        m = bilinear_matrix(pts[:, 0], pts[:, 1], 32)
        np.testing.assert_allclose(np.asarray(m.sum(axis=1)).ravel(), 1.0)


class TestSampleOnSegment:
    def test_constant(self):
        sol = genome_solver_numeric(trace_from_function(lambda x, y: 0 * x + 4.0))
        np.testing.assert_allclose(sample_on_segment(sol, (0.2, 0.1), (0.2, 0.9), 6), 4.0, atol=1e-12)

    def test_centerline_quadratic(self):
        sol = genome_solver_numeric(trace_from_function(quad))
        np.testing.assert_allclose(sample_on_segment(sol, (0.5, 0.0), (0.5, 1.0), 3), [0.25, 0.25, -0.25], atol=1e-9)

    def test_edge_matches_trace(self):
        t = trace_from_function(lambda x, y: np.cos(2 * x) + y)
        sol = genome_solver_numeric(t)
        np.testing.assert_array_equal(sample_on_segment(sol, (0.0, 0.0), (1.0, 0.0), 33)[:32], t.values[:32])

    def test_escape(self):
        sol = genome_solver_numeric(trace_from_function(quad))
        with pytest.raises(DomainError):
            sample_on_segment(sol, (0.5, 0.0), (0.5, 1.5), 3)
