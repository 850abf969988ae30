import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mosaicflow.errors import ContractError, DataError, DomainError, FormatError
from mosaicflow.field import (
    BoundaryTrace,
    DomainMask,
    FieldGrid,
    compute_mae,
    compute_mar_fd,
    perimeter_points,
    perimeter_to_point,
    point_to_perimeter,
    read_field_csv,
    trace_from_function,
    write_field_csv,
)


def quad(x, y):
    return x * x - y * y + x * y


class TestPerimeter:
    @pytest.mark.parametrize(
        "s, expected",
        [(0.0, (0.0, 0.0)), (1.5, (1.0, 0.5)), (2.25, (0.75, 1.0)), (3.5, (0.0, 0.5))],
    )
    def test_known_points(self, s, expected):
        assert perimeter_to_point(s, 1.0) == pytest.approx(expected, abs=1e-15)

    @pytest.mark.parametrize("s", [-0.1, 4.0, 7.0])
    def test_outside_range(self, s):
        with pytest.raises(DomainError):
            perimeter_to_point(s, 1.0)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(0.0, 4.0, exclude_max=True), st.floats(0.1, 10.0))
    def test_inverse_round_trip(self, u, l):
        s = u * l
        x, y = perimeter_to_point(s, l)
        d = abs(point_to_perimeter(x, y, l) - s)
        # the seam at s = 4l is the same point as s = 0
        assert min(d, 4 * l - d) <= 1e-12 * 4 * l

    def test_corners_owned_once(self):
        pts = perimeter_points(32)
        assert pts.shape == (128, 2)
        assert len({tuple(p) for p in np.round(pts, 12)}) == 128
        assert np.array_equal(pts[[0, 32, 64, 96]], [[0, 0], [1, 0], [1, 1], [0, 1]])


class TestTrace:
    def test_constant(self):
        assert np.all(trace_from_function(lambda x, y: 3.0 + 0 * x).values == 3.0)

    def test_quadratic_corners(self):
        t = trace_from_function(quad)
        assert t.values[0] == 0.0
        assert t.values[32] == 1.0

    def test_sine_of_arclength(self):
        t = trace_from_function(lambda x, y: np.sin(2 * np.pi * np.array([point_to_perimeter(a, b) for a, b in zip(x, y)])))
        np.testing.assert_allclose(t.values, np.sin(2 * np.pi * np.arange(128) * 4 / 128), atol=1e-12)

    def test_non_finite_names_index(self):
        def g(x, y):
            out = np.zeros_like(x)
            out[7] = np.nan
            return out

        with pytest.raises(DataError, match="index 7"):
            trace_from_function(g)

    def test_bad_length(self):
        with pytest.raises(ContractError):
            BoundaryTrace(np.zeros(5))


def grid(vals, spacing=(1.0, 1.0)):
    vals = np.asarray(vals, float)
    return FieldGrid(vals.shape[1], vals.shape[0], (0.0, 0.0), spacing, vals)


class TestMetrics:
    def test_mae_identity_and_offset(self):
        a = grid(np.random.default_rng(0).normal(size=(4, 5)))
        assert compute_mae(a, a) == 0.0
        assert compute_mae(a.with_data(a.data + 0.5), a) == pytest.approx(0.5)

    def test_mae_hand_computed(self):
        p = grid([[1, 2, 3], [4, 5, 6], [7, 8, 9]])
        t = grid([[1, 0, 3], [4, 9, 6], [0, 8, 10]])
        # |0|+|2|+|0|+|0|+|4|+|0|+|7|+|0|+|1| = 14
        assert compute_mae(p, t) == pytest.approx(14 / 9)

    def test_mae_shape_mismatch(self):
        with pytest.raises(ContractError):
            compute_mae(grid(np.zeros((3, 3))), grid(np.zeros((3, 4))))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000))
    def test_mae_symmetric_triangle(self, seed):
        rng = np.random.default_rng(seed)
        a, b, c = (grid(rng.normal(size=(3, 4))) for _ in range(3))
        assert compute_mae(a, b) == pytest.approx(compute_mae(b, a))
        assert compute_mae(a, c) <= compute_mae(a, b) + compute_mae(b, c) + 1e-12

    def test_mar_linear_is_zero(self):
        f = FieldGrid.from_function(lambda x, y: x + y, 7, 6, spacing=(0.3, 0.2))
        assert compute_mar_fd(f) < 1e-12

    def test_mar_x_squared(self):
        f = FieldGrid.from_function(lambda x, y: x * x, 5, 5, spacing=(0.25, 0.25))
        assert compute_mar_fd(f) == pytest.approx(2.0, rel=1e-12)

    def test_mar_too_small(self):
        with pytest.raises(ContractError):
            compute_mar_fd(grid(np.zeros((2, 5))))

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-3, 3), min_size=5, max_size=5), st.floats(0.05, 1.0))
    def test_mar_harmonic_quadratics_vanish(self, coef, h):
        a, b, c, d, e = coef
        f = FieldGrid.from_function(lambda x, y: a + b * x + c * y + d * x * y + e * (x * x - y * y), 6, 5, spacing=(h, h))
        assert compute_mar_fd(f) <= 1e-12 * max(1.0, 1.0 / h**2)


class TestFieldCsv:
    def test_round_trip_with_mask(self, tmp_path):
        mask = np.ones((3, 4), bool)
        mask[0, 0] = False
        f = FieldGrid.from_function(lambda x, y: np.sin(x) + y / 3, 4, 3, (0.5, -1.0), (0.1, 0.2), mask)
        write_field_csv(f, tmp_path / "f.csv")
        g = read_field_csv(tmp_path / "f.csv")
        assert g.same_geometry(f)
        np.testing.assert_array_equal(g.data[mask], f.data[mask])
        assert (tmp_path / "f.csv").read_text().splitlines()[0] == "4,3,0.5,-1,0.10000000000000001,0.20000000000000001"

    def test_malformed(self, tmp_path):
        (tmp_path / "bad.csv").write_text("3,3,0,0,1,1\n1,2\n")
        with pytest.raises(FormatError):
            read_field_csv(tmp_path / "bad.csv")


class TestDomainMask:
    def test_rectangle_bbox(self):
        m = DomainMask.rectangle(3, 2)
        assert len(m) == 6 and m.bbox == (0, 0, 3, 2)

    def test_disconnected(self):
        with pytest.raises(ContractError):
            DomainMask.from_cells([(0, 0), (2, 0)])
