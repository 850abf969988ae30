import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _oracles import random_model
from mosaicflow.analysis import decompose_errors, density_sweep, genomic_test_mae
from mosaicflow.errors import ContractError, DomainError, FormatError
from mosaicflow.fd import NumericGenomeSolver, solve_dirichlet
from mosaicflow.field import DomainMask
from mosaicflow.gfnet.ops import forward
from mosaicflow.mosaic.arrangement import build_arrangement
from mosaicflow.mosaic.domains import (
    BoundaryCondition,
    boundary_arclength,
    load_domain_spec,
    logo_mask,
    parse_domain_spec,
)
from mosaicflow.robin import ConstantField, NetworkField, RobinSpec, edge_samples, robin_wrap, verify_robin_identity

CONFIGS = Path(__file__).resolve().parents[1] / "configs" / "domains"
ORACLE = NumericGenomeSolver()


class TestDomains:
    def test_unit_square_arclength(self):
        s = boundary_arclength(DomainMask.rectangle(1, 1), 4)
        assert s[0, 0] == 0 and s[0, 4] == pytest.approx(1.0)
        assert s[4, 4] == pytest.approx(2.0) and s[4, 0] == pytest.approx(3.0)
        assert np.isnan(s[2, 2])

    def test_perimeter_family_periodic(self):
        mask = DomainMask.from_cells({(0, 0), (1, 0), (0, 1)})
        v = BoundaryCondition("sin_perimeter", {"frequency": 1}).lattice_values(mask, 8)
        assert v[0, 0] == pytest.approx(0.0)
        assert abs(v[0, 1]) == pytest.approx(abs(v[1, 0]), rel=1e-12)

    def test_rectangle_and_cells_agree(self):
        a = parse_domain_spec({"rectangle": [2, 1]})
        b = parse_domain_spec({"cells": [[0, 0], [1, 0]]})
        np.testing.assert_array_equal(a.bc_values(), b.bc_values())

    def test_shipped_specs_load(self):
        for path in sorted(CONFIGS.glob("*.json")):
            spec = load_domain_spec(path)
            vals = spec.bc_values(8)
            closed, interior = spec.mask.vertex_masks(8)
            assert np.all(np.isfinite(vals[closed & ~interior])), path.name

    def test_file_bc_interpolates(self):
        spec = load_domain_spec(CONFIGS / "two_cells_file_bc.json")
        vals = spec.bc_values(32)
        s = boundary_arclength(spec.mask, 32)
        edge = ~np.isnan(s)
        np.testing.assert_allclose(vals[edge], np.sin(2 * np.pi * s[edge] / 6), atol=0.02)

    def test_logo_builds(self):
        spec = load_domain_spec(CONFIGS / "logo.json")
        assert len(spec.mask) == len(logo_mask())
        arr = build_arrangement(spec.mask, 1)
        assert len(arr.basic) == len(spec.mask)

    def test_errors(self, tmp_path):
        with pytest.raises(ContractError):
            parse_domain_spec({"rectangle": [1, 1], "bc": {"family": "nope"}})
        with pytest.raises(ContractError):
            parse_domain_spec({"bc": {"family": "paper_g2"}})
        with pytest.raises(ContractError):
            parse_domain_spec({"rectangle": [1, 1], "genome_edge_length": 0})
        with pytest.raises(FormatError):
            load_domain_spec(tmp_path / "missing.json")
        (tmp_path / "d.json").write_text(json.dumps({"rectangle": [1, 1], "bc": {"file": "none.csv"}}))
        with pytest.raises(FormatError):
            load_domain_spec(tmp_path / "d.json").bc_values()
        with pytest.raises(ContractError):
            BoundaryCondition("paper_g1")(0.0, 0.0)


class TestAnalysis:
    def test_oracle_genomic_mae(self):
        mask = DomainMask.rectangle(2, 2)
        truth = solve_dirichlet(mask, BoundaryCondition("paper_g1").lattice_values(mask))
        assert genomic_test_mae(ORACLE, mask, truth) <= 1e-9

    def test_resolution_mismatch(self):
        mask = DomainMask.rectangle(2, 2)
        truth = solve_dirichlet(mask, BoundaryCondition("paper_g1").lattice_values(mask, 16), 17)
        with pytest.raises(ContractError):
            genomic_test_mae(ORACLE, mask, truth)

    def test_oracle_breakdown(self):
        b = decompose_errors(ORACLE, 0.0, DomainMask.rectangle(2, 2), BoundaryCondition("paper_g1"))
        assert b.optimization_error == 0.0
        assert abs(b.generalization_error) <= 1e-9 and abs(b.assembly_error) <= 1e-9
        assert b.converged

    @settings(max_examples=30, deadline=None)
    @given(st.floats(0, 1), st.floats(-1, 1), st.floats(0, 1))
    def test_additivity_to_rounding(self, opt, test, final):
        from mosaicflow.analysis import _closing_term

        gen = test - opt
        total = opt + gen + _closing_term(opt + gen, final)
        assert abs(total - final) <= 2 * np.spacing(max(abs(opt), abs(test), abs(final)))

    def test_breakdown_additive_with_model(self):
        m = random_model("lpfc", 0)
        b = decompose_errors(m, 0.01, DomainMask.rectangle(2, 1), BoundaryCondition("paper_g2"), max_iterations=5)
        assert b.optimization_error + b.generalization_error + b.assembly_error == pytest.approx(b.final_mae, rel=1e-15, abs=1e-17)

    def test_sweep_rows_and_duplicates(self, tmp_path):
        mask = DomainMask.rectangle(2, 2)
        rows = density_sweep(ORACLE, mask, BoundaryCondition("harmonic_quadratic"), [0, 1, 1], csv_path=tmp_path / "s.csv")
        assert [r["arrangement"] for r in rows] == ["none", "vhc", "vhc"]
        assert rows[1] == rows[2]
        assert rows[1]["iterations"] < rows[0]["iterations"]
        header = (tmp_path / "s.csv").read_text().splitlines()[0]
        assert header == "arrangement,n_genomes,iterations,converged,final_mae,final_mar"
        assert len((tmp_path / "s.csv").read_text().splitlines()) == 4


def random_spec(c, seed):
    rng = np.random.default_rng(seed)
    a, b, k = rng.normal(size=3)
    return RobinSpec(c, lambda x, y: a * np.sin(3 * x) + b * np.cos(2 * y) + k)


class TestRobin:
    @pytest.mark.parametrize("c", [0.0, 0.5, 2.0])
    def test_identity(self, c):
        worst = 0.0
        for seed in range(3):
            net = NetworkField(random_model("fc", seed), np.random.default_rng(seed).normal(size=128))
            worst = max(worst, verify_robin_identity(net, random_spec(c, seed), edge_samples(200, seed=seed)))
        assert worst <= 1e-6

    def test_wrong_normal_detected(self):
        net = NetworkField(random_model("fc", 1), np.random.default_rng(1).normal(size=128))
        assert verify_robin_identity(net, random_spec(1.0, 1), edge_samples(200), normal_sign=-1.0) > 1e-3

    def test_constant_network_neumann(self):
        spec = RobinSpec(0.0, lambda x, y: 0.0 * x)
        pts = np.random.default_rng(0).uniform(0.1, 0.9, size=(50, 2))
        pts = pts[np.abs(pts[:, 0] - pts[:, 1]) > 0.01]
        pts = pts[np.abs(pts[:, 0] + pts[:, 1] - 1) > 0.01]
        np.testing.assert_array_equal(robin_wrap(ConstantField(1.7), spec, pts), 1.7)
        assert verify_robin_identity(ConstantField(1.7), spec, edge_samples(100)) == 0.0

    def test_boundary_value_is_network(self):
        model, trace = random_model("fc", 2), np.random.default_rng(2).normal(size=128)
        pts = edge_samples(20, seed=2)
        np.testing.assert_allclose(robin_wrap(NetworkField(model, trace), random_spec(1.0, 2), pts), forward(model, trace, pts), atol=1e-13)

    def test_hand_assembled(self):
        model, trace = random_model("fc", 3), np.random.default_rng(3).normal(size=128)
        spec = random_spec(0.5, 3)
        x, y, h = 0.3, 0.1, 1e-5
        N = lambda px, py: forward(model, trace, np.array([[px, py]]))[0]
        dNdy = (N(x, y + h) - N(x, y - h)) / (2 * h)
        phi, ny = 0.1, -1.0
        g = spec.g_fn(x, y)
        expected = N(x, y) + phi * (spec.c * N(x, y) + ny * dNdy) - phi * g
        got = robin_wrap(NetworkField(model, trace), spec, np.array([[x, y]]))[0]
        assert got == pytest.approx(expected, rel=1e-8, abs=1e-10)

    def test_diagonal_rejected(self):
        net = ConstantField(0.0)
        with pytest.raises(DomainError):
            robin_wrap(net, RobinSpec(1.0, lambda x, y: x), np.array([[0.25, 0.25]]))
        with pytest.raises(DomainError):
            robin_wrap(net, RobinSpec(1.0, lambda x, y: x), np.array([[0.7, 0.3]]))

    def test_negative_coefficient(self):
        with pytest.raises(ValueError):
            RobinSpec(-1.0, lambda x, y: x)
