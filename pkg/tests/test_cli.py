"""Command-line interface, reports, conventions and reproducibility."""

import json
import os

import numpy as np
import pytest

from nctlab.cli import main
from nctlab.conventions import (Conventions, calibrate_conventions,
                                load_conventions)
from nctlab.nctorus import AlgebraParams, TorusElement, random_selfadjoint, save_element
from nctlab.reports import Check, Report, roundtrip, validate_report, write_csv

PARAMS = AlgebraParams(theta=(5 ** 0.5 - 1) / 2, tau=complex(0.3, 1.1))


@pytest.fixture
def dilaton_file(tmp_path, rng):
    h = random_selfadjoint(PARAMS, rng, radius=1, norm_l1=0.4)
    path = tmp_path / "dilaton.json"
    save_element(h, str(path), selfadjoint=True)
    return str(path)


class TestReports:
    def test_check_factory(self):
        c = Check.le("x", 1e-9, 1e-8)
        assert c.passed
        assert not Check.le("y", 2e-8, 1e-8).passed

    def test_roundtrip_and_schema(self):
        rep = Report(command="t", config={"a": 1}, seed=3)
        rep.add(Check.le("x", 0.0, 1.0))
        doc = roundtrip(rep)
        validate_report(doc)
        assert doc["passed"] is True

    def test_empty_report_is_valid(self):
        doc = roundtrip(Report(command="empty", config={}))
        assert doc["checks"] == []

    def test_schema_rejects_garbage(self):
        with pytest.raises(ValueError):
            validate_report({"schema_version": 1})
        with pytest.raises(ValueError):
            validate_report({"schema_version": 99, "command": "x",
                             "config": {}, "passed": True, "checks": []})

    def test_csv_row_count(self, tmp_path):
        path = str(tmp_path / "t.csv")
        n = write_csv(path, ("a", "b"), [(1, 2), (3, 4), (5, 6)])
        assert n == 3
        with open(path) as fh:
            assert len(fh.readlines()) == 4


class TestKernelsCommand:
    def test_csv_rows_match_grid(self, tmp_path):
        out = str(tmp_path / "k.csv")
        rc = main(["kernels", "--which", "Ktilde0", "--grid=-2:2:0.5",
                   "--out", out])
        assert rc == 0
        with open(out) as fh:
            rows = fh.readlines()
        assert len(rows) - 1 == 9

    def test_bivariate(self, tmp_path):
        out = str(tmp_path / "h.csv")
        rc = main(["kernels", "--which", "H0", "--grid=-1:1:1.0", "--out", out])
        assert rc == 0
        with open(out) as fh:
            assert len(fh.readlines()) - 1 == 9


class TestCurvatureCommand:
    def test_report(self, tmp_path, dilaton_file):
        out = str(tmp_path / "c.json")
        rc = main(["curvature", "--input", dilaton_file, "--trunc", "10",
                   "--out", out])
        assert rc == 0
        doc = json.load(open(out))
        validate_report(doc)
        assert doc["passed"]

    def test_bad_input_is_config_error(self, tmp_path):
        rc = main(["curvature", "--input", str(tmp_path / "missing.json")])
        assert rc == 2


class TestHeatFitCommand:
    def test_runs(self, tmp_path, dilaton_file):
        out = str(tmp_path / "hf.json")
        csv = str(tmp_path / "hf.csv")
        rc = main(["heat-fit", "--input", dilaton_file, "--trunc", "10",
                   "--out", out, "--out-csv", csv])
        assert rc == 0
        doc = json.load(open(out))
        assert "a2" in doc["values"]
        with open(csv) as fh:
            assert len(fh.readlines()) > 10


class TestGradientCommand:
    def test_runs_and_reproducible(self, tmp_path, dilaton_file):
        out1 = str(tmp_path / "g1.json")
        out2 = str(tmp_path / "g2.json")
        rc1 = main(["gradient-check", "--input", dilaton_file, "--trunc", "8",
                    "--directions", "2", "--seed", "5", "--out", out1])
        rc2 = main(["gradient-check", "--input", dilaton_file, "--trunc", "8",
                    "--directions", "2", "--seed", "5", "--out", out2])
        assert rc1 == 0 and rc2 == 0
        d1, d2 = json.load(open(out1)), json.load(open(out2))
        assert d1["checks"][0]["value"] == d2["checks"][0]["value"]
        assert d1["seed"] == 5


class TestSuites:
    @pytest.mark.parametrize("name", ["identities", "parametrix"])
    def test_fast_suites_pass(self, tmp_path, name):
        rc = main(["suite", "--name", name, "--outdir", str(tmp_path)])
        assert rc == 0
        doc = json.load(open(tmp_path / f"suite_{name}.json"))
        validate_report(doc)
        assert doc["passed"]

    def test_unknown_suite(self, tmp_path):
        assert main(["suite", "--name", "bogus", "--outdir", str(tmp_path)]) == 2


class TestConventions:
    def test_defaults(self, tmp_path):
        conv = load_conventions(str(tmp_path / "missing.json"))
        assert conv.a2_scale == 1.0 and conv.source == "analytic defaults"

    def test_file_roundtrip(self, tmp_path):
        path = str(tmp_path / "conv.json")
        conv = Conventions(a2_scale=0.999)
        with open(path, "w") as fh:
            json.dump(conv.to_json(), fh)
        loaded = load_conventions(path)
        assert loaded.a2_scale == 0.999

    def test_tampered_conventions_break_agreement(self, rng):
        # a wrong frozen a2 scale must show up in the integration-vs-closed
        # comparison at far beyond its tolerance
        from nctlab.gns import ElementSpectral, GnsTruncation
        from nctlab.psymbol import (SymbolCalculus, TwistData,
                                    a2_by_integration,
                                    conformal_laplacian_multiplier)
        from nctlab.curvature import modular_curvature
        from nctlab.nctorus import multiply, trace0
        h = random_selfadjoint(PARAMS, rng, radius=1, norm_l1=0.4)
        spec = ElementSpectral(h, GnsTruncation(6))
        calc = SymbolCalculus(PARAMS, TwistData(0.0), k2=spec.exp_element(1.0))
        mult = conformal_laplacian_multiplier(calc, spec.exp_element(0.5))
        probe = TorusElement(PARAMS, {(1, 0): 1.0, (-1, 0): 1.0})
        tampered = Conventions(a2_scale=1.2)
        rep = a2_by_integration(calc, mult, {"p": probe}, N=6,
                                a2_scale=tampered.a2_scale,
                                check_homogeneity=False)
        closed = trace0(multiply(probe, modular_curvature(h, 10).density)).real
        rel = abs(rep.values["p"] - closed) / abs(closed)
        assert rel > 0.1  # tampering detected

    def test_calibration_idempotent(self, tmp_path):
        p1 = str(tmp_path / "c1.json")
        p2 = str(tmp_path / "c2.json")
        c1 = calibrate_conventions(path=p1)
        c2 = calibrate_conventions(path=p2)
        for key in ("a0_scale", "a2_scale", "heis_flat_scale",
                    "heis_conf_scale"):
            assert abs(getattr(c1, key) - getattr(c2, key)) < 1e-6
            assert abs(getattr(c1, key) - 1.0) < 0.05
