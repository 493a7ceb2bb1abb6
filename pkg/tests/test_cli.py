import csv
import json
import math

import numpy as np
import pytest

from nonlocalrd.cli import main


def write_config(tmp_path, name="cfg.json", **overrides):
    cfg = {
        "space": {"type": "interval", "a": 0.0, "b": 1.0, "n": 64},
        "kernel": {"law": "constant", "c": 1.0},
        "potential": {"kind": "h0"},
        "reaction": {"kind": "logistic", "g": 0.0, "n": 2.0, "m": 1.0, "rho": 3.0},
        "u0": {"kind": "constant", "value": 0.5},
        "integrator": {"scheme": "rk4", "dt": 0.01, "t_end": 0.5, "store_every": 10},
    }
    cfg.update(overrides)
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


class TestSpectrumCommand:
    def test_threshold_lambda_is_zero(self, tmp_path):
        cfg = write_config(tmp_path)
        rc = main(["--out", str(tmp_path), "spectrum", "--config", str(cfg)])
        assert rc == 0
        payload = json.loads((tmp_path / "spectrum.json").read_text())
        assert abs(payload["lambda"]) <= 1e-10
        assert payload["schema_version"] == "1"

    def test_eigenfunction_csv_has_node_rows(self, tmp_path):
        cfg = write_config(tmp_path)
        rc = main(["--out", str(tmp_path), "spectrum", "--config", str(cfg),
                   "--emit-eigenfunction", "ef.csv"])
        assert rc == 0
        with open(tmp_path / "ef.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["node", "x", "value"]
        assert len(rows) == 65

    def test_negative_table_entry_exits_2_with_location(self, tmp_path, capsys):
        bad = np.ones((4, 4))
        bad[2, 1] = -1.0
        np.savetxt(tmp_path / "mat.csv", bad, delimiter=",")
        cfg = write_config(tmp_path, space={"type": "interval", "a": 0, "b": 1, "n": 4},
                           kernel={"law": "table", "path": str(tmp_path / "mat.csv")})
        rc = main(["--out", str(tmp_path), "spectrum", "--config", str(cfg)])
        assert rc == 2
        assert "(2,1)" in capsys.readouterr().err

    def test_dry_run_validates_without_output(self, tmp_path):
        cfg = write_config(tmp_path)
        rc = main(["--out", str(tmp_path / "dry"), "--dry-run",
                   "spectrum", "--config", str(cfg)])
        assert rc == 0
        assert not (tmp_path / "dry" / "spectrum.json").exists()


class TestEvolveCommand:
    def test_trajectory_csv_and_summary(self, tmp_path):
        cfg = write_config(tmp_path)
        rc = main(["--out", str(tmp_path), "evolve", "--config", str(cfg)])
        assert rc == 0
        with open(tmp_path / "trajectory.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0][:2] == ["t", "node_0"]
        assert len(rows[0]) == 65
        payload = json.loads((tmp_path / "evolve.json").read_text())
        assert payload["scheme"] == "rk4"
        assert not payload["blowup"]
        assert "lyapunov" in payload  # constant kernel is symmetric
        lyap = payload["lyapunov"]
        assert all(b <= a + 1e-8 for a, b in zip(lyap, lyap[1:]))

    def test_missing_u0_exits_2(self, tmp_path):
        cfg = write_config(tmp_path)
        raw = json.loads(cfg.read_text())
        del raw["u0"]
        cfg.write_text(json.dumps(raw))
        rc = main(["--out", str(tmp_path), "evolve", "--config", str(cfg)])
        assert rc == 2

    def test_expression_potential_and_datum(self, tmp_path):
        cfg = write_config(tmp_path,
                           potential={"kind": "expr", "expr": "1 + 0.5*sin(2*pi*x)"},
                           u0={"kind": "expr", "expr": "0.1*exp(-x)"})
        rc = main(["--out", str(tmp_path), "evolve", "--config", str(cfg)])
        assert rc == 0

    def test_bad_expression_exits_2(self, tmp_path, capsys):
        cfg = write_config(tmp_path, potential={"kind": "expr", "expr": "import os"})
        rc = main(["--out", str(tmp_path), "evolve", "--config", str(cfg)])
        assert rc == 2
        assert "potential" in capsys.readouterr().err


class TestEquilibriaCommand:
    def test_profiles_and_summary(self, tmp_path):
        cfg = write_config(tmp_path, potential={"kind": "constant", "value": 0.0})
        rc = main(["--out", str(tmp_path), "equilibria", "--config", str(cfg)])
        assert rc == 0
        payload = json.loads((tmp_path / "equilibria.json").read_text())
        assert payload["phi_M_range"][1] == pytest.approx(math.sqrt(3), abs=1e-6)
        with open(tmp_path / "phi_M.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert len(rows) == 65


class TestVerifyCommand:
    def test_pass_exit_zero(self, tmp_path):
        rc = main(["--out", str(tmp_path), "verify", "--suite", "comparison",
                   "--trials", "4", "--seed", "7"])
        assert rc == 0
        payload = json.loads((tmp_path / "verify_comparison.json").read_text())
        assert payload["failures"] == 0


class TestCaseCommand:
    def test_shift_table_values(self, tmp_path):
        rc = main(["--out", str(tmp_path), "case", "shift", "--set", "n=256"])
        assert rc == 0
        payload = json.loads((tmp_path / "case_shift.json").read_text())
        row = next(r for r in payload["table"] if r["A"] == 3.0)
        closed = (-(3.0 - 1.0) + math.sqrt(10.0)) / 2.0
        assert row["lambda_H"] == pytest.approx(closed, abs=1e-9)
        assert row["bound_rhs"] == pytest.approx(-1.0, abs=1e-9)

    def test_bistable_residuals(self, tmp_path):
        rc = main(["--out", str(tmp_path), "case", "bistable"])
        assert rc == 0
        payload = json.loads((tmp_path / "case_bistable.json").read_text())
        assert all(r <= 1e-12 for r in payload["residuals"])
        assert payload["overlap_measure_0_vs_2"] >= 0.3

    def test_logistic_super_reaches_root(self, tmp_path):
        rc = main(["--out", str(tmp_path), "case", "logistic-super",
                   "--set", "n=64", "--set", "t_end=20.0"])
        assert rc == 0
        payload = json.loads((tmp_path / "case_logistic-super.json").read_text())
        assert payload["phi_M_value"] == pytest.approx(math.sqrt(3), abs=1e-6)
        assert all(d <= 1e-4 for d in payload["trial_distances_to_phi_M"])

    def test_logistic_sub_decays(self, tmp_path):
        rc = main(["--out", str(tmp_path), "case", "logistic-sub",
                   "--set", "n=64", "--set", "t_end=15.0"])
        assert rc == 0
        payload = json.loads((tmp_path / "case_logistic-sub.json").read_text())
        assert payload["lambda_of_n"] < 0
        assert payload["phi_M_value"] == pytest.approx(0.0, abs=1e-6)

    def test_blowup_case(self, tmp_path):
        rc = main(["--out", str(tmp_path), "case", "blowup", "--set", "n=32"])
        assert rc == 0
        payload = json.loads((tmp_path / "case_blowup.json").read_text())
        assert payload["blowup"]
        assert payload["blowup_time"] < 0.1
        assert payload["dominated"]

    def test_malformed_override_exits_2(self, tmp_path):
        rc = main(["--out", str(tmp_path), "case", "shift", "--set", "oops"])
        assert rc == 2

    def test_unknown_case_rejected_by_parser(self, tmp_path):
        with pytest.raises(SystemExit):
            main(["--out", str(tmp_path), "case", "heatwave"])


class TestOtherSpaces:
    def test_graph_space_spectrum(self, tmp_path):
        cfg = write_config(
            tmp_path,
            space={"type": "graph", "vertices": 3,
                   "edges": [[0, 1, 1.0], [1, 2, 1.0]],
                   "measures": [0.5, 1.0, 0.5]},
            potential={"kind": "constant", "value": 0.0},
            kernel={"law": "tophat", "R": 1.5, "J0": 1.0})
        rc = main(["--out", str(tmp_path), "spectrum", "--config", str(cfg)])
        assert rc == 0
        payload = json.loads((tmp_path / "spectrum.json").read_text())
        assert payload["lambda"] > 0

    def test_union_space_dry_run(self, tmp_path):
        cfg = write_config(
            tmp_path,
            space={"type": "union", "parts": [
                {"type": "interval", "a": 0.0, "b": 0.4, "n": 8},
                {"type": "interval", "a": 0.6, "b": 1.0, "n": 8}]})
        rc = main(["--out", str(tmp_path), "--dry-run", "spectrum",
                   "--config", str(cfg)])
        assert rc == 0


def test_round_trip_is_bit_identical(tmp_path):
    cfg = write_config(tmp_path)
    for sub in ("a", "b"):
        rc = main(["--out", str(tmp_path / sub), "evolve", "--config", str(cfg)])
        assert rc == 0
    assert (tmp_path / "a" / "evolve.json").read_bytes() == \
        (tmp_path / "b" / "evolve.json").read_bytes()
    assert (tmp_path / "a" / "trajectory.csv").read_bytes() == \
        (tmp_path / "b" / "trajectory.csv").read_bytes()


def test_invalid_json_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    rc = main(["--out", str(tmp_path), "spectrum", "--config", str(bad)])
    assert rc == 2
    assert "line" in capsys.readouterr().err
