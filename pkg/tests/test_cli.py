import json
import shutil
from pathlib import Path

import numpy as np
import pytest

from kaclayer import cli
from kaclayer import lattice as lt


def run(argv):
    return cli.main(argv)


class TestMeanfieldCommand:
    def test_report_fields_and_roundtrip(self, tmp_path):
        code = run(["meanfield", "--eps", "0.05", "--zeta", "0.1",
                    "--out", str(tmp_path), "--no-plot"])
        assert code == 0
        payload = json.loads((tmp_path / "meanfield.json").read_text())
        rec = payload["reports"][0]
        for key in ("eps", "m_eps", "f_eq", "hessian", "r", "R", "c0",
                    "grid_step", "stability_gap"):
            assert key in rec
        # 17-significant-digit CSV round-trips exactly
        lines = (tmp_path / "meanfield.csv").read_text().splitlines()
        header = lines[0].split(",")
        values = lines[1].split(",")
        parsed = dict(zip(header, values))
        assert float(parsed["m_eps"]) == rec["m_eps"]

    def test_byte_identical_reruns(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        run(["meanfield", "--eps", "0.1", "--out", str(a), "--no-plot"])
        run(["meanfield", "--eps", "0.1", "--out", str(b), "--no-plot"])
        assert (a / "meanfield.json").read_bytes() == (b / "meanfield.json").read_bytes()
        assert (a / "meanfield.csv").read_bytes() == (b / "meanfield.csv").read_bytes()

    def test_figure_rendered(self, tmp_path):
        run(["meanfield", "--eps", "0.05,0.1", "--out", str(tmp_path)])
        png = tmp_path / "meanfield.png"
        assert png.exists() and png.stat().st_size > 1000


class TestCanonicalCommand:
    def test_sandwich_outputs(self, tmp_path):
        code = run(["canonical", "--n", "8,16,32", "--eps", "0.1",
                    "--out", str(tmp_path)])
        assert code == 0
        rows = (tmp_path / "sandwich.csv").read_text().splitlines()
        assert rows[0] == "n,m1,m2,eps,log_z,per_site,phi_hat,gap"
        assert len(rows) == 4
        assert (tmp_path / "sandwich.png").exists()
        payload = json.loads((tmp_path / "sandwich.json").read_text())
        assert all(r["gap"] >= -1e-10 for r in payload["rows"])

    def test_local_limit(self, tmp_path):
        code = run(["canonical", "--local-limit", "--n", "10,20,40",
                    "--eps", "0.1", "--out", str(tmp_path), "--no-plot"])
        assert code == 0
        assert (tmp_path / "local_limit.csv").exists()


class TestMinimizeCommand:
    def test_pair(self, tmp_path):
        code = run([
            "minimize", "--problem", "g-eps", "--eps", "0.05",
            "--lambda-i", "0.37", "--lambda-ip", "0.35",
            "--out", str(tmp_path), "--no-plot",
        ])
        assert code == 0
        payload = json.loads((tmp_path / "pair_minimizer.json").read_text())
        assert payload["case"] == "i"
        assert payload["bound_ok"]

    def test_strip_small(self, tmp_path):
        code = run([
            "minimize", "--problem", "strip", "--eps", "0.05",
            "--gamma", str(2.0**-4), "--alpha", "0.5", "--zeta", "0.1",
            "--rect-cols", "2", "--rect-rows", "1",
            "--out", str(tmp_path),
        ])
        assert code == 0
        payload = json.loads((tmp_path / "strip.json").read_text())
        assert payload["max_deviation"] < 0.1
        assert payload["decay_ok"]
        assert (tmp_path / "strip.png").exists()
        rows = (tmp_path / "strip.csv").read_text().splitlines()
        assert rows[0] == "x,row,m,depth"

    def test_multicanonical_small(self, tmp_path):
        code = run([
            "minimize", "--problem", "multicanonical", "--eps", "0.05",
            "--gamma", str(2.0**-4), "--alpha", "0.5", "--zeta", "0.1",
            "--u1", "0.36", "--u2", "0.36", "--seed", "1",
            "--out", str(tmp_path), "--no-plot",
        ])
        assert code == 0
        payload = json.loads((tmp_path / "multicanonical.json").read_text())
        assert payload["constraint_residual"] < 1e-8


class TestContoursCommand:
    def test_from_stored_config(self, tmp_path):
        params = lt.ScaleParams(gamma=2.0**-4, alpha=0.5, zeta_value=0.2)
        box = lt.SpinConfig.rect_union(5, 5, params.ell_plus, params.block_rows,
                                       boundary="plus")
        # plus sea with a half-flipped center rectangle: one contour
        k, j = 2, 2
        row_lo = j * params.block_rows + (1 if k % 2 else 0)
        xs = np.arange(k * params.ell_plus, (k + 1) * params.ell_plus)
        box.spins[row_lo : row_lo + params.block_rows, xs[::2]] = -1
        spin_file = tmp_path / "spins.bin"
        spin_file.write_bytes(box.to_bytes())
        code = run([
            "contours", "--spins", str(spin_file), "--gamma", str(2.0**-4),
            "--alpha", "0.5", "--zeta", "0.2", "--eps", "0.5",
            "--eps-max", "1.0", "--out", str(tmp_path),
        ])
        assert code == 0
        payload = json.loads((tmp_path / "contours.json").read_text())
        assert "n_contours" in payload
        assert (tmp_path / "contours.png").exists()


class TestSimulateCommand:
    def test_run_and_outputs(self, tmp_path):
        code = run([
            "simulate", "--gamma", str(2.0**-4), "--alpha", "0.5",
            "--a", "0.25", "--eps", "0.2", "--boxes", "1",
            "--sweeps", "30", "--burn-in", "5", "--seed", "4",
            "--out", str(tmp_path),
        ])
        assert code == 0
        rows = (tmp_path / "chain_box1.csv").read_text().splitlines()
        assert rows[0] == "sweep,mean_spin,block_mag,n_contours,max_contour"
        assert len(rows) == 26
        payload = json.loads((tmp_path / "simulate.json").read_text())
        assert "box1" in payload["summaries"]
        assert (tmp_path / "checkpoint_box1.json").exists()
        assert (tmp_path / "simulate.png").exists()

    def test_deterministic_stream(self, tmp_path):
        args = ["simulate", "--gamma", str(2.0**-4), "--alpha", "0.5",
                "--a", "0.25", "--eps", "0.2", "--boxes", "1",
                "--sweeps", "20", "--burn-in", "5", "--seed", "4", "--no-plot"]
        a, b = tmp_path / "a", tmp_path / "b"
        run(args + ["--out", str(a)])
        run(args + ["--out", str(b)])
        assert (a / "chain_box1.csv").read_bytes() == (b / "chain_box1.csv").read_bytes()


class TestConfigFile:
    def test_overrides_and_flag_priority(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("eps = 0.1\nn = \"8,16\"\n# comment\n")
        out = tmp_path / "out"
        code = run(["canonical", "--config", str(cfg), "--out", str(out),
                    "--no-plot"])
        assert code == 0
        payload = json.loads((out / "sandwich.json").read_text())
        assert [r["n"] for r in payload["rows"]] == [8, 16]
        assert payload["rows"][0]["eps"] == 0.1

    def test_unknown_key_rejected(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("bogus = 1\n")
        with pytest.raises(SystemExit):
            run(["canonical", "--config", str(cfg), "--no-plot",
                 "--out", str(tmp_path)])


class TestVerifyCommand:
    def test_single_criterion_exit_zero(self, capsys):
        code = run(["verify", "--criteria", "1"])
        out = capsys.readouterr().out
        assert code == 0
        assert "PASS criterion  1" in out

    def test_usage_error_exit_code(self):
        with pytest.raises(SystemExit) as exc:
            run(["minimize"])  # missing required --problem
        assert exc.value.code == 2
