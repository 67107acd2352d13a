import json
import os

import numpy as np
import pytest

import planeot as po
from planeot import io as gridio
from planeot.cli import main, parse_config
from planeot.errors import ConfigError, NonPositiveDensity
from planeot.grids import Density2D, Grid1D


class TestGridFiles:
    def test_density_round_trip(self, tmp_path, rng):
        g = Grid1D(0.0, 1.0, 17)
        gy = Grid1D(1.0, 2.0, 13)
        d = po.normalize(Density2D(g, gy, 0.5 + rng.random((17, 13))))
        path = tmp_path / "d.dat"
        gridio.write_density(str(path), d)
        back = gridio.read_density(str(path))
        assert back.gx == d.gx and back.gy == d.gy
        assert np.array_equal(back.values, d.values)

    def test_header_format(self, tmp_path):
        g = Grid1D(0.0, 1.0, 9)
        d = po.normalize(Density2D(g, g, np.ones((9, 9))))
        path = tmp_path / "d.dat"
        gridio.write_density(str(path), d)
        header = open(path).readline()
        assert header.startswith("# mk-density nx=9 ny=9 xlo=0.0 xhi=1.0")

    def test_field_round_trip(self, tmp_path):
        g = Grid1D(0.0, 1.0, 9)
        vals = np.arange(81.0).reshape(9, 9)
        from planeot.grids import ScalarField2D

        path = tmp_path / "f.dat"
        gridio.write_field(str(path), ScalarField2D(g, g, vals))
        back = gridio.read_field(str(path))
        assert np.array_equal(back.values, vals)

    def test_negative_density_rejected(self, tmp_path):
        g = Grid1D(0.0, 1.0, 9)
        d = po.normalize(Density2D(g, g, np.ones((9, 9))))
        path = tmp_path / "bad.dat"
        gridio.write_density(str(path), d)
        lines = open(path).read().splitlines()
        lines[3] = lines[3].replace(" 1.0", " -1.0", 1)
        open(path, "w").write("\n".join(lines) + "\n")
        with pytest.raises(NonPositiveDensity):
            gridio.read_density(str(path))

    def test_missing_header_rejected(self, tmp_path):
        path = tmp_path / "junk.dat"
        path.write_text("1 2 3\n4 5 6\n")
        with pytest.raises(ConfigError):
            gridio.read_density(str(path))


class TestParseConfig:
    def test_minimal_preset_defaults(self):
        cfg = parse_config(None, {"preset": "uniform"})
        assert cfg.nx == 65 and cfg.ny == 65
        assert cfg.omega == 0.7
        assert cfg.picard_tol == 1e-8
        assert cfg.linear_tol == 1e-10

    def test_grid_minimum(self):
        with pytest.raises(ConfigError):
            parse_config(None, {"preset": "uniform", "nx": 4})

    def test_unknown_preset(self):
        with pytest.raises(ConfigError):
            parse_config(None, {"preset": "nope"})

    def test_missing_file(self):
        with pytest.raises(ConfigError):
            parse_config(None, {"density_p": "/does/not/exist", "density_q": "/nor/this"})

    def test_round_trip(self, tmp_path):
        cfg = parse_config(None, {"preset": "bilinear", "nx": 33, "ny": 33, "seed": 7})
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(cfg.as_dict()))
        cfg2 = parse_config(str(path), {})
        assert cfg2.as_dict() == cfg.as_dict()

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"preset": "uniform", "bogus": 1}))
        with pytest.raises(ConfigError):
            parse_config(str(path), {})


class TestCliSolve:
    def test_uniform_exit_zero(self, tmp_path, capsys):
        out = tmp_path / "run"
        rc = main(["solve", "--preset", "uniform", "--nx", "33", "--ny", "33", "--out", str(out)])
        assert rc == 0
        report = (out / "report.txt").read_text()
        assert "converged = true" in report
        cost = float([l for l in report.splitlines() if l.startswith("cost =")][0].split("=")[1])
        assert abs(cost - 2.0) <= 1e-3
        # grid dumps parse back through the package readers
        gridio.read_density(str(out / "p.dat"))
        gridio.read_field(str(out / "F.dat"))
        gridio.read_field(str(out / "M.dat"))
        gridio.read_field(str(out / "hh_residual.dat"))

    def test_stall_exit_two(self, tmp_path, capsys):
        cfgfile = tmp_path / "cfg.json"
        cfgfile.write_text(
            json.dumps(
                {
                    "preset": "bilinear",
                    "nx": 33,
                    "ny": 33,
                    "picard_max_iters": 1,
                    "out": str(tmp_path / "run"),
                }
            )
        )
        rc = main(["solve", "--config", str(cfgfile)])
        assert rc == 2
        report = (tmp_path / "run" / "report.txt").read_text()
        assert "converged = false" in report

    def test_bad_file_exit_one(self, tmp_path, capsys):
        rc = main(["solve", "--density-p", "/missing.dat", "--density-q", "/missing2.dat"])
        assert rc == 1

    def test_corrupt_density_exit_one(self, tmp_path, capsys):
        g = Grid1D(0.0, 1.0, 17)
        d = po.normalize(Density2D(g, g, np.ones((17, 17))))
        p1 = tmp_path / "p.dat"
        gridio.write_density(str(p1), d)
        p2 = tmp_path / "q.dat"
        gridio.write_density(str(p2), d)
        txt = p2.read_text().splitlines()
        txt[5] = txt[5].replace(" 1.0", " -3.0", 1)
        p2.write_text("\n".join(txt) + "\n")
        rc = main(["solve", "--density-p", str(p1), "--density-q", str(p2), "--out", str(tmp_path / "o")])
        assert rc == 1

    def test_pq_pair_shift_reported(self, tmp_path, capsys):
        # supply Q on the unit square; the report carries the adjusted cost
        n = 33
        f, ft = po.build_preset("bilinear", n, n)
        q_orig = Density2D(Grid1D(0, 1, n), Grid1D(0, 1, n), ft.values)
        p1 = tmp_path / "p.dat"
        p2 = tmp_path / "q.dat"
        gridio.write_density(str(p1), f)
        gridio.write_density(str(p2), po.normalize(q_orig))
        out = tmp_path / "run"
        rc = main(["solve", "--density-p", str(p1), "--density-q", str(p2), "--out", str(out)])
        assert rc == 0
        report = (out / "report.txt").read_text()
        lines = dict(
            l.split(" = ") for l in report.splitlines() if " = " in l
        )
        cost = float(lines["cost"])
        cost_pq = float(lines["cost_pq"])
        # both marginal pairs are uniform, so the shift identity reduces
        # to subtracting exactly 2
        assert abs(cost_pq - (cost - 2.0)) < 1e-9

    def test_oracle_flag_adds_oracle_keys(self, tmp_path, capsys):
        out = tmp_path / "run"
        rc = main(
            ["solve", "--preset", "uniform", "--nx", "17", "--ny", "17",
             "--oracle-atoms", "8", "--out", str(out)]
        )
        assert rc == 0
        report = (out / "report.txt").read_text()
        assert "oracle_cost = " in report
        assert "oracle_dual_gap = " in report


class TestCliOther:
    def test_distance1d(self, tmp_path, capsys):
        out = tmp_path / "d1"
        rc = main(["distance1d", "--preset", "uniform", "--nx", "17", "--ny", "17",
                   "--axis", "x", "--out", str(out)])
        assert rc == 0
        report = (out / "distance1d_report.txt").read_text()
        lines = dict(l.split(" = ") for l in report.splitlines() if " = " in l)
        assert abs(float(lines["distance1d"]) - 1.0) < 1e-9

    def test_oracle_command(self, tmp_path, capsys):
        out = tmp_path / "orc"
        rc = main(["oracle", "--preset", "uniform", "--nx", "17", "--ny", "17",
                   "--oracle-atoms", "8", "--out", str(out)])
        assert rc == 0
        report = (out / "oracle_report.txt").read_text()
        lines = dict(l.split(" = ") for l in report.splitlines() if " = " in l)
        assert abs(float(lines["oracle_cost"]) - 2.0) < 1e-9

    def test_resolved_config_round_trip(self, tmp_path, capsys):
        out = tmp_path / "run"
        rc = main(["solve", "--preset", "uniform", "--nx", "17", "--ny", "17", "--out", str(out)])
        assert rc == 0
        resolved = out / "resolved_config.json"
        cfg2 = parse_config(str(resolved), {})
        assert json.load(open(resolved)) == cfg2.as_dict()


class TestValidateCli:
    def test_oracle_off_skips(self, tmp_path, capsys):
        cfgfile = tmp_path / "cfg.json"
        cfgfile.write_text(
            json.dumps({"preset": "uniform", "oracle": False, "out": str(tmp_path / "v")})
        )
        rc = main(["validate", "--config", str(cfgfile)])
        report = (tmp_path / "v" / "validate_report.txt").read_text()
        assert "SKIP" in report
        assert "one-d-agreement | SKIP" in report

    def test_determinism_byte_identical(self, tmp_path, capsys):
        # same config (including seed), two runs: byte-identical reports
        cfgfile = tmp_path / "cfg.json"
        cfgfile.write_text(
            json.dumps(
                {
                    "preset": "uniform",
                    "oracle": True,
                    "oracle_atoms": 16,
                    "seed": 424242,
                    "out": str(tmp_path / "v"),
                }
            )
        )
        texts = []
        for _ in range(2):
            main(["validate", "--config", str(cfgfile)])
            texts.append((tmp_path / "v" / "validate_report.txt").read_bytes())
        assert texts[0] == texts[1]
