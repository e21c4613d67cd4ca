import csv
import math
import subprocess
import sys

import pytest

from qrheston import cli
from qrheston.calibrate import SmileSet
from qrheston.errors import DataError, NumericalError

BENCH_CFG = """\
alpha = 0.51
lambda = 1.2
a = 0.384
b = 0.095
c = 0.0025
z0 = 0.1
"""

FLAT_CFG = """\
alpha = 0.6
lambda = 1.0
a = 0.0
b = 0.0
c = 0.0025
z0 = 0.0
horizon = 0.1            # short horizon keeps the path file small
mc.outer_paths = 4
mc.steps_per_year = 100
"""


def write(path, text):
    path.write_text(text)
    return str(path)


def read_rows(path):
    with open(path) as f:
        body = [ln for ln in f if not ln.startswith("#")]
    rows = list(csv.reader(body))
    return rows[0], rows[1:]


def strip_stamp(path):
    with open(path) as f:
        return [ln for ln in f if not ln.startswith("# generated_at")]


class TestParseConfig:
    def test_basic_keys_and_comments(self, tmp_path):
        path = write(tmp_path / "a.cfg", "x = 1  # note\n\n# full comment\ny = two\n")
        assert cli.parse_config(path) == {"x": "1", "y": "two"}

    def test_duplicate_key_rejected(self, tmp_path):
        path = write(tmp_path / "a.cfg", "x = 1\nx = 2\n")
        with pytest.raises(DataError, match="duplicate"):
            cli.parse_config(path)

    def test_line_without_equals_rejected(self, tmp_path):
        path = write(tmp_path / "a.cfg", "alpha 0.6\n")
        with pytest.raises(DataError, match="key = value"):
            cli.parse_config(path)

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(DataError, match="cannot read"):
            cli.parse_config(tmp_path / "nope.cfg")


class TestSimulateCommand:
    def test_constant_variance_path_csv(self, tmp_path):
        cfg = write(tmp_path / "flat.cfg", FLAT_CFG)
        status = cli.main(["simulate", "--params", cfg, "--out", str(tmp_path)])
        assert status == 0
        header, rows = read_rows(tmp_path / "paths.csv")
        assert header == ["path", "t", "S", "Z", "V"]
        # horizon 0.1 at 100 steps/year -> 10 steps -> 11 points per path
        assert len(rows) == 4 * 11
        assert {r[4] for r in rows} == {"0.0025"}
        assert all(float(r[2]) > 0 for r in rows)

    def test_module_entry_point(self, tmp_path):
        cfg = write(tmp_path / "flat.cfg", FLAT_CFG)
        proc = subprocess.run(
            [sys.executable, "-m", "qrheston.cli", "simulate",
             "--params", cfg, "--out", str(tmp_path)],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0
        assert "paths.csv" in proc.stdout


class TestPriceCommand:
    def test_table_shape_and_header(self, tmp_path):
        cfg = write(tmp_path / "b.cfg", BENCH_CFG)
        status = cli.main([
            "price", "--params", cfg, "--out", str(tmp_path),
            "--outer-paths", "500", "--steps-per-year", "200",
            "--expiries", "0.08,0.16", "--log-moneyness=-0.05,0.0",
        ])
        assert status == 0
        header, rows = read_rows(tmp_path / "prices.csv")
        assert header == ["instrument", "expiry_years", "log_moneyness",
                          "price", "std_error"]
        assert len(rows) == 4
        assert all(r[0] == "SPX" for r in rows)
        assert all(float(r[3]) > 0 and float(r[4]) >= 0 for r in rows)


class TestSmileCommand:
    def test_one_csv_per_expiry_with_band_columns(self, tmp_path):
        cfg = write(tmp_path / "b.cfg", BENCH_CFG)
        status = cli.main([
            "smile", "--params", cfg, "--out", str(tmp_path),
            "--outer-paths", "800", "--steps-per-year", "300",
            "--expiries", "0.08,0.12", "--log-moneyness=-0.05,0.0",
        ])
        assert status == 0
        for expiry in ("0.08", "0.12"):
            header, rows = read_rows(tmp_path / f"smile_spx_{expiry}.csv")
            assert header == ["log_moneyness", "model_vol", "vol_se_lo", "vol_se_hi"]
            assert len(rows) == 2
            for _, mid, lo, hi in rows:
                assert 0.0 <= float(lo) <= float(mid) <= float(hi)

    def test_provenance_header_records_params_and_sizes(self, tmp_path):
        cfg = write(tmp_path / "b.cfg", BENCH_CFG)
        cli.main([
            "smile", "--params", cfg, "--out", str(tmp_path),
            "--outer-paths", "400", "--steps-per-year", "200",
            "--expiries", "0.08", "--log-moneyness", "0.0", "--seed", "9",
        ])
        text = (tmp_path / "smile_spx_0.08.csv").read_text()
        assert "# command: smile" in text
        assert "lambda=1.2" in text
        assert "outer_paths=400" in text and "seed=9" in text


class TestVixFuturesCommand:
    def test_futures_table(self, tmp_path):
        cfg = write(tmp_path / "b.cfg", BENCH_CFG)
        status = cli.main([
            "vix-futures", "--params", cfg, "--out", str(tmp_path),
            "--outer-paths", "300", "--inner-paths", "24",
            "--steps-per-year", "200", "--expiries", "0.08",
        ])
        assert status == 0
        header, rows = read_rows(tmp_path / "vix_futures.csv")
        assert header == ["expiry_years", "future", "std_error", "split_estimate"]
        assert len(rows) == 1
        future = float(rows[0][1])
        assert 5.0 < future < 40.0


class TestSynthAndCalibrate:
    SYNTH_CFG = BENCH_CFG + (
        "mc.outer_paths = 1000\n"
        "mc.inner_paths = 40\n"
        "mc.seed = 5\n"
        "spx.expiries = 0.08\n"
        "spx.log_moneyness = -0.1,0.0,0.05\n"
        "vix.expiries = 0.08\n"
        "vix.log_moneyness = -0.1,0.0,0.1\n"
    )

    def test_synth_emits_loadable_smiles(self, tmp_path):
        cfg = write(tmp_path / "s.cfg", self.SYNTH_CFG)
        assert cli.main(["synth", "--params", cfg, "--out", str(tmp_path)]) == 0
        data = SmileSet.from_csv(tmp_path / "smiles.csv")
        assert len(data.quotes) == 6
        assert len(data.by_class("VIX")) == 3

    def test_synth_reruns_are_byte_identical_modulo_timestamp(self, tmp_path):
        cfg = write(tmp_path / "s.cfg", self.SYNTH_CFG)
        cli.main(["synth", "--params", cfg, "--out", str(tmp_path / "r1")])
        cli.main(["synth", "--params", cfg, "--out", str(tmp_path / "r2")])
        assert strip_stamp(tmp_path / "r1/smiles.csv") == strip_stamp(
            tmp_path / "r2/smiles.csv"
        )

    def test_round_trip_calibration_report(self, tmp_path):
        """synth then calibrate from a perturbed start on the same machine
        and seed: the report must come back valid with a small objective."""
        synth_cfg = write(tmp_path / "s.cfg", self.SYNTH_CFG)
        cli.main(["synth", "--params", synth_cfg, "--out", str(tmp_path)])
        cal_cfg = write(
            tmp_path / "c.cfg",
            self.SYNTH_CFG.replace("a = 0.384", "a = 0.4416")
            + "grid.a = 0.08\nrefine.max_evals = 8\n",
        )
        status = cli.main([
            "calibrate", "--params", cal_cfg,
            "--data", str(tmp_path / "smiles.csv"), "--out", str(tmp_path),
        ])
        assert status == 0
        report = (tmp_path / "calibration_report.txt").read_text()
        fields = dict(
            ln.split(" = ", 1) for ln in report.splitlines()
            if " = " in ln and not ln.startswith("#")
        )
        assert fields["valid"] == "True"
        assert fields["n_excluded"] == "0"
        assert float(fields["objective"]) < 1e-3
        assert abs(float(fields["a"]) - 0.384) < 0.02

        header, rows = read_rows(tmp_path / "residuals.csv")
        assert header == ["class", "expiry_years", "log_moneyness",
                          "mid_vol", "model_vol", "residual"]
        assert len(rows) == 6
        assert all(abs(float(r[5])) < 0.05 for r in rows)

    def test_calibrate_requires_data(self, tmp_path):
        cfg = write(tmp_path / "b.cfg", BENCH_CFG)
        assert cli.main(["calibrate", "--params", cfg, "--out", str(tmp_path)]) == 2


class TestExitCodes:
    def test_invalid_model_parameter_names_the_invariant(self, tmp_path, capsys):
        cfg = write(tmp_path / "bad.cfg", BENCH_CFG.replace("alpha = 0.51", "alpha = 0.3"))
        status = cli.main(["simulate", "--params", cfg, "--out", str(tmp_path)])
        assert status == 2
        err = capsys.readouterr().err
        assert "status=2" in err and "alpha" in err
        assert "module=qrheston.model" in err

    def test_malformed_config_is_status_two(self, tmp_path, capsys):
        cfg = write(tmp_path / "bad.cfg", "alpha 0.6\n")
        assert cli.main(["simulate", "--params", cfg, "--out", str(tmp_path)]) == 2
        assert "type=DataError" in capsys.readouterr().err

    def test_numerical_failure_is_status_three(self, tmp_path, capsys, monkeypatch):
        def boom(args, cfg, params, mc, out):
            raise NumericalError("synthetic blow-up")

        monkeypatch.setitem(cli._COMMANDS, "price", boom)
        cfg = write(tmp_path / "b.cfg", BENCH_CFG)
        status = cli.main(["price", "--params", cfg, "--out", str(tmp_path)])
        assert status == 3
        err = capsys.readouterr().err
        assert "status=3" in err and "NumericalError" in err


class TestHelpers:
    def test_floats_parses_lists(self):
        assert cli._floats("0.1, 0.2,0.3") == (0.1, 0.2, 0.3)

    def test_floats_rejects_garbage(self):
        with pytest.raises(DataError):
            cli._floats("0.1,zero")

    def test_default_half_widths_respect_alpha_interval(self):
        from qrheston.model import ModelParams

        nu = ModelParams(alpha=0.97, lam=1.2, a=0.4, b=0.1, c=0.01, z0=0.1)
        widths = cli._default_half_widths(nu)
        assert widths["alpha"] <= 1.0 - 1e-6 - 0.97
        assert widths["a"] == pytest.approx(0.06)

    def test_default_half_widths_skip_zero_parameters(self):
        from qrheston.model import ModelParams

        nu = ModelParams(alpha=0.6, lam=1.0, a=0.0, b=0.0, c=0.0025, z0=0.0)
        widths = cli._default_half_widths(nu)
        assert "b" not in widths and "z0" not in widths and "a" not in widths
