import csv
import json

import pytest

from nyqwdm import cli, harness
from nyqwdm.config import load

SMALL = ["--seed", "1"]


def small_config(tmp_path, extra=""):
    path = tmp_path / "scenario.ini"
    path.write_text("[plan]\nn_carriers = 1\n[metrics]\nn_symbols = 20000\n" + extra)
    return path


class TestRates:
    """Rate arithmetic from the command line."""

    def test_full_comb(self, tmp_path, capsys):
        code = cli.main(["rates", "--n-carriers", "325", "--out", str(tmp_path)])
        assert code == cli.EXIT_OK
        assert capsys.readouterr().out.strip() == "line 32.5 Tbit/s, net 26 Tbit/s, SE 6.4 bit/s/Hz"
        with open(tmp_path / "rates.csv") as fh:
            (row,) = list(csv.DictReader(fh))
        assert row["n_carriers"] == "325" and float(row["net_rate"]) == 26e12


class TestRun:
    """The run verb and its artifacts."""

    def test_artifacts(self, tmp_path):
        cfg = small_config(tmp_path)
        out = tmp_path / "out"
        assert cli.main(["run", "--config", str(cfg), "--out", str(out), *SMALL]) == cli.EXIT_OK
        for name in ("results.csv", "sync.json", "provenance.json", "config.ini"):
            assert (out / name).is_file()
        with open(out / "results.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert [r["pol"] for r in rows] == ["x", "y"]
        assert all(float(r["ber_counted"]) == 0.0 for r in rows)
        prov = json.loads((out / "provenance.json").read_text())
        assert prov["master_seed"] == 1
        assert set(json.loads((out / "sync.json").read_text())) == {"0"}

    def test_dumped_config_reruns_identically(self, tmp_path):
        cfg = small_config(tmp_path)
        a, b = tmp_path / "a", tmp_path / "b"
        assert cli.main(["run", "--config", str(cfg), "--out", str(a)]) == cli.EXIT_OK
        assert cli.main(["run", "--config", str(a / "config.ini"), "--out", str(b)]) == cli.EXIT_OK
        assert (a / "results.csv").read_text() == (b / "results.csv").read_text()
        assert load(a / "config.ini") == load(b / "config.ini")

    def test_seed_override(self, tmp_path):
        cfg = small_config(tmp_path)
        assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path), "--seed", "9"]) == 0
        assert load(tmp_path / "config.ini").channel.master_seed == 9


class TestExitCodes:
    """0 success, 2 configuration error, 3 runtime error."""

    def test_unknown_key(self, tmp_path, capsys):
        cfg = small_config(tmp_path, "[rx]\nnot_a_key = 1\n")
        assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path)]) == cli.EXIT_CONFIG
        assert "config error" in capsys.readouterr().err

    def test_inconsistent_values(self, tmp_path):
        cfg = small_config(tmp_path, "[tx]\nn_taps = 63\n")
        assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path)]) == cli.EXIT_CONFIG

    def test_bad_sweep_path(self, tmp_path):
        args = ["sweep", "--param", "tx.nope", "--values", "1", "--out", str(tmp_path)]
        assert cli.main(args) == cli.EXIT_CONFIG

    def test_argument_error(self):
        with pytest.raises(SystemExit) as ei:
            cli.main(["no-such-verb"])
        assert ei.value.code == cli.EXIT_CONFIG

    def test_runtime_failure(self, tmp_path, monkeypatch, capsys):
        def fail(*a, **k):
            raise harness.StageError("clock", 0, RuntimeError("no lock"))

        monkeypatch.setattr(harness, "run_link", fail)
        assert cli.main(["run", "--out", str(tmp_path)]) == cli.EXIT_RUNTIME
        assert "[clock] carrier 0" in capsys.readouterr().err


class TestStudies:
    """Sweep, validation, crosstalk and spectrum verbs write their tables."""

    def test_sweep(self, tmp_path):
        cfg = small_config(tmp_path)
        args = ["sweep", "--config", str(cfg), "--param", "channel.n_spans", "--values", "0,1", "--out", str(tmp_path)]
        assert cli.main(args) == cli.EXIT_OK
        with open(tmp_path / "sweep.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert [r["value"] for r in rows] == ["0", "0", "1", "1"]

    def test_validate(self, tmp_path):
        args = ["validate-evm-ber", "--snr", "14", "--n-symbols", "20000", "--out", str(tmp_path)]
        assert cli.main(args) == cli.EXIT_OK
        with open(tmp_path / "evm_ber.csv") as fh:
            (row,) = list(csv.DictReader(fh))
        assert float(row["evm_percent"]) == pytest.approx(15, abs=1)
        assert 0.67 <= float(row["ratio"]) <= 1.5

    def test_crosstalk(self, tmp_path):
        cfg = tmp_path / "x.ini"
        cfg.write_text("[plan]\nn_carriers = 3\n[metrics]\nn_symbols = 20000\n")
        args = ["crosstalk", "--config", str(cfg), "--taps", "64", "--spacing-factors", "1.0", "--out", str(tmp_path)]
        assert cli.main(args) == cli.EXIT_OK
        with open(tmp_path / "crosstalk.csv") as fh:
            (row,) = list(csv.DictReader(fh))
        assert 0 < float(row["penalty_pp"]) <= 3

    def test_spectrum(self, tmp_path):
        cfg = small_config(tmp_path)
        args = ["spectrum", "--config", str(cfg), "--rbw", "100e6", "--out", str(tmp_path)]
        assert cli.main(args) == cli.EXIT_OK
        lines = (tmp_path / "spectrum.csv").read_text().splitlines()
        assert len(lines) > 100
