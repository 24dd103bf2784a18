from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from photonoc.cli import EXIT_ERROR, EXIT_OK, EXIT_VIOLATION, export_plot_data, parse_current, run
from photonoc.explore import ExplorationResult

MINI = str(Path(__file__).parent / "data" / "mini.toml")


def cli(tmp_path, *args):
    return run([args[0], "--config", MINI, "--out", str(tmp_path), *args[1:]])


class TestParsing:
    def test_help(self, capsys):
        with pytest.raises(SystemExit) as info:
            run(["--help"])
        assert info.value.code == 0
        assert "thermal" in capsys.readouterr().out

    def test_bad_flag_is_an_error(self, capsys):
        with pytest.raises(SystemExit) as info:
            run(["thermal", "--no-such-flag"])
        assert info.value.code == EXIT_ERROR

    def test_bad_power_value(self):
        with pytest.raises(SystemExit) as info:
            run(["thermal", "--pvcsel", "lots"])
        assert info.value.code == EXIT_ERROR

    def test_bad_config_names_the_file(self, tmp_path, capsys):
        bad = tmp_path / "broken.toml"
        bad.write_text("x = = 1\n")
        assert run(["thermal", "--config", str(bad), "--out", str(tmp_path)]) == EXIT_ERROR
        assert "broken.toml" in capsys.readouterr().err

    def test_unknown_variant(self, tmp_path, capsys):
        assert cli(tmp_path, "thermal", "--variant", "huge") == EXIT_ERROR
        assert "huge" in capsys.readouterr().err

    def test_jobs_must_be_positive(self, tmp_path):
        assert cli(tmp_path, "thermal", "--jobs", "0") == EXIT_ERROR

    @pytest.mark.parametrize("text, expected", [("2.4", 2.4), ("2.4mA", 2.4), ("0.0024A", 2.4), (" 3 mA ", 3.0)])
    def test_parse_current(self, text, expected):
        assert parse_current(text) == pytest.approx(expected, rel=1e-12)

    @pytest.mark.parametrize("text", ["", "2.4 uA", "two", "2.4mA2"])
    def test_parse_current_rejects(self, text):
        with pytest.raises(ValueError):
            parse_current(text)


class TestCommands:
    def test_thermal(self, tmp_path, capsys):
        code = cli(tmp_path, "thermal")
        assert code in (EXIT_OK, EXIT_VIOLATION)
        assert (tmp_path / "thermal_map.csv").is_file()
        oni = np.loadtxt(tmp_path / "oni.csv", delimiter=",", skiprows=1)
        assert oni.shape == (4, 8)
        # the exit status agrees with the flagged column
        assert (code == EXIT_VIOLATION) == bool(oni[:, 2].max() > 1.0)
        assert capsys.readouterr().out.startswith("thermal:")

    def test_generous_limit_passes(self, tmp_path):
        assert cli(tmp_path, "thermal", "--max-gradient", "100") == EXIT_OK

    def test_snr_with_ledger(self, tmp_path):
        code = cli(tmp_path, "snr", "--ledger", "--max-gradient", "100", "--min-snr", "0")
        assert code == EXIT_OK
        for v in ("short", "long"):
            for stem in ("snr", "oni", "ledger"):
                assert (tmp_path / f"{stem}_{v}.csv").is_file()

    def test_snr_single_variant(self, tmp_path):
        cli(tmp_path, "snr", "--variant", "short")
        assert (tmp_path / "snr_short.csv").is_file()
        assert not (tmp_path / "snr_long.csv").exists()
        assert not (tmp_path / "ledger_short.csv").exists()

    def test_current_notes(self, tmp_path, capsys):
        cli(tmp_path, "thermal", "--ivcsel", "2.4mA")
        notes = [line for line in capsys.readouterr().out.splitlines() if line.startswith("note:")]
        assert any("P_elec" in n for n in notes)
        assert any("P_driver" in n for n in notes)

    def test_sweep(self, tmp_path):
        code = cli(tmp_path, "sweep", "--variable", "P_heater", "--range", "0", "3", "3")
        assert code in (EXIT_OK, EXIT_VIOLATION)
        for name in ("sweep.csv", "sweep_channels.csv", "summary.json", "sweep.dat"):
            assert (tmp_path / name).is_file()
        dat = np.loadtxt(tmp_path / "sweep.dat")
        assert dat.shape == (3, 4)
        assert list(dat[:, 0]) == [0.0, 1.5, 3.0]
        data = json.loads((tmp_path / "summary.json").read_text())
        assert data["argmin_gradient"]["max_gradient_C"] == pytest.approx(dat[:, 1].min(), rel=1e-9)

    def test_sweep_without_snr(self, tmp_path):
        cli(tmp_path, "sweep", "--range", "0", "2", "2", "--no-snr")
        assert not (tmp_path / "sweep_channels.csv").exists()
        assert np.isnan(np.loadtxt(tmp_path / "sweep.dat")[:, 2]).all()

    def test_sweep_bad_range(self, tmp_path):
        assert cli(tmp_path, "sweep", "--range", "3", "0", "3") == EXIT_ERROR
        assert cli(tmp_path, "sweep", "--range", "0", "x", "3") == EXIT_ERROR

    def test_optimize(self, tmp_path):
        code = cli(tmp_path, "optimize", "--budget", "6")
        assert code in (EXIT_OK, EXIT_VIOLATION)
        data = json.loads((tmp_path / "optimize.json").read_text())
        assert len(data["evaluations"]) <= 6
        assert data["gradient_C"] <= data["no_heater_gradient_C"] + 1e-12
        dat = np.loadtxt(tmp_path / "optimize.dat")
        assert dat.shape == (len(data["evaluations"]), 2)
        assert np.all(np.diff(dat[:, 0]) > 0)

    def test_scenarios(self, tmp_path):
        code = cli(tmp_path, "scenarios", "--scenario", "uniform:2W", "--scenario", "diagonal:0.5W,1.5W")
        assert code in (EXIT_OK, EXIT_VIOLATION)
        assert (tmp_path / "scenarios.csv").is_file()
        lines = (tmp_path / "scenarios.dat").read_text().splitlines()
        assert lines[0].startswith("# scenario")
        # scenario name plus spread and worst SNR per variant
        assert [len(row.split()) for row in lines[1:]] == [5, 5]

    def test_repeated_scenario_kind(self, tmp_path):
        assert cli(tmp_path, "scenarios", "--scenario", "uniform:1W", "--scenario", "uniform:2W") == EXIT_ERROR


def test_empty_export_writes_nothing(tmp_path):
    target = tmp_path / "empty.dat"
    with pytest.raises(ValueError, match="empty"):
        export_plot_data([], target)
    with pytest.raises(ValueError, match="empty"):
        export_plot_data(ExplorationResult("P_heater", ()), target)
    assert not target.exists()
