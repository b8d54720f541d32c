"""
Tests for the coldloop command line.

Tests for:
- Subcommand outputs and report files
- Exit codes for configuration, numerical and I/O failures
- Heterodyne synthesis followed by estimation
"""

import json
import math

import pytest

from coldloop.harness.cli import EXIT_CONFIG, EXIT_IO, EXIT_NUMERICAL, EXIT_OK, build_parser, main
from coldloop.io import read_key_values


def _stdout_values(text):
    values = {}
    for line in text.splitlines():
        key, sep, value = line.partition("=")
        if sep:
            values[key] = value
    return values


# ============================================================
# Parser
# ============================================================


class TestParser:
    """Test argument parsing."""

    def test_set_values_decoded_as_json(self):
        args = build_parser().parse_args(["model", "--set", "seeds.base=4", "--set", "chain.preset=delay_only"])
        assert args.overrides == [("seeds.base", 4), ("chain.preset", "delay_only")]

    def test_malformed_set_rejected(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args(["model", "--set", "no-equals"])

    def test_command_required(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args([])


# ============================================================
# Subcommands
# ============================================================


class TestModelCommand:
    """Test the analytic summary."""

    def test_summary_and_files(self, tmp_path, capsys):
        out = tmp_path / "out"
        assert main(["model", "--out", str(out)]) == EXIT_OK
        values = _stdout_values(capsys.readouterr().out)
        assert float(values["eta_meas"]) == pytest.approx(1.33 / 5.5)
        assert float(values["n_min"]) == pytest.approx(0.5168, abs=1e-3)
        assert (out / "curves.csv").exists()
        assert (out / "summary.txt").exists()
        assert json.loads((out / "config.json").read_text())["output_dir"] == str(out)


class TestExitCodes:
    """Test error classes mapped to exit codes."""

    def test_invalid_value(self, tmp_path, capsys):
        code = main(["model", "--out", str(tmp_path), "--set", "oscillator.mass_kg=-1"])
        assert code == EXIT_CONFIG
        assert "oscillator.mass_kg" in capsys.readouterr().err

    def test_unknown_key(self, tmp_path, capsys):
        assert main(["model", "--out", str(tmp_path), "--set", "budget.gamma_foo=1"]) == EXIT_CONFIG
        assert "budget.gamma_foo" in capsys.readouterr().err

    def test_estimate_without_inputs(self, tmp_path, capsys):
        assert main(["estimate", "--out", str(tmp_path)]) == EXIT_CONFIG
        assert "NO_INPUT" in capsys.readouterr().err

    def test_missing_trace_file(self, tmp_path, capsys):
        code = main(["estimate", "--out", str(tmp_path), "--homodyne", str(tmp_path / "absent.csv")])
        assert code == EXIT_IO
        assert "absent.csv" in capsys.readouterr().err

    def test_output_path_is_a_file(self, tmp_path, capsys):
        blocker = tmp_path / "blocker"
        blocker.write_text("x")
        assert main(["model", "--out", str(blocker)]) == EXIT_IO
        assert "cannot write" in capsys.readouterr().err

    def test_unstable_simulation(self, tmp_path, capsys):
        """A delay-only loop above gamma_fb = omega_z fails the stability check."""
        code = main(
            [
                "simulate",
                "--out",
                str(tmp_path),
                "--set",
                "chain.preset=delay_only",
                "--set",
                "homodyne.duration_s=0.01",
                "--set",
                "homodyne.sample_rate_hz=4e6",
                "--gamma-fb-hz",
                "116.4e3",
            ]
        )
        assert code == EXIT_NUMERICAL
        assert "UNSTABLE" in capsys.readouterr().err


class TestHeterodyneRoundTrip:
    """Test synth-het records feeding estimate."""

    def test_synthesize_then_estimate(self, tmp_path, capsys):
        records = tmp_path / "records"
        common = ["--set", "heterodyne.duration_s=0.5", "--seed", "3"]
        assert main(["synth-het", "--out", str(records), "--n-bar", "0.66", *common]) == EXIT_OK
        for name in ("i_r.csv", "i_b.csv", "i_car.csv"):
            assert (records / name).exists()
        capsys.readouterr()

        estimates = tmp_path / "estimates"
        assert main(["estimate", "--out", str(estimates), "--het-dir", str(records), *common]) == EXIT_OK
        values = _stdout_values(capsys.readouterr().out)
        assert math.isfinite(float(values["n_asymmetry"]))
        assert math.isfinite(float(values["n_cross_correlation"]))
        assert (estimates / "s_rb.csv").exists()
        assert read_key_values(estimates / "summary.txt")["config_hash"] == values["config_hash"]


class TestSweepCommand:
    """Test the full sweep from a config file."""

    def test_sweep_report(self, small_tree, tmp_path, capsys):
        config = tmp_path / "sweep.json"
        config.write_text(json.dumps(small_tree))
        out = tmp_path / "out"
        assert main(["sweep", "--config", str(config), "--out", str(out), "--threads", "2"]) == EXIT_OK
        values = _stdout_values(capsys.readouterr().out)
        assert values["failed_rows"] == "0"
        for name in ("sweep.csv", "curves.csv", "squash.csv", "config.json", "summary.txt"):
            assert (out / name).exists()
