"""
Command-line entry point.

Subcommands: model, simulate, synth-het, estimate, sweep, squash. Exit codes:
0 success, 2 configuration error, 3 numerical failure (including any failed
sweep row), 4 I/O error.

Usage:
    coldloop sweep --config sweep.json --seed 3 --out results/ --threads 4
    coldloop model --set budget.gamma_tot_hz=6e3
    python -m coldloop squash
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import Any

from ..constants import hz_to_rad, rad_to_hz
from ..estimate import (
    calibrate_cross_frame,
    estimate_cross_psd,
    estimate_psd,
    fit_cross_spectrum,
    fit_reference_homodyne,
    fit_sideband_pair,
    phase_correct,
)
from ..exceptions import (
    ColdLoopError,
    ConfigurationError,
    DataFormatError,
    InvalidParameterError,
    NumericalError,
    ReportIOError,
)
from ..io import (
    read_trace_csv,
    write_cross_spectrum_csv,
    write_key_values,
    write_spectrum_csv,
    write_trace_csv,
)
from ..model import (
    conditional_occupation,
    force_psd_total,
    imprecision_psd,
    minimum_occupation,
    optimal_damping,
)
from ..simulate import SimConfig, segment_trace, simulate_closed_loop, synthesize_heterodyne
from .config import ExperimentConfig, load_config
from .experiments import (
    SweepReport,
    heterodyne_config,
    run_gain_sweep,
    run_squashing_demo,
    theory_curves,
)
from .report import SUMMARY_FILE, emit_report, summary_values, write_squash

logger: logging.Logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4


# ============================================================
# Argument parsing
# ============================================================


def _override(text: str) -> tuple[str, Any]:
    key, sep, raw = text.partition("=")
    if not sep or not key:
        raise argparse.ArgumentTypeError(f"expected KEY=VALUE, got {text!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="JSON experiment config")
    common.add_argument("--seed", type=int, default=None, help="Override seeds.base")
    common.add_argument("--out", type=Path, default=None, help="Override output_dir")
    common.add_argument("--threads", type=int, default=None, help="Parallel sweep rows")
    common.add_argument(
        "--set",
        dest="overrides",
        type=_override,
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="Override a dotted config key (JSON value)",
    )
    common.add_argument(
        "--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="Root log level"
    )

    parser = argparse.ArgumentParser(prog="coldloop", description="Feedback-cooled levitated particle digital twin")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("model", parents=[common], help="Analytic budget summary and theory curves")

    simulate = sub.add_parser("simulate", parents=[common], help="Time-domain closed-loop simulation")
    simulate.add_argument("--gamma-fb-hz", type=float, default=None, help="Feedback gain (default: optimal)")

    het = sub.add_parser("synth-het", parents=[common], help="Synthesize heterodyne sideband records")
    het.add_argument("--n-bar", type=float, default=None, help="Occupation (default: heterodyne.n_bar)")
    het.add_argument("--gamma-eff-hz", type=float, default=None, help="Linewidth (default: optimal damping)")
    het.add_argument("--lo-sign", type=int, choices=[1, -1], default=1)

    estimate = sub.add_parser("estimate", parents=[common], help="Thermometry on recorded traces")
    estimate.add_argument("--het-dir", type=Path, default=None, help="Directory with i_r.csv, i_b.csv, i_car.csv")
    estimate.add_argument("--homodyne", type=Path, default=None, help="Feedback-off homodyne trace to calibrate")

    sub.add_parser("sweep", parents=[common], help="Gain sweep with all thermometers")
    sub.add_parser("squash", parents=[common], help="Noise-squashing table over the sweep gains")
    return parser


def _resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    overrides: dict[str, Any] = dict(args.overrides)
    if args.seed is not None:
        overrides["seeds.base"] = args.seed
    if args.out is not None:
        overrides["output_dir"] = str(args.out)
    if args.threads is not None:
        overrides["threads"] = args.threads
    return load_config(args.config, overrides)


def _emit(values: dict[str, Any]) -> None:
    for key, value in values.items():
        sys.stdout.write(f"{key}={value}\n")


# ============================================================
# Subcommands
# ============================================================


def cmd_model(config: ExperimentConfig) -> int:
    params, budget = config.params, config.budget
    report = SweepReport(
        rows=(),
        gamma_meas=budget.gamma_meas,
        gamma_tot=budget.gamma_tot,
        eta_meas=budget.eta_meas,
        gamma_star=optimal_damping(budget),
        n_min=minimum_occupation(budget),
        conditional_bound=conditional_occupation(budget.eta_meas),
        curves=theory_curves(config),
        config_hash=config.config_hash,
    )
    emit_report(report, config.output_dir, tree=config.tree)
    values = summary_values(report)
    values["s_imp"] = imprecision_psd(params, budget)
    values["s_ff_tot"] = force_psd_total(params, budget)
    values["z_zpf_m"] = params.z_zpf
    _emit(values)
    return EXIT_OK


def cmd_simulate(config: ExperimentConfig, gamma_fb_hz: float | None) -> int:
    hom = config.homodyne
    gamma_fb = hz_to_rad(gamma_fb_hz) if gamma_fb_hz is not None else optimal_damping(config.budget)
    result = simulate_closed_loop(
        SimConfig(
            params=config.params,
            budget=config.budget,
            chain=config.chain,
            gamma_fb=gamma_fb,
            dt=1.0 / hom.sample_rate_hz,
            duration=hom.duration_s,
            seed=config.seed,
            integrator=hom.integrator,
        )
    )
    out, digest = config.output_dir, config.config_hash
    write_trace_csv(out / "z.csv", result.z, digest)
    write_trace_csv(out / "i_hom.csv", result.i_hom, digest)
    spectrum = estimate_psd(segment_trace(result.i_hom, hom.segment_samples))
    write_spectrum_csv(out / "s_hom.csv", spectrum, digest)
    _emit(
        {
            "gamma_fb_hz": rad_to_hz(gamma_fb),
            "delay_samples": result.delay_samples,
            "delay_rounding_s": result.delay_rounding_s,
            "segments": spectrum.n_averages,
        }
    )
    return EXIT_OK


def cmd_synth_het(config: ExperimentConfig, n_bar: float | None, gamma_eff_hz: float | None, lo_sign: int) -> int:
    n = n_bar if n_bar is not None else config.heterodyne.n_bar
    gamma_eff = hz_to_rad(gamma_eff_hz) if gamma_eff_hz is not None else optimal_damping(config.budget)
    records = synthesize_heterodyne(heterodyne_config(config, n, gamma_eff, config.seed, lo_sign))
    out, digest = config.output_dir, config.config_hash
    for name, trace in (("i_r", records.i_r), ("i_b", records.i_b), ("i_car", records.i_car)):
        write_trace_csv(out / f"{name}.csv", trace, digest)
    _emit({"n_bar": n, "gamma_eff_hz": rad_to_hz(gamma_eff), "samples": len(records.i_r), "lo_sign": lo_sign})
    return EXIT_OK


def cmd_estimate(config: ExperimentConfig, het_dir: Path | None, homodyne: Path | None) -> int:
    if het_dir is None and homodyne is None:
        raise ConfigurationError("estimate needs --het-dir or --homodyne", code="NO_INPUT")
    mask, band = config.estimation.mask, config.fit_band()
    out, digest = config.output_dir, config.config_hash
    values: dict[str, Any] = {"config_hash": digest}
    if homodyne is not None:
        trace = read_trace_csv(homodyne)
        spectrum = estimate_psd(segment_trace(trace, config.homodyne.reference_segment_samples))
        write_spectrum_csv(out / "s_ref.csv", spectrum, digest)
        fit = fit_reference_homodyne(spectrum, mask, mass=config.params.mass, band=band)
        rates = fit.meta["rates"]
        values.update(
            {
                "omega_z_hz": rad_to_hz(fit.value("omega_z")),
                "gamma_m_hz": rad_to_hz(fit.value("gamma_m")),
                "gamma_meas_hz": rad_to_hz(rates.gamma_meas),
                "gamma_tot_hz": rad_to_hz(rates.gamma_tot),
                "eta_meas": rates.eta_meas,
                "eta_meas_sigma": rates.eta_meas_sigma,
            }
        )
    if het_dir is not None:
        i_r, i_b = phase_correct(
            read_trace_csv(het_dir / "i_r.csv"),
            read_trace_csv(het_dir / "i_b.csv"),
            read_trace_csv(het_dir / "i_car.csv"),
        )
        cross = estimate_cross_psd(i_r, i_b, n_per_segment=config.heterodyne.segment_samples)
        write_cross_spectrum_csv(out / "s_rb.csv", cross, digest)
        pair = fit_sideband_pair(cross.stokes, cross.antistokes, mask, band)
        frame = calibrate_cross_frame(cross, config.heterodyne.tone_freq_hz)
        cross_fit = fit_cross_spectrum(frame.rotated, mask, band)
        values["theta_rad"] = frame.theta
        for fit in (pair, cross_fit):
            if fit.thermometry is not None:
                method = str(fit.thermometry.method)
                values[f"n_{method}"] = fit.thermometry.n_bar
                values[f"n_{method}_sigma"] = fit.thermometry.sigma
                values[f"{method}_flags"] = ";".join(fit.thermometry.flags)
    write_key_values(out / SUMMARY_FILE, values, comment="coldloop estimate")
    _emit(values)
    return EXIT_OK


def cmd_sweep(config: ExperimentConfig) -> int:
    report = run_gain_sweep(config)
    emit_report(report, config.output_dir, tree=config.tree, squash=run_squashing_demo(config))
    _emit(summary_values(report))
    for row in report.failed_rows:
        sys.stderr.write(f"row {row.index} (gamma_fb_hz={rad_to_hz(row.gamma_fb_injected):.6g}): {row.error}\n")
    return EXIT_NUMERICAL if report.failed_rows else EXIT_OK


def cmd_squash(config: ExperimentConfig) -> int:
    rows = run_squashing_demo(config)
    write_squash(config.output_dir / "squash.csv", rows, config.config_hash)
    for row in rows:
        sys.stdout.write(f"{rad_to_hz(row.gamma_fb):.6g},{row.inloop_ratio:.6g},{row.true_ratio:.6g}\n")
    return EXIT_OK


# ============================================================
# Entry point
# ============================================================


def run(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    match args.command:
        case "model":
            return cmd_model(config)
        case "simulate":
            return cmd_simulate(config, args.gamma_fb_hz)
        case "synth-het":
            return cmd_synth_het(config, args.n_bar, args.gamma_eff_hz, args.lo_sign)
        case "estimate":
            return cmd_estimate(config, args.het_dir, args.homodyne)
        case "sweep":
            return cmd_sweep(config)
        case "squash":
            return cmd_squash(config)
    raise ConfigurationError(f"unknown command {args.command!r}", code="COMMAND")


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except (ConfigurationError, InvalidParameterError) as e:
        logger.error("Configuration error", extra={"code": e.code, "context": e.context})
        sys.stderr.write(f"configuration error: {e}\n")
        return EXIT_CONFIG
    except (ReportIOError, DataFormatError) as e:
        logger.error("I/O error", extra={"code": e.code, "context": e.context})
        sys.stderr.write(f"i/o error: {e}\n")
        return EXIT_IO
    except NumericalError as e:
        logger.error("Numerical failure", extra={"code": e.code, "context": e.context})
        sys.stderr.write(f"numerical failure: {e}\n")
        return EXIT_NUMERICAL
    except ColdLoopError as e:
        sys.stderr.write(f"error: {e}\n")
        return EXIT_NUMERICAL
