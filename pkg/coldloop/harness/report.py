"""
Report emission: sweep rows, theory curves, squashing table, config echo and
a key/value summary. Every file is written once, atomically.

Usage:
    from coldloop.harness.report import emit_report

    paths = emit_report(report, "out/", tree=config.tree, squash=run_squashing_demo(config))
"""

from __future__ import annotations

import json
import logging
import math
import os
from pathlib import Path
from typing import Any

from ..constants import rad_to_hz
from ..io import atomic_write_text, write_key_values, write_table_csv
from ..model import ThermometryMethod
from .experiments import SquashRow, SweepReport, SweepRow

logger: logging.Logger = logging.getLogger(__name__)

SWEEP_FILE = "sweep.csv"
CURVES_FILE = "curves.csv"
SQUASH_FILE = "squash.csv"
CONFIG_FILE = "config.json"
SUMMARY_FILE = "summary.txt"

SWEEP_COLUMNS = [
    "index",
    "label",
    "gamma_fb_injected_hz",
    "gamma_fb_fitted_hz",
    "gamma_fb_sigma_hz",
    "gamma_eff_fitted_hz",
    "energy",
    "energy_sigma",
    "n_true",
]
CURVE_COLUMNS = ["gamma_fb_hz", "gamma_eff_hz", "n_delay", "n_ideal"]
SQUASH_COLUMNS = ["gamma_fb_hz", "inloop_ratio", "true_ratio", "freq_min_hz"]

METHODS = tuple(str(m) for m in ThermometryMethod)


def sweep_columns() -> list[str]:
    methods = [c for m in METHODS for c in (f"n_{m}", f"n_{m}_sigma")]
    return [*SWEEP_COLUMNS, *methods, "flags", "error"]


def _sweep_row(row: SweepRow) -> list[Any]:
    cells: list[Any] = [
        row.index,
        row.label,
        rad_to_hz(row.gamma_fb_injected),
        rad_to_hz(row.gamma_fb_fitted),
        rad_to_hz(row.gamma_fb_sigma),
        rad_to_hz(row.gamma_eff_fitted),
        row.energy,
        row.energy_sigma,
        row.n_true,
    ]
    for method in METHODS:
        result = row.results.get(method)
        cells += [result.n_bar, result.sigma] if result is not None else [math.nan, math.nan]
    return [*cells, ";".join(row.flags), row.error]


def summary_values(report: SweepReport) -> dict[str, Any]:
    """Budget-level quantities plus, per method, the estimate at the highest finished gain."""
    values: dict[str, Any] = {
        "config_hash": report.config_hash,
        "gamma_meas_hz": rad_to_hz(report.gamma_meas),
        "gamma_tot_hz": rad_to_hz(report.gamma_tot),
        "eta_meas": report.eta_meas,
        "gamma_star_hz": rad_to_hz(report.gamma_star),
        "n_min": report.n_min,
        "conditional_bound": report.conditional_bound,
        "rows": len(report.rows),
        "failed_rows": len(report.failed_rows),
        "skipped_rows": sum(r.skipped for r in report.rows),
    }
    if report.reference is not None:
        values["reference_omega_z_hz"] = rad_to_hz(report.reference.value("omega_z"))
        values["reference_gamma_m_hz"] = rad_to_hz(report.reference.value("gamma_m"))
        rates = report.reference.meta.get("rates")
        if rates is not None:
            values["fitted_eta_meas"] = rates.eta_meas
    finished = [r for r in report.rows if not (r.failed or r.skipped)]
    if finished:
        top = finished[-1]
        values["max_gain_fb_hz"] = rad_to_hz(top.gamma_fb_injected)
        values["max_gain_n_true"] = top.n_true
        for method in METHODS:
            if method in top.results:
                values[f"max_gain_n_{method}"] = top.results[method].n_bar
                values[f"max_gain_n_{method}_sigma"] = top.results[method].sigma
    return values


def emit_report(
    report: SweepReport,
    directory: str | os.PathLike[str],
    tree: dict[str, Any] | None = None,
    squash: list[SquashRow] | None = None,
) -> list[Path]:
    """
    Write the report files into `directory`.

    Raises:
        ReportIOError: If any file cannot be written, naming its path
    """
    out = Path(directory)
    header = {"config_hash": report.config_hash}
    paths = [
        write_table_csv(out / SWEEP_FILE, sweep_columns(), [_sweep_row(r) for r in report.rows], header),
        write_table_csv(
            out / CURVES_FILE,
            CURVE_COLUMNS,
            [
                [rad_to_hz(float(g)), rad_to_hz(float(e)), float(d), float(i)]
                for g, e, d, i in zip(
                    report.curves.gamma_fb,
                    report.curves.gamma_eff,
                    report.curves.n_delay,
                    report.curves.n_ideal,
                    strict=True,
                )
            ],
            header,
        ),
    ]
    if squash is not None:
        paths.append(write_squash(out / SQUASH_FILE, squash, report.config_hash))
    if tree is not None:
        paths.append(atomic_write_text(out / CONFIG_FILE, json.dumps(tree, indent=2, sort_keys=True) + "\n"))
    paths.append(write_key_values(out / SUMMARY_FILE, summary_values(report), comment="coldloop sweep summary"))
    logger.info("Report written", extra={"directory": str(out), "files": [p.name for p in paths]})
    return paths


def write_squash(path: str | os.PathLike[str], rows: list[SquashRow], config_hash: str = "") -> Path:
    return write_table_csv(
        path,
        SQUASH_COLUMNS,
        [[rad_to_hz(r.gamma_fb), r.inloop_ratio, r.true_ratio, rad_to_hz(r.omega_min)] for r in rows],
        {"config_hash": config_hash},
    )
