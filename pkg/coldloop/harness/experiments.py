"""
Experiment orchestration: the gain sweep, its theory curves and the
noise-squashing demonstration.

Each sweep row is independent and owns its random generators, so rows may run
on a thread pool; the report is assembled afterwards in row order. A failure
inside one row is recorded on that row and the sweep carries on.

Usage:
    from coldloop.harness.config import load_config
    from coldloop.harness.experiments import run_gain_sweep, run_squashing_demo

    config = load_config("sweep.json")
    report = run_gain_sweep(config)
    for row in report.rows:
        print(row.gamma_fb_injected, row.n_true, row.results)
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.typing import NDArray

from ..constants import TWO_PI
from ..estimate import (
    FitResult,
    asymmetry_double_lo,
    anchor_calibration,
    apply_anchor,
    calibrate_cross_frame,
    displacement_spectrum,
    energy_grid,
    estimate_cross_psd,
    estimate_psd,
    fit_cross_spectrum,
    fit_inloop_gain,
    fit_reference_homodyne,
    fit_sideband_pair,
    inloop_spectrum,
    linewidth_fwhm,
    occupation_from_spectrum,
    phase_correct,
    true_displacement_psd,
)
from ..exceptions import ColdLoopError, ResolutionError
from ..filters import (
    SupportsResponse,
    closed_loop_susceptibility,
    effective_linewidth,
    stability_check,
    stability_grid,
)
from ..model import (
    OscillatorParams,
    Spectrum,
    ThermometryMethod,
    ThermometryResult,
    cold_damping_occupation,
    conditional_occupation,
    force_psd_total,
    imprecision_psd,
    minimal_background,
    minimum_occupation,
    optimal_damping,
    physical_scale,
    susceptibility,
)
from ..simulate import (
    HetSynthConfig,
    HetTone,
    SimConfig,
    TimeTrace,
    segment_trace,
    simulate_closed_loop,
    synthesize_heterodyne,
    synthesize_homodyne,
)
from .config import ExperimentConfig

logger: logging.Logger = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]

CURVE_POINTS = 60

# Random streams per row.
STREAM_REFERENCE = 0
STREAM_HOMODYNE = 1
STREAM_HETERODYNE = 2
STREAM_HETERODYNE_MINUS = 3


# ============================================================
# Report types
# ============================================================


@dataclass(frozen=True)
class SweepRow:
    """
    Outcome of one sweep point.

    `energy` is the zero-point-inclusive energy n̄ + ½ integrated from the
    reconstructed displacement spectrum before anchoring. `results` maps a
    thermometry method to its estimate; rows that were skipped or failed keep
    NaN in the numeric fields and carry the reason in `flags`/`error`.
    """

    index: int
    label: str
    gamma_fb_injected: float
    gamma_fb_fitted: float = math.nan
    gamma_fb_sigma: float = math.nan
    gamma_eff_fitted: float = math.nan
    energy: float = math.nan
    energy_sigma: float = 0.0
    n_true: float = math.nan
    results: dict[str, ThermometryResult] = field(default_factory=dict)
    flags: tuple[str, ...] = ()
    error: str = ""
    skipped: bool = False

    @property
    def failed(self) -> bool:
        return bool(self.error)


@dataclass(frozen=True)
class TheoryCurves:
    """Delay-filter (numerical energy integral) and ideal cold-damping occupations versus gain."""

    gamma_fb: FloatArray
    gamma_eff: FloatArray
    n_delay: FloatArray
    n_ideal: FloatArray


@dataclass(frozen=True)
class SweepReport:
    rows: tuple[SweepRow, ...]
    gamma_meas: float
    gamma_tot: float
    eta_meas: float
    gamma_star: float
    n_min: float
    conditional_bound: float
    curves: TheoryCurves
    config_hash: str = ""
    reference: FitResult | None = None

    @property
    def failed_rows(self) -> tuple[SweepRow, ...]:
        return tuple(r for r in self.rows if r.failed)


@dataclass(frozen=True)
class SquashRow:
    """
    In-loop and true-motion spectra compared at one gain.

    Attributes:
        gamma_fb: Feedback gain (rad/s)
        inloop_ratio: Minimum in-loop density over the band divided by S̄_imp
        true_ratio: True displacement density over its force-driven part,
            at the bin of the in-loop minimum
        omega_min: Frequency of the in-loop minimum (rad/s)
    """

    gamma_fb: float
    inloop_ratio: float
    true_ratio: float
    omega_min: float

    @property
    def squashed(self) -> bool:
        return self.inloop_ratio < 1.0


# ============================================================
# Helpers
# ============================================================


def row_seed(base: int, index: int, stream: int) -> int:
    """Independent, reproducible seed for one random stream of one row."""
    state = np.random.SeedSequence([base, index, stream]).generate_state(1, dtype=np.uint64)
    return int(state[0])


def loop_response(config: ExperimentConfig) -> SupportsResponse:
    """Electronics as the data source realises them: discrete for simulations, analytic otherwise."""
    if config.homodyne.source == "simulate":
        return config.chain.discretize(config.homodyne.sample_rate_hz)
    return config.chain


def _homodyne_record(
    config: ExperimentConfig,
    response: SupportsResponse,
    gamma_fb: float,
    duration: float,
    seed: int,
) -> TimeTrace:
    hom = config.homodyne
    if hom.source == "simulate":
        sim = SimConfig(
            params=config.params,
            budget=config.budget,
            chain=config.chain,
            gamma_fb=gamma_fb,
            dt=1.0 / hom.sample_rate_hz,
            duration=duration,
            seed=seed,
            integrator=hom.integrator,
        )
        return simulate_closed_loop(sim).i_hom

    def psd(omega: FloatArray) -> FloatArray:
        return inloop_spectrum(omega, config.params, config.budget, gamma_fb, response).values

    return synthesize_homodyne(psd, hom.sample_rate_hz, duration, seed=seed, block_size=hom.block_size)


def fit_reference(config: ExperimentConfig) -> FitResult:
    """
    Calibrate the loop from a feedback-off record.

    Raises:
        NumericalError: If the record cannot be produced or fitted
    """
    hom = config.homodyne
    record = _homodyne_record(
        config,
        loop_response(config),
        0.0,
        hom.reference_duration_s,
        row_seed(config.seed, 0, STREAM_REFERENCE),
    )
    spectrum = estimate_psd(segment_trace(record, hom.reference_segment_samples))
    return fit_reference_homodyne(
        spectrum, config.estimation.mask, mass=config.params.mass, band=config.fit_band()
    )


def _fitted_params(config: ExperimentConfig, reference: FitResult) -> OscillatorParams:
    return OscillatorParams(
        mass=config.params.mass,
        omega_z=reference.value("omega_z"),
        gamma_m=max(reference.value("gamma_m"), 0.0),
    )


def _energy(
    config: ExperimentConfig,
    reference: FitResult,
    response: SupportsResponse,
    gamma_fb: float,
) -> tuple[ThermometryResult, Spectrum]:
    params = _fitted_params(config, reference)
    linewidth = max(effective_linewidth(params, response, gamma_fb), params.gamma_m)
    grid = energy_grid(params, linewidth=linewidth)
    spectrum = true_displacement_psd(reference, gamma_fb, response, grid)
    return occupation_from_spectrum(spectrum, params, band=config.estimation.energy_band), spectrum


def ground_truth(config: ExperimentConfig, response: SupportsResponse, gamma_fb: float) -> tuple[float, float]:
    """True occupation and FWHM linewidth of the analytic displacement spectrum at `gamma_fb`."""
    params = config.params
    linewidth = max(effective_linewidth(params, response, gamma_fb), params.gamma_m)
    spectrum = displacement_spectrum(energy_grid(params, linewidth=linewidth), params, config.budget, gamma_fb, response)
    n_true = occupation_from_spectrum(spectrum, params, band=config.estimation.energy_band).n_bar
    try:
        width = linewidth_fwhm(spectrum)
    except ResolutionError:
        width = linewidth
    return n_true, width


# ============================================================
# Heterodyne thermometers
# ============================================================


def heterodyne_config(
    config: ExperimentConfig, n_bar: float, gamma_eff: float, seed: int, lo_sign: int = 1
) -> HetSynthConfig:
    het = config.heterodyne
    params = config.params
    peak = physical_scale(params, gamma_eff) * abs(complex(susceptibility(params.omega_z, params, gamma_eff))) ** 2
    background = het.background_factor * minimal_background(n_bar, peak)
    # Tone line in the cross-spectrum is tone_level times the resonant sideband peak.
    segment_duration = het.segment_samples / het.sample_rate_hz
    amplitude = math.sqrt(het.tone_level * peak * TWO_PI / segment_duration)
    return HetSynthConfig(
        params=params,
        n_bar=n_bar,
        gamma_eff=gamma_eff,
        scale_R="physical",
        bg_r=background,
        bg_b=background,
        sample_rate=het.sample_rate_hz,
        duration=het.duration_s,
        seed=seed,
        lo_phase_drift=het.lo_phase_drift_rad_s,
        lo_phase_walk=het.lo_phase_walk_rad_rts,
        tone=HetTone(freq_hz=het.tone_freq_hz, amplitude=complex(amplitude)),
        lo_sign=lo_sign,
        block_size=het.block_size,
    )


def heterodyne_thermometry(
    config: ExperimentConfig, n_bar: float, gamma_eff: float, seed: int, seed_minus: int | None = None
) -> dict[str, ThermometryResult]:
    """
    Synthesize sideband records at (`n_bar`, `gamma_eff`) and run the sideband
    thermometers on them: asymmetry, cross-correlation and, with `seed_minus`,
    the double-LO asymmetry.

    Raises:
        NumericalError: On synthesis, phase-correction or fit failures
    """
    het = config.heterodyne
    mask = config.estimation.mask
    band = config.fit_band()

    def fitted_pair(lo_sign: int, stream_seed: int) -> tuple[FitResult, FitResult]:
        records = synthesize_heterodyne(heterodyne_config(config, n_bar, gamma_eff, stream_seed, lo_sign))
        i_r, i_b = phase_correct(records.i_r, records.i_b, records.i_car)
        cross = estimate_cross_psd(i_r, i_b, n_per_segment=het.segment_samples)
        pair = fit_sideband_pair(cross.stokes, cross.antistokes, mask, band)
        frame = calibrate_cross_frame(cross, het.tone_freq_hz)
        return pair, fit_cross_spectrum(frame.rotated, mask, band)

    pair, cross_fit = fitted_pair(1, seed)
    out: dict[str, ThermometryResult] = {}
    for fit in (pair, cross_fit):
        if fit.thermometry is not None:
            out[str(fit.thermometry.method)] = fit.thermometry
    if seed_minus is not None:
        pair_minus, _ = fitted_pair(-1, seed_minus)
        double = asymmetry_double_lo(pair, pair_minus)
        out[str(double.method)] = double
    return out


# ============================================================
# Gain sweep
# ============================================================


def _run_row(config: ExperimentConfig, reference: FitResult, response: SupportsResponse, index: int) -> SweepRow:
    gamma_fb = config.sweep.gamma_fb[index]
    label = config.sweep.labels[index] if config.sweep.labels else ""
    row = SweepRow(index=index, label=label, gamma_fb_injected=gamma_fb)
    params = config.params

    try:
        if gamma_fb > 0:
            verdict = stability_check(params, response, stability_grid(params), gamma_fb=gamma_fb)
            if not verdict.stable:
                logger.warning(
                    "Unstable sweep row skipped",
                    extra={"index": index, "gamma_fb": gamma_fb, "encirclements": verdict.encirclements},
                )
                return replace(row, flags=("unstable",), skipped=True)

        hom = config.homodyne
        record = _homodyne_record(
            config, response, gamma_fb, hom.duration_s, row_seed(config.seed, index, STREAM_HOMODYNE)
        )
        s_hom = estimate_psd(segment_trace(record, hom.segment_samples))
        gain_fit = fit_inloop_gain(s_hom, reference, response, config.estimation.mask, config.fit_band())
        fitted, fitted_sigma = gain_fit.value("gamma_fb"), gain_fit.sigma("gamma_fb")

        energy, s_true = _energy(config, reference, response, fitted)
        energy_sigma = 0.0
        if math.isfinite(fitted_sigma) and 0 < fitted_sigma < fitted:
            upper, _ = _energy(config, reference, response, fitted + fitted_sigma)
            lower, _ = _energy(config, reference, response, fitted - fitted_sigma)
            energy_sigma = abs(upper.n_bar - lower.n_bar) / 2.0

        flags = list(energy.flags)
        try:
            gamma_eff = linewidth_fwhm(s_true)
        except ResolutionError:
            gamma_eff = math.nan
            flags.append("no_linewidth")

        n_true, true_width = ground_truth(config, response, gamma_fb)
        results: dict[str, ThermometryResult] = {}
        if config.heterodyne.enabled:
            results.update(
                heterodyne_thermometry(
                    config,
                    max(n_true, 0.0),
                    true_width,
                    row_seed(config.seed, index, STREAM_HETERODYNE),
                    row_seed(config.seed, index, STREAM_HETERODYNE_MINUS) if config.heterodyne.double_lo else None,
                )
            )
        for result in results.values():
            flags.extend(f for f in result.flags if f not in flags)
    except ColdLoopError as e:
        logger.warning("Sweep row failed", extra={"index": index, "gamma_fb": gamma_fb, "error": str(e)})
        return replace(row, flags=("failed",), error=str(e))

    logger.info(
        "Gain sweep row finished",
        extra={"index": index, "gamma_fb": gamma_fb, "gamma_fb_fitted": fitted, "n_true": n_true},
    )
    return replace(
        row,
        gamma_fb_fitted=fitted,
        gamma_fb_sigma=fitted_sigma,
        gamma_eff_fitted=gamma_eff,
        energy=energy.n_bar + 0.5,
        energy_sigma=energy_sigma,
        n_true=n_true,
        results=results,
        flags=tuple(flags),
    )


def _anchor_rows(config: ExperimentConfig, rows: list[SweepRow]) -> list[SweepRow]:
    """Calibrate every row's energy against the configured anchor row."""
    sweep = config.sweep
    if not rows:
        return rows
    ref = rows[sweep.anchor_index]
    n_ref = sweep.anchor_n if sweep.anchor_n is not None else ref.n_true
    if ref.failed or ref.skipped or not (math.isfinite(ref.energy) and math.isfinite(n_ref)):
        logger.warning("Anchor row unavailable; in-loop occupations left uncalibrated", extra={"index": ref.index})
        return [r if r.failed or r.skipped else replace(r, flags=(*r.flags, "no_anchor")) for r in rows]
    try:
        anchor = anchor_calibration(ref.energy, n_ref + 0.5, sweep.anchor_n_sigma)
    except ColdLoopError as e:
        logger.warning("Anchor calibration failed", extra={"index": ref.index, "error": str(e)})
        return [r if r.failed or r.skipped else replace(r, flags=(*r.flags, "no_anchor")) for r in rows]
    logger.info("Sweep anchored", extra={"index": ref.index, "scale": anchor.scale, "n_ref": n_ref})

    out = []
    for r in rows:
        if r.failed or r.skipped:
            out.append(r)
            continue
        calibrated = apply_anchor(r.energy, anchor, r.energy_sigma)
        results = {str(ThermometryMethod.INLOOP_INTEGRAL): calibrated, **r.results}
        flags = r.flags + tuple(f for f in calibrated.flags if f not in r.flags)
        out.append(replace(r, results=results, flags=flags))
    return out


def theory_curves(config: ExperimentConfig, n_points: int = CURVE_POINTS) -> TheoryCurves:
    """
    Delay-filter occupation from the energy integral of the analytic
    displacement spectrum, and the ideal cold-damping closed form evaluated at
    the same effective linewidth. Gains where the integral fails are NaN.
    """
    gains = config.sweep.gamma_fb
    star = optimal_damping(config.budget)
    low, high = (min(gains), max(gains)) if gains else (star / 30.0, 10.0 * star)
    low = max(low, high / 1e6)
    gamma_fb = np.geomspace(low, high, n_points) if high > low else np.array([high])
    response = loop_response(config)
    params = config.params
    gamma_eff = np.empty_like(gamma_fb)
    n_delay = np.empty_like(gamma_fb)
    n_ideal = np.empty_like(gamma_fb)
    for k, g in enumerate(gamma_fb):
        gamma_eff[k] = effective_linewidth(params, response, float(g))
        try:
            n_delay[k], _ = ground_truth(config, response, float(g))
        except ColdLoopError as e:
            logger.debug("Delay-filter curve point undefined", extra={"gamma_fb": float(g), "error": str(e)})
            n_delay[k] = math.nan
        n_ideal[k] = cold_damping_occupation(gamma_eff[k], config.budget) if gamma_eff[k] > 0 else math.nan
    return TheoryCurves(gamma_fb=gamma_fb, gamma_eff=gamma_eff, n_delay=n_delay, n_ideal=n_ideal)


def run_gain_sweep(config: ExperimentConfig, reference: FitResult | None = None) -> SweepReport:
    """
    Run every sweep point, anchor the in-loop energies and attach the theory curves.

    Args:
        config: Validated experiment
        reference: Feedback-off calibration; fitted from a fresh record when omitted

    Raises:
        NumericalError: If the reference calibration itself fails (row failures
            are recorded on their rows instead)
    """
    budget = config.budget
    logger.info(
        "Gain sweep started",
        extra={"points": len(config.sweep.gamma_fb), "threads": config.threads, "config_hash": config.config_hash},
    )
    if reference is None:
        reference = fit_reference(config)
    response = loop_response(config)
    indices = range(len(config.sweep.gamma_fb))
    if config.threads > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            rows = list(pool.map(lambda i: _run_row(config, reference, response, i), indices))
    else:
        rows = [_run_row(config, reference, response, i) for i in indices]
    rows = _anchor_rows(config, rows)
    rows.sort(key=lambda r: r.gamma_fb_injected)

    report = SweepReport(
        rows=tuple(rows),
        gamma_meas=budget.gamma_meas,
        gamma_tot=budget.gamma_tot,
        eta_meas=budget.eta_meas,
        gamma_star=optimal_damping(budget),
        n_min=minimum_occupation(budget),
        conditional_bound=conditional_occupation(budget.eta_meas),
        curves=theory_curves(config),
        config_hash=config.config_hash,
        reference=reference,
    )
    if report.failed_rows:
        logger.warning("Gain sweep finished with failed rows", extra={"failed": [r.index for r in report.failed_rows]})
    logger.info("Gain sweep finished", extra={"rows": len(rows), "n_min": report.n_min})
    return report


# ============================================================
# Noise squashing
# ============================================================


def run_squashing_demo(config: ExperimentConfig, n_points: int = 20001) -> list[SquashRow]:
    """
    Compare the in-loop density with S̄_imp and the true density with its
    force-driven part, over the fit band, at every sweep gain.
    """
    params, budget = config.params, config.budget
    response = loop_response(config)
    low, high = config.fit_band()
    grid = np.linspace(low, high, n_points)
    s_imp = imprecision_psd(params, budget)
    s_ff = force_psd_total(params, budget)
    rows = []
    for gamma_fb in config.sweep.gamma_fb:
        inloop = inloop_spectrum(grid, params, budget, gamma_fb, response).values
        k = int(np.argmin(inloop))
        true = displacement_spectrum(grid[k : k + 1], params, budget, gamma_fb, response).values[0]
        h_fb = params.mass * params.omega_z * gamma_fb * np.conj(response.response(grid[k : k + 1]))
        chi_fb = closed_loop_susceptibility(grid[k : k + 1], params, h_fb)
        force_only = float(np.abs(chi_fb[0]) ** 2) * s_ff
        row = SquashRow(
            gamma_fb=gamma_fb,
            inloop_ratio=float(inloop[k] / s_imp),
            true_ratio=float(true / force_only),
            omega_min=float(grid[k]),
        )
        logger.debug("Squashing point evaluated", extra={"gamma_fb": gamma_fb, "inloop_ratio": row.inloop_ratio})
        rows.append(row)
    logger.info("Squashing demo finished", extra={"points": len(rows), "squashed": sum(r.squashed for r in rows)})
    return rows
