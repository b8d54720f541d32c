"""
Phonon thermometers built on fitted spectra.

The double-LO sideband estimator, the true-motion spectrum under feedback,
energy integration of a displacement spectrum and the one-point energy
anchor that transfers an absolute calibration across a gain sweep.

Usage:
    from coldloop.estimate import occupation_from_spectrum, true_displacement_psd

    s_zz = true_displacement_psd(reference, gamma_fb, chain, energy_grid(params))
    result = occupation_from_spectrum(s_zz, params)
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike
from scipy.integrate import trapezoid

from ..exceptions import FitError, InvalidParameterError, ResolutionError
from ..filters import SupportsResponse
from ..model import (
    FloatArray,
    OscillatorParams,
    RateBudget,
    Spectrum,
    ThermometryMethod,
    ThermometryResult,
    force_psd_total,
    imprecision_psd,
)
from .fitting import FitResult, displacement_model, inloop_model

logger: logging.Logger = logging.getLogger(__name__)

TAIL_LIMIT = 0.05


# ============================================================
# Double-LO sideband asymmetry
# ============================================================


def asymmetry_double_lo(fits_plus: FitResult, fits_minus: FitResult) -> ThermometryResult:
    """
    Occupation from sideband fits taken with both LO signs.

    Flipping the LO sign moves each sideband to the mirrored acquisition
    frequency, so the products A_r⁺A_r⁻ and A_b⁺A_b⁻ see the same chain gain.
    Their ratio is (1 + 1/n̄)², giving n̄ = 1/(√ratio − 1).

    Raises:
        InvalidParameterError: If the two fits used different bins
        FitError: If any fitted sideband area is not positive
    """
    if fits_plus.meta.get("bins") != fits_minus.meta.get("bins") or fits_plus.meta.get("band") != fits_minus.meta.get(
        "band"
    ):
        raise InvalidParameterError(
            "double-LO fits use inconsistent grids",
            code="GRID_MISMATCH",
            context={"plus": fits_plus.meta.get("band"), "minus": fits_minus.meta.get("band")},
        )
    areas = {
        (sign, side): fit.value(f"amp_{side}")
        for sign, fit in (("plus", fits_plus), ("minus", fits_minus))
        for side in ("r", "b")
    }
    if any(not a > 0 for a in areas.values()):
        raise FitError("sideband areas must be positive", code="NEGATIVE_AREA", context={str(k): v for k, v in areas.items()})

    log_ratio = (
        math.log(areas["plus", "r"]) + math.log(areas["minus", "r"])
        - math.log(areas["plus", "b"]) - math.log(areas["minus", "b"])
    )  # fmt: skip
    var = 0.0
    for fit in (fits_plus, fits_minus):
        a_r, a_b = fit.value("amp_r"), fit.value("amp_b")
        var += (
            (fit.sigma("amp_r") / a_r) ** 2
            + (fit.sigma("amp_b") / a_b) ** 2
            - 2.0 * fit.covariance_of("amp_r", "amp_b") / (a_r * a_b)
        )
    sigma_log = math.sqrt(max(var, 0.0)) if math.isfinite(var) else math.nan

    q = math.exp(log_ratio / 2.0)
    flags: list[str] = []
    if abs(q - 1.0) <= 1e-9:
        n_bar, sigma = math.inf, math.nan
        flags += ["infinite", "unphysical_asymmetry"]
    else:
        n_bar = 1.0 / (q - 1.0)
        sigma = abs(q / (2.0 * (q - 1.0) ** 2)) * sigma_log
        if q < 1.0:
            flags.append("unphysical_asymmetry")
        elif math.isfinite(sigma_log) and log_ratio < sigma_log:
            flags.append("unresolved_asymmetry")
        if n_bar < 0:
            flags.append("below_zero")
    if flags:
        logger.warning("Double-LO thermometry flagged", extra={"flags": flags})
    logger.info("Double-LO asymmetry", extra={"n_bar": n_bar, "ratio": math.exp(log_ratio)})
    return ThermometryResult(
        n_bar=n_bar, sigma=sigma, method=ThermometryMethod.ASYMMETRY_DOUBLE_LO, flags=tuple(flags)
    )


# ============================================================
# Model spectra
# ============================================================


def energy_grid(params: OscillatorParams, linewidth: float | None = None, n_points: int = 20000) -> FloatArray:
    """
    Positive grid over [Ω_z/50, 10Ω_z], geometric, refined linearly within
    ±30 linewidths of Ω_z.
    """
    width = linewidth if linewidth is not None else max(params.gamma_m, 1e-4 * params.omega_z)
    base = np.geomspace(params.omega_z / 50.0, 10.0 * params.omega_z, n_points)
    half = min(30.0 * width, 0.9 * params.omega_z)
    dense = np.linspace(params.omega_z - half, params.omega_z + half, n_points // 2)
    return np.unique(np.concatenate([base, dense]))


def inloop_spectrum(
    grid: ArrayLike, params: OscillatorParams, budget: RateBudget, gamma_fb: float, h_fb: SupportsResponse
) -> Spectrum:
    """Analytic in-loop homodyne density for the given oscillator, budget and gain."""
    w = np.asarray(grid, dtype=float)
    values = inloop_model(
        w,
        params.omega_z,
        params.gamma_m,
        force_psd_total(params, budget) / params.mass**2,
        imprecision_psd(params, budget),
        gamma_fb,
        h_fb.response(w),
    )
    return Spectrum(grid=w, values=values, metadata={"kind": "inloop", "gamma_fb": gamma_fb})


def displacement_spectrum(
    grid: ArrayLike, params: OscillatorParams, budget: RateBudget, gamma_fb: float, h_fb: SupportsResponse
) -> Spectrum:
    """Analytic true displacement density for the given oscillator, budget and gain."""
    w = np.asarray(grid, dtype=float)
    values = displacement_model(
        w,
        params.omega_z,
        params.gamma_m,
        force_psd_total(params, budget) / params.mass**2,
        imprecision_psd(params, budget),
        gamma_fb,
        h_fb.response(w),
    )
    return Spectrum(grid=w, values=values, metadata={"kind": "displacement", "gamma_fb": gamma_fb})


def true_displacement_psd(
    fixed: FitResult, gamma_fb: float, h_fb: SupportsResponse, grid: ArrayLike
) -> Spectrum:
    """
    |χ_fb|²(S̄_FF + |H_fb|²S̄_imp) from a reference fit and a feedback gain.

    Unlike the in-loop record this spectrum never dips below its
    force-driven part.

    Raises:
        SingularityError: If χ_fb has a pole on the grid
    """
    w = np.asarray(grid, dtype=float)
    values = displacement_model(
        w,
        fixed.value("omega_z"),
        fixed.value("gamma_m"),
        fixed.value("force_level"),
        fixed.value("s_imp"),
        gamma_fb,
        h_fb.response(w),
    )
    return Spectrum(grid=w, values=values, metadata={"kind": "displacement", "gamma_fb": gamma_fb})


# ============================================================
# Energy integration
# ============================================================


def occupation_from_spectrum(
    s_zz: Spectrum,
    params: OscillatorParams,
    band: tuple[float, float] | None = None,
) -> ThermometryResult:
    """
    n̄ + ½ = ∫₀^∞ (1 + Ω²/Ω_z²)·S̄_zz(Ω)/(2z_zpf²) dΩ.

    Composite trapezoid quadrature over the positive grid, plus a flat
    extension below the first bin and an Ω⁻² tail above the last one. With
    `band` the integral is restricted to that band instead and carries the
    `band_limited` flag; no tails are added.

    Raises:
        ResolutionError: If the grid does not span [Ω_z/50, 10Ω_z], or the tail
            estimate exceeds 5% of the total
    """
    keep = s_zz.grid > 0
    if band is not None:
        keep &= (s_zz.grid >= band[0]) & (s_zz.grid <= band[1])
    w = s_zz.grid[keep]
    s = s_zz.values[keep]
    z2 = params.z_zpf**2
    flags: list[str] = []
    if band is None and (
        w.size < 2 or w[0] > params.omega_z / 50.0 * (1 + 1e-9) or w[-1] < 10.0 * params.omega_z * (1 - 1e-9)
    ):
        raise ResolutionError(
            "energy integration grid must span [omega_z/50, 10 omega_z]",
            code="GRID",
            context={"min": float(w[0]) if w.size else math.nan, "max": float(w[-1]) if w.size else math.nan},
        )
    if w.size < 2:
        raise ResolutionError("band holds fewer than two bins", code="GRID", context={"band": band})

    weight = (1.0 + (w / params.omega_z) ** 2) / (2.0 * z2)
    integrand = weight * s
    body = float(trapezoid(integrand, w))
    if band is None:
        low = float(integrand[0] * w[0])
        tail = float(integrand[-1] * w[-1])
        total = body + low + tail
        if total > 0 and tail > TAIL_LIMIT * total:
            raise ResolutionError(
                "spectrum tail above grid exceeds 5% of the energy",
                code="TAIL",
                context={"tail": tail, "total": total, "max_omega": float(w[-1])},
            )
    else:
        total = body
        flags.append("band_limited")

    sigma = 0.0
    if s_zz.sigma is not None:
        # Trapezoid weights per bin.
        dw = np.diff(w)
        tw = np.zeros_like(w)
        tw[:-1] += dw / 2.0
        tw[1:] += dw / 2.0
        sigma = float(np.sqrt(np.sum((tw * weight * s_zz.sigma[keep]) ** 2)))

    n_bar = total - 0.5
    if n_bar < 0:
        flags.append("below_zero")
        logger.warning("Integrated occupation below zero", extra={"n_bar": n_bar})
    return ThermometryResult(
        n_bar=n_bar, sigma=sigma, method=ThermometryMethod.INLOOP_INTEGRAL, flags=tuple(flags)
    )


def linewidth_fwhm(spectrum: Spectrum) -> float:
    """
    Full width at half maximum of the largest positive-frequency peak (rad/s).

    Raises:
        ResolutionError: If a half-maximum crossing is missing on either side
    """
    pos = spectrum.positive()
    w, s = pos.grid, pos.values
    if w.size < 3:
        raise ResolutionError("spectrum too short for a linewidth", code="GRID")
    idx = int(np.argmax(s))
    half = s[idx] / 2.0
    left = np.flatnonzero(s[:idx] < half)
    right = np.flatnonzero(s[idx:] < half)
    if left.size == 0 or right.size == 0:
        raise ResolutionError("half-maximum crossing outside grid", code="FWHM", context={"peak_omega": float(w[idx])})
    i, j = int(left[-1]), idx + int(right[0])
    w_left = float(np.interp(half, [s[i], s[i + 1]], [w[i], w[i + 1]]))
    w_right = float(np.interp(half, [s[j], s[j - 1]], [w[j], w[j - 1]]))
    return w_right - w_left


# ============================================================
# Anchoring
# ============================================================


@dataclass(frozen=True)
class AnchorCalibration:
    """Multiplicative calibration scale = reference/uncalibrated, with its error."""

    scale: float
    sigma: float


def anchor_calibration(n_uncal_at_ref: float, n_ref: float, n_ref_sigma: float = 0.0) -> AnchorCalibration:
    """
    Fix the calibration of a sweep at one reference point.

    Raises:
        InvalidParameterError: If either value is not positive
    """
    if not (n_uncal_at_ref > 0 and n_ref > 0):
        raise InvalidParameterError(
            "anchor values must be positive",
            code="ANCHOR",
            context={"n_uncal_at_ref": n_uncal_at_ref, "n_ref": n_ref},
        )
    scale = n_ref / n_uncal_at_ref
    return AnchorCalibration(scale=scale, sigma=scale * n_ref_sigma / n_ref)


def apply_anchor(
    energy_uncal: float, anchor: AnchorCalibration, energy_sigma: float = 0.0
) -> ThermometryResult:
    """
    Calibrated occupation n̄ = scale·E − ½ from an uncalibrated energy E ∝ n̄ + ½.

    The anchor's error is carried into every calibrated point.
    """
    n_bar = anchor.scale * energy_uncal - 0.5
    sigma = math.hypot(energy_uncal * anchor.sigma, anchor.scale * energy_sigma)
    flags = ("below_zero",) if n_bar < 0 else ()
    return ThermometryResult(n_bar=n_bar, sigma=sigma, method=ThermometryMethod.INLOOP_INTEGRAL, flags=flags)
