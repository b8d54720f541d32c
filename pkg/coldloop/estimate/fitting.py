"""
Weighted least-squares fits of sideband, cross and homodyne spectra.

Every fit runs on data divided by its largest magnitude and on frequencies
in units of the initial resonance guess, so results do not depend on the
overall scale of the input. Weights follow the exponential statistics of
averaged periodograms: σ = model/√K, recomputed once from the first fit.

Usage:
    from coldloop.estimate import FrequencyMask, fit_sideband_pair

    fit = fit_sideband_pair(cross.stokes, cross.antistokes, FrequencyMask.default())
    print(fit.thermometry.n_bar, fit.value("gamma_eff"))
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from lmfit import Minimizer, Parameters
from lmfit.minimizer import MinimizerResult
from numpy.typing import ArrayLike, NDArray
from scipy.ndimage import uniform_filter1d

from ..exceptions import FitError, InvalidParameterError, SingularityError
from ..filters import SupportsResponse
from ..model import (
    ComplexArray,
    FloatArray,
    OscillatorParams,
    RateBudget,
    Spectrum,
    ThermometryMethod,
    ThermometryResult,
    budget_from_rates,
    force_psd_total,
    imprecision_psd,
    occupation_from_ratio,
)
from .masks import FrequencyMask
from .spectra import CrossSpectrum

logger: logging.Logger = logging.getLogger(__name__)

MAX_EVALUATIONS = 4000
RELATIVE_TOLERANCE = 1e-8


@dataclass(frozen=True, eq=False)
class FitResult:
    """
    Fitted parameters in SI units with one-standard-deviation errors.

    Attributes:
        names: Parameter names
        values: Best-fit values, aligned with `names`
        sigmas: Standard errors (NaN when the covariance is unavailable)
        chi2_reduced: Weighted χ² per degree of freedom
        mask_used: Exclusion mask applied to the residuals
        covariance: Covariance of the varied parameters, aligned with `names`
        flags: Conditions a consumer should check before trusting the result
        thermometry: Occupation derived from the fit, if the fit yields one
        meta: Band, bin count, averages and similar bookkeeping
    """

    names: tuple[str, ...]
    values: tuple[float, ...]
    sigmas: tuple[float, ...]
    chi2_reduced: float
    mask_used: FrequencyMask
    covariance: FloatArray | None = None
    flags: tuple[str, ...] = ()
    thermometry: ThermometryResult | None = None
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not len(self.names) == len(self.values) == len(self.sigmas):
            raise InvalidParameterError("names, values and sigmas must align", code="FIT_SHAPE")

    def _index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError as e:
            raise InvalidParameterError(f"no fitted parameter {name!r}", code="FIT_NAME") from e

    def value(self, name: str) -> float:
        return self.values[self._index(name)]

    def sigma(self, name: str) -> float:
        return self.sigmas[self._index(name)]

    def covariance_of(self, a: str, b: str) -> float:
        if self.covariance is None:
            return math.nan
        return float(self.covariance[self._index(a), self._index(b)])

    def as_dict(self) -> dict[str, Any]:
        """Flat key/value view for reports."""
        out: dict[str, Any] = {"chi2_reduced": self.chi2_reduced, "flags": ",".join(self.flags)}
        for name, value, sigma in zip(self.names, self.values, self.sigmas, strict=True):
            out[name] = value
            out[f"{name}_sigma"] = sigma
        if self.thermometry is not None:
            out["n_bar"] = self.thermometry.n_bar
            out["n_bar_sigma"] = self.thermometry.sigma
            out["method"] = str(self.thermometry.method)
        return out


# ============================================================
# Model shapes
# ============================================================


def lorentzian_shape(omega: ArrayLike, omega_z: float, gamma: float) -> FloatArray:
    """m²|χ|² = 1/((Ω_z² − Ω²)² + γ²Ω²)."""
    w = np.asarray(omega, dtype=float)
    return np.asarray(1.0 / ((omega_z**2 - w**2) ** 2 + (gamma * w) ** 2), dtype=float)


def _loop_denominator(
    omega: FloatArray, omega_z: float, gamma_m: float, gamma_fb: float, h: ComplexArray
) -> ComplexArray:
    # m·χ_fb⁻¹ with H_fb = mΩ_zγ_fb·conj(h)
    d = omega_z**2 - omega**2 - 1j * gamma_m * omega - omega_z * gamma_fb * np.conj(h)
    return np.asarray(d, dtype=np.complex128)


def inloop_model(
    omega: ArrayLike,
    omega_z: float,
    gamma_m: float,
    force_level: float,
    s_imp: float,
    gamma_fb: float,
    h: ArrayLike,
) -> FloatArray:
    """
    In-loop homodyne density |χ_fb|²(S̄_FF + |χ_m|⁻²S̄_imp).

    `force_level` is S̄_FF/m², which makes the expression independent of the mass.
    """
    w = np.asarray(omega, dtype=float)
    d_m = omega_z**2 - w**2 - 1j * gamma_m * w
    d = _loop_denominator(w, omega_z, gamma_m, gamma_fb, np.asarray(h, dtype=np.complex128))
    return np.asarray((force_level + np.abs(d_m) ** 2 * s_imp) / np.abs(d) ** 2, dtype=float)


def displacement_model(
    omega: ArrayLike,
    omega_z: float,
    gamma_m: float,
    force_level: float,
    s_imp: float,
    gamma_fb: float,
    h: ArrayLike,
) -> FloatArray:
    """
    True displacement density |χ_fb|²(S̄_FF + |H_fb|²S̄_imp) (mass-free form).

    Raises:
        SingularityError: If χ_fb has a pole on the grid
    """
    w = np.asarray(omega, dtype=float)
    hh = np.asarray(h, dtype=np.complex128)
    d = _loop_denominator(w, omega_z, gamma_m, gamma_fb, hh)
    if np.any(d == 0):
        raise SingularityError("closed-loop susceptibility has a pole on the grid", code="POLE")
    injected = (omega_z * gamma_fb) ** 2 * np.abs(hh) ** 2 * s_imp
    return np.asarray((force_level + injected) / np.abs(d) ** 2, dtype=float)


# ============================================================
# Shared machinery
# ============================================================


def _select(
    grid: FloatArray, mask: FrequencyMask, band: tuple[float, float] | None
) -> NDArray[np.bool_]:
    keep = (grid > 0) & mask.keep(grid)
    if band is not None:
        keep &= (grid >= band[0]) & (grid <= band[1])
    return keep


def _peak_guess(omega: FloatArray, values: FloatArray) -> tuple[float, float, float, float]:
    """Resonance, half-power width, floor and peak height from smoothed data."""
    smooth = uniform_filter1d(values, size=min(5, values.size), mode="nearest")
    floor = float(np.percentile(smooth, 10))
    idx = int(np.argmax(smooth))
    peak = float(smooth[idx])
    level = floor + (peak - floor) / 2.0
    left = idx
    while left > 0 and smooth[left] > level:
        left -= 1
    right = idx
    while right < smooth.size - 1 and smooth[right] > level:
        right += 1
    spacing = float(np.median(np.diff(omega))) if omega.size > 1 else 1.0
    width = max(float(omega[right] - omega[left]), spacing)
    return float(omega[idx]), width, floor, peak


def _minimize(
    residual: Callable[[Parameters], FloatArray],
    params: Parameters,
    label: str,
) -> MinimizerResult:
    try:
        result = Minimizer(residual, params, nan_policy="raise").leastsq(
            xtol=RELATIVE_TOLERANCE, ftol=RELATIVE_TOLERANCE, maxfev=MAX_EVALUATIONS
        )
    except ValueError as e:
        raise FitError(f"{label} fit produced invalid values", code="FIT_NAN") from e
    if not result.success:
        raise FitError(f"{label} fit did not converge", code="NO_CONVERGENCE", context={"message": result.message})
    return result


def _covariance(result: MinimizerResult, names: Sequence[str], factors: Sequence[float]) -> FloatArray | None:
    """Covariance in SI units, rows aligned with `names` (zeros for fixed parameters)."""
    if result.covar is None:
        return None
    size = len(names)
    cov = np.zeros((size, size))
    index = {n: i for i, n in enumerate(result.var_names)}
    for a in range(size):
        for b in range(size):
            ia, ib = index.get(names[a]), index.get(names[b])
            if ia is not None and ib is not None:
                cov[a, b] = result.covar[ia, ib] * factors[a] * factors[b]
    return cov


def _assemble(
    result: MinimizerResult,
    names: Sequence[str],
    factors: Sequence[float],
    mask: FrequencyMask,
    flags: list[str],
    meta: dict[str, Any],
    thermometry: ThermometryResult | None = None,
) -> FitResult:
    cov = _covariance(result, names, factors)
    values = tuple(float(result.params[n].value) * f for n, f in zip(names, factors, strict=True))
    sigmas = (
        tuple(float(math.sqrt(max(cov[i, i], 0.0))) for i in range(len(names))) if cov is not None
        else tuple(math.nan for _ in names)
    )
    if cov is None:
        flags.append("no_covariance")
    return FitResult(
        names=tuple(names),
        values=values,
        sigmas=sigmas,
        chi2_reduced=float(result.redchi),
        mask_used=mask,
        covariance=cov,
        flags=tuple(flags),
        thermometry=thermometry,
        meta=meta,
    )


def _weighted_two_pass(
    model: Callable[[Parameters], FloatArray],
    data: FloatArray,
    params: Parameters,
    averages: int,
    label: str,
) -> MinimizerResult:
    """Fit with σ = model/√K from the initial guess, then again from the first fit."""
    root_k = math.sqrt(max(averages, 1))
    tiny = np.finfo(float).tiny
    result: MinimizerResult | None = None
    current = params
    for _ in range(2):
        sigma = np.maximum(np.abs(model(current)), tiny) / root_k

        def residual(p: Parameters, sigma: FloatArray = sigma) -> FloatArray:
            return (model(p) - data) / sigma

        result = _minimize(residual, current, label)
        current = result.params
    assert result is not None
    return result


def _ratio_flags(ratio: float, sigma_ratio: float) -> list[str]:
    flags: list[str] = []
    if abs(ratio - 1.0) <= 1e-9:
        flags.append("infinite")
    if ratio <= 1.0:
        flags.append("unphysical_asymmetry")
    elif math.isfinite(sigma_ratio) and abs(ratio - 1.0) < sigma_ratio:
        flags.append("unresolved_asymmetry")
    return flags


# ============================================================
# Sideband asymmetry
# ============================================================


def fit_sideband_pair(
    s_rr: Spectrum,
    s_bb: Spectrum,
    mask: FrequencyMask | None = None,
    band: tuple[float, float] | None = None,
) -> FitResult:
    """
    Joint fit of S̄_j = S̄_bg^j + A_j/((Ω_z² − Ω²)² + γ_eff²Ω²), j ∈ {r, b}.

    Ω_z and γ_eff are shared; A_j = S̄_FF^j/m² and the backgrounds are
    separate. The occupation follows from A_r/A_b = 1 + 1/n̄; ratios at or
    below one are flagged, never clamped.

    Args:
        s_rr: Stokes spectrum
        s_bb: Anti-Stokes spectrum on the same grid
        mask: Excluded lines (default: `FrequencyMask.default()`)
        band: Optional (low, high) fit band in rad/s

    Raises:
        InvalidParameterError: If the grids differ
        FitError: On nonconvergence or too few bins
    """
    mask = mask if mask is not None else FrequencyMask.default()
    if s_rr.grid.shape != s_bb.grid.shape or not np.array_equal(s_rr.grid, s_bb.grid):
        raise InvalidParameterError("sideband spectra must share a grid", code="GRID_MISMATCH")
    keep = _select(s_rr.grid, mask, band)
    if int(keep.sum()) < 8:
        raise FitError("too few bins to fit", code="TOO_FEW_POINTS", context={"bins": int(keep.sum())})
    omega = s_rr.grid[keep]
    scale = float(max(s_rr.values[keep].max(), s_bb.values[keep].max()))
    if not scale > 0:
        raise FitError("sideband spectra are empty", code="EMPTY")
    y_r = s_rr.values[keep] / scale
    y_b = s_bb.values[keep] / scale

    w0, width, floor_r, peak_r = _peak_guess(omega, y_r)
    _, _, floor_b, peak_b = _peak_guess(omega, y_b)
    x = omega / w0
    g0 = width / w0
    params = Parameters()
    params.add("omega_z", value=1.0, min=0.0)
    params.add("gamma_eff", value=g0, min=0.0)
    params.add("amp_r", value=max(peak_r - floor_r, 1e-6) * g0**2, min=0.0)
    params.add("amp_b", value=max(peak_b - floor_b, 1e-6) * g0**2, min=0.0)
    params.add("bg_r", value=max(floor_r, 0.0), min=0.0)
    params.add("bg_b", value=max(floor_b, 0.0), min=0.0)
    logger.debug("Sideband fit initial guess", extra={"omega_z": w0, "gamma_eff": width})

    def model(p: Parameters) -> FloatArray:
        shape = lorentzian_shape(x, p["omega_z"].value, p["gamma_eff"].value)
        return np.concatenate([p["bg_r"].value + p["amp_r"].value * shape, p["bg_b"].value + p["amp_b"].value * shape])

    averages = min(max(s_rr.n_averages, 1), max(s_bb.n_averages, 1))
    result = _weighted_two_pass(model, np.concatenate([y_r, y_b]), params, averages, "sideband")

    amp_factor = scale * w0**4
    names = ("omega_z", "gamma_eff", "amp_r", "amp_b", "bg_r", "bg_b")
    factors = (w0, w0, amp_factor, amp_factor, scale, scale)
    a_r = float(result.params["amp_r"].value)
    a_b = float(result.params["amp_b"].value)
    if not a_b > 0:
        ratio, sigma_ratio = math.inf, math.nan
    else:
        ratio = a_r / a_b
        sigma_ratio = math.nan
        if result.covar is not None:
            ir, ib = result.var_names.index("amp_r"), result.var_names.index("amp_b")
            var_rel = (
                result.covar[ir, ir] / a_r**2
                + result.covar[ib, ib] / a_b**2
                - 2.0 * result.covar[ir, ib] / (a_r * a_b)
            ) if a_r > 0 else math.nan
            sigma_ratio = abs(ratio) * math.sqrt(max(var_rel, 0.0))

    flags = _ratio_flags(ratio, sigma_ratio)
    n_bar = occupation_from_ratio(ratio) if abs(ratio - 1.0) > 1e-9 else math.inf
    sigma_n = sigma_ratio / (ratio - 1.0) ** 2 if math.isfinite(n_bar) else math.nan
    if n_bar < 0:
        flags.append("below_zero")
    thermo = ThermometryResult(n_bar=n_bar, sigma=sigma_n, method=ThermometryMethod.ASYMMETRY, flags=tuple(flags))
    if flags:
        logger.warning("Sideband thermometry flagged", extra={"flags": flags, "ratio": ratio})
    meta = {
        "band": (float(omega[0]), float(omega[-1])),
        "bins": int(omega.size),
        "n_averages": averages,
        "ratio": ratio,
        "ratio_sigma": sigma_ratio,
    }
    logger.info("Sideband fit finished", extra={"n_bar": n_bar, "ratio": ratio, "chi2_reduced": result.redchi})
    return _assemble(result, names, factors, mask, list(flags), meta, thermo)


# ============================================================
# Cross-correlation
# ============================================================


def fit_cross_spectrum(
    rotated: CrossSpectrum,
    mask: FrequencyMask | None = None,
    band: tuple[float, float] | None = None,
    part: str = "both",
) -> FitResult:
    """
    Fit Re S̄_rb = c_r·L(Ω) and Im S̄_rb = c_i·L(Ω)·(Ω² − Ω_z²)/(2Ω_zγ_eff).

    L is `lorentzian_shape`. With both parts the occupation is
    n̄ = c_r/c_i − ½; `part="imag"` fits the n̄-independent imaginary part
    alone (Ω_z, γ_eff, c_i). The input should already be frame-calibrated.

    A single weighted pass: residuals are divided by the estimator's per-bin
    `sigma_re` and `sigma_im` (unit weights when absent). A model-derived
    sigma would vanish where Im S̄_rb crosses zero at Ω_z.

    Raises:
        FitError: On nonconvergence or too few bins
    """
    if part not in ("both", "imag"):
        raise InvalidParameterError("part must be 'both' or 'imag'", code="FIT_PART", context={"part": part})
    mask = mask if mask is not None else FrequencyMask.default()
    keep = _select(rotated.grid, mask, band)
    if int(keep.sum()) < 8:
        raise FitError("too few bins to fit", code="TOO_FEW_POINTS", context={"bins": int(keep.sum())})
    omega = rotated.grid[keep]
    values = rotated.values[keep]
    scale = float(np.abs(values).max())
    if not scale > 0:
        raise FitError("cross-spectrum is empty", code="EMPTY")
    re = values.real / scale
    im = values.imag / scale
    if rotated.sigma_re is not None and rotated.sigma_im is not None:
        s_re = np.maximum(rotated.sigma_re[keep] / scale, np.finfo(float).tiny)
        s_im = np.maximum(rotated.sigma_im[keep] / scale, np.finfo(float).tiny)
    else:
        s_re = s_im = np.ones_like(re)

    w0, width, _, peak = _peak_guess(omega, re)
    x = omega / w0
    g0 = width / w0
    # Extrema of Im sit at Ω_z ± γ/2 with magnitude c_i/(4γ²).
    c_i0 = max(float(np.abs(im).max()), 1e-6) * 4.0 * g0**2
    params = Parameters()
    params.add("omega_z", value=1.0, min=0.0)
    params.add("gamma_eff", value=g0, min=0.0)
    params.add("c_i", value=c_i0)
    if part == "both":
        params.add("c_r", value=max(peak, 1e-6) * g0**2)

    def residual(p: Parameters) -> FloatArray:
        wz, g = p["omega_z"].value, p["gamma_eff"].value
        shape = lorentzian_shape(x, wz, g)
        model_im = p["c_i"].value * shape * (x**2 - wz**2) / (2.0 * wz * g)
        if part == "imag":
            return (model_im - im) / s_im
        model_re = p["c_r"].value * shape
        return np.concatenate([(model_re - re) / s_re, (model_im - im) / s_im])

    result = _minimize(residual, params, "cross-spectrum")
    amp_factor = scale * w0**4
    names: tuple[str, ...] = ("omega_z", "gamma_eff", "c_i") + (("c_r",) if part == "both" else ())
    factors = (w0, w0, amp_factor) + ((amp_factor,) if part == "both" else ())
    flags: list[str] = []
    c_i = float(result.params["c_i"].value)
    if not c_i > 0:
        flags.append("nonpositive_calibration")
    thermo: ThermometryResult | None = None
    if part == "both":
        c_r = float(result.params["c_r"].value)
        n_bar = c_r / c_i - 0.5 if c_i != 0 else math.inf
        sigma_n = math.nan
        if result.covar is not None and c_i != 0:
            ir, ii = result.var_names.index("c_r"), result.var_names.index("c_i")
            d_r, d_i = 1.0 / c_i, -c_r / c_i**2
            var = (
                d_r**2 * result.covar[ir, ir] + d_i**2 * result.covar[ii, ii] + 2.0 * d_r * d_i * result.covar[ir, ii]
            )
            sigma_n = math.sqrt(max(var, 0.0))
        if not math.isfinite(n_bar):
            flags.append("infinite")
        elif n_bar < 0:
            flags.append("below_zero")
        thermo = ThermometryResult(
            n_bar=n_bar, sigma=sigma_n, method=ThermometryMethod.CROSS_CORRELATION, flags=tuple(flags)
        )
        logger.info("Cross-spectrum fit finished", extra={"n_bar": n_bar, "chi2_reduced": result.redchi})
    if flags:
        logger.warning("Cross-correlation thermometry flagged", extra={"flags": flags})
    meta = {"band": (float(omega[0]), float(omega[-1])), "bins": int(omega.size), "part": part}
    return _assemble(result, names, factors, mask, flags, meta, thermo)


# ============================================================
# Homodyne calibration and in-loop gain
# ============================================================


@dataclass(frozen=True)
class RateEstimate:
    """Rates inferred from a reference homodyne fit, with standard errors."""

    gamma_tot: float
    gamma_tot_sigma: float
    gamma_meas: float
    gamma_meas_sigma: float
    eta_meas: float
    eta_meas_sigma: float

    def budget(self, eta_d: float = 1.0) -> RateBudget:
        return budget_from_rates(self.gamma_meas, self.gamma_tot, eta_d=eta_d)


def rates_from_reference(fit: FitResult, mass: float) -> RateEstimate:
    """
    Γ_tot = 2π z_zpf² S̄_FF/ħ² and Γ_meas = z_zpf²/(8π S̄_imp) from a reference fit.

    Uses the fitted Ω_z for z_zpf; errors propagate the S̄_FF/S̄_imp covariance.
    """
    params = OscillatorParams(mass=mass, omega_z=fit.value("omega_z"), gamma_m=max(fit.value("gamma_m"), 0.0))
    probe = budget_from_rates(1.0, 1.0)
    # Both rates are linear (Γ_tot) or inverse-linear (Γ_meas) in the fitted densities.
    per_tot = force_psd_total(params, probe)
    per_meas = imprecision_psd(params, probe)
    s_ff = fit.value("force_level") * mass**2
    s_imp = fit.value("s_imp")
    gamma_tot = s_ff / per_tot
    gamma_meas = per_meas / s_imp
    rel_ff = fit.sigma("force_level") / fit.value("force_level")
    rel_imp = fit.sigma("s_imp") / s_imp
    corr = fit.covariance_of("force_level", "s_imp") / (fit.value("force_level") * s_imp)
    eta = gamma_meas / gamma_tot
    rel_eta = math.sqrt(max(rel_ff**2 + rel_imp**2 + 2.0 * corr, 0.0))
    return RateEstimate(
        gamma_tot=gamma_tot,
        gamma_tot_sigma=gamma_tot * rel_ff,
        gamma_meas=gamma_meas,
        gamma_meas_sigma=gamma_meas * rel_imp,
        eta_meas=eta,
        eta_meas_sigma=eta * rel_eta,
    )


def fit_reference_homodyne(
    s_hom: Spectrum,
    mask: FrequencyMask | None = None,
    *,
    mass: float,
    band: tuple[float, float] | None = None,
) -> FitResult:
    """
    Fit S̄_imp + S̄_FF|χ_m|² with Ω_z, γ_m, S̄_FF and S̄_imp free.

    The force density is reported both as `force_level` (S̄_FF/m²) and, using
    `mass`, as `s_ff`. Derived rates are in `meta["rates"]`.

    Raises:
        FitError: On nonconvergence or too few bins
    """
    mask = mask if mask is not None else FrequencyMask.default()
    keep = _select(s_hom.grid, mask, band)
    if int(keep.sum()) < 8:
        raise FitError("too few bins to fit", code="TOO_FEW_POINTS", context={"bins": int(keep.sum())})
    omega = s_hom.grid[keep]
    scale = float(s_hom.values[keep].max())
    if not scale > 0:
        raise FitError("homodyne spectrum is empty", code="EMPTY")
    y = s_hom.values[keep] / scale
    w0, width, floor, peak = _peak_guess(omega, y)
    if floor > 0 and peak / floor < 100:
        logger.warning("Reference spectrum peak/floor below 100", extra={"peak_to_floor": peak / floor})
    x = omega / w0
    g0 = width / w0
    params = Parameters()
    params.add("omega_z", value=1.0, min=0.0)
    params.add("gamma_m", value=g0, min=0.0)
    params.add("force_level", value=max(peak - floor, 1e-6) * g0**2, min=0.0)
    params.add("s_imp", value=max(floor, 1e-12), min=0.0)

    def model(p: Parameters) -> FloatArray:
        return p["s_imp"].value + p["force_level"].value * lorentzian_shape(x, p["omega_z"].value, p["gamma_m"].value)

    result = _weighted_two_pass(model, y, params, s_hom.n_averages, "reference homodyne")
    names = ("omega_z", "gamma_m", "force_level", "s_imp")
    factors = (w0, w0, scale * w0**4, scale)
    fit = _assemble(
        result, names, factors, mask, [], {"band": (float(omega[0]), float(omega[-1])), "bins": int(omega.size)}
    )
    rates = rates_from_reference(fit, mass)
    # Append S̄_FF in SI, which needs the mass.
    cov = fit.covariance
    ext_cov = None
    if cov is not None:
        ext_cov = np.zeros((5, 5))
        ext_cov[:4, :4] = cov
        ext_cov[4, :4] = ext_cov[:4, 4] = cov[2, :4] * mass**2
        ext_cov[4, 4] = cov[2, 2] * mass**4
    extended = FitResult(
        names=(*fit.names, "s_ff"),
        values=(*fit.values, fit.value("force_level") * mass**2),
        sigmas=(*fit.sigmas, fit.sigma("force_level") * mass**2),
        chi2_reduced=fit.chi2_reduced,
        mask_used=mask,
        covariance=ext_cov,
        flags=fit.flags,
        meta=dict(fit.meta, mass=mass, rates=rates),
    )
    logger.info(
        "Reference homodyne fit finished",
        extra={"omega_z": extended.value("omega_z"), "gamma_m": extended.value("gamma_m"), "eta_meas": rates.eta_meas},
    )
    return extended


def fit_inloop_gain(
    s_hom: Spectrum,
    fixed: FitResult,
    h_fb: SupportsResponse,
    mask: FrequencyMask | None = None,
    band: tuple[float, float] | None = None,
) -> FitResult:
    """
    One-parameter fit of γ_fb to the in-loop homodyne density.

    All other parameters come from `fixed` (a reference homodyne fit). The
    starting value is the best of a logarithmic scan, so squashed spectra
    without a clear peak are handled too.

    Raises:
        FitError: On nonconvergence or too few bins
    """
    mask = mask if mask is not None else FrequencyMask.default()
    keep = _select(s_hom.grid, mask, band)
    if int(keep.sum()) < 4:
        raise FitError("too few bins to fit", code="TOO_FEW_POINTS", context={"bins": int(keep.sum())})
    omega = s_hom.grid[keep]
    scale = float(s_hom.values[keep].max())
    if not scale > 0:
        raise FitError("homodyne spectrum is empty", code="EMPTY")
    y = s_hom.values[keep] / scale
    wz, gm = fixed.value("omega_z"), fixed.value("gamma_m")
    level, s_imp = fixed.value("force_level") / scale, fixed.value("s_imp") / scale
    h = h_fb.response(omega)
    root_k = math.sqrt(max(s_hom.n_averages, 1))

    def model(gamma_fb: float) -> FloatArray:
        return inloop_model(omega, wz, gm, level, s_imp, gamma_fb * wz, h)

    def cost(gamma_fb: float) -> float:
        m = model(gamma_fb)
        return float(np.sum(((m - y) / m) ** 2))

    candidates = np.concatenate([[0.0], np.geomspace(1e-7, 10.0, 141)])
    start = float(min(candidates, key=cost))
    logger.debug("In-loop gain initial guess", extra={"gamma_fb": start * wz})

    params = Parameters()
    params.add("gamma_fb", value=start, min=0.0)

    def as_model(p: Parameters) -> FloatArray:
        return model(p["gamma_fb"].value)

    result = _weighted_two_pass(as_model, y, params, s_hom.n_averages, "in-loop gain")
    fit = _assemble(
        result,
        ("gamma_fb",),
        (wz,),
        mask,
        [],
        {"band": (float(omega[0]), float(omega[-1])), "bins": int(omega.size), "n_averages": int(root_k**2)},
    )
    logger.info("In-loop gain fit finished", extra={"gamma_fb": fit.value("gamma_fb"), "chi2_reduced": fit.chi2_reduced})
    return fit
