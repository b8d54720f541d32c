"""Measurement analysis: spectra, postselection, fits and thermometry."""

from .fitting import (
    FitResult,
    RateEstimate,
    displacement_model,
    fit_cross_spectrum,
    fit_inloop_gain,
    fit_reference_homodyne,
    fit_sideband_pair,
    inloop_model,
    lorentzian_shape,
    rates_from_reference,
)
from .masks import FrequencyMask
from .postselect import detect_bursts, postselect
from .spectra import (
    CrossSpectrum,
    FrameCalibration,
    calibrate_cross_frame,
    carrier_snr,
    estimate_cross_psd,
    estimate_psd,
    phase_correct,
)
from .thermometry import (
    AnchorCalibration,
    anchor_calibration,
    apply_anchor,
    asymmetry_double_lo,
    displacement_spectrum,
    energy_grid,
    inloop_spectrum,
    linewidth_fwhm,
    occupation_from_spectrum,
    true_displacement_psd,
)

__all__ = [
    "AnchorCalibration",
    "CrossSpectrum",
    "FitResult",
    "FrameCalibration",
    "FrequencyMask",
    "RateEstimate",
    "anchor_calibration",
    "apply_anchor",
    "asymmetry_double_lo",
    "calibrate_cross_frame",
    "carrier_snr",
    "detect_bursts",
    "displacement_model",
    "displacement_spectrum",
    "energy_grid",
    "estimate_cross_psd",
    "estimate_psd",
    "fit_cross_spectrum",
    "fit_inloop_gain",
    "fit_reference_homodyne",
    "fit_sideband_pair",
    "inloop_model",
    "inloop_spectrum",
    "linewidth_fwhm",
    "lorentzian_shape",
    "occupation_from_spectrum",
    "phase_correct",
    "postselect",
    "rates_from_reference",
    "true_displacement_psd",
]
