"""
Spectral estimation of detector records.

All estimators return two-sided angular densities on strictly increasing,
fftshift-ordered grids: with i[Ω_k] = dt·FFT(x)_k over a segment of length T,
S̄[Ω] = ⟨|i[Ω]|²⟩/(2πT). The heterodyne cross-spectrum follows the sideband
pairing S̄_rb[Ω] = ⟨i_r[−Ω]·i_b[Ω]⟩/(2πT), i.e. the Stokes record is read at
the reflected frequency.

Usage:
    from coldloop.estimate import estimate_psd, estimate_cross_psd, phase_correct

    s_hom = estimate_psd(trace.segment(4096))
    i_r, i_b = phase_correct(records.i_r, records.i_b, records.i_car)
    cross = estimate_cross_psd(i_r, i_b, n_per_segment=4000)
"""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np
from numpy.typing import NDArray
from scipy import signal

from ..constants import TWO_PI
from ..exceptions import InvalidParameterError, LowSignalError, SegmentationError
from ..model import ComplexArray, FloatArray, SpectralConvention, Spectrum
from ..simulate.traces import TimeTrace

logger: logging.Logger = logging.getLogger(__name__)

MAD_TO_SIGMA = 1.4826


@dataclass(frozen=True, eq=False)
class CrossSpectrum:
    """
    Complex sideband cross-spectrum S̄_rb on a two-sided angular grid.

    Hermitian symmetry is not assumed. `stokes` and `antistokes` hold the
    auto-spectra estimated from the same segments; `sigma_re`/`sigma_im` are
    per-bin standard errors of the real and imaginary parts.
    """

    grid: FloatArray
    values: ComplexArray
    n_averages: int
    convention: SpectralConvention = SpectralConvention.TWO_SIDED_ANGULAR
    stokes: Spectrum | None = None
    antistokes: Spectrum | None = None
    sigma_re: FloatArray | None = None
    sigma_im: FloatArray | None = None
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        grid = np.asarray(self.grid, dtype=float)
        values = np.asarray(self.values, dtype=np.complex128)
        if grid.ndim != 1 or grid.shape != values.shape:
            raise InvalidParameterError("grid and values must be 1-D arrays of equal length", code="SPECTRUM_SHAPE")
        if grid.size > 1 and not np.all(np.diff(grid) > 0):
            raise InvalidParameterError("grid must be strictly increasing", code="SPECTRUM_GRID")
        if self.n_averages < 1:
            raise InvalidParameterError("n_averages must be >= 1", code="SPECTRUM_AVERAGES")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return int(self.grid.size)

    def rotated(self, angle: float) -> CrossSpectrum:
        """Multiply every bin by e^{i·angle}; magnitudes are untouched."""
        phase = np.exp(1j * angle)
        sigma_re, sigma_im = self.sigma_re, self.sigma_im
        if sigma_re is not None and sigma_im is not None:
            # A general rotation mixes the two components; keep the larger one for both.
            common = np.maximum(sigma_re, sigma_im)
            sigma_re = sigma_im = common
        return replace(self, values=self.values * phase, sigma_re=sigma_re, sigma_im=sigma_im)

    def select(self, keep: NDArray[np.bool_]) -> CrossSpectrum:
        return replace(
            self,
            grid=self.grid[keep],
            values=self.values[keep],
            stokes=None if self.stokes is None else self.stokes.select(keep),
            antistokes=None if self.antistokes is None else self.antistokes.select(keep),
            sigma_re=None if self.sigma_re is None else self.sigma_re[keep],
            sigma_im=None if self.sigma_im is None else self.sigma_im[keep],
        )


def _stack(segments: Sequence[TimeTrace]) -> tuple[NDArray[Any], float]:
    if not segments:
        raise SegmentationError("no segments to estimate from", code="NO_SEGMENTS")
    rate = segments[0].sample_rate
    length = len(segments[0])
    for seg in segments:
        if len(seg) != length or seg.sample_rate != rate:
            raise SegmentationError(
                "segments must share length and sample rate",
                code="SEGMENT_MISMATCH",
                context={"expected": (length, rate), "found": (len(seg), seg.sample_rate)},
            )
    return np.stack([seg.samples for seg in segments]), rate


def _as_segments(trace: TimeTrace | Sequence[TimeTrace], n_per_segment: int | None) -> list[TimeTrace]:
    if isinstance(trace, TimeTrace):
        return trace.segment(n_per_segment) if n_per_segment else [trace]
    return list(trace)


def estimate_psd(segments: Sequence[TimeTrace], window: str = "boxcar") -> Spectrum:
    """
    Averaged periodogram of equal-length segments.

    Rectangular windows by default. Per-bin standard errors are value/√n
    (exponential bin statistics) and are attached only with >= 2 segments.

    Raises:
        SegmentationError: If the segments differ in length or sample rate
    """
    data, rate = _stack(segments)
    freqs, pxx = signal.periodogram(
        data, fs=rate, window=window, detrend=False, return_onesided=False, scaling="density", axis=-1
    )
    values = np.fft.fftshift(pxx.mean(axis=0)) / TWO_PI
    grid = np.fft.fftshift(TWO_PI * freqs)
    count = data.shape[0]
    if count < 2:
        logger.warning("Single segment; no error bars attached", extra={"samples": data.shape[1]})
    return Spectrum(
        grid=grid,
        values=values,
        convention=SpectralConvention.TWO_SIDED_ANGULAR,
        sigma=values / math.sqrt(count) if count >= 2 else None,
        n_averages=count,
        metadata={"window": window, "segment_samples": int(data.shape[1])},
    )


def _check_aligned(r: Sequence[TimeTrace], b: Sequence[TimeTrace]) -> None:
    if len(r) != len(b):
        raise SegmentationError("Stokes and anti-Stokes segment counts differ", code="MISALIGNED")
    for a, c in zip(r, b, strict=True):
        if len(a) != len(c) or a.sample_rate != c.sample_rate or abs(a.start_time - c.start_time) > 0.5 * a.dt:
            raise SegmentationError(
                "Stokes and anti-Stokes records are not aligned",
                code="MISALIGNED",
                context={"start_r": a.start_time, "start_b": c.start_time},
            )


def estimate_cross_psd(
    i_r: TimeTrace | Sequence[TimeTrace],
    i_b: TimeTrace | Sequence[TimeTrace],
    n_per_segment: int | None = None,
    window: str = "boxcar",
) -> CrossSpectrum:
    """
    Sideband auto- and cross-spectra S̄_rr[Ω] = ⟨|i_r[−Ω]|²⟩, S̄_bb[Ω] = ⟨|i_b[Ω]|²⟩
    and S̄_rb[Ω] = ⟨i_r[−Ω]·i_b[Ω]⟩ (all divided by 2πT).

    Reading the Stokes record at −Ω is the same as reading conj(i_r) at +Ω
    and conjugating, so the estimate is the standard cross-periodogram of
    (conj(i_r), i_b).

    Raises:
        SegmentationError: If the records are misaligned or mismatched
    """
    r_segments = _as_segments(i_r, n_per_segment)
    b_segments = _as_segments(i_b, n_per_segment)
    _check_aligned(r_segments, b_segments)
    r_data, rate = _stack(r_segments)
    b_data, _ = _stack(b_segments)
    n = r_data.shape[1]
    mirrored = np.conj(r_data)

    def cross(x: NDArray[Any], y: NDArray[Any]) -> tuple[FloatArray, ComplexArray]:
        freqs, pxy = signal.csd(
            x,
            y,
            fs=rate,
            window=window,
            nperseg=n,
            noverlap=0,
            detrend=False,
            return_onesided=False,
            scaling="density",
            axis=-1,
        )
        return np.asarray(freqs), np.asarray(pxy).reshape(x.shape[0], -1).mean(axis=0) / TWO_PI

    freqs, s_rb = cross(mirrored, b_data)
    _, s_rr = cross(mirrored, mirrored)
    _, s_bb = cross(b_data, b_data)
    count = r_data.shape[0]

    grid = np.fft.fftshift(TWO_PI * freqs)
    s_rb = np.fft.fftshift(s_rb)
    s_rr_real = np.fft.fftshift(s_rr.real)
    s_bb_real = np.fft.fftshift(s_bb.real)
    product = s_rr_real * s_bb_real
    coherent = np.real(s_rb**2)
    sigma_re = np.sqrt(np.maximum(product + coherent, 0.0) / (2.0 * count))
    sigma_im = np.sqrt(np.maximum(product - coherent, 0.0) / (2.0 * count))

    def auto(values: FloatArray, side: str) -> Spectrum:
        return Spectrum(
            grid=grid,
            values=np.maximum(values, 0.0),
            sigma=values / math.sqrt(count) if count >= 2 else None,
            n_averages=count,
            metadata={"side": side},
        )

    logger.debug("Cross-spectrum estimated", extra={"segments": count, "segment_samples": n})
    return CrossSpectrum(
        grid=grid,
        values=s_rb,
        n_averages=count,
        stokes=auto(s_rr_real, "stokes"),
        antistokes=auto(s_bb_real, "antistokes"),
        sigma_re=sigma_re,
        sigma_im=sigma_im,
        metadata={"window": window, "segment_samples": int(n)},
    )


def carrier_snr(i_car: TimeTrace) -> float:
    """Robust amplitude SNR of the carrier: median(|c|)/(1.4826·MAD(|c|))."""
    mag = np.abs(i_car.samples)
    center = float(np.median(mag))
    spread = MAD_TO_SIGMA * float(np.median(np.abs(mag - center)))
    return math.inf if spread == 0 else center / spread


def phase_correct(
    i_r: TimeTrace, i_b: TimeTrace, i_car: TimeTrace, snr_threshold: float = 3.0
) -> tuple[TimeTrace, TimeTrace]:
    """
    Remove the LO phase: i_j[t] → i_j[t]·e^{−i·arg(i_car[t])}.

    Auto-spectra are unchanged; the cross-spectrum rotates by −2·arg.

    Raises:
        LowSignalError: If the carrier amplitude is not above its noise floor
        SegmentationError: If the three records are not aligned
    """
    for other in (i_b, i_car):
        if len(other) != len(i_r) or other.sample_rate != i_r.sample_rate:
            raise SegmentationError("carrier and sideband records are not aligned", code="MISALIGNED")
    snr = carrier_snr(i_car)
    if snr < snr_threshold:
        raise LowSignalError(
            "carrier amplitude below noise floor; phase undefined",
            code="LOW_CARRIER",
            context={"snr": snr, "threshold": snr_threshold},
        )
    rotation = np.exp(-1j * np.angle(i_car.samples))
    return i_r.with_samples(i_r.samples * rotation), i_b.with_samples(i_b.samples * rotation)


@dataclass(frozen=True)
class FrameCalibration:
    theta: float
    rotated: CrossSpectrum
    tone_index: int
    tone_snr: float


def calibrate_cross_frame(
    s_rb: CrossSpectrum,
    tone_freq_hz: float,
    snr_threshold: float = 10.0,
    neighbours: int = 50,
) -> FrameCalibration:
    """
    Rotate the cross-spectrum so the calibration tone is purely real.

    θ is half the argument of the tone bin; the whole spectrum is multiplied
    by e^{−2iθ}. The tone SNR compares the tone bin magnitude with the median
    magnitude of up to `neighbours` bins on each side.

    Raises:
        LowSignalError: If the tone is absent or weaker than `snr_threshold`
    """
    target = TWO_PI * tone_freq_hz
    idx = int(np.argmin(np.abs(s_rb.grid - target)))
    lo, hi = max(idx - neighbours, 0), min(idx + neighbours + 1, len(s_rb))
    around = np.abs(np.concatenate([s_rb.values[lo:idx], s_rb.values[idx + 1 : hi]]))
    floor = float(np.median(around)) if around.size else 0.0
    peak = float(abs(s_rb.values[idx]))
    snr = math.inf if floor == 0 and peak > 0 else (peak / floor if floor > 0 else 0.0)
    if snr < snr_threshold:
        raise LowSignalError(
            "calibration tone absent or too weak",
            code="LOW_TONE",
            context={"tone_freq_hz": tone_freq_hz, "snr": snr, "threshold": snr_threshold},
        )
    theta = float(np.angle(s_rb.values[idx])) / 2.0
    logger.info("Cross-spectrum frame calibrated", extra={"theta": theta, "tone_snr": snr})
    return FrameCalibration(theta=theta, rotated=s_rb.rotated(-2.0 * theta), tone_index=idx, tone_snr=snr)
