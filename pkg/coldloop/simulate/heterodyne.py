"""
Frequency-domain synthesis of detector records with prescribed spectra.

Heterodyne sideband pairs are drawn bin by bin from the 2×2 Hermitian matrix
[[S̄_rr, S̄_rb*], [S̄_rb, S̄_bb]] (Cholesky factor times independent circular
Gaussians) and inverse-transformed in independent blocks; the outer 12.5% of
every block is discarded. With i[Ω_k] = dt·FFT(x)_k and T the block length,
the draws satisfy ⟨|i_r[−Ω]|²⟩ = 2πT·S̄_rr(Ω), ⟨|i_b[Ω]|²⟩ = 2πT·S̄_bb(Ω) and
⟨i_r[−Ω]·i_b[Ω]⟩ = 2πT·S̄_rb(Ω).

Usage:
    from coldloop.simulate import HetSynthConfig, synthesize_heterodyne

    cfg = HetSynthConfig(params=params, n_bar=0.66, gamma_eff=hz_to_rad(11.1e3),
                         scale_R=1.0, bg_r=0.3, bg_b=0.3, sample_rate=400e3,
                         duration=2.0, seed=1)
    records = synthesize_heterodyne(cfg)
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable
from dataclasses import dataclass
from typing import Literal

import numpy as np
from numpy.typing import NDArray

from ..constants import TWO_PI
from ..exceptions import InvalidParameterError, UnphysicalModelError
from ..filters import SupportsResponse
from ..model import (
    ComplexArray,
    FloatArray,
    OscillatorParams,
    heterodyne_cross_psd,
    heterodyne_sideband_psd,
)
from .traces import TimeTrace, TraceLabel

logger: logging.Logger = logging.getLogger(__name__)

KEEP_FRACTION = 0.75
CARRIER_NOISE_DB = -40.0


@dataclass(frozen=True)
class HetTone:
    """Calibration tone at `freq_hz` with complex amplitude on the anti-Stokes trace."""

    freq_hz: float
    amplitude: complex


@dataclass(frozen=True)
class HetSynthConfig:
    """
    Heterodyne synthesis settings.

    Attributes:
        params: Oscillator parameters (Ω_z and mass enter χ_eff)
        n_bar: Phonon occupation
        gamma_eff: Effective linewidth (rad/s)
        scale_R: Sideband prefactor, or "physical"
        bg_r, bg_b: White sideband backgrounds (density units)
        sample_rate: Complex sample rate (Hz)
        duration: Record length (s)
        seed: Seed of the run's own generator
        lo_phase_drift: Linear drift rate of the LO phase θ (rad/s)
        lo_phase_offset: θ at t = 0 (rad)
        lo_phase_walk: Random-walk strength of θ (rad/√s)
        tone: Optional calibration tone
        chain_distortion: Optional acquisition-chain response G, queried at the
            acquisition offset of each sideband
        lo_sign: +1 or −1; with −1 the two sidebands swap acquisition offsets
        block_size: Samples per synthesis block
    """

    params: OscillatorParams
    n_bar: float
    gamma_eff: float
    scale_R: float | Literal["physical"]
    bg_r: float
    bg_b: float
    sample_rate: float
    duration: float
    seed: int = 0
    lo_phase_drift: float = 0.0
    lo_phase_offset: float = 0.0
    lo_phase_walk: float = 0.0
    tone: HetTone | None = None
    chain_distortion: SupportsResponse | None = None
    lo_sign: int = 1
    block_size: int = 2**16

    def __post_init__(self) -> None:
        if self.lo_sign not in (1, -1):
            raise InvalidParameterError("lo_sign must be +1 or -1", code="LO_SIGN", context={"lo_sign": self.lo_sign})
        if not (self.sample_rate > 0 and self.duration > 0):
            raise InvalidParameterError("sample_rate and duration must be positive", code="SYNTH")
        if self.block_size < 16:
            raise InvalidParameterError("block_size too small", code="SYNTH", context={"block_size": self.block_size})
        if self.gamma_eff <= 0:
            raise InvalidParameterError("gamma_eff must be positive", code="SYNTH", context={"gamma_eff": self.gamma_eff})

    @property
    def n_samples(self) -> int:
        return int(round(self.duration * self.sample_rate))

    @property
    def grid(self) -> FloatArray:
        """Angular synthesis grid of one block (fftshift order)."""
        return np.fft.fftshift(TWO_PI * np.fft.fftfreq(self.block_size, d=1.0 / self.sample_rate))

    def target_spectra(self, omega: FloatArray) -> tuple[FloatArray, FloatArray, ComplexArray]:
        """Undistorted S̄_rr, S̄_bb, S̄_rb on `omega`."""
        s_rr = heterodyne_sideband_psd(omega, self.params, self.gamma_eff, self.n_bar, self.scale_R, self.bg_r, "stokes")
        s_bb = heterodyne_sideband_psd(
            omega, self.params, self.gamma_eff, self.n_bar, self.scale_R, self.bg_b, "antistokes"
        )
        s_rb = heterodyne_cross_psd(omega, self.params, self.gamma_eff, self.n_bar, self.scale_R)
        return s_rr, s_bb, s_rb


@dataclass(frozen=True)
class HeterodyneRecords:
    i_r: TimeTrace
    i_b: TimeTrace
    i_car: TimeTrace


def _circular_normal(rng: np.random.Generator, size: int) -> ComplexArray:
    return np.asarray((rng.standard_normal(size) + 1j * rng.standard_normal(size)) / math.sqrt(2.0))


def _cholesky_2x2(s_rr: FloatArray, s_bb: FloatArray, s_rb: ComplexArray, omega: FloatArray) -> tuple[
    FloatArray, ComplexArray, FloatArray
]:
    """
    Per-bin factor of [[S_rr, S_rb*], [S_rb, S_bb]].

    Raises:
        UnphysicalModelError: If any bin has an eigenvalue below −1e−12·trace
    """
    trace = s_rr + s_bb
    det = s_rr * s_bb - np.abs(s_rb) ** 2
    min_eig = (trace - np.sqrt(np.maximum(trace**2 - 4.0 * det, 0.0))) / 2.0
    violation = min_eig / np.maximum(trace, np.finfo(float).tiny)
    worst = int(np.argmin(violation))
    if violation[worst] < -1e-12:
        raise UnphysicalModelError(
            "unphysical model: backgrounds too small",
            code="NOT_PSD",
            context={
                "worst_omega": float(omega[worst]),
                "worst_freq_hz": float(omega[worst] / TWO_PI),
                "min_eigenvalue": float(min_eig[worst]),
            },
        )
    l11 = np.sqrt(s_rr)
    safe = np.where(l11 > 0, l11, 1.0)
    l21 = np.where(l11 > 0, s_rb / safe, 0.0)
    l22 = np.sqrt(np.maximum(s_bb - np.abs(l21) ** 2, 0.0))
    return l11, np.asarray(l21, dtype=np.complex128), l22


def _distortion_amplitudes(cfg: HetSynthConfig, omega: FloatArray) -> tuple[FloatArray, FloatArray]:
    """|G| at the acquisition offsets of the Stokes and anti-Stokes content at Ω."""
    if cfg.chain_distortion is None:
        ones = np.ones_like(omega)
        return ones, ones
    g_r = np.abs(cfg.chain_distortion.response(-cfg.lo_sign * omega))
    g_b = np.abs(cfg.chain_distortion.response(cfg.lo_sign * omega))
    return np.asarray(g_r, dtype=float), np.asarray(g_b, dtype=float)


def _assemble_blocks(
    n_total: int,
    block_size: int,
    draw: Callable[[], tuple[NDArray[np.complex128], ...]],
) -> list[NDArray[np.complex128]]:
    """Concatenate the kept centers of independently drawn blocks."""
    margin = int(block_size * (1.0 - KEEP_FRACTION) / 2)
    keep = block_size - 2 * margin
    pieces: list[list[NDArray[np.complex128]]] = []
    collected = 0
    while collected < n_total:
        block = draw()
        take = min(keep, n_total - collected)
        pieces.append([b[margin : margin + take] for b in block])
        collected += take
    return [np.concatenate([p[j] for p in pieces]) for j in range(len(pieces[0]))]


def synthesize_heterodyne(cfg: HetSynthConfig) -> HeterodyneRecords:
    """
    Draw Stokes, anti-Stokes and carrier records with the target spectra.

    The LO phase θ(t) multiplies both sidebands and the carrier by e^{iθ(t)};
    a tone a·e^{iω_t t} on i_b with conj(a)·e^{−iω_t t} on i_r has a real
    cross-spectral line in the undrifted frame.

    Raises:
        UnphysicalModelError: If the cross-spectral matrix is not positive
            semidefinite on the synthesis grid ("backgrounds too small")
    """
    n_block = cfg.block_size
    dt = 1.0 / cfg.sample_rate
    period = n_block * dt
    omega = TWO_PI * np.fft.fftfreq(n_block, d=dt)
    s_rr, s_bb, s_rb = cfg.target_spectra(omega)
    l11, l21, l22 = _cholesky_2x2(s_rr, s_bb, s_rb, omega)
    g_r, g_b = _distortion_amplitudes(cfg, omega)
    amplitude = math.sqrt(TWO_PI * period)
    reflect = (-np.arange(n_block)) % n_block
    rng = np.random.default_rng(cfg.seed)

    def draw() -> tuple[ComplexArray, ComplexArray]:
        w1 = _circular_normal(rng, n_block)
        w2 = _circular_normal(rng, n_block)
        u = amplitude * l11 * w1 * g_r
        b = amplitude * (l21 * w1 + l22 * w2) * g_b
        spec_r = np.empty(n_block, dtype=np.complex128)
        spec_r[reflect] = np.conj(u)
        return np.fft.ifft(spec_r) / dt, np.fft.ifft(b) / dt

    n = cfg.n_samples
    logger.info(
        "Heterodyne synthesis started",
        extra={"samples": n, "n_bar": cfg.n_bar, "block_size": n_block, "lo_sign": cfg.lo_sign},
    )
    i_r, i_b = _assemble_blocks(n, n_block, draw)

    t = np.arange(n) * dt
    if cfg.tone is not None:
        phase = TWO_PI * cfg.tone.freq_hz * t
        i_b = i_b + cfg.tone.amplitude * np.exp(1j * phase)
        i_r = i_r + np.conj(cfg.tone.amplitude) * np.exp(-1j * phase)

    theta = cfg.lo_phase_offset + cfg.lo_phase_drift * t
    if cfg.lo_phase_walk > 0:
        theta = theta + np.cumsum(rng.standard_normal(n)) * cfg.lo_phase_walk * math.sqrt(dt)
    rotation = np.exp(1j * theta)
    carrier_noise = _circular_normal(rng, n) * math.sqrt(10.0 ** (CARRIER_NOISE_DB / 10.0))
    i_car = rotation * (1.0 + carrier_noise)

    meta = {"seed": cfg.seed, "n_bar": cfg.n_bar, "lo_sign": cfg.lo_sign}
    logger.info("Heterodyne synthesis finished", extra={"samples": n})
    return HeterodyneRecords(
        i_r=TimeTrace(cfg.sample_rate, i_r * rotation, label=TraceLabel.I_R, metadata=meta),
        i_b=TimeTrace(cfg.sample_rate, i_b * rotation, label=TraceLabel.I_B, metadata=meta),
        i_car=TimeTrace(cfg.sample_rate, i_car, label=TraceLabel.I_CAR, metadata=meta),
    )


def synthesize_homodyne(
    psd: Callable[[FloatArray], FloatArray],
    sample_rate: float,
    duration: float,
    seed: int = 0,
    block_size: int = 2**16,
    label: TraceLabel = TraceLabel.I_HOM,
) -> TimeTrace:
    """
    Draw a real record whose two-sided angular density is `psd(|Ω|)`.

    Args:
        psd: Even target density evaluated on nonnegative angular frequencies
        sample_rate: Sample rate (Hz)
        duration: Record length (s)
        seed: Seed of the run's own generator
        block_size: Samples per synthesis block
        label: Label of the returned trace
    """
    dt = 1.0 / sample_rate
    omega = TWO_PI * np.fft.rfftfreq(block_size, d=dt)
    target = np.asarray(psd(omega), dtype=float)
    if np.any(target < 0) or not np.all(np.isfinite(target)):
        raise UnphysicalModelError("target density must be finite and nonnegative", code="NOT_PSD")
    amplitude = np.sqrt(TWO_PI * block_size * dt * target)
    rng = np.random.default_rng(seed)
    real_bins = [0] + ([block_size // 2] if block_size % 2 == 0 else [])

    def draw() -> tuple[ComplexArray]:
        w = _circular_normal(rng, omega.size)
        w[real_bins] = rng.standard_normal(len(real_bins))
        x = np.fft.irfft(amplitude * w / dt, n=block_size)
        return (np.asarray(x, dtype=np.complex128),)

    n = int(round(duration * sample_rate))
    (samples,) = _assemble_blocks(n, block_size, draw)
    logger.info("Homodyne synthesis finished", extra={"samples": n, "seed": seed})
    return TimeTrace(sample_rate, samples.real.copy(), label=label, units="m", metadata={"seed": seed})
