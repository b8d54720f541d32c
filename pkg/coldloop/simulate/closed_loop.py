"""
Time-domain simulation of the measurement-feedback loop.

Integrates m z̈ = −mΩ_z²z − mγ_m ż + F_tot(t) + F_fb(t) with white force noise
of two-sided density S̄_FF (increments of variance 2π·S̄_FF/dt), a homodyne
record y = z + n_imp with white imprecision S̄_imp, and feedback
F_fb = mΩ_zγ_fb·[chain ∘ y](t). The chain runs as discrete sections at the
simulation rate, the delay as a whole number of samples.

Usage:
    from coldloop.simulate import SimConfig, simulate_closed_loop

    cfg = SimConfig(params=params, budget=budget, chain=chain, gamma_fb=gamma_star,
                    dt=1 / 977e3, duration=2.0, seed=7)
    result = simulate_closed_loop(cfg)
    z, i_hom = result.z, result.i_hom
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy.linalg import expm

from ..constants import TWO_PI
from ..exceptions import DivergenceError, InvalidParameterError, UnstableLoopError
from ..filters import FilterChain, StabilityReport, effective_linewidth, stability_check, stability_grid
from ..model import OscillatorParams, RateBudget, force_psd_total, imprecision_psd
from .traces import TimeTrace, TraceLabel

logger: logging.Logger = logging.getLogger(__name__)

Integrator = Literal["euler", "zoh"]


@dataclass(frozen=True)
class ForceTone:
    """Coherent force drive F(t) = force_amplitude·cos(2π·freq_hz·t) in N."""

    freq_hz: float
    force_amplitude: float


@dataclass(frozen=True)
class SimConfig:
    """
    Closed-loop simulation settings.

    Attributes:
        params: Oscillator parameters
        budget: Decoherence and measurement rates
        chain: Feedback electronics
        gamma_fb: Feedback gain as a linewidth (rad/s)
        dt: Time step (s)
        duration: Record length (s)
        seed: Seed of the run's own random generator
        tone: Optional coherent force drive
        imprecision_on: Add imprecision noise to the homodyne record
        integrator: "euler" (prewarped semi-implicit Euler) or "zoh" (exact hold)
        allow_unstable: Skip the Nyquist gate (for divergence studies)
        divergence_factor: Amplitude multiple of the expected RMS treated as blow-up
    """

    params: OscillatorParams
    budget: RateBudget
    chain: FilterChain
    gamma_fb: float
    dt: float
    duration: float
    seed: int = 0
    tone: ForceTone | None = None
    imprecision_on: bool = True
    integrator: Integrator = "euler"
    allow_unstable: bool = False
    divergence_factor: float = 1e4

    def __post_init__(self) -> None:
        f_z = self.params.omega_z / TWO_PI
        if not self.dt > 0 or not self.duration > 0:
            raise InvalidParameterError(
                "dt and duration must be positive", code="DT", context={"dt": self.dt, "duration": self.duration}
            )
        if self.dt > 1.0 / (20.0 * f_z) * (1 + 1e-12):
            raise InvalidParameterError(
                "dt must resolve the oscillation (dt <= 1/(20 f_z))",
                code="DT",
                context={"dt": self.dt, "f_z": f_z},
            )
        if self.chain.total_delay > 0 and self.dt > self.chain.total_delay / 4 * (1 + 1e-12):
            raise InvalidParameterError(
                "dt must resolve the feedback delay (dt <= tau/4)",
                code="DT",
                context={"dt": self.dt, "tau": self.chain.total_delay},
            )
        if self.gamma_fb < 0:
            raise InvalidParameterError("gamma_fb must be nonnegative", code="GAIN", context={"gamma_fb": self.gamma_fb})
        if self.integrator not in ("euler", "zoh"):
            raise InvalidParameterError("unknown integrator", code="INTEGRATOR", context={"integrator": self.integrator})

    @property
    def sample_rate(self) -> float:
        return 1.0 / self.dt

    @property
    def n_samples(self) -> int:
        return int(round(self.duration / self.dt))

    @property
    def expected_linewidth(self) -> float:
        return effective_linewidth(self.params, self.chain, self.gamma_fb)


@dataclass(frozen=True)
class SimResult:
    """Position and homodyne records of one closed-loop run."""

    z: TimeTrace
    i_hom: TimeTrace
    delay_samples: int
    delay_rounding_s: float
    stability: StabilityReport | None


def _propagator(params: OscillatorParams, dt: float) -> tuple[float, float, float, float, float, float]:
    """Exact zero-order-hold step of the damped oscillator driven by F/m."""
    w2 = params.omega_z**2
    augmented = np.zeros((3, 3))
    augmented[0, 1] = 1.0
    augmented[1, 0] = -w2
    augmented[1, 1] = -params.gamma_m
    augmented[1, 2] = 1.0
    step = expm(augmented * dt)
    return (
        float(step[0, 0]), float(step[0, 1]), float(step[0, 2]),
        float(step[1, 0]), float(step[1, 1]), float(step[1, 2]),
    )  # fmt: skip


def simulate_closed_loop(cfg: SimConfig) -> SimResult:
    """
    Integrate the closed loop and return the true position and homodyne records.

    Output is bit-identical for identical configs (the generator is seeded
    from `cfg.seed` and owned by the run).

    Raises:
        UnstableLoopError: If the Nyquist check fails and `allow_unstable` is off
        DivergenceError: If |z| exceeds `divergence_factor` times the expected RMS
    """
    params, dt = cfg.params, cfg.dt
    fs = cfg.sample_rate
    n = cfg.n_samples
    discrete = cfg.chain.discretize(fs)

    stability: StabilityReport | None = None
    if cfg.gamma_fb > 0:
        stability = stability_check(params, discrete, stability_grid(params), gamma_fb=cfg.gamma_fb)
        if not stability.stable and not cfg.allow_unstable:
            raise UnstableLoopError(
                "feedback loop fails the Nyquist check",
                code="UNSTABLE",
                context={"gamma_fb": cfg.gamma_fb, "encirclements": stability.encirclements},
            )

    gamma_expected = max(cfg.expected_linewidth, params.gamma_m, TWO_PI / cfg.duration)
    if cfg.duration < 100.0 * TWO_PI / gamma_expected:
        logger.warning(
            "Simulation shorter than 100 damping times",
            extra={"duration": cfg.duration, "gamma_expected": gamma_expected},
        )
    if discrete.delay_rounding_s != 0.0:
        logger.warning(
            "Feedback delay rounded to whole samples",
            extra={"delay_samples": discrete.delay_samples, "rounding_s": discrete.delay_rounding_s},
        )

    rng = np.random.default_rng(cfg.seed)
    s_ff = force_psd_total(params, cfg.budget)
    s_imp = imprecision_psd(params, cfg.budget) if cfg.imprecision_on else 0.0
    force = rng.standard_normal(n) * math.sqrt(TWO_PI * s_ff / dt)
    noise = rng.standard_normal(n) * math.sqrt(TWO_PI * s_imp / dt) if cfg.imprecision_on else np.zeros(n)
    if cfg.tone is not None:
        t = np.arange(n) * dt
        force = force + cfg.tone.force_amplitude * np.cos(TWO_PI * cfg.tone.freq_hz * t)

    gain = params.mass * params.omega_z * cfg.gamma_fb * discrete.gain
    delay = discrete.delay_samples
    m_inv = 1.0 / params.mass
    rms = math.sqrt(math.pi * (s_ff + (gain**2) * s_imp) / (params.mass**2 * params.omega_z**2 * gamma_expected))
    limit = cfg.divergence_factor * rms

    logger.info(
        "Closed-loop simulation started",
        extra={"samples": n, "gamma_fb": cfg.gamma_fb, "delay_samples": delay, "integrator": cfg.integrator},
    )

    sections = [tuple(float(c) for c in row) for row in discrete.sos]
    states = [[0.0, 0.0] for _ in sections]
    force_l = (force * m_inv).tolist()
    noise_l = noise.tolist()
    zs = [0.0] * n
    ys = [0.0] * n
    filtered = [0.0] * n

    use_zoh = cfg.integrator == "zoh"
    p00, p01, g0, p10, p11, g1 = _propagator(params, dt) if use_zoh else (0.0,) * 6
    # Prewarped so the discrete resonance sits exactly at omega_z.
    w_num = 2.0 / dt * math.sin(params.omega_z * dt / 2.0)
    w2 = w_num * w_num
    damping = params.gamma_m

    z = 0.0
    v = 0.0
    for k in range(n):
        y = z + noise_l[k]
        zs[k] = z
        ys[k] = y
        u = y
        for section, state in zip(sections, states, strict=True):
            b0, b1, b2, _, a1, a2 = section
            out = b0 * u + state[0]
            state[0] = b1 * u - a1 * out + state[1]
            state[1] = b2 * u - a2 * out
            u = out
        filtered[k] = u
        accel = force_l[k]
        if k >= delay:
            accel += gain * filtered[k - delay] * m_inv
        if use_zoh:
            z, v = p00 * z + p01 * v + g0 * accel, p10 * z + p11 * v + g1 * accel
        else:
            v += dt * (accel - w2 * z - damping * v)
            z += dt * v
        if not abs(z) <= limit:
            onset = cfg.dt * (k + 1)
            logger.warning(
                "Closed-loop simulation diverged",
                extra={"onset_s": onset, "gamma_fb": cfg.gamma_fb, "limit": limit},
            )
            raise DivergenceError(
                f"simulation diverged at t = {onset:.6g} s",
                code="DIVERGED",
                context={"onset_s": onset, "gamma_fb": cfg.gamma_fb},
            )

    meta = {"seed": cfg.seed, "gamma_fb": cfg.gamma_fb}
    z_trace = TimeTrace(sample_rate=fs, samples=np.asarray(zs), label=TraceLabel.Z, units="m", metadata=meta)
    y_trace = TimeTrace(sample_rate=fs, samples=np.asarray(ys), label=TraceLabel.I_HOM, units="m", metadata=meta)
    logger.info("Closed-loop simulation finished", extra={"samples": n, "gamma_fb": cfg.gamma_fb})
    return SimResult(
        z=z_trace,
        i_hom=y_trace,
        delay_samples=delay,
        delay_rounding_s=discrete.delay_rounding_s,
        stability=stability,
    )
