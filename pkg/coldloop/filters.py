"""
Feedback electronics: filter stages, the delay controller, closed-loop
susceptibility and Nyquist stability analysis.

Sign conventions:
    Electronics responses (`chain_response`, `FrequencyResponse`) use the
    engineering convention s = iΩ, where a delay contributes phase −Ωτ.
    Mechanical responses use the physics convention of
    `coldloop.model.susceptibility`. For real filters the two differ by complex
    conjugation, so the feedback entering the equation of motion is
    H_fb(Ω) = mΩ_zγ_fb·conj(h(Ω)) with h the chain response. A delay-only chain
    reproduces `delay_filter_response` = mΩ_zγ_fb·e^{iΩτ} exactly.

Usage:
    from coldloop.filters import FilterChain, stability_check, stability_grid

    chain = FilterChain.standard(params)
    report = stability_check(params, chain, stability_grid(params), gamma_fb=gamma_star)
    if not report.stable:
        ...
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import StrEnum
from typing import Any, Protocol

import control as ct
import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import signal

from .constants import TWO_PI
from .exceptions import InvalidParameterError, ResolutionError, SingularityError
from .model import ComplexArray, FloatArray, OscillatorParams, susceptibility

logger: logging.Logger = logging.getLogger(__name__)


class SupportsResponse(Protocol):
    """Anything that returns a dimensionless chain response h(Ω) (engineering convention)."""

    def response(self, omega: ArrayLike) -> ComplexArray: ...


# ============================================================
# Filter stages
# ============================================================


class StageKind(StrEnum):
    HIGH_PASS = "high_pass"
    NOTCH = "notch"
    DELAY = "delay"
    GAIN = "gain"


@dataclass(frozen=True)
class FilterStage:
    """
    One element of the feedback electronics.

    Only the fields relevant to `kind` are meaningful; use the constructors
    `high_pass`, `notch`, `delay` and `gain`.
    """

    kind: StageKind
    cutoff_hz: float = 0.0
    center_hz: float = 0.0
    quality: float = 0.0
    tau_s: float = 0.0
    gain_value: float = 1.0

    def __post_init__(self) -> None:
        if self.kind is StageKind.HIGH_PASS and not self.cutoff_hz > 0:
            raise InvalidParameterError(
                "high-pass cutoff must be positive", code="STAGE", context={"cutoff_hz": self.cutoff_hz}
            )
        if self.kind is StageKind.NOTCH and not (self.center_hz > 0 and self.quality > 0):
            raise InvalidParameterError(
                "notch center and quality must be positive",
                code="STAGE",
                context={"center_hz": self.center_hz, "quality": self.quality},
            )
        if self.kind is StageKind.DELAY and not self.tau_s >= 0:
            raise InvalidParameterError("delay must be nonnegative", code="STAGE", context={"tau_s": self.tau_s})
        if self.kind is StageKind.GAIN and not math.isfinite(self.gain_value):
            raise InvalidParameterError("gain must be finite", code="STAGE", context={"gain": self.gain_value})

    @classmethod
    def high_pass(cls, cutoff_hz: float) -> FilterStage:
        return cls(StageKind.HIGH_PASS, cutoff_hz=cutoff_hz)

    @classmethod
    def notch(cls, center_hz: float, quality: float) -> FilterStage:
        return cls(StageKind.NOTCH, center_hz=center_hz, quality=quality)

    @classmethod
    def delay(cls, tau_s: float) -> FilterStage:
        return cls(StageKind.DELAY, tau_s=tau_s)

    @classmethod
    def gain(cls, value: float) -> FilterStage:
        return cls(StageKind.GAIN, gain_value=value)

    def response(self, omega: ArrayLike) -> ComplexArray:
        """Continuous-time response at angular frequency `omega`."""
        w = np.asarray(omega, dtype=float)
        s = 1j * w
        match self.kind:
            case StageKind.HIGH_PASS:
                x = w / (TWO_PI * self.cutoff_hz)
                out = 1j * x / (1.0 + 1j * x)
            case StageKind.NOTCH:
                w0 = TWO_PI * self.center_hz
                out = (s**2 + w0**2) / (s**2 + w0 * s / self.quality + w0**2)
            case StageKind.DELAY:
                out = np.exp(-1j * w * self.tau_s)
            case StageKind.GAIN:
                out = np.full_like(s, self.gain_value)
        return np.asarray(out, dtype=np.complex128)

    def to_dict(self) -> dict[str, Any]:
        match self.kind:
            case StageKind.HIGH_PASS:
                return {"kind": self.kind.value, "cutoff_hz": self.cutoff_hz}
            case StageKind.NOTCH:
                return {"kind": self.kind.value, "center_hz": self.center_hz, "quality": self.quality}
            case StageKind.DELAY:
                return {"kind": self.kind.value, "tau_s": self.tau_s}
            case StageKind.GAIN:
                return {"kind": self.kind.value, "value": self.gain_value}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> FilterStage:
        """
        Build a stage from its config-tree form.

        Raises:
            InvalidParameterError: On an unknown kind or missing field
        """
        try:
            kind = StageKind(data["kind"])
            match kind:
                case StageKind.HIGH_PASS:
                    return cls.high_pass(float(data["cutoff_hz"]))
                case StageKind.NOTCH:
                    return cls.notch(float(data["center_hz"]), float(data["quality"]))
                case StageKind.DELAY:
                    return cls.delay(float(data["tau_s"]))
                case StageKind.GAIN:
                    return cls.gain(float(data["value"]))
        except (KeyError, ValueError, TypeError) as e:
            raise InvalidParameterError(
                f"invalid filter stage: {e}", code="STAGE", context={"stage": data}
            ) from e


@dataclass(frozen=True)
class DiscreteChain:
    """
    Sampled realisation of a chain for time-domain simulation.

    Attributes:
        sos: Second-order sections (scipy layout) of the non-delay stages
        delay_samples: Total delay rounded to whole samples
        delay_rounding_s: Rounded minus requested delay
        gain: Product of gain stages and the chain's overall gain
        sample_rate: Sample rate the sections were designed for (Hz)
    """

    sos: NDArray[np.float64]
    delay_samples: int
    delay_rounding_s: float
    gain: float
    sample_rate: float

    def response(self, omega: ArrayLike) -> ComplexArray:
        w = np.asarray(omega, dtype=float)
        out = np.full(w.shape, self.gain, dtype=np.complex128)
        if self.sos.shape[0]:
            _, h = signal.sosfreqz(self.sos, worN=np.atleast_1d(w) / TWO_PI, fs=self.sample_rate)
            out = out * np.reshape(h, w.shape)
        return np.asarray(out * np.exp(-1j * w * self.delay_samples / self.sample_rate), dtype=np.complex128)


@dataclass(frozen=True)
class FilterChain:
    """
    Ordered feedback electronics with an overall dimensionless gain.

    The chain response is the product of the stage responses times
    `overall_gain`; the physical feedback force scales it by mΩ_zγ_fb.
    """

    stages: tuple[FilterStage, ...] = ()
    overall_gain: float = 1.0

    @classmethod
    def delay_only(cls, tau_s: float) -> FilterChain:
        return cls(stages=(FilterStage.delay(tau_s),))

    @classmethod
    def standard(cls, params: OscillatorParams, n: int = 0) -> FilterChain:
        """
        The designed cooling chain: 9 kHz high-pass, notches at 202 kHz and
        249 kHz (Q = 5), and the smallest stable delay of order `n`.
        """
        return cls(
            stages=(
                FilterStage.high_pass(9e3),
                FilterStage.notch(202e3, 5.0),
                FilterStage.notch(249e3, 5.0),
                FilterStage.delay(smallest_stable_delay(params, n)),
            )
        )

    @property
    def total_delay(self) -> float:
        return sum(st.tau_s for st in self.stages if st.kind is StageKind.DELAY)

    def with_delay(self, tau_s: float) -> FilterChain:
        """Return a copy whose delay stages are replaced by a single delay `tau_s`."""
        kept = tuple(st for st in self.stages if st.kind is not StageKind.DELAY)
        return FilterChain(stages=(*kept, FilterStage.delay(tau_s)), overall_gain=self.overall_gain)

    def response(self, omega: ArrayLike, sample_rate: float | None = None) -> ComplexArray:
        return chain_response(omega, self, sample_rate=sample_rate)

    def feedback_response(
        self,
        omega: ArrayLike,
        params: OscillatorParams,
        gamma_fb: float,
        sample_rate: float | None = None,
    ) -> ComplexArray:
        """Physics-convention feedback H_fb(Ω) = mΩ_zγ_fb·conj(h(Ω))."""
        h = chain_response(omega, self, sample_rate=sample_rate)
        return np.asarray(params.mass * params.omega_z * gamma_fb * np.conj(h), dtype=np.complex128)

    def discretize(self, sample_rate: float) -> DiscreteChain:
        """
        Realise the chain at `sample_rate` with bilinear-transform sections.

        Notches use `scipy.signal.iirnotch` (exact center), the high-pass a
        first-order Butterworth; delays are rounded to whole samples.

        Raises:
            InvalidParameterError: If a stage frequency is at or above Nyquist
        """
        sections: list[NDArray[np.float64]] = []
        gain = self.overall_gain
        for st in self.stages:
            match st.kind:
                case StageKind.HIGH_PASS:
                    _check_below_nyquist(st.cutoff_hz, sample_rate)
                    sections.append(signal.butter(1, st.cutoff_hz, btype="highpass", fs=sample_rate, output="sos"))
                case StageKind.NOTCH:
                    _check_below_nyquist(st.center_hz, sample_rate)
                    b, a = signal.iirnotch(st.center_hz, st.quality, fs=sample_rate)
                    sections.append(signal.tf2sos(b, a))
                case StageKind.GAIN:
                    gain *= st.gain_value
                case StageKind.DELAY:
                    pass
        sos = np.vstack(sections) if sections else np.zeros((0, 6))
        requested = self.total_delay
        samples = int(round(requested * sample_rate))
        rounding = samples / sample_rate - requested
        if abs(rounding) > 0.0:
            logger.debug(
                "Delay rounded to whole samples",
                extra={"requested_s": requested, "samples": samples, "rounding_s": rounding},
            )
        return DiscreteChain(
            sos=np.asarray(sos, dtype=float),
            delay_samples=samples,
            delay_rounding_s=rounding,
            gain=gain,
            sample_rate=sample_rate,
        )

    def to_dict(self) -> dict[str, Any]:
        return {"overall_gain": self.overall_gain, "stages": [st.to_dict() for st in self.stages]}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> FilterChain:
        stages = tuple(FilterStage.from_dict(d) for d in data.get("stages", []))
        return cls(stages=stages, overall_gain=float(data.get("overall_gain", 1.0)))


def _check_below_nyquist(freq_hz: float, sample_rate: float) -> None:
    if freq_hz >= sample_rate / 2:
        raise InvalidParameterError(
            "filter stage frequency at or above Nyquist",
            code="NYQUIST",
            context={"freq_hz": freq_hz, "sample_rate": sample_rate},
        )


# ============================================================
# Tabulated responses
# ============================================================


@dataclass(frozen=True, eq=False)
class FrequencyResponse:
    """
    Tabulated complex chain response h(Ω) (engineering convention).

    Interpolates linearly in log-magnitude and unwrapped phase; queries must
    stay inside the tabulated range, and tabulated nodes are reproduced exactly.
    """

    grid: FloatArray
    values: ComplexArray
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        grid = np.asarray(self.grid, dtype=float)
        values = np.asarray(self.values, dtype=np.complex128)
        if grid.ndim != 1 or grid.shape != values.shape or grid.size < 2:
            raise InvalidParameterError("frequency response needs >= 2 matching points", code="RESPONSE_SHAPE")
        if not np.all(np.diff(grid) > 0):
            raise InvalidParameterError("frequency response grid must be strictly increasing", code="RESPONSE_GRID")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)
        magnitude = np.abs(values)
        floor = np.finfo(float).tiny
        object.__setattr__(self, "_log_magnitude", np.log(np.maximum(magnitude, floor)))
        object.__setattr__(self, "_phase", np.unwrap(np.angle(values)))

    @classmethod
    def from_chain(
        cls, chain: FilterChain, grid: ArrayLike, sample_rate: float | None = None
    ) -> FrequencyResponse:
        w = np.asarray(grid, dtype=float)
        return cls(grid=w, values=chain_response(w, chain, sample_rate=sample_rate))

    def response(self, omega: ArrayLike) -> ComplexArray:
        """
        Interpolated response at `omega`.

        Raises:
            InvalidParameterError: If any query lies outside the tabulated range
        """
        w = np.asarray(omega, dtype=float)
        if w.size and (w.min() < self.grid[0] or w.max() > self.grid[-1]):
            raise InvalidParameterError(
                "frequency response queried outside its grid",
                code="OUT_OF_RANGE",
                context={"grid_min": float(self.grid[0]), "grid_max": float(self.grid[-1])},
            )
        log_mag: FloatArray = self.__dict__["_log_magnitude"]
        phase: FloatArray = self.__dict__["_phase"]
        out = np.exp(np.interp(w, self.grid, log_mag) + 1j * np.interp(w, self.grid, phase))
        idx = np.clip(np.searchsorted(self.grid, w), 0, self.grid.size - 1)
        exact = self.grid[idx] == w
        out = np.where(exact, self.values[idx], out)
        return np.asarray(out, dtype=np.complex128)


@dataclass(frozen=True)
class ViscousDamping:
    """
    Ideal cold-damping electronics h(Ω) = −iΩ/Ω_z (a differentiator).

    With gain γ_fb the feedback is the pure viscous force −mγ_fb ż at every
    frequency.
    """

    omega_z: float

    def response(self, omega: ArrayLike) -> ComplexArray:
        w = np.asarray(omega, dtype=float)
        return np.asarray(-1j * w / self.omega_z, dtype=np.complex128)


# ============================================================
# Loop operations
# ============================================================


def delay_filter_response(omega: ArrayLike, params: OscillatorParams, gamma_fb: float, tau: float) -> ComplexArray:
    """
    Pure-delay controller H_fb(Ω) = mΩ_zγ_fb·e^{iΩτ} (physics convention).

    With Ω_zτ = π/2 this force is a viscous damping −mγ_fb ż at resonance.
    """
    if gamma_fb < 0 or tau < 0:
        raise InvalidParameterError(
            "gamma_fb and tau must be nonnegative", code="DELAY", context={"gamma_fb": gamma_fb, "tau": tau}
        )
    w = np.asarray(omega, dtype=float)
    return np.asarray(params.mass * params.omega_z * gamma_fb * np.exp(1j * w * tau), dtype=np.complex128)


def chain_response(omega: ArrayLike, chain: FilterChain, sample_rate: float | None = None) -> ComplexArray:
    """
    Product of stage responses times the overall gain (engineering convention).

    With `sample_rate`, the discrete-time realisation is evaluated instead, which
    reproduces the aliased copies of the notches above Nyquist.
    """
    if sample_rate is not None:
        return chain.discretize(sample_rate).response(omega)
    w = np.asarray(omega, dtype=float)
    out = np.full(w.shape, chain.overall_gain, dtype=np.complex128)
    for st in chain.stages:
        out = out * st.response(w)
    return np.asarray(out, dtype=np.complex128)


def smallest_stable_delay(params: OscillatorParams, n: int = 0) -> float:
    """Delay τ = (π/2 + 2πn)/Ω_z turning position feedback into damping."""
    if n < 0:
        raise InvalidParameterError("n must be nonnegative", code="DELAY", context={"n": n})
    return (math.pi / 2 + TWO_PI * n) / params.omega_z


def closed_loop_susceptibility(omega: ArrayLike, params: OscillatorParams, h_fb: ArrayLike) -> ComplexArray:
    """
    χ_fb(Ω) = 1/(χ_m(Ω)⁻¹ − H_fb(Ω)).

    Raises:
        SingularityError: If the denominator vanishes, reporting the frequency
    """
    w = np.asarray(omega, dtype=float)
    inverse = 1.0 / susceptibility(w, params, params.gamma_m) - np.asarray(h_fb, dtype=np.complex128)
    bad = inverse == 0
    if np.any(bad):
        raise SingularityError(
            "closed-loop susceptibility has a pole on the grid",
            code="POLE",
            context={"omega": float(np.broadcast_to(w, bad.shape)[bad].flat[0])},
        )
    return np.asarray(1.0 / inverse, dtype=np.complex128)


def effective_linewidth(params: OscillatorParams, response: SupportsResponse, gamma_fb: float) -> float:
    """First-order damping rate γ_m − γ_fb·Im h(Ω_z) delivered at resonance."""
    h = complex(response.response(np.array([params.omega_z]))[0])
    return params.gamma_m - gamma_fb * h.imag


# ============================================================
# Stability
# ============================================================


@dataclass(frozen=True)
class StabilityReport:
    """
    Nyquist verdict.

    Attributes:
        stable: No closed-loop poles in the unstable half-plane
        margin: Minimum distance of the open-loop locus from the critical point
        encirclements: Number of unstable closed-loop poles counted on the grid
        critical_omega: Frequency where the locus comes closest to the critical point
        gain_margin: Factor by which γ_fb can grow before a phase crossover goes unstable (inf if none)
        phase_margin: Phase margin at the gain crossover in degrees (inf if none)
    """

    stable: bool
    margin: float
    encirclements: int
    critical_omega: float
    gain_margin: float = math.inf
    phase_margin: float = math.inf


def stability_grid(
    params: OscillatorParams,
    n_points: int = 12000,
    span: tuple[float, float] = (0.01, 10.0),
    linewidth: float | None = None,
) -> FloatArray:
    """
    Grid for `stability_check`: geometric over `span`·Ω_z plus a linear
    block of 4000 points within ±50 linewidths of Ω_z.
    """
    width = linewidth if linewidth is not None else max(params.gamma_m, 1e-6 * params.omega_z)
    base = np.geomspace(span[0] * params.omega_z, span[1] * params.omega_z, n_points)
    half = min(50.0 * width, 0.5 * params.omega_z)
    dense = np.linspace(params.omega_z - half, params.omega_z + half, 4000)
    return np.unique(np.concatenate([base, dense]))


def loop_frequency_data(
    params: OscillatorParams,
    chain: SupportsResponse,
    grid: ArrayLike,
    gamma_fb: float,
) -> ct.FrequencyResponseData:
    """
    Open loop as python-control frequency data, G(iΩ) = −Ω_zγ_fb·h(Ω)/(Ω_z² − Ω² + iγ_mΩ).

    The mechanics feed the chain back with positive sign, so the negative-feedback
    loop handed to python-control carries the minus; 1 + G vanishes exactly where
    the closed-loop susceptibility has its poles.
    """
    w = np.asarray(grid, dtype=float)
    h = np.asarray(chain.response(w), dtype=np.complex128)
    plant = 1.0 / (params.omega_z**2 - w**2 + 1j * params.gamma_m * w)
    return ct.frd(-params.omega_z * gamma_fb * h * plant, w)


def stability_check(
    params: OscillatorParams,
    chain: SupportsResponse,
    grid: ArrayLike,
    gamma_fb: float = 0.0,
) -> StabilityReport:
    """
    Nyquist test of the loop χ_m(Ω)H_fb(Ω) through `control.nyquist_response`.

    The open loop has no unstable poles (γ_m > 0, causal chain), so the count of
    clockwise encirclements of −1 equals the number of unstable closed-loop poles.
    Margins come from `control.stability_margins` on the same frequency data.

    Raises:
        ResolutionError: If the grid is too short, too narrow, or so sparse that
            the phase of 1 + G jumps by more than π/2 between adjacent points
    """
    w = np.asarray(grid, dtype=float)
    if w.size < 10_000 or w[0] > params.omega_z / 100 * (1 + 1e-9) or w[-1] < 10 * params.omega_z * (1 - 1e-9):
        raise ResolutionError(
            "stability grid must span [omega_z/100, 10 omega_z] with >= 1e4 points",
            code="GRID",
            context={"points": int(w.size), "min": float(w.min()), "max": float(w.max())},
        )
    # A lossless oscillator is checked as marginally damped.
    damped = params
    if params.gamma_m == 0:
        damped = OscillatorParams(params.mass, params.omega_z, 1e-9 * params.omega_z)
    full = np.concatenate([[0.0], w])
    loop = loop_frequency_data(damped, chain, full, gamma_fb)
    distance = 1.0 + np.asarray(loop.fresp).reshape(-1)
    steps = np.angle(distance[1:] / distance[:-1])
    worst = int(np.argmax(np.abs(steps)))
    if abs(steps[worst]) > math.pi / 2:
        raise ResolutionError(
            "stability grid too sparse: locus phase jumps by more than pi/2",
            code="GRID_SPARSE",
            context={"omega": float(full[worst]), "jump": float(steps[worst])},
        )

    encirclements = int(ct.nyquist_response(loop, omega=full, warn_encirclements=False).count)
    gain_margin, phase_margin, margin, _, _, critical = ct.stability_margins(loop)
    if not math.isfinite(margin):
        # No interior minimum of |1 + G|, e.g. zero gain.
        nearest = int(np.argmin(np.abs(distance)))
        margin, critical = np.abs(distance[nearest]), full[nearest]
    report = StabilityReport(
        stable=encirclements == 0,
        margin=float(margin),
        encirclements=encirclements,
        critical_omega=float(critical),
        gain_margin=float(gain_margin),
        phase_margin=float(phase_margin),
    )
    logger.debug(
        "Nyquist check",
        extra={
            "gamma_fb": gamma_fb,
            "encirclements": encirclements,
            "margin": report.margin,
            "gain_margin": report.gain_margin,
        },
    )
    return report
