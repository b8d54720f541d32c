"""
Analytic physics layer of the feedback-cooled oscillator.

Susceptibilities, noise densities, rate bookkeeping, closed-form occupation
formulas and the PSD conventions every other module consumes. All densities
are two-sided in angular frequency (⟨z²⟩ = ∫ S̄ dΩ over the whole axis) unless
a `Spectrum` says otherwise.

Usage:
    from coldloop.model import OscillatorParams, budget_from_rates, cold_damping_occupation
    from coldloop.constants import hz_to_rad

    params = OscillatorParams.from_hz(mass_kg=1e-18, omega_z_hz=77.6e3, gamma_m_hz=21.9)
    budget = budget_from_rates(gamma_meas=hz_to_rad(1.33e3), gamma_tot=hz_to_rad(5.5e3))
    n_bar = cold_damping_occupation(hz_to_rad(11.1e3), budget)   # 0.517
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from enum import StrEnum
from typing import Any, Literal

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.integrate import trapezoid

from .constants import HBAR, TWO_PI
from .exceptions import InvalidParameterError, SingularityError

logger: logging.Logger = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]
ComplexArray = NDArray[np.complex128]

PHYSICAL_SCALE: Literal["physical"] = "physical"


# ============================================================
# Domain types
# ============================================================


@dataclass(frozen=True)
class OscillatorParams:
    """
    Mechanical oscillator along the feedback axis.

    Attributes:
        mass: Particle mass in kg
        omega_z: Mechanical angular frequency in rad/s
        gamma_m: Residual damping at minimum feedback in rad/s
    """

    mass: float
    omega_z: float
    gamma_m: float = 0.0

    def __post_init__(self) -> None:
        if not self.mass > 0:
            raise InvalidParameterError(
                "mass must be positive", code="MASS", context={"mass": self.mass}
            )
        if not self.omega_z > 0:
            raise InvalidParameterError(
                "omega_z must be positive", code="OMEGA_Z", context={"omega_z": self.omega_z}
            )
        if not 0 <= self.gamma_m < self.omega_z:
            raise InvalidParameterError(
                "gamma_m must satisfy 0 <= gamma_m < omega_z",
                code="GAMMA_M",
                context={"gamma_m": self.gamma_m, "omega_z": self.omega_z},
            )

    @classmethod
    def from_hz(cls, mass_kg: float, omega_z_hz: float, gamma_m_hz: float = 0.0) -> OscillatorParams:
        """Build parameters from ordinary frequencies (Hz)."""
        return cls(mass=mass_kg, omega_z=TWO_PI * omega_z_hz, gamma_m=TWO_PI * gamma_m_hz)

    @property
    def z_zpf(self) -> float:
        """Zero-point fluctuation amplitude √(ħ/2mΩ_z) in m."""
        return math.sqrt(HBAR / (2.0 * self.mass * self.omega_z))

    @property
    def p_zpf(self) -> float:
        """Zero-point momentum spread m·Ω_z·z_zpf."""
        return self.mass * self.omega_z * self.z_zpf


@dataclass(frozen=True)
class RateBudget:
    """
    Decoherence and measurement rates (all angular, rad/s).

    Attributes:
        gamma_qba: Backaction decoherence rate Γ_qba
        gamma_exc: Excess decoherence rate Γ_exc (gas, blackbody, technical)
        eta_d: Detection efficiency of the feedback detector
    """

    gamma_qba: float
    gamma_exc: float
    eta_d: float

    def __post_init__(self) -> None:
        if self.gamma_qba < 0 or self.gamma_exc < 0:
            raise InvalidParameterError(
                "decoherence rates must be nonnegative",
                code="RATE",
                context={"gamma_qba": self.gamma_qba, "gamma_exc": self.gamma_exc},
            )
        if not self.gamma_qba + self.gamma_exc > 0:
            raise InvalidParameterError(
                "total decoherence must be positive",
                code="RATE",
                context={"gamma_qba": self.gamma_qba, "gamma_exc": self.gamma_exc},
            )
        if not 0 <= self.eta_d <= 1:
            raise InvalidParameterError(
                "eta_d must lie in [0, 1]", code="EFFICIENCY", context={"eta_d": self.eta_d}
            )

    @property
    def gamma_tot(self) -> float:
        return self.gamma_qba + self.gamma_exc

    @property
    def gamma_meas(self) -> float:
        return self.eta_d * self.gamma_qba

    @property
    def eta_meas(self) -> float:
        return self.gamma_meas / self.gamma_tot

    @property
    def c_q_infinite(self) -> bool:
        """True when there is no excess decoherence (backaction-only limit)."""
        return self.gamma_exc == 0

    @property
    def c_q(self) -> float:
        """Quantum cooperativity Γ_qba/Γ_exc; `math.inf` when `c_q_infinite`."""
        if self.c_q_infinite:
            return math.inf
        return self.gamma_qba / self.gamma_exc


class SpectralConvention(StrEnum):
    """Density conventions used by spectra and cross-spectra."""

    TWO_SIDED_ANGULAR = "two_sided_angular"
    SINGLE_SIDED_HERTZ = "single_sided_hertz"


@dataclass(frozen=True, eq=False)
class Spectrum:
    """
    Power spectral density on a strictly increasing grid.

    Attributes:
        grid: Frequencies (rad/s for two_sided_angular, Hz for single_sided_hertz)
        values: Nonnegative densities
        convention: Density convention of grid and values
        sigma: Optional per-bin standard errors
        n_averages: Number of averaged periodograms (0 for model curves)
        metadata: Free-form labels
    """

    grid: FloatArray
    values: FloatArray
    convention: SpectralConvention = SpectralConvention.TWO_SIDED_ANGULAR
    sigma: FloatArray | None = None
    n_averages: int = 0
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        grid = np.asarray(self.grid, dtype=float)
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)
        if grid.ndim != 1 or grid.shape != values.shape:
            raise InvalidParameterError(
                "grid and values must be 1-D arrays of equal length",
                code="SPECTRUM_SHAPE",
                context={"grid": grid.shape, "values": values.shape},
            )
        if grid.size > 1 and not np.all(np.diff(grid) > 0):
            raise InvalidParameterError("grid must be strictly increasing", code="SPECTRUM_GRID")
        if np.any(values < 0):
            raise InvalidParameterError(
                "spectral densities must be nonnegative",
                code="SPECTRUM_NEGATIVE",
                context={"min": float(values.min())},
            )
        if self.sigma is not None:
            sigma = np.asarray(self.sigma, dtype=float)
            if sigma.shape != grid.shape:
                raise InvalidParameterError("sigma must match grid", code="SPECTRUM_SHAPE")
            object.__setattr__(self, "sigma", sigma)

    def __len__(self) -> int:
        return int(self.grid.size)

    def variance(self) -> float:
        """Total variance ⟨x²⟩ represented by this density (trapezoid rule)."""
        if self.convention is SpectralConvention.SINGLE_SIDED_HERTZ:
            keep = self.grid >= 0
            return float(trapezoid(self.values[keep], self.grid[keep]))
        if self.grid[0] < 0:
            return float(trapezoid(self.values, self.grid))
        return 2.0 * float(trapezoid(self.values, self.grid))

    def select(self, keep: NDArray[np.bool_]) -> Spectrum:
        """Return the spectrum restricted to the bins where `keep` is True."""
        return replace(
            self,
            grid=self.grid[keep],
            values=self.values[keep],
            sigma=None if self.sigma is None else self.sigma[keep],
        )

    def positive(self) -> Spectrum:
        """Return the strictly positive-frequency half."""
        return self.select(self.grid > 0)


class ThermometryMethod(StrEnum):
    """Provenance of an occupation estimate."""

    ASYMMETRY = "asymmetry"
    ASYMMETRY_DOUBLE_LO = "asymmetry_double_lo"
    CROSS_CORRELATION = "cross_correlation"
    INLOOP_INTEGRAL = "inloop_integral"


@dataclass(frozen=True)
class ThermometryResult:
    """
    Phonon occupation estimate with its provenance.

    Negative or infinite point estimates are kept as computed and described
    by `flags`; they are never clamped.
    """

    n_bar: float
    sigma: float
    method: ThermometryMethod
    flags: tuple[str, ...] = ()

    @property
    def below_zero(self) -> bool:
        return self.n_bar < 0

    @property
    def is_valid(self) -> bool:
        return not self.flags and math.isfinite(self.n_bar) and self.n_bar >= 0


# ============================================================
# Rate bookkeeping
# ============================================================


def rates_from_budget(gamma_qba: float, gamma_exc: float, eta_d: float) -> RateBudget:
    """
    Build a validated rate budget.

    Raises:
        InvalidParameterError: On nonpositive total decoherence or eta_d outside [0, 1]
    """
    return RateBudget(gamma_qba=gamma_qba, gamma_exc=gamma_exc, eta_d=eta_d)


def budget_from_rates(gamma_meas: float, gamma_tot: float, eta_d: float = 1.0) -> RateBudget:
    """
    Build a budget from the measured rates Γ_meas and Γ_tot.

    The split between backaction and excess decoherence is fixed by the
    assumed detection efficiency: Γ_qba = Γ_meas/η_d.
    """
    if not 0 < eta_d <= 1:
        raise InvalidParameterError(
            "eta_d must lie in (0, 1]", code="EFFICIENCY", context={"eta_d": eta_d}
        )
    gamma_qba = gamma_meas / eta_d
    if gamma_qba > gamma_tot:
        raise InvalidParameterError(
            "gamma_meas/eta_d exceeds gamma_tot",
            code="RATE",
            context={"gamma_meas": gamma_meas, "gamma_tot": gamma_tot, "eta_d": eta_d},
        )
    return RateBudget(gamma_qba=gamma_qba, gamma_exc=gamma_tot - gamma_qba, eta_d=eta_d)


# ============================================================
# Response functions and noise densities
# ============================================================


def susceptibility(omega: ArrayLike, params: OscillatorParams, gamma: float) -> ComplexArray:
    """
    Mechanical susceptibility χ(Ω) = m⁻¹/(Ω_z² − Ω² − iγΩ).

    Args:
        omega: Angular frequency (scalar or array)
        params: Oscillator parameters
        gamma: Damping rate (γ_m for the bare oscillator, γ_eff under feedback)

    Returns:
        Complex array with the shape of `omega` (m/N)

    Raises:
        SingularityError: If gamma = 0 and omega hits ±omega_z
    """
    if gamma < 0:
        raise InvalidParameterError("gamma must be nonnegative", code="GAMMA", context={"gamma": gamma})
    w = np.asarray(omega, dtype=float)
    denominator = params.omega_z**2 - w**2 - 1j * gamma * w
    if np.any(denominator == 0):
        raise SingularityError(
            "susceptibility evaluated on its pole",
            code="POLE",
            context={"omega": params.omega_z, "gamma": gamma},
        )
    return np.asarray(1.0 / (params.mass * denominator), dtype=np.complex128)


def force_psd_total(params: OscillatorParams, budget: RateBudget) -> float:
    """Total force noise S̄_FF = ħ²Γ_tot/(2π z_zpf²) in N²·s/rad."""
    return HBAR**2 * budget.gamma_tot / (TWO_PI * params.z_zpf**2)


def imprecision_psd(params: OscillatorParams, budget: RateBudget) -> float:
    """
    Imprecision noise S̄_imp = z_zpf²/(8π Γ_meas) in m²·s/rad.

    Raises:
        InvalidParameterError: If the budget has no measurement rate
    """
    if not budget.gamma_meas > 0:
        raise InvalidParameterError(
            "imprecision requires a positive measurement rate",
            code="RATE",
            context={"gamma_meas": budget.gamma_meas},
        )
    return params.z_zpf**2 / (4.0 * TWO_PI * budget.gamma_meas)


def physical_scale(params: OscillatorParams, gamma_eff: float) -> float:
    """Sideband prefactor R = mγ_eff ħΩ_z/π of an ideal heterodyne detector."""
    return params.mass * gamma_eff * HBAR * params.omega_z / math.pi


def _resolve_scale(scale_R: float | Literal["physical"], params: OscillatorParams, gamma_eff: float) -> float:
    if scale_R == PHYSICAL_SCALE:
        return physical_scale(params, gamma_eff)
    scale = float(scale_R)
    if not scale > 0:
        raise InvalidParameterError("scale_R must be positive", code="SCALE", context={"scale_R": scale})
    return scale


def heterodyne_sideband_psd(
    omega: ArrayLike,
    params: OscillatorParams,
    gamma_eff: float,
    n_bar: float,
    scale_R: float | Literal["physical"],
    bg: float,
    side: Literal["stokes", "antistokes"],
) -> FloatArray:
    """
    Heterodyne sideband density S̄_bg + R|χ_eff|²(n̄+1) (Stokes) or ... n̄ (anti-Stokes).

    `scale_R="physical"` uses R = mγ_eff ħΩ_z/π; any positive float is taken
    as a free fit scale.
    """
    if n_bar < 0 or bg < 0:
        raise InvalidParameterError(
            "n_bar and bg must be nonnegative", code="SIDEBAND", context={"n_bar": n_bar, "bg": bg}
        )
    if side not in ("stokes", "antistokes"):
        raise InvalidParameterError("side must be stokes or antistokes", code="SIDEBAND")
    scale = _resolve_scale(scale_R, params, gamma_eff)
    chi2 = np.abs(susceptibility(omega, params, gamma_eff)) ** 2
    weight = n_bar + 1.0 if side == "stokes" else n_bar
    return np.asarray(bg + scale * chi2 * weight, dtype=float)


def heterodyne_cross_psd(
    omega: ArrayLike,
    params: OscillatorParams,
    gamma_eff: float,
    n_bar: float,
    scale_R: float | Literal["physical"],
) -> ComplexArray:
    """Sideband cross density R|χ_eff|²(n̄ + ½ + i(Ω² − Ω_z²)/(2Ω_zγ_eff))."""
    scale = _resolve_scale(scale_R, params, gamma_eff)
    w = np.asarray(omega, dtype=float)
    chi2 = np.abs(susceptibility(w, params, gamma_eff)) ** 2
    dispersive = (w**2 - params.omega_z**2) / (2.0 * params.omega_z * gamma_eff)
    return np.asarray(scale * chi2 * (n_bar + 0.5 + 1j * dispersive), dtype=np.complex128)


def minimal_background(n_bar: float, peak: float) -> float:
    """
    Smallest equal sideband background keeping the model physical at resonance.

    Solves (A(n̄+1) + b)(A n̄ + b) = A²(n̄ + ½)² for b, with A the resonant
    peak R|χ_eff(Ω_z)|².
    """
    s = 2.0 * n_bar + 1.0
    return peak * (math.sqrt(s * s + 1.0) - s) / 2.0


# ============================================================
# Closed-form occupations
# ============================================================


def _require_measurement(budget: RateBudget) -> None:
    if not budget.gamma_meas > 0:
        raise InvalidParameterError(
            "budget has no measurement rate (gamma_meas = 0)",
            code="RATE",
            context={"gamma_meas": budget.gamma_meas, "eta_d": budget.eta_d},
        )


def cold_damping_occupation(gamma_eff: float, budget: RateBudget) -> float:
    """
    Occupation under ideal cold damping: Γ_tot/γ_eff + γ_eff/(16Γ_meas) − ½.

    Raises:
        InvalidParameterError: If gamma_eff <= 0 or the budget has no measurement rate
    """
    if not gamma_eff > 0:
        raise InvalidParameterError(
            "gamma_eff must be positive", code="GAMMA", context={"gamma_eff": gamma_eff}
        )
    _require_measurement(budget)
    return budget.gamma_tot / gamma_eff + gamma_eff / (16.0 * budget.gamma_meas) - 0.5


def optimal_damping(budget: RateBudget) -> float:
    """Linewidth γ* = 4√(Γ_tot Γ_meas) minimizing the cold-damping occupation."""
    _require_measurement(budget)
    return 4.0 * math.sqrt(budget.gamma_tot * budget.gamma_meas)


def minimum_occupation(budget: RateBudget) -> float:
    """Cold-damping minimum (1/√η_meas − 1)/2."""
    return conditional_occupation(budget.eta_meas)


def conditional_occupation(eta_meas: float) -> float:
    """Occupation of the conditional state, (1/√η_meas − 1)/2."""
    if not 0 < eta_meas <= 1:
        raise InvalidParameterError(
            "eta_meas must lie in (0, 1]", code="EFFICIENCY", context={"eta_meas": eta_meas}
        )
    return (1.0 / math.sqrt(eta_meas) - 1.0) / 2.0


def sideband_area_ratio(n_bar: float) -> float:
    """Stokes/anti-Stokes area ratio 1 + 1/n̄."""
    return 1.0 + 1.0 / n_bar


def occupation_from_ratio(ratio: float) -> float:
    """
    Invert the sideband asymmetry: n̄ = 1/(ratio − 1).

    Returns `math.inf` for a ratio of exactly one; ratios below one give a
    negative occupation, which callers flag.
    """
    if ratio == 1.0:
        return math.inf
    return 1.0 / (ratio - 1.0)


def ground_state_probability(n_bar: float) -> float:
    """Ground-state population 1/(1 + n̄) of a thermal state."""
    return 1.0 / (1.0 + n_bar)


def state_purity(n_bar: float) -> float:
    """Purity Tr ρ² = 1/(2n̄ + 1) of a thermal state."""
    return 1.0 / (2.0 * n_bar + 1.0)


# ============================================================
# Conventions and units
# ============================================================


def convert_convention(s: Spectrum, to: SpectralConvention) -> Spectrum:
    """
    Remap a spectrum to another density convention.

    S̃(f) = 4π·S̄(2πf); grids map as f = Ω/2π. Per-bin errors follow the values.
    """
    if s.convention is to:
        return s
    if to is SpectralConvention.SINGLE_SIDED_HERTZ:
        grid, factor = s.grid / TWO_PI, 2.0 * TWO_PI
    else:
        grid, factor = s.grid * TWO_PI, 1.0 / (2.0 * TWO_PI)
    return replace(
        s,
        grid=grid,
        values=s.values * factor,
        sigma=None if s.sigma is None else s.sigma * factor,
        convention=to,
    )


@dataclass(frozen=True)
class NormalizedUnits:
    """
    Exact map between SI and oscillator-normalized units.

    Positions in units of z_zpf, frequencies and rates in units of Ω_z,
    times in units of 1/Ω_z and densities in z_zpf²/Ω_z.
    """

    params: OscillatorParams

    def position(self, z: ArrayLike) -> FloatArray:
        return np.asarray(z, dtype=float) / self.params.z_zpf

    def frequency(self, omega: ArrayLike) -> FloatArray:
        return np.asarray(omega, dtype=float) / self.params.omega_z

    def time(self, t: ArrayLike) -> FloatArray:
        return np.asarray(t, dtype=float) * self.params.omega_z

    def density(self, s: ArrayLike) -> FloatArray:
        return np.asarray(s, dtype=float) * self.params.omega_z / self.params.z_zpf**2

    def to_si_frequency(self, x: ArrayLike) -> FloatArray:
        return np.asarray(x, dtype=float) * self.params.omega_z

    def to_si_density(self, s: ArrayLike) -> FloatArray:
        return np.asarray(s, dtype=float) * self.params.z_zpf**2 / self.params.omega_z

    def spectrum(self, s: Spectrum) -> Spectrum:
        """Normalize a two-sided angular displacement spectrum."""
        return replace(
            s,
            grid=self.frequency(s.grid),
            values=self.density(s.values),
            sigma=None if s.sigma is None else self.density(s.sigma),
            metadata={**s.metadata, "normalized": True},
        )
