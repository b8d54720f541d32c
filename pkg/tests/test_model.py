"""
Tests for the analytic physics layer.

Tests for:
- Parameter and budget validation
- Noise densities and the imprecision-backaction product
- Closed-form occupations at the operating point
- Sideband model helpers
- Spectral conventions and normalized units
"""

import math

import numpy as np
import pytest

from coldloop.constants import HBAR, TWO_PI, hz_to_rad, rad_to_hz
from coldloop.exceptions import InvalidParameterError, SingularityError
from coldloop.model import (
    NormalizedUnits,
    OscillatorParams,
    SpectralConvention,
    Spectrum,
    ThermometryMethod,
    ThermometryResult,
    budget_from_rates,
    cold_damping_occupation,
    conditional_occupation,
    convert_convention,
    force_psd_total,
    ground_state_probability,
    heterodyne_cross_psd,
    heterodyne_sideband_psd,
    imprecision_psd,
    minimal_background,
    minimum_occupation,
    occupation_from_ratio,
    optimal_damping,
    physical_scale,
    rates_from_budget,
    sideband_area_ratio,
    state_purity,
    susceptibility,
)

# ============================================================
# Parameters and budgets
# ============================================================


class TestOscillatorParams:
    """Test oscillator parameter validation."""

    def test_from_hz_converts_to_angular(self, params):
        """from_hz should store angular frequencies."""
        assert params.omega_z == pytest.approx(TWO_PI * 77.6e3)
        assert params.gamma_m == pytest.approx(TWO_PI * 21.9)

    def test_zero_point_amplitude(self, params):
        """z_zpf should equal sqrt(hbar / 2 m omega_z)."""
        expected = math.sqrt(HBAR / (2 * params.mass * params.omega_z))
        assert params.z_zpf == pytest.approx(expected)
        assert params.p_zpf == pytest.approx(params.mass * params.omega_z * expected)

    def test_nonpositive_mass_rejected(self):
        with pytest.raises(InvalidParameterError, match="mass"):
            OscillatorParams(mass=0.0, omega_z=1.0)

    def test_overdamped_rejected(self):
        """gamma_m >= omega_z is outside the model."""
        with pytest.raises(InvalidParameterError) as exc_info:
            OscillatorParams(mass=1e-18, omega_z=10.0, gamma_m=10.0)
        assert exc_info.value.code == "GAMMA_M"


class TestRateBudget:
    """Test rate bookkeeping."""

    def test_operating_point_efficiency(self, budget):
        """eta_meas should be 1.33 / 5.5."""
        assert budget.eta_meas == pytest.approx(1.33 / 5.5)
        assert budget.eta_meas == pytest.approx(0.2418, abs=1e-4)

    def test_budget_from_rates_splits_decoherence(self):
        """With eta_d = 0.5 the backaction rate doubles the measurement rate."""
        b = budget_from_rates(gamma_meas=1.0, gamma_tot=5.0, eta_d=0.5)
        assert b.gamma_qba == pytest.approx(2.0)
        assert b.gamma_exc == pytest.approx(3.0)
        assert b.gamma_meas == pytest.approx(1.0)

    def test_measurement_exceeding_total_rejected(self):
        with pytest.raises(InvalidParameterError, match="exceeds gamma_tot"):
            budget_from_rates(gamma_meas=2.0, gamma_tot=1.0)

    def test_zero_decoherence_rejected(self):
        with pytest.raises(InvalidParameterError, match="total decoherence"):
            rates_from_budget(0.0, 0.0, 1.0)

    def test_efficiency_out_of_range_rejected(self):
        with pytest.raises(InvalidParameterError, match="eta_d"):
            rates_from_budget(1.0, 1.0, 1.5)

    def test_cooperativity_infinite_without_excess(self):
        """No excess decoherence means infinite cooperativity, flagged."""
        b = rates_from_budget(1.0, 0.0, 1.0)
        assert b.c_q_infinite
        assert b.c_q == math.inf

    def test_cooperativity_finite(self):
        assert rates_from_budget(3.0, 1.0, 1.0).c_q == pytest.approx(3.0)


# ============================================================
# Noise densities
# ============================================================


class TestNoiseDensities:
    """Test susceptibility and noise densities."""

    def test_susceptibility_at_resonance(self, params):
        """|chi(omega_z)| = 1 / (m gamma omega_z), phase +90 degrees."""
        gamma = hz_to_rad(100.0)
        chi = complex(susceptibility(params.omega_z, params, gamma))
        assert abs(chi) == pytest.approx(1.0 / (params.mass * gamma * params.omega_z))
        assert chi.real == pytest.approx(0.0, abs=abs(chi) * 1e-9)
        assert chi.imag > 0

    def test_susceptibility_static_limit(self, params):
        chi = complex(susceptibility(0.0, params, params.gamma_m))
        assert chi.real == pytest.approx(1.0 / (params.mass * params.omega_z**2))

    def test_susceptibility_pole_raises(self, params):
        """An undamped oscillator evaluated on resonance has no finite response."""
        with pytest.raises(SingularityError) as exc_info:
            susceptibility(np.array([params.omega_z]), params, 0.0)
        assert exc_info.value.code == "POLE"

    def test_negative_damping_rejected(self, params):
        with pytest.raises(InvalidParameterError, match="gamma"):
            susceptibility(params.omega_z, params, -1.0)

    def test_imprecision_backaction_product(self, params, budget):
        """S_imp * S_FF = (hbar / 4 pi)^2 / eta_meas."""
        product = imprecision_psd(params, budget) * force_psd_total(params, budget)
        assert product == pytest.approx((HBAR / (4 * math.pi)) ** 2 / budget.eta_meas, rel=1e-12)

    def test_imprecision_requires_measurement(self, params):
        blind = rates_from_budget(gamma_qba=1.0, gamma_exc=1.0, eta_d=0.0)
        with pytest.raises(InvalidParameterError, match="measurement rate"):
            imprecision_psd(params, blind)


# ============================================================
# Closed-form occupations
# ============================================================


class TestOccupations:
    """Test closed-form occupation formulas."""

    def test_optimal_damping_value(self, budget):
        """gamma*/2pi = 4 sqrt(5.5 kHz * 1.33 kHz) = 10.82 kHz."""
        assert rad_to_hz(optimal_damping(budget)) == pytest.approx(10.818e3, rel=1e-3)

    def test_minimum_occupation_value(self, budget):
        assert minimum_occupation(budget) == pytest.approx(0.5168, abs=2e-4)

    def test_cold_damping_minimum_at_optimum(self, budget, gamma_star):
        """The cold-damping curve touches its minimum exactly at gamma*."""
        at_star = cold_damping_occupation(gamma_star, budget)
        assert at_star == pytest.approx(minimum_occupation(budget), abs=1e-9)
        assert cold_damping_occupation(0.5 * gamma_star, budget) > at_star
        assert cold_damping_occupation(2.0 * gamma_star, budget) > at_star

    def test_cold_damping_rejects_zero_linewidth(self, budget):
        with pytest.raises(InvalidParameterError, match="gamma_eff"):
            cold_damping_occupation(0.0, budget)

    def test_blind_detector_rejected(self):
        """With eta_d = 0 there is no measurement rate to damp against."""
        blind = rates_from_budget(gamma_qba=1.0, gamma_exc=1.0, eta_d=0.0)
        with pytest.raises(InvalidParameterError, match="no measurement rate"):
            cold_damping_occupation(1.0, blind)
        with pytest.raises(InvalidParameterError, match="no measurement rate"):
            optimal_damping(blind)

    def test_conditional_occupation(self):
        assert conditional_occupation(0.24) == pytest.approx(0.5206, abs=1e-4)
        assert conditional_occupation(1.0) == 0.0

    def test_conditional_occupation_domain(self):
        with pytest.raises(InvalidParameterError, match="eta_meas"):
            conditional_occupation(0.0)

    def test_ratio_inversion(self):
        """occupation_from_ratio inverts sideband_area_ratio."""
        assert occupation_from_ratio(sideband_area_ratio(0.66)) == pytest.approx(0.66)

    def test_ratio_of_one_is_infinite(self):
        assert occupation_from_ratio(1.0) == math.inf

    def test_ratio_below_one_is_negative(self):
        """Ratios below one give negative occupations, never clamped."""
        assert occupation_from_ratio(0.5) == pytest.approx(-2.0)

    def test_ground_state_and_purity(self):
        assert ground_state_probability(0.66) == pytest.approx(1 / 1.66)
        assert state_purity(0.5) == pytest.approx(0.5)


# ============================================================
# Heterodyne model
# ============================================================


class TestSidebandModel:
    """Test heterodyne sideband and cross densities."""

    def test_sideband_asymmetry_at_resonance(self, params):
        """Stokes/anti-Stokes peaks above background differ by (n+1)/n."""
        gamma = hz_to_rad(5e3)
        w = np.array([params.omega_z])
        stokes = heterodyne_sideband_psd(w, params, gamma, 0.66, "physical", 0.0, "stokes")
        anti = heterodyne_sideband_psd(w, params, gamma, 0.66, "physical", 0.0, "antistokes")
        assert stokes[0] / anti[0] == pytest.approx(sideband_area_ratio(0.66))

    def test_physical_scale_matches_default(self, params):
        gamma = hz_to_rad(5e3)
        w = np.array([params.omega_z])
        physical = heterodyne_sideband_psd(w, params, gamma, 1.0, "physical", 0.0, "stokes")
        explicit = heterodyne_sideband_psd(w, params, gamma, 1.0, physical_scale(params, gamma), 0.0, "stokes")
        assert physical[0] == pytest.approx(explicit[0])

    def test_negative_occupation_rejected(self, params):
        with pytest.raises(InvalidParameterError, match="nonnegative"):
            heterodyne_sideband_psd(params.omega_z, params, 1.0, -0.1, 1.0, 0.0, "stokes")

    def test_cross_psd_real_part_carries_occupation(self, params):
        """Re S_rb at resonance is R|chi|^2 (n + 1/2); Im vanishes there."""
        gamma = hz_to_rad(5e3)
        value = complex(heterodyne_cross_psd(np.array([params.omega_z]), params, gamma, 0.66, 1.0)[0])
        chi2 = abs(complex(susceptibility(params.omega_z, params, gamma))) ** 2
        assert value.real == pytest.approx(chi2 * 1.16)
        assert value.imag == pytest.approx(0.0, abs=chi2 * 1e-9)

    def test_minimal_background_value(self):
        assert minimal_background(0.66, 1.0) == pytest.approx(0.10317, abs=1e-5)

    def test_minimal_background_saturates_positivity(self):
        """With the minimal background the resonant 2x2 model is singular."""
        n, peak = 0.66, 3.0
        b = minimal_background(n, peak)
        det = (peak * (n + 1) + b) * (peak * n + b) - (peak * (n + 0.5)) ** 2
        assert det == pytest.approx(0.0, abs=1e-9)


# ============================================================
# Spectra and conventions
# ============================================================


class TestSpectrum:
    """Test the Spectrum container."""

    def test_negative_values_rejected(self):
        with pytest.raises(InvalidParameterError, match="nonnegative"):
            Spectrum(grid=np.array([1.0, 2.0]), values=np.array([1.0, -1.0]))

    def test_unsorted_grid_rejected(self):
        with pytest.raises(InvalidParameterError, match="strictly increasing"):
            Spectrum(grid=np.array([2.0, 1.0]), values=np.array([1.0, 1.0]))

    def test_positive_half_variance_doubles(self):
        """A two-sided density on a positive grid integrates both halves."""
        s = Spectrum(grid=np.linspace(0.0, 1.0, 11), values=np.ones(11))
        assert s.variance() == pytest.approx(2.0)

    def test_convention_conversion_preserves_variance(self):
        grid = np.linspace(1.0, 1e3, 501)
        s = Spectrum(grid=grid, values=1.0 / (1.0 + (grid / 100.0) ** 2))
        single = convert_convention(s, SpectralConvention.SINGLE_SIDED_HERTZ)
        assert single.convention is SpectralConvention.SINGLE_SIDED_HERTZ
        assert single.variance() == pytest.approx(s.variance(), rel=1e-12)
        back = convert_convention(single, SpectralConvention.TWO_SIDED_ANGULAR)
        np.testing.assert_allclose(back.values, s.values)


class TestNormalizedUnits:
    """Test the SI <-> oscillator-unit map."""

    def test_resonance_maps_to_one(self, params):
        units = NormalizedUnits(params)
        assert units.frequency(params.omega_z) == pytest.approx(1.0)
        assert units.position(params.z_zpf) == pytest.approx(1.0)
        assert units.to_si_frequency(units.frequency(123.0)) == pytest.approx(123.0)

    def test_normalized_variance_in_zero_point_units(self, params):
        """Variance of a normalized spectrum is measured in z_zpf^2."""
        units = NormalizedUnits(params)
        grid = np.linspace(0.5, 1.5, 101) * params.omega_z
        s = Spectrum(grid=grid, values=np.full(grid.size, params.z_zpf**2 / params.omega_z))
        normalized = units.spectrum(s)
        assert normalized.variance() == pytest.approx(s.variance() / params.z_zpf**2)
        assert normalized.metadata["normalized"] is True


class TestThermometryResult:
    """Test result flags and validity."""

    def test_valid_result(self):
        r = ThermometryResult(n_bar=0.5, sigma=0.1, method=ThermometryMethod.ASYMMETRY)
        assert r.is_valid
        assert not r.below_zero

    def test_negative_result_kept(self):
        r = ThermometryResult(n_bar=-0.2, sigma=0.1, method=ThermometryMethod.ASYMMETRY, flags=("below_zero",))
        assert r.below_zero
        assert not r.is_valid
        assert r.n_bar == -0.2
