"""
Tests for the feedback electronics.

Tests for:
- Filter stage responses and config round-trips
- The standard cooling chain and its discrete realisation
- Closed-loop susceptibility and effective damping
- Nyquist stability verdicts
"""

import math

import numpy as np
import pytest

from coldloop.constants import TWO_PI, hz_to_rad
from coldloop.exceptions import InvalidParameterError, ResolutionError
from coldloop.filters import (
    FilterChain,
    FilterStage,
    FrequencyResponse,
    StageKind,
    ViscousDamping,
    chain_response,
    closed_loop_susceptibility,
    delay_filter_response,
    effective_linewidth,
    loop_frequency_data,
    smallest_stable_delay,
    stability_check,
    stability_grid,
)
from coldloop.model import susceptibility

# ============================================================
# Stages
# ============================================================


class TestFilterStage:
    """Test individual stage responses."""

    def test_delay_phase(self):
        """A delay contributes phase -omega*tau (engineering convention)."""
        tau = 2e-6
        w = hz_to_rad(50e3)
        h = complex(FilterStage.delay(tau).response(np.array([w]))[0])
        assert abs(h) == pytest.approx(1.0)
        assert np.angle(h) == pytest.approx(-w * tau)

    def test_notch_nulls_center(self):
        h = FilterStage.notch(202e3, 5.0).response(np.array([hz_to_rad(202e3)]))
        assert abs(h[0]) == pytest.approx(0.0, abs=1e-12)

    def test_high_pass_corner(self):
        """First-order high-pass is 3 dB down with +45 degrees at its cutoff."""
        h = complex(FilterStage.high_pass(9e3).response(np.array([hz_to_rad(9e3)]))[0])
        assert abs(h) == pytest.approx(1 / math.sqrt(2))
        assert np.degrees(np.angle(h)) == pytest.approx(45.0)

    def test_invalid_stage_rejected(self):
        with pytest.raises(InvalidParameterError, match="cutoff"):
            FilterStage.high_pass(0.0)
        with pytest.raises(InvalidParameterError, match="delay"):
            FilterStage.delay(-1e-6)

    def test_from_dict_unknown_kind(self):
        with pytest.raises(InvalidParameterError, match="invalid filter stage"):
            FilterStage.from_dict({"kind": "comb"})

    def test_chain_dict_round_trip(self, standard_chain):
        rebuilt = FilterChain.from_dict(standard_chain.to_dict())
        assert rebuilt == standard_chain


# ============================================================
# Chains
# ============================================================


class TestFilterChain:
    """Test chain composition."""

    def test_standard_chain_layout(self, params, standard_chain):
        kinds = [st.kind for st in standard_chain.stages]
        assert kinds == [StageKind.HIGH_PASS, StageKind.NOTCH, StageKind.NOTCH, StageKind.DELAY]
        assert standard_chain.total_delay == pytest.approx(smallest_stable_delay(params))

    def test_smallest_stable_delay_quarter_period(self, params):
        """Omega_z * tau = pi/2 + 2 pi n."""
        assert params.omega_z * smallest_stable_delay(params) == pytest.approx(math.pi / 2)
        assert params.omega_z * smallest_stable_delay(params, 1) == pytest.approx(math.pi / 2 + TWO_PI)

    def test_standard_chain_phase_error_small(self, params, standard_chain):
        """High-pass and notches shift the resonant phase by only a few degrees."""
        h = complex(standard_chain.response(np.array([params.omega_z]))[0])
        error = np.degrees(np.angle(h)) + 90.0
        assert abs(error) < 5.0

    def test_overall_gain_scales_response(self, params):
        base = FilterChain.delay_only(1e-6)
        doubled = FilterChain(stages=base.stages, overall_gain=2.0)
        w = np.array([params.omega_z])
        assert doubled.response(w)[0] == pytest.approx(2.0 * base.response(w)[0])

    def test_with_delay_replaces_delay(self, standard_chain):
        shifted = standard_chain.with_delay(5e-6)
        assert shifted.total_delay == pytest.approx(5e-6)
        assert len(shifted.stages) == len(standard_chain.stages)

    def test_delay_only_matches_delay_filter(self, params):
        """conj of a delay-only chain reproduces the delay controller exactly."""
        tau = smallest_stable_delay(params)
        chain = FilterChain.delay_only(tau)
        w = np.linspace(0.5, 1.5, 7) * params.omega_z
        gamma_fb = hz_to_rad(10e3)
        np.testing.assert_allclose(
            chain.feedback_response(w, params, gamma_fb),
            delay_filter_response(w, params, gamma_fb, tau),
        )

    def test_discretized_chain_close_to_analytic(self, params, standard_chain):
        """Bilinear sections agree with the analytic chain near resonance."""
        fs = 977e3
        w = np.array([params.omega_z])
        analytic = complex(chain_response(w, standard_chain)[0])
        discrete = complex(chain_response(w, standard_chain, sample_rate=fs)[0])
        assert abs(discrete) == pytest.approx(abs(analytic), rel=0.05)
        assert np.angle(discrete / analytic) == pytest.approx(0.0, abs=0.15)

    def test_discretize_rounds_delay(self, params, standard_chain):
        realised = standard_chain.discretize(977e3)
        assert realised.delay_samples == round(standard_chain.total_delay * 977e3)
        assert abs(realised.delay_rounding_s) <= 0.5 / 977e3

    def test_discretize_rejects_stage_above_nyquist(self, standard_chain):
        """Notches above 200 kHz cannot be realised at 400 kHz sampling."""
        with pytest.raises(InvalidParameterError, match="Nyquist"):
            standard_chain.discretize(400e3)


class TestFrequencyResponse:
    """Test tabulated responses."""

    def test_nodes_reproduced_exactly(self, standard_chain, params):
        grid = np.linspace(0.5, 1.5, 101) * params.omega_z
        table = FrequencyResponse.from_chain(standard_chain, grid)
        np.testing.assert_array_equal(table.response(grid), chain_response(grid, standard_chain))

    def test_interpolation_between_nodes(self, standard_chain, params):
        grid = np.linspace(0.5, 1.5, 2001) * params.omega_z
        table = FrequencyResponse.from_chain(standard_chain, grid)
        query = np.array([params.omega_z * 1.00013])
        assert table.response(query)[0] == pytest.approx(chain_response(query, standard_chain)[0], rel=1e-4)

    def test_query_outside_grid_rejected(self, standard_chain, params):
        table = FrequencyResponse.from_chain(standard_chain, np.linspace(1.0, 2.0, 10) * params.omega_z)
        with pytest.raises(InvalidParameterError, match="outside its grid"):
            table.response(np.array([0.5 * params.omega_z]))


# ============================================================
# Closed loop
# ============================================================


class TestClosedLoop:
    """Test closed-loop susceptibility and effective damping."""

    def test_zero_gain_is_open_loop(self, params):
        w = np.linspace(0.9, 1.1, 5) * params.omega_z
        np.testing.assert_allclose(
            closed_loop_susceptibility(w, params, np.zeros(w.size)),
            susceptibility(w, params, params.gamma_m),
        )

    def test_viscous_feedback_adds_damping(self, params):
        """The ideal differentiator gives chi with gamma_m + gamma_fb."""
        gamma_fb = hz_to_rad(10e3)
        w = np.linspace(0.8, 1.2, 9) * params.omega_z
        h_fb = params.mass * params.omega_z * gamma_fb * np.conj(ViscousDamping(params.omega_z).response(w))
        np.testing.assert_allclose(
            closed_loop_susceptibility(w, params, h_fb),
            susceptibility(w, params, params.gamma_m + gamma_fb),
            rtol=1e-10,
        )

    def test_effective_linewidth_delay_only(self, params):
        """A quarter-period delay delivers the full gain as damping."""
        chain = FilterChain.delay_only(smallest_stable_delay(params))
        gamma_fb = hz_to_rad(10e3)
        assert effective_linewidth(params, chain, gamma_fb) == pytest.approx(params.gamma_m + gamma_fb)

    def test_effective_linewidth_standard_chain(self, params, standard_chain):
        gamma_fb = hz_to_rad(10e3)
        assert effective_linewidth(params, standard_chain, gamma_fb) == pytest.approx(
            params.gamma_m + gamma_fb, rel=0.05
        )


class TestStability:
    """Test the Nyquist verdict."""

    def test_standard_chain_stable_at_optimum(self, params, standard_chain, gamma_star):
        report = stability_check(params, standard_chain, stability_grid(params), gamma_fb=gamma_star)
        assert report.stable
        assert report.encirclements == 0

    def test_zero_gain_stable(self, params, standard_chain):
        assert stability_check(params, standard_chain, stability_grid(params), gamma_fb=0.0).stable

    def test_delay_only_anti_spring_unstable(self, params):
        """Above gamma_fb = omega_z the DC feedback overwhelms the spring."""
        chain = FilterChain.delay_only(smallest_stable_delay(params))
        report = stability_check(params, chain, stability_grid(params), gamma_fb=1.5 * params.omega_z)
        assert not report.stable
        assert report.encirclements != 0

    def test_wrong_sign_delay_unstable(self, params):
        """A three-quarter-period delay pumps the resonance instead of damping it."""
        chain = FilterChain.delay_only(3 * math.pi / 2 / params.omega_z)
        report = stability_check(params, chain, stability_grid(params), gamma_fb=hz_to_rad(1e3))
        assert not report.stable

    def test_short_grid_rejected(self, params, standard_chain):
        grid = np.linspace(0.5, 2.0, 100) * params.omega_z
        with pytest.raises(ResolutionError, match="stability grid"):
            stability_check(params, standard_chain, grid, gamma_fb=1.0)

    def test_margin_is_closest_approach(self, params, standard_chain, gamma_star):
        """The reported margin is the smallest |1 + G| over the checked grid."""
        grid = stability_grid(params)
        report = stability_check(params, standard_chain, grid, gamma_fb=gamma_star)
        loop = loop_frequency_data(params, standard_chain, grid, gamma_star)
        closest = float(np.min(np.abs(1.0 + np.asarray(loop.fresp).reshape(-1))))
        assert 0.98 * closest <= report.margin <= closest * (1 + 1e-6)
        assert grid[0] <= report.critical_omega <= grid[-1]

    def test_viscous_damping_never_approaches_critical_point(self, params, gamma_star):
        """Pure velocity feedback keeps |1 + G| >= 1 with no phase crossover."""
        report = stability_check(params, ViscousDamping(params.omega_z), stability_grid(params), gamma_fb=gamma_star)
        assert report.stable
        assert report.margin >= 1.0 - 1e-6
        assert report.gain_margin > 10.0

    def test_loop_data_closes_at_susceptibility_poles(self, params, standard_chain, gamma_star):
        """1 + G equals the ratio of open-loop to closed-loop susceptibility."""
        w = np.linspace(0.9, 1.1, 7) * params.omega_z
        loop = loop_frequency_data(params, standard_chain, w, gamma_star)
        h_fb = params.mass * params.omega_z * gamma_star * np.conj(standard_chain.response(w))
        ratio = susceptibility(w, params, params.gamma_m) / closed_loop_susceptibility(w, params, h_fb)
        np.testing.assert_allclose(np.conj(1.0 + np.asarray(loop.fresp).reshape(-1)), ratio, rtol=1e-9)
