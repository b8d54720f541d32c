"""
pytest fixtures for coldloop tests.

Provides reusable test fixtures for:
- The levitated-particle oscillator and its rate budget
- A slow toy oscillator cheap enough for time-domain simulation
- Feedback chains (standard and delay-only)
- Small experiment configurations for harness and CLI tests
"""

import math

import pytest

from coldloop.constants import hz_to_rad
from coldloop.filters import FilterChain
from coldloop.model import OscillatorParams, budget_from_rates, optimal_damping

TOY_OMEGA_Z_HZ = 1e3
TOY_SAMPLE_RATE = 40e3


@pytest.fixture
def params():
    """Oscillator at 77.6 kHz with 21.9 Hz residual damping."""
    return OscillatorParams.from_hz(mass_kg=1e-18, omega_z_hz=77.6e3, gamma_m_hz=21.9)


@pytest.fixture
def budget():
    """Γ_meas/2π = 1.33 kHz, Γ_tot/2π = 5.5 kHz, perfect detection."""
    return budget_from_rates(gamma_meas=hz_to_rad(1.33e3), gamma_tot=hz_to_rad(5.5e3))


@pytest.fixture
def gamma_star(budget):
    return optimal_damping(budget)


@pytest.fixture
def standard_chain(params):
    return FilterChain.standard(params)


@pytest.fixture
def toy_params():
    """Slow oscillator for closed-loop simulations."""
    return OscillatorParams.from_hz(mass_kg=1e-18, omega_z_hz=TOY_OMEGA_Z_HZ, gamma_m_hz=0.5)


@pytest.fixture
def toy_budget():
    """γ* = 2π·40 Hz, well below Ω_z."""
    return budget_from_rates(gamma_meas=hz_to_rad(5.0), gamma_tot=hz_to_rad(20.0))


@pytest.fixture
def toy_chain(toy_params):
    """Quarter-period delay at the toy resonance."""
    return FilterChain.delay_only(math.pi / 2 / toy_params.omega_z)


@pytest.fixture
def small_tree():
    """
    Override tree for a fast three-point sweep.

    Short in-loop records and no heterodyne stage keep harness
    tests within a few seconds.
    """
    return {
        "seeds": {"base": 7},
        "homodyne": {"duration_s": 0.25, "reference_duration_s": 2.0},
        "heterodyne": {"enabled": False},
        "sweep": {"gamma_fb_hz": [2.0e3, 10.8e3, 40.0e3], "anchor_index": 1},
    }
