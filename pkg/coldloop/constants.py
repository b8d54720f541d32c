"""
Shared physical constants and unit helpers.

Usage:
    from coldloop.constants import HBAR, hz_to_rad, rad_to_hz

    omega_z = hz_to_rad(77.6e3)
"""

from __future__ import annotations

import math
from typing import overload

import numpy as np
from numpy.typing import NDArray

# CODATA 2018, exact since the SI redefinition
HBAR: float = 1.054571817e-34

TWO_PI: float = 2.0 * math.pi

# Spectral lines excluded from every fit unless configured otherwise (Hz)
DEFAULT_MASK_LINES_HZ: tuple[float, ...] = (66.3e3, 73.5e3, 90.0e3)
DEFAULT_MASK_HALF_WIDTH_HZ: float = 100.0

# Sampler of the acquisition hardware the defaults mirror
DEFAULT_SAMPLE_RATE_HZ: float = 977e3


@overload
def hz_to_rad(value: float) -> float: ...


@overload
def hz_to_rad(value: NDArray[np.float64]) -> NDArray[np.float64]: ...


def hz_to_rad(value: float | NDArray[np.float64]) -> float | NDArray[np.float64]:
    """Convert an ordinary frequency or rate in Hz to rad/s."""
    return value * TWO_PI


@overload
def rad_to_hz(value: float) -> float: ...


@overload
def rad_to_hz(value: NDArray[np.float64]) -> NDArray[np.float64]: ...


def rad_to_hz(value: float | NDArray[np.float64]) -> float | NDArray[np.float64]:
    """Convert an angular frequency or rate in rad/s to Hz."""
    return value / TWO_PI
