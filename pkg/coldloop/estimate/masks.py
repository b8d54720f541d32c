"""
Frequency exclusion masks for spectral fits.

Usage:
    from coldloop.estimate import FrequencyMask

    mask = FrequencyMask.default()
    keep = mask.keep(spectrum.grid)
    clean = mask.apply(spectrum)
"""

from __future__ import annotations

from collections.abc import Iterable
from dataclasses import dataclass
from typing import Any

import numpy as np
from numpy.typing import ArrayLike, NDArray

from ..constants import DEFAULT_MASK_HALF_WIDTH_HZ, DEFAULT_MASK_LINES_HZ, TWO_PI
from ..exceptions import InvalidParameterError
from ..model import Spectrum


@dataclass(frozen=True)
class FrequencyMask:
    """
    Sorted, disjoint excluded intervals in Hz.

    A bin at angular frequency Ω is excluded when |Ω|/2π lies in any interval,
    so a mask acts symmetrically on two-sided grids.
    """

    intervals: tuple[tuple[float, float], ...] = ()

    def __post_init__(self) -> None:
        merged = _merge(self.intervals)
        object.__setattr__(self, "intervals", merged)

    @classmethod
    def default(cls) -> FrequencyMask:
        """Spurious lines at 66.3, 73.5 and 90 kHz, ±100 Hz each."""
        return cls.around(DEFAULT_MASK_LINES_HZ, DEFAULT_MASK_HALF_WIDTH_HZ)

    @classmethod
    def around(cls, centers_hz: Iterable[float], half_width_hz: float) -> FrequencyMask:
        return cls(tuple((c - half_width_hz, c + half_width_hz) for c in centers_hz))

    @classmethod
    def empty(cls) -> FrequencyMask:
        return cls(())

    def union(self, other: FrequencyMask) -> FrequencyMask:
        return FrequencyMask(self.intervals + other.intervals)

    def keep(self, grid: ArrayLike) -> NDArray[np.bool_]:
        """Boolean array, True for bins outside every excluded interval (grid in rad/s)."""
        f = np.abs(np.asarray(grid, dtype=float)) / TWO_PI
        keep = np.ones(f.shape, dtype=bool)
        for low, high in self.intervals:
            keep &= ~((f >= low) & (f <= high))
        return keep

    def apply(self, spectrum: Spectrum) -> Spectrum:
        """Drop masked bins; applying twice is the same as applying once."""
        return spectrum.select(self.keep(spectrum.grid))

    def to_dict(self) -> dict[str, Any]:
        return {"intervals_hz": [list(i) for i in self.intervals]}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> FrequencyMask:
        return cls(tuple((float(lo), float(hi)) for lo, hi in data.get("intervals_hz", [])))


def _merge(intervals: Iterable[tuple[float, float]]) -> tuple[tuple[float, float], ...]:
    ordered = sorted((float(lo), float(hi)) for lo, hi in intervals)
    merged: list[tuple[float, float]] = []
    for low, high in ordered:
        if not low <= high:
            raise InvalidParameterError("mask interval must have low <= high", code="MASK", context={"interval": (low, high)})
        if merged and low <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(merged[-1][1], high))
        else:
            merged.append((low, high))
    return tuple(merged)
