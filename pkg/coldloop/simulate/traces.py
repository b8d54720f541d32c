"""
Uniformly sampled detector and position records.

Usage:
    from coldloop.simulate.traces import TimeTrace, TraceLabel

    trace = TimeTrace(sample_rate=977e3, samples=z, label=TraceLabel.Z, units="m")
    segments = trace.segment(4096)
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import StrEnum
from typing import Any

import numpy as np
from numpy.typing import NDArray

from ..exceptions import InvalidParameterError


class TraceLabel(StrEnum):
    """What a trace records."""

    Z = "z"
    I_HOM = "i_hom"
    I_DC = "i_dc"
    I_R = "i_r"
    I_B = "i_b"
    I_CAR = "i_car"
    CUSTOM = "custom"


@dataclass(frozen=True, eq=False)
class TimeTrace:
    """
    Uniformly sampled real or complex record.

    Attributes:
        sample_rate: Samples per second (Hz)
        samples: 1-D real or complex array, nonempty
        start_time: Time of the first sample (s)
        label: Record kind
        units: Free-text units of the samples
        metadata: Provenance (seed, config hash, ...)
    """

    sample_rate: float
    samples: NDArray[Any]
    start_time: float = 0.0
    label: TraceLabel = TraceLabel.CUSTOM
    units: str = ""
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        samples = np.asarray(self.samples)
        if not self.sample_rate > 0:
            raise InvalidParameterError(
                "sample_rate must be positive", code="TRACE", context={"sample_rate": self.sample_rate}
            )
        if samples.ndim != 1 or samples.size == 0:
            raise InvalidParameterError("trace must be a nonempty 1-D array", code="TRACE")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "label", TraceLabel(self.label))

    def __len__(self) -> int:
        return int(self.samples.size)

    @property
    def dt(self) -> float:
        return 1.0 / self.sample_rate

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    @property
    def is_complex(self) -> bool:
        return bool(np.iscomplexobj(self.samples))

    def times(self) -> NDArray[np.float64]:
        return self.start_time + np.arange(self.samples.size) / self.sample_rate

    def with_samples(self, samples: NDArray[Any], **changes: Any) -> TimeTrace:
        """Copy with new samples (and optionally other fields)."""
        return replace(self, samples=samples, **changes)

    def slice_samples(self, start: int, stop: int) -> TimeTrace:
        """Sub-record [start, stop) in sample indices, keeping absolute time."""
        return replace(
            self,
            samples=self.samples[start:stop],
            start_time=self.start_time + start / self.sample_rate,
        )

    def segment(self, n_per_segment: int) -> list[TimeTrace]:
        """Cut into contiguous, equal-length segments; the remainder is dropped."""
        if n_per_segment <= 0:
            raise InvalidParameterError("segment length must be positive", code="TRACE")
        count = self.samples.size // n_per_segment
        return [self.slice_samples(k * n_per_segment, (k + 1) * n_per_segment) for k in range(count)]


def segment_trace(trace: TimeTrace, n_per_segment: int) -> list[TimeTrace]:
    """Contiguous segmentation of a record into `n_per_segment`-sample pieces."""
    return trace.segment(n_per_segment)
