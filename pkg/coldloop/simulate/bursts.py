"""
Periodic burst contamination with an aligned baseband witness.

Models a mechanical disturbance that recurs at a fixed phase in every period
(a cryocooler stroke, a pump cycle) and shows up both in the detector record
and in a slow witness channel used later to gate it out.

Usage:
    from coldloop.simulate import BurstSpec, inject_bursts

    burst = BurstSpec(duration=0.2, amplitude=1e-9, frequency_hz=60e3)
    contaminated = inject_bursts(trace, period=1.0, burst=burst, seed=3)
    segments = postselect([contaminated.trace], contaminated.i_dc, window=0.3, delay_after_burst=0.3)
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import StrEnum

import numpy as np

from ..constants import TWO_PI
from ..exceptions import InvalidParameterError
from ..model import FloatArray
from .traces import TimeTrace, TraceLabel

logger: logging.Logger = logging.getLogger(__name__)

WITNESS_NOISE = 1e-3


class BurstShape(StrEnum):
    DECAYING_SINE = "decaying_sine"
    RECTANGULAR = "rectangular"


@dataclass(frozen=True)
class BurstSpec:
    """
    One burst transient.

    Attributes:
        duration: Length of each burst (s)
        amplitude: Peak amplitude in the units of the contaminated trace
        shape: Decaying sinusoid (default) or rectangular step
        frequency_hz: Carrier of the decaying sinusoid; None rings at an
            eighth of the contaminated trace's sample rate
        offset: Start of the burst within each period (s)
    """

    duration: float
    amplitude: float
    shape: BurstShape = BurstShape.DECAYING_SINE
    frequency_hz: float | None = None
    offset: float = 0.0

    def __post_init__(self) -> None:
        if not self.duration > 0 or self.offset < 0:
            raise InvalidParameterError(
                "burst duration must be positive and offset nonnegative",
                code="BURST",
                context={"duration": self.duration, "offset": self.offset},
            )
        object.__setattr__(self, "shape", BurstShape(self.shape))
        if self.shape is BurstShape.DECAYING_SINE and self.frequency_hz is not None and not self.frequency_hz > 0:
            raise InvalidParameterError(
                "decaying-sine burst needs a positive frequency_hz",
                code="BURST",
                context={"frequency_hz": self.frequency_hz},
            )

    def carrier_hz(self, sample_rate: float) -> float:
        """
        Ringing frequency used on a trace sampled at `sample_rate`.

        Raises:
            InvalidParameterError: If the carrier is at or above Nyquist
        """
        freq = self.frequency_hz if self.frequency_hz is not None else sample_rate / 8.0
        if self.shape is BurstShape.DECAYING_SINE and freq >= sample_rate / 2:
            raise InvalidParameterError(
                "burst frequency at or above Nyquist",
                code="BURST",
                context={"frequency_hz": freq, "sample_rate": sample_rate},
            )
        return freq

    def envelope(self, t: FloatArray) -> FloatArray:
        """Unit-peak envelope at times `t` since burst onset."""
        inside = (t >= 0) & (t < self.duration)
        if self.shape is BurstShape.RECTANGULAR:
            return np.where(inside, 1.0, 0.0)
        return np.where(inside, np.exp(-5.0 * t / self.duration), 0.0)

    def waveform(self, t: FloatArray, sample_rate: float) -> FloatArray:
        if self.shape is BurstShape.RECTANGULAR:
            return self.amplitude * self.envelope(t)
        return self.amplitude * self.envelope(t) * np.sin(TWO_PI * self.carrier_hz(sample_rate) * t)


@dataclass(frozen=True)
class ContaminatedRecord:
    trace: TimeTrace
    i_dc: TimeTrace
    onsets: tuple[float, ...]


def inject_bursts(trace: TimeTrace, period: float, burst: BurstSpec, seed: int = 0) -> ContaminatedRecord:
    """
    Add one burst per whole period to `trace` and emit the aligned witness.

    The witness is the unit-peak burst envelope plus white noise of standard
    deviation 1e−3; it is all noise when `burst.amplitude` is zero.
    """
    if not period > burst.offset + burst.duration:
        raise InvalidParameterError(
            "period must exceed burst offset plus duration",
            code="BURST",
            context={"period": period, "duration": burst.duration, "offset": burst.offset},
        )
    count = math.floor(trace.duration / period + 1e-12)
    t = np.arange(len(trace)) / trace.sample_rate
    added = np.zeros(len(trace))
    envelope = np.zeros(len(trace))
    onsets = tuple(k * period + burst.offset for k in range(count))
    for onset in onsets:
        local = t - onset
        added += burst.waveform(local, trace.sample_rate)
        envelope += burst.envelope(local)

    rng = np.random.default_rng(seed)
    visible = 1.0 if burst.amplitude != 0 else 0.0
    witness = visible * envelope + WITNESS_NOISE * rng.standard_normal(len(trace))
    logger.info("Bursts injected", extra={"bursts": count, "period": period, "amplitude": burst.amplitude})
    return ContaminatedRecord(
        trace=trace.with_samples(trace.samples + added),
        i_dc=TimeTrace(
            trace.sample_rate,
            witness,
            start_time=trace.start_time,
            label=TraceLabel.I_DC,
            metadata={"seed": seed},
        ),
        onsets=tuple(trace.start_time + o for o in onsets),
    )
