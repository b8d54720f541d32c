"""
Burst-gated segmentation of detector records.

Bursts are found on a slow witness channel: its magnitude is smoothed, and
rising crossings of median + k·MAD mark burst onsets. Fixed-length windows
placed a fixed delay after every onset, and ending before the next one, are
cut identically from every record.

Usage:
    from coldloop.estimate import postselect

    (hom_segments,) = postselect([i_hom], witness, window=0.3, delay_after_burst=0.35)
    s_hom = estimate_psd(hom_segments)
"""

from __future__ import annotations

import logging
from collections.abc import Sequence

import numpy as np
from numpy.typing import NDArray
from scipy.ndimage import uniform_filter1d

from ..exceptions import SegmentationError
from ..simulate.traces import TimeTrace
from .spectra import MAD_TO_SIGMA

logger: logging.Logger = logging.getLogger(__name__)


def detect_bursts(
    witness: TimeTrace,
    threshold_k: float = 8.0,
    smoothing_s: float = 1e-3,
    holdoff_s: float = 10e-3,
) -> tuple[NDArray[np.int64], float]:
    """
    Sample indices of burst onsets on the witness, and the threshold used.

    A crossing counts only if the smoothed magnitude stayed below threshold
    for the preceding `holdoff_s`.
    """
    width = max(int(round(smoothing_s * witness.sample_rate)), 1)
    smoothed = uniform_filter1d(np.abs(witness.samples).astype(float), size=width, mode="nearest")
    median = float(np.median(smoothed))
    mad = float(np.median(np.abs(smoothed - median)))
    threshold = median + threshold_k * MAD_TO_SIGMA * mad
    above = smoothed > threshold
    rising = np.flatnonzero(above[1:] & ~above[:-1]) + 1
    if above[0]:
        rising = np.concatenate([[0], rising])
    holdoff = max(int(round(holdoff_s * witness.sample_rate)), 1)
    above_idx = np.flatnonzero(above)
    onsets: list[int] = []
    for r in rising:
        prior = above_idx[above_idx < r]
        if prior.size == 0 or r - int(prior[-1]) > holdoff:
            onsets.append(int(r))
    return np.asarray(onsets, dtype=np.int64), threshold


def postselect(
    traces: Sequence[TimeTrace],
    witness_dc: TimeTrace,
    window: float,
    delay_after_burst: float,
    threshold_k: float = 8.0,
) -> list[list[TimeTrace]]:
    """
    Cut burst-free windows from every trace.

    Returns one list of segments per input trace, in input order. Each window
    starts `delay_after_burst` after an onset and must end before the next
    onset, so n bursts give n − 1 windows. Without bursts the whole record is
    segmented into consecutive windows.

    Raises:
        SegmentationError: If the witness does not cover the traces, or the
            window does not fit between consecutive bursts
    """
    if not window > 0 or delay_after_burst < 0:
        raise SegmentationError(
            "window must be positive and delay nonnegative",
            code="WINDOW",
            context={"window": window, "delay_after_burst": delay_after_burst},
        )
    fs = witness_dc.sample_rate
    for trace in traces:
        if trace.sample_rate != fs or len(trace) > len(witness_dc) or abs(trace.start_time - witness_dc.start_time) > 0.5 / fs:
            raise SegmentationError(
                "witness must cover the traces at the same sample rate",
                code="WITNESS_COVERAGE",
                context={"trace_samples": len(trace), "witness_samples": len(witness_dc)},
            )

    n_window = int(round(window * fs))
    onsets, threshold = detect_bursts(witness_dc, threshold_k=threshold_k)
    if onsets.size == 0:
        logger.warning("No bursts found on witness; segmenting whole record", extra={"threshold": threshold})
        return [trace.segment(n_window) for trace in traces]

    n_delay = int(round(delay_after_burst * fs))
    gaps = np.diff(onsets)
    if gaps.size and n_delay + n_window > int(gaps.min()):
        raise SegmentationError(
            "window longer than inter-burst gap",
            code="WINDOW",
            context={"window": window, "delay_after_burst": delay_after_burst, "min_gap_s": float(gaps.min() / fs)},
        )

    starts = [int(onset) + n_delay for onset, nxt in zip(onsets[:-1], onsets[1:], strict=True) if onset + n_delay + n_window <= nxt]
    shortest = min(len(t) for t in traces) if traces else 0
    starts = [s for s in starts if s + n_window <= shortest]
    logger.info(
        "Postselection finished",
        extra={"bursts": int(onsets.size), "windows": len(starts), "threshold": threshold},
    )
    return [[trace.slice_samples(s, s + n_window) for s in starts] for trace in traces]
