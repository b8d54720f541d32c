"""Synthetic data: closed-loop simulation, spectral synthesis and burst injection."""

from .bursts import BurstShape, BurstSpec, ContaminatedRecord, inject_bursts
from .closed_loop import ForceTone, SimConfig, SimResult, simulate_closed_loop
from .heterodyne import HetSynthConfig, HeterodyneRecords, HetTone, synthesize_heterodyne, synthesize_homodyne
from .traces import TimeTrace, TraceLabel, segment_trace

__all__ = [
    "BurstShape",
    "BurstSpec",
    "ContaminatedRecord",
    "ForceTone",
    "HetSynthConfig",
    "HetTone",
    "HeterodyneRecords",
    "SimConfig",
    "SimResult",
    "TimeTrace",
    "TraceLabel",
    "inject_bursts",
    "segment_trace",
    "simulate_closed_loop",
    "synthesize_heterodyne",
    "synthesize_homodyne",
]
