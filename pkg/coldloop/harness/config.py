"""
Experiment configuration.

A single JSON document whose physical keys carry unit suffixes. Values are
resolved as built-in defaults <- file <- explicit overrides, and every run is
fully determined by the resolved tree and its seed.

Usage:
    from coldloop.harness.config import load_config

    config = load_config("sweep.json", overrides={"seeds.base": 7, "output_dir": "out"})
    print(config.config_hash, config.gamma_fb_values())
"""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Literal, TypedDict

import numpy as np

from ..constants import TWO_PI, hz_to_rad
from ..estimate.masks import FrequencyMask
from ..exceptions import ColdLoopError, ConfigurationError
from ..filters import FilterChain
from ..model import OscillatorParams, RateBudget, budget_from_rates, optimal_damping

logger: logging.Logger = logging.getLogger(__name__)


# ============================================================
# Schema of the JSON tree
# ============================================================


class OscillatorSection(TypedDict):
    mass_kg: float
    omega_z_hz: float
    gamma_m_hz: float


class BudgetSection(TypedDict):
    gamma_meas_hz: float
    gamma_tot_hz: float
    eta_d: float


class ChainSection(TypedDict):
    preset: Literal["standard", "delay_only", "custom"]
    delay_order: int
    overall_gain: float
    stages: list[dict[str, Any]]


class SweepSection(TypedDict):
    gamma_fb_hz: list[float]
    labels: list[str]
    points: int
    low_factor: float
    high_factor: float
    anchor_index: int
    anchor_n: float | None
    anchor_n_sigma: float


DEFAULTS: dict[str, Any] = {
    "oscillator": {"mass_kg": 1e-18, "omega_z_hz": 77.6e3, "gamma_m_hz": 21.9},
    "budget": {"gamma_meas_hz": 1.33e3, "gamma_tot_hz": 5.5e3, "eta_d": 1.0},
    "chain": {"preset": "standard", "delay_order": 0, "overall_gain": 1.0, "stages": []},
    "sweep": {
        "gamma_fb_hz": [],
        "labels": [],
        "points": 8,
        "low_factor": 1.0 / 30.0,
        "high_factor": 10.0,
        "anchor_index": 0,
        "anchor_n": None,
        "anchor_n_sigma": 0.0,
    },
    "homodyne": {
        "source": "synthesize",
        "sample_rate_hz": 977e3,
        "duration_s": 2.0,
        "segment_samples": 8192,
        "integrator": "euler",
        "reference_duration_s": 10.0,
        "reference_segment_samples": 262144,
        "block_size": 1048576,
    },
    "heterodyne": {
        "enabled": True,
        "n_bar": 0.66,
        "sample_rate_hz": 400e3,
        "duration_s": 10.0,
        "segment_samples": 4000,
        "background_factor": 2.0,
        "tone_freq_hz": 90e3,
        "tone_level": 50.0,
        "lo_phase_drift_rad_s": 0.05,
        "lo_phase_walk_rad_rts": 0.0,
        "block_size": 65536,
        "double_lo": False,
    },
    "estimation": {
        "mask_lines_hz": [66.3e3, 73.5e3, 90e3],
        "mask_half_width_hz": 100.0,
        "fit_band_factor": 0.5,
        "energy_band_hz": None,
    },
    "seeds": {"base": 1},
    "output_dir": "coldloop-out",
    "threads": 1,
}

# Sections whose values may be free-form lists or null.
_OPEN_KEYS = {"chain.stages", "sweep.gamma_fb_hz", "sweep.labels", "estimation.mask_lines_hz", "estimation.energy_band_hz", "sweep.anchor_n"}


# ============================================================
# Resolved settings
# ============================================================


@dataclass(frozen=True)
class HomodyneSettings:
    source: Literal["synthesize", "simulate"]
    sample_rate_hz: float
    duration_s: float
    segment_samples: int
    integrator: Literal["euler", "zoh"]
    reference_duration_s: float
    reference_segment_samples: int
    block_size: int


@dataclass(frozen=True)
class HeterodyneSettings:
    enabled: bool
    n_bar: float
    sample_rate_hz: float
    duration_s: float
    segment_samples: int
    background_factor: float
    tone_freq_hz: float
    tone_level: float
    lo_phase_drift_rad_s: float
    lo_phase_walk_rad_rts: float
    block_size: int
    double_lo: bool


@dataclass(frozen=True)
class SweepSettings:
    gamma_fb: tuple[float, ...]
    labels: tuple[str, ...]
    anchor_index: int
    anchor_n: float | None
    anchor_n_sigma: float


@dataclass(frozen=True)
class EstimationSettings:
    mask: FrequencyMask
    fit_band_factor: float
    energy_band: tuple[float, float] | None


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment: physics, electronics, sweep, data generation and analysis."""

    params: OscillatorParams
    budget: RateBudget
    chain: FilterChain
    sweep: SweepSettings
    homodyne: HomodyneSettings
    heterodyne: HeterodyneSettings
    estimation: EstimationSettings
    seed: int
    output_dir: Path
    threads: int
    tree: dict[str, Any] = field(repr=False, default_factory=dict)

    @property
    def config_hash(self) -> str:
        return config_hash(self.tree)

    def gamma_fb_values(self) -> tuple[float, ...]:
        return self.sweep.gamma_fb

    def fit_band(self) -> tuple[float, float]:
        factor = self.estimation.fit_band_factor
        return ((1.0 - factor) * self.params.omega_z, (1.0 + factor) * self.params.omega_z)


# ============================================================
# Loading
# ============================================================


def config_hash(tree: dict[str, Any]) -> str:
    """SHA-256 of the canonical JSON form of a config tree."""
    canonical = json.dumps(tree, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _merge(base: dict[str, Any], update: dict[str, Any], prefix: str = "") -> dict[str, Any]:
    out = copy.deepcopy(base)
    for key, value in update.items():
        path = f"{prefix}{key}"
        if key not in out:
            raise ConfigurationError(f"unknown config key {path!r}", code="UNKNOWN_KEY", context={"key": path})
        if isinstance(out[key], dict) and path not in _OPEN_KEYS:
            if not isinstance(value, dict):
                raise ConfigurationError(f"{path} must be an object", code="TYPE", context={"key": path})
            out[key] = _merge(out[key], value, prefix=f"{path}.")
        else:
            out[key] = copy.deepcopy(value)
    return out


def _apply_overrides(tree: dict[str, Any], overrides: dict[str, Any]) -> dict[str, Any]:
    nested: dict[str, Any] = {}
    for dotted, value in overrides.items():
        node = nested
        parts = dotted.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    return _merge(tree, nested)


def _number(tree: dict[str, Any], path: str, *, positive: bool = False, minimum: float | None = None) -> float:
    node: Any = tree
    for part in path.split("."):
        node = node[part]
    if isinstance(node, bool) or not isinstance(node, int | float) or not math.isfinite(node):
        raise ConfigurationError(f"{path} must be a finite number", code="TYPE", context={"key": path, "value": node})
    value = float(node)
    if positive and not value > 0:
        raise ConfigurationError(f"{path} must be positive", code="RANGE", context={"key": path, "value": value})
    if minimum is not None and value < minimum:
        raise ConfigurationError(
            f"{path} must be >= {minimum}", code="RANGE", context={"key": path, "value": value}
        )
    return value


def _integer(tree: dict[str, Any], path: str, minimum: int = 0) -> int:
    value = _number(tree, path, minimum=minimum)
    if value != int(value):
        raise ConfigurationError(f"{path} must be an integer", code="TYPE", context={"key": path, "value": value})
    return int(value)


def _choice(tree: dict[str, Any], path: str, options: tuple[str, ...]) -> str:
    section, key = path.split(".")
    value = tree[section][key]
    if value not in options:
        raise ConfigurationError(
            f"{path} must be one of {', '.join(options)}", code="CHOICE", context={"key": path, "value": value}
        )
    return str(value)


def _chain(tree: dict[str, Any], params: OscillatorParams) -> FilterChain:
    section = tree["chain"]
    preset = _choice(tree, "chain.preset", ("standard", "delay_only", "custom"))
    order = _integer(tree, "chain.delay_order")
    gain = _number(tree, "chain.overall_gain")
    try:
        if preset == "standard":
            chain = FilterChain.standard(params, order)
        elif preset == "delay_only":
            chain = FilterChain.delay_only((math.pi / 2 + TWO_PI * order) / params.omega_z)
        else:
            chain = FilterChain.from_dict({"stages": section["stages"]})
    except ColdLoopError as e:
        raise ConfigurationError(f"chain: {e.message}", code="CHAIN", context={"key": "chain.stages"}) from e
    return FilterChain(stages=chain.stages, overall_gain=gain)


def _sweep(tree: dict[str, Any], budget: RateBudget) -> SweepSettings:
    section = tree["sweep"]
    explicit = section["gamma_fb_hz"]
    if not isinstance(explicit, list) or any(
        isinstance(g, bool) or not isinstance(g, int | float) or not g >= 0 for g in explicit
    ):
        raise ConfigurationError("sweep.gamma_fb_hz must be a list of nonnegative numbers", code="TYPE", context={"key": "sweep.gamma_fb_hz"})
    if explicit:
        gains = tuple(sorted(hz_to_rad(float(g)) for g in explicit))
    else:
        points = _integer(tree, "sweep.points", minimum=1)
        low = _number(tree, "sweep.low_factor", positive=True)
        high = _number(tree, "sweep.high_factor", positive=True)
        star = optimal_damping(budget)
        gains = tuple(float(g) for g in np.geomspace(low * star, high * star, points))
    labels = tuple(str(x) for x in section["labels"])
    if labels and len(labels) != len(gains):
        raise ConfigurationError(
            "sweep.labels must match the number of gains", code="RANGE", context={"key": "sweep.labels"}
        )
    anchor_index = _integer(tree, "sweep.anchor_index")
    if anchor_index >= len(gains):
        raise ConfigurationError(
            "sweep.anchor_index outside the sweep", code="RANGE", context={"key": "sweep.anchor_index", "value": anchor_index}
        )
    anchor_n = section["anchor_n"]
    if anchor_n is not None:
        anchor_n = _number(tree, "sweep.anchor_n", positive=True)
    return SweepSettings(
        gamma_fb=gains,
        labels=labels,
        anchor_index=anchor_index,
        anchor_n=anchor_n,
        anchor_n_sigma=_number(tree, "sweep.anchor_n_sigma", minimum=0.0),
    )


def from_tree(tree: dict[str, Any]) -> ExperimentConfig:
    """
    Validate a fully merged tree.

    Raises:
        ConfigurationError: Naming the dotted key path of the offending value
    """
    try:
        params = OscillatorParams.from_hz(
            _number(tree, "oscillator.mass_kg", positive=True),
            _number(tree, "oscillator.omega_z_hz", positive=True),
            _number(tree, "oscillator.gamma_m_hz", minimum=0.0),
        )
        budget = budget_from_rates(
            hz_to_rad(_number(tree, "budget.gamma_meas_hz", positive=True)),
            hz_to_rad(_number(tree, "budget.gamma_tot_hz", positive=True)),
            eta_d=_number(tree, "budget.eta_d", positive=True),
        )
    except ConfigurationError:
        raise
    except ColdLoopError as e:
        raise ConfigurationError(e.message, code=e.code or "RANGE", context=e.context) from e

    hom = tree["homodyne"]
    homodyne = HomodyneSettings(
        source=_choice(tree, "homodyne.source", ("synthesize", "simulate")),  # type: ignore[arg-type]
        sample_rate_hz=_number(tree, "homodyne.sample_rate_hz", positive=True),
        duration_s=_number(tree, "homodyne.duration_s", positive=True),
        segment_samples=_integer(tree, "homodyne.segment_samples", minimum=16),
        integrator=_choice(tree, "homodyne.integrator", ("euler", "zoh")),  # type: ignore[arg-type]
        reference_duration_s=_number(tree, "homodyne.reference_duration_s", positive=True),
        reference_segment_samples=_integer(tree, "homodyne.reference_segment_samples", minimum=16),
        block_size=_integer(tree, "homodyne.block_size", minimum=16),
    )
    if homodyne.sample_rate_hz / 2 <= params.omega_z / TWO_PI:
        raise ConfigurationError(
            "homodyne.sample_rate_hz does not resolve the resonance",
            code="BAND",
            context={"key": "homodyne.sample_rate_hz", "value": hom["sample_rate_hz"]},
        )
    if homodyne.source == "simulate" and homodyne.sample_rate_hz < 20.0 * params.omega_z / TWO_PI * (1 - 1e-12):
        raise ConfigurationError(
            "homodyne.sample_rate_hz must be at least 20 f_z for the time-domain source",
            code="BAND",
            context={"key": "homodyne.sample_rate_hz", "value": hom["sample_rate_hz"]},
        )

    het = tree["heterodyne"]
    heterodyne = HeterodyneSettings(
        enabled=bool(het["enabled"]),
        n_bar=_number(tree, "heterodyne.n_bar", minimum=0.0),
        sample_rate_hz=_number(tree, "heterodyne.sample_rate_hz", positive=True),
        duration_s=_number(tree, "heterodyne.duration_s", positive=True),
        segment_samples=_integer(tree, "heterodyne.segment_samples", minimum=16),
        background_factor=_number(tree, "heterodyne.background_factor", minimum=1.0),
        tone_freq_hz=_number(tree, "heterodyne.tone_freq_hz", positive=True),
        tone_level=_number(tree, "heterodyne.tone_level", positive=True),
        lo_phase_drift_rad_s=_number(tree, "heterodyne.lo_phase_drift_rad_s"),
        lo_phase_walk_rad_rts=_number(tree, "heterodyne.lo_phase_walk_rad_rts", minimum=0.0),
        block_size=_integer(tree, "heterodyne.block_size", minimum=16),
        double_lo=bool(het["double_lo"]),
    )
    for key, freq in (("heterodyne.tone_freq_hz", heterodyne.tone_freq_hz), ("oscillator.omega_z_hz", params.omega_z / TWO_PI)):
        if heterodyne.enabled and freq >= heterodyne.sample_rate_hz / 2:
            raise ConfigurationError(
                f"{key} lies outside the heterodyne band", code="BAND", context={"key": key, "value": freq}
            )

    est = tree["estimation"]
    lines = est["mask_lines_hz"]
    if not isinstance(lines, list):
        raise ConfigurationError("estimation.mask_lines_hz must be a list", code="TYPE", context={"key": "estimation.mask_lines_hz"})
    band = est["energy_band_hz"]
    if band is not None and (not isinstance(band, list) or len(band) != 2 or not 0 < band[0] < band[1]):
        raise ConfigurationError(
            "estimation.energy_band_hz must be [low, high] with 0 < low < high",
            code="RANGE",
            context={"key": "estimation.energy_band_hz", "value": band},
        )
    estimation = EstimationSettings(
        mask=FrequencyMask.around([float(x) for x in lines], _number(tree, "estimation.mask_half_width_hz", minimum=0.0)),
        fit_band_factor=_number(tree, "estimation.fit_band_factor", positive=True),
        energy_band=None if band is None else (hz_to_rad(float(band[0])), hz_to_rad(float(band[1]))),
    )
    if estimation.fit_band_factor >= 1:
        raise ConfigurationError(
            "estimation.fit_band_factor must be below 1", code="RANGE", context={"key": "estimation.fit_band_factor"}
        )

    return ExperimentConfig(
        params=params,
        budget=budget,
        chain=_chain(tree, params),
        sweep=_sweep(tree, budget),
        homodyne=homodyne,
        heterodyne=heterodyne,
        estimation=estimation,
        seed=_integer(tree, "seeds.base"),
        output_dir=Path(str(tree["output_dir"])),
        threads=_integer(tree, "threads", minimum=1),
        tree=tree,
    )


def load_config(
    path: str | Path | None = None,
    overrides: dict[str, Any] | None = None,
) -> ExperimentConfig:
    """
    Resolve defaults <- file <- overrides and validate.

    Args:
        path: JSON config file (None for defaults only)
        overrides: Dotted keys, e.g. {"seeds.base": 3, "output_dir": "out"}

    Raises:
        ConfigurationError: On unreadable JSON, unknown keys or invalid values
    """
    tree = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            loaded = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as e:
            raise ConfigurationError(f"cannot read config {path}", code="READ", context={"path": str(path)}) from e
        except json.JSONDecodeError as e:
            raise ConfigurationError(
                f"config {path} is not valid JSON: {e.msg}", code="JSON", context={"line": e.lineno}
            ) from e
        if not isinstance(loaded, dict):
            raise ConfigurationError("config root must be an object", code="TYPE", context={"key": ""})
        tree = _merge(tree, loaded)
    if overrides:
        tree = _apply_overrides(tree, overrides)
    config = from_tree(tree)
    logger.info(
        "Configuration loaded",
        extra={"path": str(path) if path else "", "config_hash": config.config_hash, "gains": len(config.sweep.gamma_fb)},
    )
    return config
