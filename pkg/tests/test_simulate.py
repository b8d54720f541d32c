"""
Tests for synthetic data generation.

Tests for:
- TimeTrace validation and segmentation
- Closed-loop simulation (variance, determinism, stability gates)
- Heterodyne and homodyne spectral synthesis
- Burst injection
"""

import math

import numpy as np
import pytest

from coldloop.constants import TWO_PI, hz_to_rad
from coldloop.estimate import displacement_spectrum, energy_grid, estimate_psd, inloop_model
from coldloop.exceptions import (
    DivergenceError,
    InvalidParameterError,
    UnphysicalModelError,
    UnstableLoopError,
)
from coldloop.filters import FilterChain, FilterStage, stability_check, stability_grid
from coldloop.model import (
    budget_from_rates,
    force_psd_total,
    imprecision_psd,
    minimal_background,
    optimal_damping,
    susceptibility,
)
from coldloop.simulate import (
    BurstShape,
    BurstSpec,
    HetSynthConfig,
    SimConfig,
    TimeTrace,
    TraceLabel,
    inject_bursts,
    segment_trace,
    simulate_closed_loop,
    synthesize_heterodyne,
    synthesize_homodyne,
)

from .conftest import TOY_SAMPLE_RATE

# ============================================================
# Traces
# ============================================================


class TestTimeTrace:
    """Test the sampled record container."""

    def test_empty_trace_rejected(self):
        with pytest.raises(InvalidParameterError, match="nonempty"):
            TimeTrace(sample_rate=1e3, samples=np.array([]))

    def test_nonpositive_rate_rejected(self):
        with pytest.raises(InvalidParameterError, match="sample_rate"):
            TimeTrace(sample_rate=0.0, samples=np.ones(4))

    def test_segments_keep_absolute_time(self):
        """Segments are contiguous, equal length, and the remainder is dropped."""
        trace = TimeTrace(sample_rate=100.0, samples=np.arange(1050.0), start_time=2.0)
        segments = segment_trace(trace, 100)
        assert len(segments) == 10
        assert segments[3].start_time == pytest.approx(5.0)
        assert segments[3].samples[0] == 300.0

    def test_complex_flag_and_label(self):
        trace = TimeTrace(sample_rate=10.0, samples=np.ones(4, dtype=complex), label="i_r")
        assert trace.is_complex
        assert trace.label is TraceLabel.I_R
        assert trace.duration == pytest.approx(0.4)


# ============================================================
# Closed loop
# ============================================================


def _toy_config(toy_params, toy_budget, toy_chain, **overrides):
    settings = {
        "params": toy_params,
        "budget": toy_budget,
        "chain": toy_chain,
        "gamma_fb": optimal_damping(toy_budget),
        "dt": 1.0 / TOY_SAMPLE_RATE,
        "duration": 4.0,
        "seed": 11,
    }
    settings.update(overrides)
    return SimConfig(**settings)


class TestSimConfig:
    """Test simulation settings validation."""

    def test_coarse_step_rejected(self, toy_params, toy_budget, toy_chain):
        with pytest.raises(InvalidParameterError, match="resolve the oscillation"):
            _toy_config(toy_params, toy_budget, toy_chain, dt=1e-4)

    def test_step_must_resolve_delay(self, toy_params, toy_budget):
        chain = FilterChain.delay_only(2e-5)
        with pytest.raises(InvalidParameterError, match="feedback delay"):
            _toy_config(toy_params, toy_budget, chain, dt=1e-5)

    def test_negative_gain_rejected(self, toy_params, toy_budget, toy_chain):
        with pytest.raises(InvalidParameterError, match="gamma_fb"):
            _toy_config(toy_params, toy_budget, toy_chain, gamma_fb=-1.0)


class TestClosedLoopSimulation:
    """Test the time-domain integrator against the analytic spectrum."""

    @pytest.mark.parametrize("integrator", ["euler", "zoh"])
    def test_position_variance_matches_model(self, toy_params, toy_budget, toy_chain, integrator):
        """<z^2> from the record agrees with the closed-loop displacement spectrum."""
        cfg = _toy_config(toy_params, toy_budget, toy_chain, integrator=integrator)
        result = simulate_closed_loop(cfg)
        grid = energy_grid(toy_params, linewidth=cfg.expected_linewidth)
        expected = displacement_spectrum(grid, toy_params, toy_budget, cfg.gamma_fb, toy_chain).variance()
        settled = result.z.samples[result.z.samples.size // 10 :]
        assert np.var(settled) == pytest.approx(expected, rel=0.25)

    def test_homodyne_adds_imprecision(self, toy_params, toy_budget, toy_chain):
        cfg = _toy_config(toy_params, toy_budget, toy_chain, duration=0.2)
        result = simulate_closed_loop(cfg)
        assert result.i_hom.label is TraceLabel.I_HOM
        assert np.var(result.i_hom.samples - result.z.samples) > 0

    def test_same_seed_bit_identical(self, toy_params, toy_budget, toy_chain):
        cfg = _toy_config(toy_params, toy_budget, toy_chain, duration=0.1)
        first = simulate_closed_loop(cfg)
        second = simulate_closed_loop(cfg)
        np.testing.assert_array_equal(first.z.samples, second.z.samples)
        np.testing.assert_array_equal(first.i_hom.samples, second.i_hom.samples)

    def test_different_seed_differs(self, toy_params, toy_budget, toy_chain):
        a = simulate_closed_loop(_toy_config(toy_params, toy_budget, toy_chain, duration=0.1, seed=1))
        b = simulate_closed_loop(_toy_config(toy_params, toy_budget, toy_chain, duration=0.1, seed=2))
        assert not np.array_equal(a.z.samples, b.z.samples)

    def test_whole_sample_delay(self, toy_params, toy_budget, toy_chain):
        """A quarter period at 40 kHz is exactly ten samples."""
        result = simulate_closed_loop(_toy_config(toy_params, toy_budget, toy_chain, duration=0.05))
        assert result.delay_samples == 10
        assert result.stability is not None and result.stability.stable

    def test_unstable_loop_refused(self, toy_params, toy_budget):
        """A three-quarter-period delay pumps the oscillator and fails the gate."""
        chain = FilterChain.delay_only(3 * math.pi / 2 / toy_params.omega_z)
        with pytest.raises(UnstableLoopError, match="Nyquist"):
            simulate_closed_loop(_toy_config(toy_params, toy_budget, chain, gamma_fb=hz_to_rad(50.0)))

    def test_unstable_loop_diverges(self, toy_params, toy_budget, caplog):
        """With the gate off, an anti-damped loop blows up and reports the onset."""
        chain = FilterChain.delay_only(3 * math.pi / 2 / toy_params.omega_z)
        cfg = _toy_config(toy_params, toy_budget, chain, gamma_fb=hz_to_rad(50.0), duration=2.0, allow_unstable=True)
        with pytest.raises(DivergenceError) as exc_info:
            simulate_closed_loop(cfg)
        assert exc_info.value.code == "DIVERGED"
        assert 0 < exc_info.value.context["onset_s"] < 2.0
        assert "diverged" in caplog.text.lower()


# ============================================================
# Stability verdict against the time domain
# ============================================================


def _matrix_chain(kind, tau):
    if kind == "delay_only":
        return FilterChain.delay_only(tau)
    return FilterChain(stages=(FilterStage.high_pass(100.0), FilterStage.delay(tau)))


@pytest.mark.slow
class TestStabilityMatrix:
    """Test that the Nyquist verdict predicts boundedness of the simulated loop."""

    @pytest.mark.parametrize("chain_kind", ["delay_only", "high_pass"])
    @pytest.mark.parametrize("quadrant", [0.5, 1.5])
    @pytest.mark.parametrize("gain_factor", [0.1, 1.0, 10.0])
    def test_verdict_matches_boundedness(self, toy_params, toy_budget, chain_kind, quadrant, gain_factor):
        """A quarter-period delay damps at every gain; three quarters always diverge."""
        tau = quadrant * math.pi / toy_params.omega_z
        chain = _matrix_chain(chain_kind, tau)
        gamma_fb = gain_factor * optimal_damping(toy_budget)
        discrete = chain.discretize(TOY_SAMPLE_RATE)
        verdict = stability_check(toy_params, discrete, stability_grid(toy_params), gamma_fb=gamma_fb)

        cfg = _toy_config(toy_params, toy_budget, chain, gamma_fb=gamma_fb, duration=3.0, allow_unstable=True)
        try:
            result = simulate_closed_loop(cfg)
        except DivergenceError:
            bounded = False
        else:
            bounded = bool(np.all(np.isfinite(result.z.samples)))

        assert verdict.stable == bounded
        assert verdict.stable == (quadrant == 0.5)


# ============================================================
# Simulated in-loop spectrum against the model
# ============================================================


SPECTRUM_SAMPLE_RATE = 20e3


def _sampled_inloop(omega, params, budget, gamma_fb, chain, dt):
    """
    In-loop density of the sampled loop: the chain seen through the
    zero-order hold gains e^{-iΩdt/2}·sinc and the held force noise sinc².
    """
    hold = np.sinc(omega * dt / TWO_PI)
    h = chain.discretize(1.0 / dt).response(omega) * np.exp(-0.5j * omega * dt) * hold
    return inloop_model(
        omega,
        params.omega_z,
        params.gamma_m,
        force_psd_total(params, budget) / params.mass**2 * hold**2,
        imprecision_psd(params, budget),
        gamma_fb,
        h,
    )


def _grouped(values, size):
    usable = values.size - values.size % size
    return values[:usable].reshape(-1, size).mean(axis=1)


@pytest.mark.slow
class TestSimulatedSpectrum:
    """Test ensemble-averaged homodyne spectra against the analytic loop."""

    @pytest.mark.parametrize(
        ("gain_factor", "segment_samples", "squashed"),
        [(0.1, 2**14, False), (1.0, 2**12, False), (10.0, 2**9, True)],
    )
    def test_inloop_spectrum_matches_model(self, toy_params, toy_chain, gain_factor, segment_samples, squashed):
        """500 Hann segments over ten seeds agree within 5% RMS around resonance."""
        budget = budget_from_rates(gamma_meas=hz_to_rad(10.0), gamma_tot=hz_to_rad(40.0))
        gamma_fb = gain_factor * optimal_damping(budget)
        dt = 1.0 / SPECTRUM_SAMPLE_RATE

        segments = []
        for seed in range(10):
            cfg = SimConfig(
                params=toy_params,
                budget=budget,
                chain=toy_chain,
                gamma_fb=gamma_fb,
                dt=dt,
                duration=51 * segment_samples * dt,
                seed=seed,
                integrator="zoh",
            )
            # The first segment holds the start-up transient.
            segments.extend(segment_trace(simulate_closed_loop(cfg).i_hom, segment_samples)[1:])
        assert len(segments) == 500
        spectrum = estimate_psd(segments, window="hann")

        wz = toy_params.omega_z
        width = cfg.expected_linewidth
        low, high = max(wz - 5 * width, 0.5 * wz), min(wz + 5 * width, 2.0 * wz)
        keep = (spectrum.grid >= low) & (spectrum.grid <= high)
        omega = spectrum.grid[keep]
        estimate = _grouped(spectrum.values[keep], 4)
        model = _grouped(_sampled_inloop(omega, toy_params, budget, gamma_fb, toy_chain, dt), 4)

        rms = math.sqrt(np.mean((estimate / model - 1.0) ** 2))
        assert rms < 0.05
        s_imp = imprecision_psd(toy_params, budget)
        assert (estimate.min() < 0.8 * s_imp) == squashed


# ============================================================
# Spectral synthesis
# ============================================================


def _het_config(params, **overrides):
    gamma = hz_to_rad(10e3)
    peak = abs(complex(susceptibility(params.omega_z, params, gamma))) ** 2
    settings = {
        "params": params,
        "n_bar": 0.66,
        "gamma_eff": gamma,
        "scale_R": 1.0,
        "bg_r": 2.0 * minimal_background(0.66, peak),
        "bg_b": 2.0 * minimal_background(0.66, peak),
        "sample_rate": 400e3,
        "duration": 0.5,
        "seed": 3,
    }
    settings.update(overrides)
    return HetSynthConfig(**settings)


class TestHeterodyneSynthesis:
    """Test sideband synthesis."""

    def test_invalid_lo_sign_rejected(self, params):
        with pytest.raises(InvalidParameterError, match="lo_sign"):
            _het_config(params, lo_sign=0)

    def test_backgrounds_too_small(self, params):
        """Without background the resonant 2x2 model is not positive semidefinite."""
        with pytest.raises(UnphysicalModelError, match="backgrounds too small") as exc_info:
            synthesize_heterodyne(_het_config(params, bg_r=0.0, bg_b=0.0))
        assert "worst_freq_hz" in exc_info.value.context

    def test_record_power_matches_target(self, params):
        """Mean |i_r|^2 and |i_b|^2 equal the integrals of the target densities."""
        cfg = _het_config(params)
        records = synthesize_heterodyne(cfg)
        omega = TWO_PI * np.fft.fftfreq(cfg.block_size, d=1.0 / cfg.sample_rate)
        s_rr, s_bb, _ = cfg.target_spectra(omega)
        step = TWO_PI * cfg.sample_rate / cfg.block_size
        assert np.mean(np.abs(records.i_r.samples) ** 2) == pytest.approx(np.sum(s_rr) * step, rel=0.05)
        assert np.mean(np.abs(records.i_b.samples) ** 2) == pytest.approx(np.sum(s_bb) * step, rel=0.05)

    def test_record_lengths_and_labels(self, params):
        records = synthesize_heterodyne(_het_config(params, duration=0.1))
        assert len(records.i_r) == len(records.i_b) == len(records.i_car) == 40000
        assert records.i_car.label is TraceLabel.I_CAR

    def test_carrier_tracks_lo_phase(self, params):
        """The carrier phase follows the configured LO offset."""
        records = synthesize_heterodyne(_het_config(params, duration=0.01, lo_phase_offset=1.0))
        mean_phase = np.angle(np.mean(records.i_car.samples))
        assert mean_phase == pytest.approx(1.0, abs=0.05)

    def test_seeded_synthesis_reproducible(self, params):
        a = synthesize_heterodyne(_het_config(params, duration=0.05))
        b = synthesize_heterodyne(_het_config(params, duration=0.05))
        np.testing.assert_array_equal(a.i_b.samples, b.i_b.samples)


class TestHomodyneSynthesis:
    """Test real-record synthesis."""

    def test_white_density_variance(self):
        """A flat two-sided density S over |f| < fs/2 has variance 2 pi fs S."""
        level = 1e-20
        fs = 100e3
        trace = synthesize_homodyne(lambda w: np.full(w.shape, level), fs, duration=1.0, seed=5)
        assert not trace.is_complex
        assert np.var(trace.samples) == pytest.approx(TWO_PI * fs * level, rel=0.02)

    def test_negative_target_rejected(self):
        with pytest.raises(UnphysicalModelError, match="nonnegative"):
            synthesize_homodyne(lambda w: -np.ones(w.shape), 1e3, duration=0.1)


# ============================================================
# Bursts
# ============================================================


class TestBurstInjection:
    """Test periodic burst contamination."""

    def test_one_burst_per_period(self):
        trace = TimeTrace(sample_rate=10e3, samples=np.zeros(20000))
        burst = BurstSpec(duration=0.05, amplitude=1.0, shape=BurstShape.RECTANGULAR)
        record = inject_bursts(trace, period=0.5, burst=burst, seed=1)
        assert record.onsets == pytest.approx((0.0, 0.5, 1.0, 1.5))
        assert record.trace.samples[100] == pytest.approx(1.0)
        assert record.trace.samples[1000] == 0.0
        assert record.i_dc.label is TraceLabel.I_DC

    def test_default_shape_rings(self):
        """The default decaying sine reaches the record, not only the witness."""
        trace = TimeTrace(sample_rate=10e3, samples=np.zeros(10000))
        record = inject_bursts(trace, period=0.5, burst=BurstSpec(duration=0.05, amplitude=1.0), seed=1)
        assert np.max(np.abs(record.trace.samples[:500])) > 0.9
        assert record.trace.samples[1000] == 0.0
        assert np.max(record.i_dc.samples[:500]) > 0.9

    def test_nonpositive_frequency_rejected(self):
        with pytest.raises(InvalidParameterError, match="positive frequency_hz"):
            BurstSpec(duration=0.05, amplitude=1.0, frequency_hz=0.0)

    def test_rectangular_ignores_frequency(self):
        burst = BurstSpec(duration=0.05, amplitude=1.0, shape=BurstShape.RECTANGULAR, frequency_hz=0.0)
        assert burst.frequency_hz == 0.0

    def test_carrier_above_nyquist_rejected(self):
        trace = TimeTrace(sample_rate=10e3, samples=np.zeros(10000))
        burst = BurstSpec(duration=0.05, amplitude=1.0, frequency_hz=6e3)
        with pytest.raises(InvalidParameterError, match="Nyquist"):
            inject_bursts(trace, period=0.5, burst=burst)

    def test_zero_amplitude_witness_is_noise(self):
        trace = TimeTrace(sample_rate=10e3, samples=np.zeros(10000))
        record = inject_bursts(trace, period=0.5, burst=BurstSpec(duration=0.05, amplitude=0.0), seed=1)
        assert np.max(np.abs(record.i_dc.samples)) < 0.01

    def test_period_must_fit_burst(self):
        trace = TimeTrace(sample_rate=10e3, samples=np.zeros(100))
        with pytest.raises(InvalidParameterError, match="period"):
            inject_bursts(trace, period=0.01, burst=BurstSpec(duration=0.05, amplitude=1.0))
