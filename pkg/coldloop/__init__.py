"""
coldloop - digital twin of a feedback-cooled levitated nanoparticle

Provides:
- Analytic oscillator, noise and occupation model (coldloop.model)
- Feedback electronics and Nyquist stability (coldloop.filters)
- Closed-loop simulation and heterodyne synthesis (coldloop.simulate)
- Spectral estimation, fits and three phonon thermometers (coldloop.estimate)
- Gain-sweep harness and command line (coldloop.harness)

Usage:
    from coldloop.model import OscillatorParams, budget_from_rates, minimum_occupation
    from coldloop.simulate import SimConfig, simulate_closed_loop
    from coldloop.estimate import estimate_psd, fit_reference_homodyne
    from coldloop.harness import load_config, run_gain_sweep

Requirements:
- Python 3.11+
- numpy, scipy, lmfit, control
"""

__version__ = "0.1.0"
__all__ = ["__version__"]
