"""Finite Fourier truncation of the 3D stochastic Navier-Stokes equations.

Simulation and algebraic verification in one toolkit: drift evaluation in
complex and real forms, the double-bracket algebra of the nonlinearity, the
determining-set closure and rank condition for degenerate forcing, an SDE
integrator with counter-based reproducible noise, empirical dissipation and
mixing probes, and a shooting solver for the associated control system.
"""

__version__ = "0.1.0"

from .brackets import DriftModel, TangentField, bracket_span, double_bracket, \
    double_bracket_oracle, drift_jacobian
from .closure import ClosureResult, determining_closure
from .drift import DriftEvaluation, SpectralState, energy_flux, eval_drift, \
    eval_drift_real, project_divfree
from .ergodicity import BoxGrid, MixingEstimate, lyapunov_check, mixing_probe, \
    support_probe
from .hormander import RankReport, check_hormander, noise_field_basis
from .lattice import ModeSubspace, Truncation, build_truncation, canonicalize, \
    is_generator_set
from .sde import BlowUpError, NoiseDraw, NoiseSpec, SimulationConfig, \
    default_noise, run_trajectory, step
from .steering import ControlSignal, SteeringResult, integrate_controlled, \
    solve_steering

__all__ = [
    "BlowUpError", "BoxGrid", "ClosureResult", "ControlSignal",
    "DriftEvaluation", "DriftModel", "MixingEstimate", "ModeSubspace",
    "NoiseDraw", "NoiseSpec", "RankReport", "SimulationConfig",
    "SpectralState", "SteeringResult", "TangentField", "Truncation",
    "bracket_span", "build_truncation", "canonicalize", "check_hormander",
    "default_noise", "determining_closure", "double_bracket",
    "double_bracket_oracle", "drift_jacobian", "energy_flux", "eval_drift",
    "eval_drift_real", "integrate_controlled", "is_generator_set",
    "lyapunov_check", "mixing_probe", "noise_field_basis", "project_divfree",
    "run_trajectory", "solve_steering", "step", "support_probe",
]
