"""Numerical laboratory for spectral stability and modulation dynamics of
periodic reaction-diffusion wave trains."""

__version__ = "0.1.0"

from .model import (LambdaOmegaParams, ReactionSystem, make_lambda_omega,
                    make_polynomial_system, exact_dispersion, wave_train,
                    phase_expansion_coefficients, eckhaus_wavenumber)
from .profile import (WaveProfile, ProfileFamily, solve_profile,
                      continue_family, NoConvergence, SingularJacobian)
from .bloch import (bloch_forward, bloch_inverse, assemble_bloch_matrix,
                    spectrum_scan, SpectralSummary, BlochBranch,
                    mode_projectors, StabilityViolation, SimplicityViolation)
from .propagator import (PropagatorPlan, ModulationData, DecayFit,
                         fit_power_law, geometric_times, decay_experiment,
                         modulational_experiment,
                         modulational_residual_experiment,
                         initial_layer_check, kernel_probe)

__all__ = [name for name in dir() if not name.startswith("_")]
