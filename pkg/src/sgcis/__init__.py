"""Semiclassical Stern-Gerlach simulation built on coherent internal states."""
from .spin_algebra import SpinQuantumNumber, build_spin_matrices, wigner_small_d
from .field_model import LinearSGField, beta_angle, field_at, field_magnitude, force_on_state
from .cis_analysis import (
    EvolutionParams,
    beam_average_over_beta,
    branch_probabilities,
    delta_numeric,
    find_cis,
    mean_error_probability,
)
from .trajectory import KinematicParams, ReducedParams, analytic_trajectory, integrate_trajectory
from .beam_sim import BeamConfig, run_simulation, mean_diagonal_probability

__version__ = "0.1.0"
