"""Material-point toolkit for finite-strain viscoplasticity.

Implements a viscoplastic overstress model with Armstrong-Frederick
kinematic hardening and saturating isotropic hardening on two nested
multiplicative decompositions, together with determinant-preserving
implicit integrators (modified Euler-Backward and exponential map), the
classical Euler-Backward scheme for drift diagnostics, a consistent
tangent, and strain/stress-controlled scenario drivers.
"""

from .errors import (ConfigError, DegenerateFlowError, GridMismatchError,
                     ScenarioError, SimulationError, SolverError,
                     StepSizeError)
from .material import (FIG7_MODIFIED, PRESETS, TABLE2, InternalState,
                       MaterialParams, StressState, backstress,
                       cauchy_stress, dissipation_increment,
                       driving_force_norm, free_energy, perzyna,
                       second_pk_stress, stress_state)
from .integrator import (DEFAULT_SETTINGS, Method, SolverSettings,
                         StepResult, consistent_tangent, consistency_residuals,
                         flow_operators, hardening_closed_form, k_operator,
                         solve_subproblem, solve_xi, step)
from .driver import (HistoryComparison, HistoryRecord, LoadingProgram,
                     Segment, accuracy_program, accuracy_program_F,
                     compare_histories, convergence_study, creep_program,
                     relaxation_program, run_scenario, run_scenario_full,
                     torsion_cyclic_program, torsion_drive,
                     torsion_ramp_program, uniaxial_cyclic_program,
                     uniaxial_drive, uniaxial_ramp_program)

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "DegenerateFlowError", "GridMismatchError",
    "ScenarioError", "SimulationError", "SolverError", "StepSizeError",
    "FIG7_MODIFIED", "PRESETS", "TABLE2", "InternalState", "MaterialParams",
    "StressState", "backstress", "cauchy_stress", "dissipation_increment",
    "driving_force_norm", "free_energy", "perzyna", "second_pk_stress",
    "stress_state",
    "DEFAULT_SETTINGS", "Method", "SolverSettings", "StepResult",
    "consistent_tangent", "consistency_residuals", "flow_operators",
    "hardening_closed_form", "k_operator", "solve_subproblem", "solve_xi",
    "step",
    "HistoryComparison", "HistoryRecord", "LoadingProgram", "Segment",
    "accuracy_program", "accuracy_program_F", "compare_histories",
    "convergence_study", "creep_program", "relaxation_program",
    "run_scenario", "run_scenario_full", "torsion_cyclic_program",
    "torsion_drive", "torsion_ramp_program", "uniaxial_cyclic_program",
    "uniaxial_drive", "uniaxial_ramp_program",
]
