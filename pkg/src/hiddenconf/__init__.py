"""Wave fields with guided stochastic configurations for the alpha-family of hidden-configuration dynamics."""

__version__ = "0.1.0"

from .errors import (BoundaryViolation, BranchError, ConfigError, FieldError, GridError, NumericalError,
                     SamplingError, ScenarioError)
from .field import DensityField, Grid, PhysicalParams, WaveField, build_grid, gaussian_packet, harmonic_state
from .schrodinger import CouplingTerm, Potential, evolve, step
from .guidance import Configuration, DriftSample, drift_at, guidance_step
from .ensemble import Ensemble, EquivarianceReport, equivariance_check, evolve_ensemble, sample_from_density
from .measurement import MeasurementScenario, branch_decompose, run_measurement

__all__ = [
    "BoundaryViolation", "BranchError", "ConfigError", "FieldError", "GridError", "NumericalError",
    "SamplingError", "ScenarioError", "DensityField", "Grid", "PhysicalParams", "WaveField", "build_grid",
    "gaussian_packet", "harmonic_state", "CouplingTerm", "Potential", "evolve", "step", "Configuration",
    "DriftSample", "drift_at", "guidance_step", "Ensemble", "EquivarianceReport", "equivariance_check",
    "evolve_ensemble", "sample_from_density", "MeasurementScenario", "branch_decompose", "run_measurement",
]
