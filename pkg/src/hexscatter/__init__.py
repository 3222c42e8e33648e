"""Numerical lab for long-range scattering on the hexagonal lattice."""

from .config import ConfigError, ExperimentConfig, load_config, validate
from .harness import RunReport, regress, run
from .lattice import LatticeBox, Potential, PotentialSpec, apply_H0, realize_potential
from .symbols import THRESHOLDS, Bands, EnergyWindow, TorusGrid, build_kappa, build_symbol_grid

__version__ = "0.1.0"

__all__ = [
    "THRESHOLDS", "Bands", "ConfigError", "EnergyWindow", "ExperimentConfig", "LatticeBox", "Potential",
    "PotentialSpec", "RunReport", "TorusGrid", "apply_H0", "build_kappa", "build_symbol_grid", "load_config",
    "realize_potential", "regress", "run", "validate",
]
