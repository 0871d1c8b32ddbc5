"""Averaging and stochastic stability of asymptotically autonomous planar Hamiltonian systems."""

from .averaging import AveragedDrift, ExponentFit, average_system, fit_exponents
from .classifier import Kind, StabilityVerdict, WeightFunction, classify
from .hamiltonian import LimitingHamiltonian, OrbitCache, compute_orbit, compute_orbits
from .montecarlo import cycle_radius, decay_fit, exit_probability
from .perturbation import SdeSystem, estimate_noise_bound, load_system, registry_get
from .sde import SimulationConfig, simulate_ensemble, simulate_path

__version__ = "0.1.0"

__all__ = [
    "AveragedDrift",
    "ExponentFit",
    "Kind",
    "LimitingHamiltonian",
    "OrbitCache",
    "SdeSystem",
    "SimulationConfig",
    "StabilityVerdict",
    "WeightFunction",
    "average_system",
    "classify",
    "compute_orbit",
    "compute_orbits",
    "cycle_radius",
    "decay_fit",
    "estimate_noise_bound",
    "exit_probability",
    "fit_exponents",
    "load_system",
    "registry_get",
    "simulate_ensemble",
    "simulate_path",
]
