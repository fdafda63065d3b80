"""Neural-surrogate parameter recovery for covariate-driven stochastic Petri nets."""

from .errors import (ConfigurationError, ContractError, GenerationError, IngestionError, LoadError,
                     NumericError, SPNError, StructuralError, ValidationError)
from .petri import (Hazard, PetriNet, TransitionSpec, Trajectory, available_backends, get_backend,
                    set_backend, simulate_horizon, ssa_day)

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError", "ContractError", "GenerationError", "IngestionError", "LoadError", "NumericError",
    "SPNError", "StructuralError", "ValidationError", "Hazard", "PetriNet", "TransitionSpec", "Trajectory",
    "available_backends", "get_backend", "set_backend", "simulate_horizon", "ssa_day",
]
