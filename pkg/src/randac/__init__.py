"""Numerical laboratory for the random-field double-well energy.

Submodules: ``field`` (quenched disorder), ``potential`` (double well),
``grid_energy`` (discretization), ``solver`` (minimizers and extremal
profiles), ``stats`` (Monte Carlo estimators), ``orchestrator`` / ``cli``.
"""

__version__ = "0.1.0"

from .errors import (ConfigurationError, DomainError, NonConvergenceError, PreconditionError,  # noqa: E402
                     RandacError, SchemeIntegrityError)
from .field import DistributionSpec, FieldRealization, negate, resample_sites, sample_field, translate  # noqa: E402
from .grid_energy import DiscreteProfile, EnergyBreakdown, GridSpec, el_residual, energy  # noqa: E402
from .potential import PotentialSpec, verify_h1  # noqa: E402
from .solver import ExtremalPair, SolverOptions, extremal_max, extremal_min, extremal_pair, minimize  # noqa: E402

__all__ = [
    "ConfigurationError", "DomainError", "NonConvergenceError", "PreconditionError", "RandacError",
    "SchemeIntegrityError", "DistributionSpec", "FieldRealization", "negate", "resample_sites", "sample_field",
    "translate", "DiscreteProfile", "EnergyBreakdown", "GridSpec", "el_residual", "energy", "PotentialSpec",
    "verify_h1", "ExtremalPair", "SolverOptions", "extremal_max", "extremal_min", "extremal_pair", "minimize",
]
