"""Mean stability of Markov regenerative switched linear systems.

The package builds lifted block matrices whose spectral radius (or spectral
abscissa) decides exponential m-th mean stability, and a Monte Carlo
simulator to check those verdicts on sample paths.
"""

from .mlift import (
    DimensionError,
    LiftedMatrix,
    MultiIndexBasis,
    induced_matrix,
    infinitesimal_lift,
    lift_matrix,
    lift_vector,
    multi_index_basis,
)
from .models import (
    AssumptionError,
    Cycle,
    Deterministic,
    DiscreteFinite,
    MJLSModel,
    ModelError,
    ModeSet,
    PeriodicObservationModel,
    RegenerativeModel,
    SemiMarkovKernel,
    SemiMarkovModel,
    TruncatedExponential,
    Uniform,
    check_metzler,
    closed_loop_modes,
    load_model,
    parse_model,
    serialize_model,
)
from .numkernel import SpectralSummary, expm, gauss_legendre, spectral_summary
from .stability import (
    StabilityReport,
    analyze,
    discrete_semimarkov_matrix,
    mjls_matrix,
    periodic_observation_matrix,
    regenerative_matrix,
    semimarkov_matrix,
    sweep_growth_rate,
)

__version__ = "0.1.0"

__all__ = [
    "AssumptionError",
    "Cycle",
    "Deterministic",
    "DimensionError",
    "DiscreteFinite",
    "LiftedMatrix",
    "MJLSModel",
    "ModeSet",
    "ModelError",
    "MultiIndexBasis",
    "PeriodicObservationModel",
    "RegenerativeModel",
    "SemiMarkovKernel",
    "SemiMarkovModel",
    "SpectralSummary",
    "StabilityReport",
    "TruncatedExponential",
    "Uniform",
    "analyze",
    "check_metzler",
    "closed_loop_modes",
    "discrete_semimarkov_matrix",
    "expm",
    "gauss_legendre",
    "induced_matrix",
    "infinitesimal_lift",
    "lift_matrix",
    "lift_vector",
    "load_model",
    "mjls_matrix",
    "multi_index_basis",
    "parse_model",
    "periodic_observation_matrix",
    "regenerative_matrix",
    "semimarkov_matrix",
    "serialize_model",
    "spectral_summary",
    "sweep_growth_rate",
]
