from .linear import (
    LinearOracleParams,
    StabilityCertificate,
    check_monotonicity,
    is_stable,
    linear_stable_oracle,
    optimistic_benchmark,
    tie_contracts,
)
from .persuasion import (
    ConcaveClosure,
    EnvelopeDecomposition,
    PersuasionOracleParams,
    PosteriorDistribution,
    build_envelope,
    concave_closure,
    persuasion_stable_oracle,
    scheme_from_posteriors,
    stabilize_closure,
)

__all__ = [
    "LinearOracleParams",
    "StabilityCertificate",
    "check_monotonicity",
    "is_stable",
    "linear_stable_oracle",
    "optimistic_benchmark",
    "tie_contracts",
    "ConcaveClosure",
    "EnvelopeDecomposition",
    "PersuasionOracleParams",
    "PosteriorDistribution",
    "build_envelope",
    "concave_closure",
    "persuasion_stable_oracle",
    "scheme_from_posteriors",
    "stabilize_closure",
]
