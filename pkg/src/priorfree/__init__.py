"""Repeated principal-agent interaction driven by forecasts instead of a common prior."""
from .game import (
    TAU_EQ,
    DomainError,
    LinearContractGame,
    PersuasionGame,
    SignalScheme,
    TabularGame,
    best_response_set,
    expected_utilities,
    optimistic_best_response,
    principal_best_policy,
)

__version__ = "0.1.0"
from .harness import (
    ConfigError,
    ExperimentConfig,
    grid_resolution,
    policy_regret,
    replay_constant,
    run_experiment,
    run_protocol,
)
from .lemmas import certify_impossibility, verify_lemmas
