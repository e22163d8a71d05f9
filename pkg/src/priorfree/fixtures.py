"""Small reference games used by the tests, examples and CLI defaults."""
from __future__ import annotations

from .game import LinearContractGame, PersuasionGame, SignalScheme
from .oracles.persuasion import benchmark_scheme


def prop2_game(benchmark=(0.25, 0.5)) -> LinearContractGame:
    """Two actions whose agent utilities tie at p = 1/4 for every forecast.

    a1 yields value 1 at cost 1/4, a2 yields value 2 at cost 1/2. Values above 1
    fall outside the usual normalisation, hence ``strict=False``.
    """
    return LinearContractGame(
        states=("y0", "y1"),
        actions=("a1", "a2"),
        outcomes=("low", "high"),
        value={"low": 1.0, "high": 2.0},
        cost={"a1": 0.25, "a2": 0.5},
        outcome_map={"a1": {"y0": "low", "y1": "low"}, "a2": {"y0": "high", "y1": "high"}},
        benchmark=benchmark,
        strict=False,
    )


def prosecutor_game(prior: float = 0.3, benchmark=None) -> PersuasionGame:
    """Judge acquits or convicts; the prosecutor only wants convictions.

    The default benchmark holds the no-information scheme and the optimal
    split of ``prior`` into posteriors 0 and 1/2.
    """
    g = PersuasionGame(
        strategies=("acquit", "convict"),
        agent_utility=[[1.0, 0.0], [0.0, 1.0]],
        principal_value=[0.0, 1.0],
        states=("innocent", "guilty"),
    )
    if benchmark is None:
        benchmark = [SignalScheme.from_array([[1.0, 1.0], [0.0, 0.0]]), benchmark_scheme(g, prior, [0.0, 0.5])]
    g.benchmark = tuple(g.check_policy(b) for b in benchmark)
    return g


def lower_bound_game(benchmark=(0.5, 0.6)) -> LinearContractGame:
    """Work/shirk game behind the lower-bound construction.

    Work costs 1 and completes the task only in state M; a completed task is
    worth 2 to the principal.
    """
    return LinearContractGame(
        states=("M", "H"),
        actions=("work", "shirk"),
        outcomes=("done", "fail"),
        value={"done": 2.0, "fail": 0.0},
        cost={"work": 1.0, "shirk": 0.0},
        outcome_map={"work": {"M": "done", "H": "fail"}, "shirk": {"M": "fail", "H": "fail"}},
        benchmark=benchmark,
        strict=False,
    )


def effort_game(benchmark=(0.5, 0.8)) -> LinearContractGame:
    """Two actions whose utility gap is nonzero in every state for p not equal to 0.2.

    Shirking only fails on hard tasks; working always succeeds at cost 0.2.
    """
    return LinearContractGame(
        states=("easy", "hard"),
        actions=("shirk", "work"),
        outcomes=("success", "failure"),
        value={"success": 1.0, "failure": 0.0},
        cost={"shirk": 0.0, "work": 0.2},
        outcome_map={
            "shirk": {"easy": "success", "hard": "failure"},
            "work": {"easy": "success", "hard": "success"},
        },
        benchmark=benchmark,
    )
