"""Finite principal-agent games and the best-response primitives.

Three game families share one interface:

* ``LinearContractGame``: the principal offers a share ``p`` of the realized
  outcome value. ``V = (1-p) v(o(a,y))`` and ``U = p v(o(a,y)) - c(a)``.
* ``PersuasionGame``: binary state, the principal commits to a signal scheme and
  the agent picks a map from signals to strategies.
* ``TabularGame``: explicit ``U``/``V`` tables over (action, policy, state).

Every game exposes ``payoffs(policy) -> (U, V)`` where both arrays have shape
``(n_actions, n_states)``. All expected quantities are ``table @ forecast``.
Actions are always referred to by index.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Any, Hashable, Sequence

import numpy as np

TAU_EQ = 1e-9  # absolute tolerance for every utility comparison


class DomainError(ValueError):
    """Invalid action, policy, forecast or game definition."""


def as_forecast(probs: Sequence[float], n_states: int | None = None) -> np.ndarray:
    pi = np.asarray(probs, dtype=float)
    if pi.ndim != 1:
        raise DomainError("forecast must be a vector")
    if n_states is not None and pi.shape[0] != n_states:
        raise DomainError(f"forecast has {pi.shape[0]} entries, expected {n_states}")
    if np.any(pi < -1e-12) or np.any(pi > 1 + 1e-12) or abs(pi.sum() - 1.0) > 1e-9:
        raise DomainError(f"forecast {pi} is not a probability vector")
    return pi


@dataclass(frozen=True)
class SignalScheme:
    """Signal scheme p(s|y) for a binary state. Rows are signals, columns states."""

    matrix: tuple[tuple[float, float], ...]

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[1] != 2:
            raise DomainError("signal scheme must have shape (signals, 2)")
        if np.any(m < -1e-12) or np.any(m > 1 + 1e-12):
            raise DomainError("signal probabilities must lie in [0,1]")
        if np.any(np.abs(m.sum(axis=0) - 1.0) > 1e-9):
            raise DomainError("each column of a signal scheme must sum to 1")

    @classmethod
    def from_array(cls, arr) -> "SignalScheme":
        arr = np.asarray(arr, dtype=float)
        return cls(tuple(tuple(float(x) for x in row) for row in arr))

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.matrix, dtype=float)

    @property
    def n_signals(self) -> int:
        return len(self.matrix)

    def posteriors(self, mu: float) -> list[tuple[float, float]]:
        """(tau_s, mu_s) for every signal; mu_s is nan when tau_s == 0."""
        m = self.array
        out = []
        for s in range(m.shape[0]):
            tau = m[s, 1] * mu + m[s, 0] * (1 - mu)
            post = m[s, 1] * mu / tau if tau > 0 else float("nan")
            out.append((float(tau), float(post)))
        return out

    def to_json(self) -> dict:
        return {"matrix": [list(r) for r in self.matrix]}

    def label(self) -> str:
        return ";".join(f"{a:.6g},{b:.6g}" for a, b in self.matrix)


class Game:
    """Shared behaviour. Subclasses set ``states``, ``actions``, ``benchmark``."""

    kind = "abstract"
    states: tuple[str, ...]
    actions: tuple
    benchmark: tuple

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    def check_policy(self, policy) -> Hashable:
        raise NotImplementedError

    def _payoffs(self, policy) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def payoffs(self, policy) -> tuple[np.ndarray, np.ndarray]:
        key = self.check_policy(policy)
        cache = self.__dict__.setdefault("_cache", {})
        hit = cache.get(key)
        if hit is None:
            U, V = self._payoffs(key)
            U.setflags(write=False)
            V.setflags(write=False)
            hit = cache[key] = (U, V)
            if len(cache) > 50000:
                cache.clear()
        return hit

    def policy_label(self, policy) -> str:
        return str(policy)

    def action_label(self, a: int) -> str:
        return str(self.actions[a])


class LinearContractGame(Game):
    kind = "linear"

    def __init__(
        self,
        states: Sequence[str],
        actions: Sequence[str],
        outcomes: Sequence[str],
        value: dict,
        cost: dict,
        outcome_map: dict,
        benchmark: Sequence[float] = (),
        strict: bool = True,
    ):
        self.states = _labels(states, "states")
        self.actions = _labels(actions, "actions", minimum=1)
        self.outcomes = _labels(outcomes, "outcomes", minimum=1)
        self.value = {o: float(value[o]) for o in self.outcomes}
        self.cost = {a: float(cost[a]) for a in self.actions}
        self.outcome_map = {a: {y: outcome_map[a][y] for y in self.states} for a in self.actions}
        for a in self.actions:
            for y in self.states:
                if self.outcome_map[a][y] not in self.value:
                    raise DomainError(f"outcome_map[{a}][{y}] is not a declared outcome")
        self.strict = strict
        vals = np.array(list(self.value.values()))
        costs = np.array([self.cost[a] for a in self.actions])
        if strict and (vals.min() < 0 or vals.max() > 1 or costs.min() < 0 or costs.max() > 1):
            raise DomainError("values and costs must lie in [0,1] (pass strict=False to relax)")
        if len(costs) > 1 and self.delta_c <= 0:
            raise DomainError("action costs must be pairwise distinct")
        # vals_table[a, y] = v(o(a, y))
        self.vals_table = np.array(
            [[self.value[self.outcome_map[a][y]] for y in self.states] for a in self.actions]
        )
        self.cost_vec = costs
        self.benchmark = tuple(self.check_policy(p) for p in benchmark)

    @property
    def delta_c(self) -> float:
        c = np.sort(np.array([self.cost[a] for a in self.actions]))
        if len(c) < 2:
            return float("inf")
        return float(np.min(np.diff(c)))

    def check_policy(self, policy) -> float:
        try:
            p = float(policy)
        except (TypeError, ValueError):
            raise DomainError(f"contract {policy!r} is not a number") from None
        if not (-1e-12 <= p <= 1 + 1e-12):
            raise DomainError(f"contract {p} outside [0,1]")
        return min(max(p, 0.0), 1.0)

    def _payoffs(self, p):
        U = p * self.vals_table - self.cost_vec[:, None]
        V = (1 - p) * self.vals_table
        return U, V

    def f(self, forecast) -> np.ndarray:
        """Expected outcome value per action, f(pi, a)."""
        return self.vals_table @ forecast

    def policy_label(self, policy) -> str:
        return f"{float(policy):.10g}"


class PersuasionGame(Game):
    """Binary-state persuasion. ``u[s, y]`` agent utility, ``v[s]`` principal value.

    The agent's action is a map from signal index to strategy index; the
    signal set is identified with the strategy set (straightforward schemes).
    """

    kind = "persuasion"

    def __init__(
        self,
        strategies: Sequence[str],
        agent_utility,
        principal_value,
        states: Sequence[str] = ("0", "1"),
        benchmark: Sequence[SignalScheme] = (),
    ):
        self.strategies = _labels(strategies, "strategies", minimum=1)
        self.states = _labels(states, "states")
        if len(self.states) != 2:
            raise DomainError("persuasion games need exactly two states")
        self.u = np.asarray(agent_utility, dtype=float).reshape(len(self.strategies), 2)
        self.v = np.asarray(principal_value, dtype=float).reshape(len(self.strategies))
        if self.u.min() < 0 or self.u.max() > 1 or self.v.min() < 0 or self.v.max() > 1:
            raise DomainError("persuasion utilities must lie in [0,1]")
        n = len(self.strategies)
        if n > 5:
            raise DomainError("persuasion games are limited to 5 strategies (n^n agent maps)")
        self.maps = np.array(list(itertools.product(range(n), repeat=n)), dtype=int).reshape(-1, n)
        self.actions = tuple(tuple(int(x) for x in m) for m in self.maps)
        self.benchmark = tuple(self.check_policy(s) for s in benchmark)

    @property
    def n_strategies(self) -> int:
        return len(self.strategies)

    def check_policy(self, policy) -> SignalScheme:
        if not isinstance(policy, SignalScheme):
            raise DomainError("persuasion policies are SignalScheme instances")
        if policy.n_signals != self.n_strategies:
            raise DomainError("signal scheme must have one signal per strategy")
        return policy

    def _payoffs(self, scheme):
        phi = scheme.array  # (S, 2)
        # u at the strategy chosen for each signal: (n_maps, S, 2)
        uu = self.u[self.maps]
        U = np.einsum("sy,msy->my", phi, uu)
        V = np.einsum("sy,ms->my", phi, self.v[self.maps])
        return U, V

    def follow_action(self) -> int:
        """Index of the identity map (play the recommended strategy)."""
        return self.actions.index(tuple(range(self.n_strategies)))

    def action_label(self, a):
        return "|".join(self.strategies[i] for i in self.actions[a])

    def policy_label(self, policy):
        return policy.label()

    def line(self, s: int) -> tuple[float, float]:
        """Intercept and slope of u(s, mu) in mu = P(state 1)."""
        return float(self.u[s, 0]), float(self.u[s, 1] - self.u[s, 0])


class TabularGame(Game):
    kind = "tabular"

    def __init__(self, states, actions, policies, U, V, benchmark=None):
        self.states = _labels(states, "states")
        self.actions = _labels(actions, "actions", minimum=1)
        self.policies = _labels(policies, "policies", minimum=1)
        self.U = np.asarray(U, dtype=float)
        self.V = np.asarray(V, dtype=float)
        shape = (len(self.actions), len(self.policies), len(self.states))
        if self.U.shape != shape or self.V.shape != shape:
            raise DomainError(f"U and V tables must have shape {shape}")
        if np.abs(self.U).max() > 1 or np.abs(self.V).max() > 1:
            raise DomainError("tabular utilities must lie in [-1,1]")
        if benchmark is None:
            benchmark = range(len(self.policies))
        self.benchmark = tuple(self.check_policy(p) for p in benchmark)

    def check_policy(self, policy) -> int:
        if isinstance(policy, str) and policy in self.policies:
            return self.policies.index(policy)
        if isinstance(policy, (int, np.integer)) and 0 <= int(policy) < len(self.policies):
            return int(policy)
        raise DomainError(f"unknown policy {policy!r}")

    def _payoffs(self, k):
        return self.U[:, k, :].copy(), self.V[:, k, :].copy()

    def policy_label(self, policy):
        return self.policies[policy]


def _labels(xs, what, minimum=2) -> tuple:
    xs = tuple(str(x) for x in xs)
    if len(xs) < minimum:
        raise DomainError(f"need at least {minimum} {what}")
    if len(set(xs)) != len(xs):
        raise DomainError(f"{what} labels must be distinct")
    return xs


# ---------------------------------------------------------------------------
# best-response primitives


def expected_table(game: Game, policy, forecast) -> tuple[np.ndarray, np.ndarray]:
    """Expected U and V for every action under ``forecast``."""
    U, V = game.payoffs(policy)
    pi = np.asarray(forecast, dtype=float)
    if pi.shape != (game.n_states,):
        raise DomainError("forecast length does not match the state space")
    return U @ pi, V @ pi


def expected_utilities(game: Game, action: int, policy, forecast) -> tuple[float, float]:
    if not (isinstance(action, (int, np.integer)) and 0 <= action < game.n_actions):
        raise DomainError(f"invalid action index {action!r}")
    u, v = expected_table(game, policy, as_forecast(forecast, game.n_states))
    return float(u[action]), float(v[action])


def _br_mask(u: np.ndarray, eps: float) -> np.ndarray:
    return u >= u.max() - eps - TAU_EQ


def best_response_set(game: Game, policy, forecast, eps: float = 0.0) -> list[int]:
    if eps < 0:
        raise DomainError("eps must be nonnegative")
    u, _ = expected_table(game, policy, forecast)
    return [int(a) for a in np.flatnonzero(_br_mask(u, eps))]


def argmax_first(x: np.ndarray, mask: np.ndarray | None = None) -> int:
    """Lowest index whose value is within TAU_EQ of the (masked) maximum."""
    if mask is None:
        mask = np.ones(x.shape, dtype=bool)
    best = x[mask].max()
    return int(np.flatnonzero(mask & (x >= best - TAU_EQ))[0])


def optimistic_from_tables(u: np.ndarray, v: np.ndarray, eps: float = 0.0) -> int:
    return argmax_first(v, _br_mask(u, eps))


def optimistic_best_response(game: Game, policy, forecast, eps: float = 0.0) -> int:
    """a*(p, pi, eps): principal-preferred action among the eps-best responses."""
    if eps < 0:
        raise DomainError("eps must be nonnegative")
    u, v = expected_table(game, policy, forecast)
    return optimistic_from_tables(u, v, eps)


def optimistic_value(game: Game, policy, forecast, eps: float = 0.0) -> float:
    u, v = expected_table(game, policy, forecast)
    return float(v[optimistic_from_tables(u, v, eps)])


def principal_best_policy(game: Game, forecast, benchmark=None, eps: float = 0.0):
    """p*(pi): benchmark policy maximizing V at the optimistic eps-best response.

    Ties go to the earliest policy in ``benchmark`` order.
    """
    bench = game.benchmark if benchmark is None else tuple(game.check_policy(p) for p in benchmark)
    if not bench:
        raise DomainError("empty benchmark set")
    vals = np.array([optimistic_value(game, p, forecast, eps) for p in bench])
    return bench[argmax_first(vals)]


# ---------------------------------------------------------------------------
# JSON loading


def game_from_dict(d: dict) -> Game:
    try:
        kind = d["kind"]
        if kind == "linear":
            return LinearContractGame(
                states=d["states"],
                actions=d["actions"],
                outcomes=d["outcomes"],
                value=d["value"],
                cost=d["cost"],
                outcome_map=d["outcome_map"],
                benchmark=d.get("benchmark", ()),
                strict=d.get("strict", True),
            )
        if kind == "persuasion":
            strategies = d["strategies"]
            u = [d["agent_utility"][s] for s in strategies]
            v = [d["principal_value"][s] for s in strategies]
            bench = [scheme_from_json(b, d.get("prior")) for b in d.get("benchmark", ())]
            return PersuasionGame(strategies, u, v, d.get("states", ("0", "1")), bench)
        if kind == "tabular":
            return TabularGame(d["states"], d["actions"], d["policies"], d["U"], d["V"], d.get("benchmark"))
    except KeyError as e:
        raise DomainError(f"game description is missing field {e.args[0]!r}") from None
    raise DomainError(f"unknown game kind {d.get('kind')!r}")


def scheme_from_json(d: Any, prior: float | None = None) -> SignalScheme:
    """Either ``{"matrix": ...}`` or ``{"posteriors": [[tau, mu], ...], "signals": [...]}``."""
    if "matrix" in d:
        return SignalScheme.from_array(d["matrix"])
    if "posteriors" in d:
        from .oracles.persuasion import PosteriorDistribution, scheme_from_posteriors

        mu = d.get("prior", prior)
        if mu is None:
            raise DomainError("posterior-form scheme needs a prior")
        pd = PosteriorDistribution(tuple((float(t), float(m)) for t, m in d["posteriors"]), float(mu))
        return scheme_from_posteriors(pd, d["signals"], d["n_signals"])
    raise DomainError("scheme needs 'matrix' or 'posteriors'")


def game_to_dict(game: Game) -> dict:
    if isinstance(game, LinearContractGame):
        return {
            "kind": "linear",
            "states": list(game.states),
            "actions": list(game.actions),
            "outcomes": list(game.outcomes),
            "value": dict(game.value),
            "cost": dict(game.cost),
            "outcome_map": {a: dict(m) for a, m in game.outcome_map.items()},
            "benchmark": list(game.benchmark),
            "strict": game.strict,
        }
    if isinstance(game, PersuasionGame):
        return {
            "kind": "persuasion",
            "states": list(game.states),
            "strategies": list(game.strategies),
            "agent_utility": {s: list(map(float, game.u[i])) for i, s in enumerate(game.strategies)},
            "principal_value": {s: float(game.v[i]) for i, s in enumerate(game.strategies)},
            "benchmark": [b.to_json() for b in game.benchmark],
        }
    if isinstance(game, TabularGame):
        return {
            "kind": "tabular",
            "states": list(game.states),
            "actions": list(game.actions),
            "policies": list(game.policies),
            "U": game.U.tolist(),
            "V": game.V.tolist(),
            "benchmark": list(game.benchmark),
        }
    raise DomainError("unknown game type")
