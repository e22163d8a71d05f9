"""Stable contract oracle for linear contracts and the lemmas it rests on."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..game import (
    TAU_EQ,
    DomainError,
    Game,
    LinearContractGame,
    argmax_first,
    expected_table,
    optimistic_from_tables,
)

AGENT_GAP = "agent-gap"
PRINCIPAL_GAP = "principal-gap"
VIOLATED = "violated"


@dataclass(frozen=True)
class LinearOracleParams:
    beta: float
    delta: float

    def __post_init__(self):
        if not (self.beta > 0 and self.delta > 0):
            raise DomainError("beta and delta must be positive")
        if self.delta > 1:
            raise DomainError("delta must be at most 1")

    @classmethod
    def theorem(cls, T: int) -> "LinearOracleParams":
        beta = T ** -0.25
        return cls(beta=beta, delta=math.sqrt(beta))

    def eps(self, game: LinearContractGame) -> float:
        return game.delta_c * self.beta / 2 if game.n_actions > 1 else 0.0

    def grid(self) -> np.ndarray:
        k = int(math.floor(1 / self.delta + 1e-9))
        return np.arange(k + 1) * self.delta


@dataclass
class StabilityCertificate:
    policy: object
    beta: float
    gamma: float
    best: int
    verdicts: dict = field(default_factory=dict)

    @property
    def valid(self) -> bool:
        return all(v != VIOLATED for v in self.verdicts.values())

    def violated(self) -> list[int]:
        return [a for a, v in self.verdicts.items() if v == VIOLATED]


def stability_from_tables(u, v, beta, gamma, policy=None) -> StabilityCertificate:
    best = optimistic_from_tables(u, v)
    cert = StabilityCertificate(policy, beta, gamma, best)
    for a in range(len(u)):
        if a == best:
            continue
        if u[a] <= u[best] - beta + TAU_EQ:
            cert.verdicts[a] = AGENT_GAP
        elif v[a] >= v[best] - gamma - TAU_EQ:
            cert.verdicts[a] = PRINCIPAL_GAP
        else:
            cert.verdicts[a] = VIOLATED
    return cert


def is_stable(game: Game, policy, forecast, beta: float, gamma: float) -> StabilityCertificate:
    """(beta, gamma)-stability of ``policy`` under ``forecast``.

    Each non-optimal action must either lose the agent at least ``beta`` or cost
    the principal at most ``gamma``, relative to the optimistic best response.
    """
    if beta < 0 or gamma < 0:
        raise DomainError("beta and gamma must be nonnegative")
    u, v = expected_table(game, policy, forecast)
    return stability_from_tables(u, v, beta, gamma, policy)


def tie_contracts(game: LinearContractGame, forecast, best_only: bool = True) -> list[tuple[float, tuple[int, int]]]:
    """Contracts in [0,1] at which two actions give the agent equal utility.

    With ``best_only`` (default) only ties between two exact best responses are
    kept, i.e. the contracts at which the best-response set has several members.
    """
    f = game.f(np.asarray(forecast, dtype=float))
    c = game.cost_vec
    out = []
    for i in range(game.n_actions):
        for j in range(i + 1, game.n_actions):
            df = f[i] - f[j]
            if abs(df) <= 1e-15:
                continue
            p = (c[i] - c[j]) / df
            if not (-TAU_EQ <= p <= 1 + TAU_EQ):
                continue
            p = min(max(p, 0.0), 1.0)
            if best_only:
                u, _ = expected_table(game, p, forecast)
                top = u.max() - TAU_EQ
                if u[i] < top or u[j] < top:
                    continue
            out.append((float(p), (i, j)))
    out.sort()
    return out


def distinct_contracts(ties, tol: float = 1e-9) -> list[float]:
    ps = []
    for p, _ in ties:
        if not ps or p - ps[-1] > tol:
            ps.append(p)
    return ps


def max_f_in_br(game: LinearContractGame, p: float, forecast, eps: float) -> float:
    u, _ = expected_table(game, p, forecast)
    f = game.f(np.asarray(forecast, dtype=float))
    return float(f[u >= u.max() - eps - TAU_EQ].max())


def check_monotonicity(game: LinearContractGame, forecast, p1: float, p2: float, eps: float) -> bool:
    """max f over the eps-best responses is nondecreasing in the contract."""
    if p1 < p2:
        raise DomainError("check_monotonicity needs p1 >= p2")
    if eps < 0:
        raise DomainError("eps must be nonnegative")
    return max_f_in_br(game, p1, forecast, eps) >= max_f_in_br(game, p2, forecast, eps) - 1e-12


def optimistic_benchmark(game: Game, forecast, eps: float, benchmark=None):
    """(p_opt, a_opt, value): best benchmark policy when the agent may pick any eps-best response."""
    bench = game.benchmark if benchmark is None else benchmark
    if not bench:
        raise DomainError("empty benchmark set")
    best_val, best_p, best_a = None, None, None
    for p in bench:
        u, v = expected_table(game, p, forecast)
        a = optimistic_from_tables(u, v, eps)
        if best_val is None or v[a] > best_val + TAU_EQ:
            best_val, best_p, best_a = float(v[a]), p, a
    return best_p, best_a, best_val


def linear_stable_oracle(game: LinearContractGame, forecast, params: LinearOracleParams, benchmark=None, stability=is_stable) -> float:
    """Smallest stable grid contract at or above the optimistic benchmark contract.

    Returns 1 when no grid point qualifies; at p = 1 every action gives the
    principal 0 so that contract is trivially stable.
    """
    if not isinstance(game, LinearContractGame):
        raise DomainError("linear_stable_oracle needs a linear-contract game")
    pi = np.asarray(forecast, dtype=float)
    eps = params.eps(game)
    p_opt, _, _ = optimistic_benchmark(game, pi, eps, benchmark)
    beta_s = eps
    for p in params.grid():
        if p < p_opt - TAU_EQ:
            continue
        if stability(game, float(p), pi, beta_s, 0.0).valid:
            return float(p)
    return 1.0
