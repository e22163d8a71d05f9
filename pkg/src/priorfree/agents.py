"""Agent learning rules: recommendation follower, contextual swap-regret learner,
and the clairvoyant lower-bound adversary.

All agents act on ``R`` repetitions at once. Within a run the policy and
recommendation sequences are shared by every repetition (they depend only on
forecasts), so an agent receives one context per round and returns an array of
``R`` actions. Each agent instance owns one PRNG stream.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Hashable, Sequence

import numpy as np

from .game import DomainError

RESIDUAL_TOL = 1e-8


@dataclass(frozen=True)
class ContextKey:
    policy: Hashable
    recommendation: int


class Follower:
    kind = "follower"

    def __init__(self, n_actions: int, reps: int = 1, rng: np.random.Generator | None = None):
        self.n_actions, self.reps = n_actions, reps

    def act(self, t: int, policy, recommendation: int) -> np.ndarray:
        return np.full(self.reps, int(recommendation), dtype=np.int64)

    def observe(self, t, policy, recommendation, actions, y, utilities):
        pass


def follower_act(policy, recommendation: int) -> int:
    return int(recommendation)


# ---------------------------------------------------------------------------
# Blum-Mansour swap-regret learner, one copy per (policy, recommendation)


@dataclass
class _Context:
    gains: np.ndarray  # (R, A, A): sub-learner i's cumulative weighted utility of action j
    q: np.ndarray  # (R, A)
    regret: np.ndarray  # (R, A, A): sum of U(j) over rounds where i was played
    n: int = 0


def _stationary(M: np.ndarray, prev: np.ndarray) -> np.ndarray:
    """Row vectors q with q M = q for a batch of row-stochastic matrices M."""
    R, A, _ = M.shape
    if A == 1:
        return np.ones((R, 1))
    if A == 2:
        a, b = M[:, 0, 1], M[:, 1, 0]
        den = a + b
        q = prev.copy()
        ok = den > 1e-300
        q[ok, 0] = b[ok] / den[ok]
        q[ok, 1] = a[ok] / den[ok]
        return q
    B = np.transpose(M, (0, 2, 1)) - np.eye(A)
    B[:, -1, :] = 1.0
    rhs = np.zeros((R, A))
    rhs[:, -1] = 1.0
    try:
        q = np.linalg.solve(B, rhs[..., None])[..., 0]
    except np.linalg.LinAlgError:
        q = prev.copy()
        for _ in range(500):
            nxt = np.einsum("ri,rij->rj", q, M)
            if np.abs(nxt - q).max() < 1e-10:
                q = nxt
                break
            q = nxt
    q = np.clip(q, 0, None)
    return q / q.sum(axis=1, keepdims=True)


class SwapLearner:
    """Per-context Blum-Mansour reduction over Hedge sub-learners.

    The learning rate of a context is sqrt(ln A / 2^k) while its round count
    lies in [2^k, 2^(k+1)) (doubling trick on the rate, no restarts).
    """

    kind = "swap"

    def __init__(self, n_actions: int, reps: int = 1, rng: np.random.Generator | None = None):
        if n_actions < 1:
            raise DomainError("need at least one action")
        self.n_actions, self.reps = n_actions, reps
        self.rng = rng or np.random.default_rng(0)
        self.contexts: dict[ContextKey, _Context] = {}
        self._lookup: dict[tuple, _Context] = {}
        self._rows = np.arange(reps)
        self.max_residual = 0.0

    def context(self, policy, recommendation) -> _Context:
        ctx = self._lookup.get((policy, recommendation))
        if ctx is None:
            R, A = self.reps, self.n_actions
            ctx = _Context(np.zeros((R, A, A)), np.full((R, A), 1.0 / A), np.zeros((R, A, A)))
            self.contexts[ContextKey(policy, int(recommendation))] = ctx
            self._lookup[(policy, recommendation)] = ctx
        return ctx

    def eta(self, n: int) -> float:
        k = max(1, n).bit_length() - 1
        return math.sqrt(math.log(self.n_actions) / 2 ** k) if self.n_actions > 1 else 0.0

    def mixture(self, policy, recommendation) -> np.ndarray:
        return self.context(policy, recommendation).q

    def sample(self, q: np.ndarray) -> np.ndarray:
        u = self.rng.random(len(q))
        a = (q.cumsum(axis=1) <= u[:, None]).sum(axis=1)
        return np.minimum(a, self.n_actions - 1)

    def act(self, t: int, policy, recommendation: int) -> np.ndarray:
        return self.sample(self.context(policy, recommendation).q)

    def observe(self, t, policy, recommendation, actions, y, utilities):
        """``utilities`` is the vector U(., p, y_t) over actions."""
        ctx = self.context(policy, recommendation)
        u = np.asarray(utilities, dtype=float)
        ctx.regret[self._rows, actions] += u
        ctx.gains += ctx.q[:, :, None] * u
        ctx.n += 1
        z = self.eta(ctx.n) * ctx.gains
        z -= z.max(axis=2, keepdims=True)
        M = np.exp(z)
        M /= M.sum(axis=2, keepdims=True)
        q = ctx.q = _stationary(M, ctx.q)
        res = float(np.abs(np.matmul(q[:, None, :], M)[:, 0, :] - q).max())
        if res > self.max_residual:
            self.max_residual = res

    def swap_regret(self) -> np.ndarray:
        """Internal accounting: sum over contexts and played actions of the best swap gain, per repetition."""
        total = np.zeros(self.reps)
        for ctx in self.contexts.values():
            diag = np.diagonal(ctx.regret, axis1=1, axis2=2)
            total += (ctx.regret.max(axis=2) - diag).sum(axis=1)
        return total


def swap_learner_act(state: SwapLearner, context: ContextKey, rng: np.random.Generator | None = None) -> np.ndarray:
    q = state.context(context.policy, context.recommendation).q
    if rng is not None:
        u = rng.random(len(q))
        return np.minimum((np.cumsum(q, axis=1) <= u[:, None]).sum(axis=1), state.n_actions - 1)
    return state.sample(q)


def swap_learner_update(state: SwapLearner, context: ContextKey, utilities, actions) -> SwapLearner:
    state.observe(None, context.policy, context.recommendation, np.asarray(actions), None, utilities)
    return state


# ---------------------------------------------------------------------------
# clairvoyant adversary


def balanced_threshold(T: int) -> float:
    """theta(T) = sqrt(12 T ln(2 (1 + log2 T)^2))."""
    if T < 2:
        raise DomainError("balanced_threshold needs T >= 2")
    return math.sqrt(12 * T * math.log(2 * (1 + math.log2(T)) ** 2))


PHASE_A, PHASE_B, PHASE_NOREG = "a*", "b*", "noreg"


@dataclass
class AdversaryScript:
    states: np.ndarray
    phase: str
    trigger: float
    threshold: float
    medium: int = 0
    noreg_from: int | None = None
    m_counts: np.ndarray = field(default=None, repr=False)
    h_counts: np.ndarray = field(default=None, repr=False)

    @property
    def T(self) -> int:
        return len(self.states)

    def balanced(self, t: int) -> bool:
        """|m_t - h_t| <= theta over the first t rounds (t is 1-based)."""
        return abs(int(self.m_counts[t - 1]) - int(self.h_counts[t - 1])) <= self.threshold

    @property
    def balanced_all(self) -> bool:
        return bool(np.all(np.abs(self.m_counts - self.h_counts) <= self.threshold))


class AdversaryL:
    """Clairvoyant agent for the work/shirk lower-bound game.

    Round 1 shirks. If y_1 is the medium state the trigger is (0.5, work) and
    the agent works exactly on medium rounds; otherwise the trigger is
    (0.6, work) and on hard rounds it shirks with probability 4/5. The first
    round where the trigger is not offered, or the state counts leave the
    balanced band, switches every repetition to the internal swap learner for
    good. That learner observes every round from the start.
    """

    kind = "adversary-L"

    def __init__(self, game, states: Sequence[int], reps: int = 1, rng: np.random.Generator | None = None,
                 medium: str = "M", work: str = "work", shirk: str = "shirk"):
        states = np.asarray(states, dtype=np.int64)
        if len(states) < 1:
            raise DomainError("the adversary needs the full state sequence")
        self.n_actions, self.reps = game.n_actions, reps
        self.rng = rng or np.random.default_rng(0)
        self.work, self.shirk = game.actions.index(work), game.actions.index(shirk)
        m = game.states.index(medium)
        is_m = states == m
        first_m = bool(is_m[0])
        T = len(states)
        self.script = AdversaryScript(
            states=states,
            phase=PHASE_A if first_m else PHASE_B,
            trigger=0.5 if first_m else 0.6,
            threshold=balanced_threshold(max(T, 2)),
            medium=m,
            m_counts=np.cumsum(is_m),
            h_counts=np.cumsum(~is_m),
        )
        self.noreg = SwapLearner(self.n_actions, reps, self.rng)

    @property
    def phase(self) -> str:
        return self.script.phase

    def act(self, t: int, policy, recommendation: int) -> np.ndarray:
        sc = self.script
        if t > sc.T or t < 1:
            raise DomainError(f"round {t} outside the adversary's horizon {sc.T}")
        if t == 1:
            return np.full(self.reps, self.shirk, dtype=np.int64)
        if sc.phase != PHASE_NOREG:
            on_trigger = abs(float(policy) - sc.trigger) <= 1e-9 and int(recommendation) == self.work
            if on_trigger and sc.balanced(t):
                return self._scripted(t)
            sc.phase = PHASE_NOREG
            sc.noreg_from = t
        return self.noreg.act(t, policy, recommendation)

    def _scripted(self, t: int) -> np.ndarray:
        sc = self.script
        if sc.states[t - 1] == sc.medium:
            return np.full(self.reps, self.work, dtype=np.int64)
        if sc.phase == PHASE_A:
            return np.full(self.reps, self.shirk, dtype=np.int64)
        shirk = self.rng.random(self.reps) < 0.8
        return np.where(shirk, self.shirk, self.work).astype(np.int64)

    def observe(self, t, policy, recommendation, actions, y, utilities):
        self.noreg.observe(t, policy, recommendation, actions, y, utilities)


def adversary_act(agent: AdversaryL, t: int, policy, recommendation: int) -> np.ndarray:
    return agent.act(t, policy, recommendation)


AGENT_KINDS = ("follower", "swap", "adversary-L")


def make_agent(kind: str, game, reps: int, rng: np.random.Generator, states=None, **kw):
    if kind == "follower":
        return Follower(game.n_actions, reps, rng)
    if kind == "swap":
        return SwapLearner(game.n_actions, reps, rng)
    if kind == "adversary-L":
        if states is None:
            raise DomainError("adversary-L needs the state sequence")
        return AdversaryL(game, states, reps, rng, **kw)
    raise DomainError(f"unknown agent kind {kind!r}; expected one of {AGENT_KINDS}")
