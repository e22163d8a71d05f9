"""Stable signal schemes for binary-state persuasion.

Pipeline: upper envelope of the agent's utility lines -> concave closure of the
principal's value -> push interior extreme points a distance beta inside the
interval of their optimal strategy -> split the prior over the two bracketing
points -> round the scheme to a delta grid.

``mu`` always denotes the probability of state 1.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..game import TAU_EQ, DomainError, PersuasionGame, SignalScheme, argmax_first


@dataclass(frozen=True)
class EnvelopeDecomposition:
    intervals: tuple[tuple[float, float], ...]  # ordered by position in [0,1]
    strategies: tuple[int, ...]  # strategy index owning each interval
    C: float
    c1: float

    @property
    def c2(self) -> float:
        return 2 * math.sqrt((1 / (self.c1 * self.C)) * (1 + 1 / self.C))

    @property
    def boundaries(self) -> list[float]:
        return [0.0] + [hi for _, hi in self.intervals[:-1]] + [1.0]

    def interval_of(self, s: int) -> tuple[float, float]:
        return self.intervals[self.strategies.index(s)]


def best_strategy(game: PersuasionGame, mu: float) -> int:
    """s*(mu): agent-optimal strategy, ties to the principal's favourite, then lowest index."""
    u = game.u[:, 0] * (1 - mu) + game.u[:, 1] * mu
    mask = u >= u.max() - TAU_EQ
    return argmax_first(game.v, mask)


def build_envelope(game: PersuasionGame) -> EnvelopeDecomposition:
    n = game.n_strategies
    lines = [game.line(s) for s in range(n)]
    spans = []
    for s in range(n):
        b, k = lines[s]
        lo, hi = 0.0, 1.0
        for t in range(n):
            if t == s:
                continue
            b2, k2 = lines[t]
            dk = k - k2
            if abs(dk) <= 1e-15:
                if b2 >= b - 1e-15:
                    lo, hi = 1.0, 0.0
                continue
            x = (b2 - b) / dk
            if dk > 0:
                lo = max(lo, x)
            else:
                hi = min(hi, x)
        if hi - lo <= TAU_EQ:
            raise DomainError(
                f"strategy {game.strategies[s]!r} is never strictly optimal; every strategy must win on an interval"
            )
        spans.append((lo, hi, s))
    spans.sort()
    if abs(spans[0][0]) > 1e-9 or abs(spans[-1][1] - 1) > 1e-9:
        raise DomainError("envelope intervals do not cover [0,1]")
    for (_, hi, _), (lo, _, _) in zip(spans, spans[1:]):
        if abs(hi - lo) > 1e-9:
            raise DomainError("envelope intervals are not contiguous")
    slopes = [k for _, k in lines]
    c1 = min((abs(slopes[i] - slopes[j]) for i in range(n) for j in range(i + 1, n)), default=float("inf"))
    intervals = tuple((float(lo), float(hi)) for lo, hi, _ in spans)
    return EnvelopeDecomposition(
        intervals=intervals,
        strategies=tuple(s for _, _, s in spans),
        C=float(min(hi - lo for lo, hi in intervals)),
        c1=float(c1),
    )


def upper_hull(xs, ys) -> list[int]:
    """Indices of the vertices of the upper concave hull; collinear points dropped."""
    order = sorted(range(len(xs)), key=lambda i: (xs[i], -ys[i]))
    hull: list[int] = []
    for i in order:
        if hull and abs(xs[hull[-1]] - xs[i]) <= 1e-15:
            continue  # same abscissa, lower value
        while len(hull) >= 2:
            o, a = hull[-2], hull[-1]
            cross = (xs[a] - xs[o]) * (ys[i] - ys[o]) - (ys[a] - ys[o]) * (xs[i] - xs[o])
            if cross >= -1e-13:
                hull.pop()
            else:
                break
        hull.append(i)
    return hull


@dataclass(frozen=True)
class ConcaveClosure:
    """Piecewise-linear concave function through ``points`` (sorted by mu)."""

    points: tuple[tuple[float, float], ...]
    strategies: tuple[int, ...]  # s*(mu_k) at each point

    @property
    def xs(self) -> np.ndarray:
        return np.array([p[0] for p in self.points])

    @property
    def ys(self) -> np.ndarray:
        return np.array([p[1] for p in self.points])

    def __call__(self, mu):
        return np.interp(mu, self.xs, self.ys)

    def bracket(self, mu: float) -> tuple[int, int, float]:
        """(k, l, tau) with mu = tau*x_k + (1-tau)*x_l; k == l when mu is a vertex."""
        xs = self.xs
        for k, x in enumerate(xs):
            if abs(x - mu) <= 1e-12:
                return k, k, 1.0
        l = int(np.searchsorted(xs, mu))
        k = l - 1
        if k < 0 or l >= len(xs):
            raise DomainError(f"mu={mu} outside the closure's support")
        tau = (xs[l] - mu) / (xs[l] - xs[k])
        return k, l, float(tau)


def concave_closure(game: PersuasionGame, envelope: EnvelopeDecomposition | None = None) -> ConcaveClosure:
    """v*(mu) = concave closure of mu -> v(s*(mu)). Candidate points are interval boundaries."""
    env = envelope or build_envelope(game)
    xs = env.boundaries
    strat = [best_strategy(game, x) for x in xs]
    ys = [float(game.v[s]) for s in strat]
    idx = upper_hull(xs, ys)
    return ConcaveClosure(tuple((xs[i], ys[i]) for i in idx), tuple(strat[i] for i in idx))


def stabilize_closure(game: PersuasionGame, envelope: EnvelopeDecomposition, closure: ConcaveClosure, beta: float) -> ConcaveClosure:
    """Move each interior extreme point ``beta`` into the interval of its strategy.

    The result v' is the concave hull over the moved points.
    """
    if beta < 0:
        raise DomainError("beta must be nonnegative")
    if beta >= envelope.C / 4:
        raise DomainError(f"beta={beta} must be below C/4={envelope.C / 4}")
    if beta == 0:
        return closure
    xs, ys, strat = [], [], []
    last = len(closure.points) - 1
    for j, ((mu, val), s) in enumerate(zip(closure.points, closure.strategies)):
        if 0 < j < last:
            lo, hi = envelope.interval_of(s)
            if lo >= mu - 1e-12:
                mu = mu + beta
            elif hi <= mu + 1e-12:
                mu = mu - beta
            else:
                raise DomainError("extreme point is not on an interval boundary")
        xs.append(mu)
        ys.append(val)
        strat.append(s)
    idx = upper_hull(xs, ys)
    return ConcaveClosure(tuple((xs[i], ys[i]) for i in idx), tuple(strat[i] for i in idx))


@dataclass(frozen=True)
class PosteriorDistribution:
    pairs: tuple[tuple[float, float], ...]  # (tau_i, mu_i)
    prior: float

    def __post_init__(self):
        taus = np.array([t for t, _ in self.pairs])
        mus = np.array([m for _, m in self.pairs])
        if np.any(taus < -1e-12) or abs(taus.sum() - 1) > 1e-9:
            raise DomainError("posterior weights must be a probability vector")
        if np.any(mus < -1e-12) or np.any(mus > 1 + 1e-12):
            raise DomainError("posterior means must lie in [0,1]")
        if abs(float(taus @ mus) - self.prior) > 1e-9:
            raise DomainError("posteriors are not Bayes-plausible for the prior")


def scheme_from_posteriors(dist: PosteriorDistribution, signals, n_signals: int) -> SignalScheme:
    """Signal scheme inducing ``dist``; posterior i is sent as signal ``signals[i]``."""
    mu = dist.prior
    m = np.zeros((n_signals, 2))
    heavy = signals[int(np.argmax([t for t, _ in dist.pairs]))]
    for (tau, post), s in zip(dist.pairs, signals):
        if mu > 0:
            m[s, 1] += tau * post / mu
        if mu < 1:
            m[s, 0] += tau * (1 - post) / (1 - mu)
    if mu <= 0:
        m[:, 1] = 0
        m[heavy, 1] = 1
    if mu >= 1:
        m[:, 0] = 0
        m[heavy, 0] = 1
    return SignalScheme.from_array(np.clip(m, 0, 1))


def single_signal_scheme(n_signals: int, s: int) -> SignalScheme:
    m = np.zeros((n_signals, 2))
    m[s, :] = 1
    return SignalScheme.from_array(m)


@dataclass(frozen=True)
class PersuasionOracleParams:
    beta: float
    delta: float
    x: float | None = None
    eps: float = 0.0

    def __post_init__(self):
        if self.beta <= 0 or self.delta <= 0:
            raise DomainError("beta and delta must be positive")
        if self.delta > self.beta ** 2 / 16 * (1 + 1e-9):
            raise DomainError("delta must be at most beta^2/16")
        inv = 1 / self.delta
        if abs(inv - round(inv)) > 1e-6:
            raise DomainError("1/delta must be an integer")
        if self.x is not None and not (0 <= self.x <= 1):
            raise DomainError("x must lie in [0,1]")

    @property
    def x_value(self) -> float:
        return self.beta if self.x is None else self.x

    @classmethod
    def with_beta(cls, beta: float, x: float | None = None, eps: float | None = None) -> "PersuasionOracleParams":
        delta = 1 / math.ceil(16 / beta ** 2 - 1e-9)
        return cls(beta=beta, delta=delta, x=x, eps=beta ** 2 if eps is None else eps)

    @classmethod
    def theorem(cls, T: int, C: float, scale: float | None = None) -> "PersuasionOracleParams":
        """eps = beta^2, x = beta, delta ~ beta^2/16 with beta = scale * T^(-1/10).

        The unscaled schedule gives beta >= 1/8 for every T below 2^30, so it
        cannot satisfy beta < C/4 at practical horizons; ``scale`` defaults to
        0.45*C, which keeps beta below C/4 for T >= 2^10 (smaller T is clamped).
        """
        if scale is None:
            scale = 0.45 * C
        beta = min(scale * T ** -0.1, 0.9 * C / 4)
        return cls.with_beta(beta)

    def stability(self, envelope: EnvelopeDecomposition) -> tuple[float, float]:
        """(agent gap, principal gap) the discretized scheme is guaranteed to satisfy."""
        x = self.x_value
        return x * envelope.c1 * self.beta / 2, max(x, math.sqrt(self.delta))

    def optimality_gap(self, envelope: EnvelopeDecomposition) -> float:
        return 3 * self.beta / envelope.C + envelope.c2 * math.sqrt(self.eps) + 2 * math.sqrt(self.delta)


def _pipeline(game: PersuasionGame, beta: float):
    cache = game.__dict__.setdefault("_oracle_cache", {})
    key = ("pipeline", beta)
    if key not in cache:
        env = build_envelope(game)
        closure = concave_closure(game, env)
        cache[key] = (env, closure, stabilize_closure(game, env, closure, beta))
    return cache[key]


def stabilized_posteriors(game: PersuasionGame, mu: float, beta: float):
    """Bayes-plausible split of ``mu`` over the stabilized extreme points.

    Returns ``(PosteriorDistribution, signals)``.
    """
    _, _, stab = _pipeline(game, beta)
    k, l, tau = stab.bracket(mu)
    if k == l or stab.strategies[k] == stab.strategies[l]:
        return PosteriorDistribution(((1.0, mu),), mu), [stab.strategies[k]]
    xs = stab.xs
    dist = PosteriorDistribution(((tau, float(xs[k])), (1 - tau, float(xs[l]))), mu)
    return dist, [stab.strategies[k], stab.strategies[l]]


def persuasion_stable_oracle(game: PersuasionGame, mu: float, params: PersuasionOracleParams) -> SignalScheme:
    mu = float(mu)
    if not (0 <= mu <= 1):
        raise DomainError("prior must lie in [0,1]")
    n = game.n_strategies
    if mu <= 0 or mu >= 1:
        return single_signal_scheme(n, best_strategy(game, mu))
    dist, signals = stabilized_posteriors(game, mu, params.beta)
    if len(signals) == 1:
        return single_signal_scheme(n, signals[0])
    sk, sl = signals
    (tau, mk), _ = dist.pairs
    steps = round(1 / params.delta)
    q1 = round(tau * mk / mu * steps) / steps
    q0 = round(tau * (1 - mk) / (1 - mu) * steps) / steps
    m = np.zeros((n, 2))
    m[sk, 0], m[sk, 1] = q0, q1
    m[sl, 0], m[sl, 1] = 1 - q0, 1 - q1
    return SignalScheme.from_array(m)


def benchmark_scheme(game: PersuasionGame, mu: float, posteriors: list[float]) -> SignalScheme:
    """Straightforward scheme splitting ``mu`` into two posteriors ``lo <= mu <= hi``.

    Each posterior is sent as the agent-optimal strategy there.
    """
    lo, hi = posteriors
    tau = (hi - mu) / (hi - lo)
    dist = PosteriorDistribution(((tau, lo), (1 - tau, hi)), mu)
    return scheme_from_posteriors(dist, [best_strategy(game, lo), best_strategy(game, hi)], game.n_strategies)
