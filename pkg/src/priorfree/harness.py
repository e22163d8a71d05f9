"""Run the forecast -> policy -> recommendation -> action protocol, replay constant
benchmark mechanisms on the same forecasts, and compute the regret diagnostics.

A run draws one state stream and one forecast stream and plays ``R`` agent
repetitions against them. Benchmark replays reuse the forecasts exactly and use
fresh agents with their own PRNG substreams. With ``resample_states`` every
repetition gets its own state and forecast stream instead.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass, field, replace
from typing import Any, Sequence

import numpy as np

from . import fixtures
from .agents import AGENT_KINDS, AdversaryL, SwapLearner, make_agent
from .forecasting import (
    CalibratedForecaster,
    EventFamily,
    EventUnbiasedForecaster,
    FixedForecaster,
    audit_bias,
)
from .game import (
    TAU_EQ,
    DomainError,
    Game,
    LinearContractGame,
    PersuasionGame,
    game_from_dict,
    optimistic_best_response,
    principal_best_policy,
    scheme_from_json,
)
from .oracles.linear import LinearOracleParams, linear_stable_oracle, optimistic_benchmark
from .oracles.persuasion import PersuasionOracleParams, build_envelope, persuasion_stable_oracle

TRANSCRIPT_SCHEMA = "transcript/1"
REPORT_SCHEMA = "report/1"


class ConfigError(DomainError):
    pass


FIXTURES = {
    "prop2": fixtures.prop2_game,
    "prosecutor": fixtures.prosecutor_game,
    "lower-bound": fixtures.lower_bound_game,
    "effort": fixtures.effort_game,
}
MECHANISMS = ("stable-oracle", "general", "constant")
FORECASTERS = ("calibrated", "event-unbiased", "fixed")
EVENT_SETS = ("E123", "E34")
STATE_KINDS = ("iid", "file", "sequence", "lower-bound", "anti-forecaster")


# ---------------------------------------------------------------------------
# configuration


def _field(d: dict, name: str, kind, default=..., where: str = ""):
    path = f"{where}.{name}" if where else name
    if name not in d:
        if default is ...:
            raise ConfigError(f"config field {path!r} is required")
        return default
    v = d[name]
    if kind is float and isinstance(v, int) and not isinstance(v, bool):
        v = float(v)
    if kind is not None and not isinstance(v, kind) or isinstance(v, bool) and kind in (int, float):
        raise ConfigError(f"config field {path!r} has the wrong type ({type(v).__name__})")
    return v


def build_game(spec) -> Game:
    if not isinstance(spec, dict):
        raise ConfigError("config field 'game' must be an object")
    if "fixture" in spec:
        name = spec["fixture"]
        if name not in FIXTURES:
            raise ConfigError(f"config field 'game.fixture' must be one of {sorted(FIXTURES)}")
        kwargs = {k: v for k, v in spec.items() if k != "fixture"}
        if "benchmark" in kwargs and name == "prosecutor":
            kwargs["benchmark"] = [scheme_from_json(b, kwargs.get("prior", 0.3)) for b in kwargs["benchmark"]]
        try:
            return FIXTURES[name](**kwargs)
        except TypeError as e:
            raise ConfigError(f"config field 'game': {e}") from None
    try:
        return game_from_dict(spec)
    except DomainError as e:
        raise ConfigError(f"config field 'game': {e}") from None


@dataclass(frozen=True)
class ExperimentConfig:
    game: Game
    mechanism: dict
    forecaster: dict
    events: str
    agent: str
    states: dict
    T: int
    reps: int = 32
    seed: int = 0
    resample_states: bool = False
    benchmark_recommendations: tuple | None = None
    raw: dict = field(default_factory=dict, compare=False)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        game = build_game(_field(d, "game", dict))
        mech = _field(d, "mechanism", dict)
        if _field(mech, "kind", str, where="mechanism") not in MECHANISMS:
            raise ConfigError(f"config field 'mechanism.kind' must be one of {MECHANISMS}")
        fc = _field(d, "forecaster", dict, {"kind": "calibrated"})
        if _field(fc, "kind", str, where="forecaster") not in FORECASTERS:
            raise ConfigError(f"config field 'forecaster.kind' must be one of {FORECASTERS}")
        grid_resolution(fc.get("m", 32), 1)
        events = _field(d, "events", str, "E123")
        if events not in EVENT_SETS:
            raise ConfigError(f"config field 'events' must be one of {EVENT_SETS}")
        agent = _field(d, "agent", str, "swap")
        if agent not in AGENT_KINDS:
            raise ConfigError(f"config field 'agent' must be one of {AGENT_KINDS}")
        states = _field(d, "states", dict)
        if _field(states, "kind", str, where="states") not in STATE_KINDS:
            raise ConfigError(f"config field 'states.kind' must be one of {STATE_KINDS}")
        T = d.get("T")
        if isinstance(T, list):
            raise ConfigError("config field 'T' lists several horizons; use the sweep command")
        T = _field(d, "T", int)
        reps = _field(d, "reps", int, 32)
        if T < 1:
            raise ConfigError("config field 'T' must be at least 1")
        if reps < 1:
            raise ConfigError("config field 'reps' must be at least 1")
        recs = d.get("benchmark_recommendations")
        if recs is not None:
            if not isinstance(recs, list) or len(recs) != len(game.benchmark):
                raise ConfigError("config field 'benchmark_recommendations' needs one entry per benchmark policy")
            try:
                recs = tuple(None if r is None else game.actions.index(r) for r in recs)
            except ValueError:
                raise ConfigError("config field 'benchmark_recommendations' names an unknown action") from None
        cfg = cls(
            game=game, mechanism=mech, forecaster=fc, events=events, agent=agent, states=states,
            T=T, reps=reps, seed=_field(d, "seed", int, 0),
            resample_states=_field(d, "resample_states", bool, False),
            benchmark_recommendations=recs, raw=dict(d),
        )
        cfg.mechanism_obj()  # surfaces parameter errors early
        return cfg

    @classmethod
    def load(cls, path: str) -> "ExperimentConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                d = json.load(fh)
        except OSError as e:
            raise ConfigError(f"cannot read config {path!r}: {e.strerror}") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"config {path!r} is not valid JSON: {e}") from None
        base = os.path.dirname(os.path.abspath(path))
        st = d.get("states") if isinstance(d, dict) else None
        if isinstance(st, dict) and st.get("kind") == "file" and isinstance(st.get("path"), str):
            st["path"] = os.path.join(base, st["path"])
        return cls.from_dict(d)

    def with_(self, **changes) -> "ExperimentConfig":
        raw = dict(self.raw)
        raw.update(changes)
        return replace(self, raw=raw, **changes)

    def mechanism_obj(self) -> "Mechanism":
        return Mechanism.build(self.game, self.mechanism, self.T)


# ---------------------------------------------------------------------------
# mechanisms


class Mechanism:
    """Choice rule pi -> policy, memoized per forecast.

    ``eps`` is the slack used for the optimistic trace (p_opt, a_opt).
    """

    def __init__(self, game: Game, kind: str, rule, eps: float = 0.0, params=None):
        self.game, self.kind, self.rule, self.eps, self.params = game, kind, rule, eps, params
        self._memo: dict = {}

    @classmethod
    def build(cls, game: Game, spec: dict, T: int) -> "Mechanism":
        kind = spec["kind"]
        if kind == "general":
            return cls(game, kind, lambda pi: principal_best_policy(game, pi))
        if kind == "constant":
            if "policy" not in spec:
                raise ConfigError("config field 'mechanism.policy' is required for a constant mechanism")
            pol = spec["policy"]
            if isinstance(game, PersuasionGame):
                pol = scheme_from_json(pol)
            try:
                pol = game.check_policy(pol)
            except DomainError as e:
                raise ConfigError(f"config field 'mechanism.policy': {e}") from None
            return cls(game, kind, lambda pi: pol)
        try:
            if isinstance(game, LinearContractGame):
                if "beta" in spec:
                    beta = float(spec["beta"])
                    params = LinearOracleParams(beta, float(spec.get("delta", math.sqrt(beta))))
                else:
                    params = LinearOracleParams.theorem(T)
                return cls(game, kind, lambda pi: linear_stable_oracle(game, pi, params), params.eps(game), params)
            if isinstance(game, PersuasionGame):
                if "beta" in spec:
                    params = PersuasionOracleParams.with_beta(float(spec["beta"]))
                else:
                    env = build_envelope(game)
                    params = PersuasionOracleParams.theorem(T, env.C, spec.get("scale"))
                return cls(game, kind, lambda pi: persuasion_stable_oracle(game, pi[1], params), params.eps, params)
        except DomainError as e:
            raise ConfigError(f"config field 'mechanism': {e}") from None
        raise ConfigError("the stable-oracle mechanism needs a linear-contract or persuasion game")

    def __call__(self, pi):
        key = tuple(np.round(np.asarray(pi, dtype=float), 12))
        hit = self._memo.get(key)
        if hit is None:
            pol = self.game.check_policy(self.rule(np.asarray(pi, dtype=float)))
            hit = self._memo[key] = pol
        return hit

    def describe(self) -> dict:
        out = {"kind": self.kind, "eps": self.eps}
        if isinstance(self.params, LinearOracleParams):
            out.update(beta=self.params.beta, delta=self.params.delta)
        elif isinstance(self.params, PersuasionOracleParams):
            out.update(beta=self.params.beta, delta=self.params.delta, x=self.params.x_value)
        return out


def recommendation(game: Game, policy, pi) -> int:
    """r = a*(p, pi): the principal-preferred exact best response."""
    return optimistic_best_response(game, policy, pi)


# ---------------------------------------------------------------------------
# event sets


def event_families(game: Game, mech: Mechanism, selector: str) -> list[EventFamily]:
    lab = game.policy_label
    act = game.action_label
    bench = game.benchmark

    def e1(pi):
        p = mech(pi)
        return f"{lab(p)}|{act(recommendation(game, p, pi))}"

    def e2(pi):
        p, a, _ = optimistic_benchmark(game, pi, mech.eps)
        return f"{lab(p)}|{act(a)}"

    def e4(pi):
        p = principal_best_policy(game, pi)
        return f"{lab(p)}|{act(recommendation(game, p, pi))}"

    e3 = [EventFamily(f"E3[{lab(p0)}]", (lambda pi, p0=p0: act(recommendation(game, p0, pi)))) for p0 in bench]
    if selector == "E123":
        return [EventFamily("E1", e1), EventFamily("E2", e2), *e3]
    if selector == "E34":
        return [*e3, EventFamily("E4", e4)]
    raise ConfigError(f"unknown event set {selector!r}")


# ---------------------------------------------------------------------------
# state and forecast streams


@dataclass
class Stream:
    states: np.ndarray  # (T,)
    forecasts: np.ndarray  # (T, Y) realized forecast each round
    means: np.ndarray  # (T, Y) mean of the randomized forecast
    families: list


def _seeds(cfg: ExperimentConfig, stream: int):
    root = np.random.SeedSequence([cfg.seed, stream])
    s_states, s_fc, s_agents = root.spawn(3)
    return s_states, s_fc, s_agents


def _state_labels(game: Game, values) -> np.ndarray:
    out = []
    for v in values:
        if isinstance(v, str):
            if v not in game.states:
                raise ConfigError(f"unknown state label {v!r}")
            out.append(game.states.index(v))
        elif isinstance(v, int) and 0 <= v < game.n_states:
            out.append(v)
        else:
            raise ConfigError(f"invalid state {v!r}")
    return np.asarray(out, dtype=np.int64)


def _read_state_file(game: Game, path: str) -> np.ndarray:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        raise ConfigError(f"cannot read state file {path!r}: {e.strerror}") from None
    toks = [t for t in text.replace(",", " ").split() if t and not t.startswith("#")]
    return _state_labels(game, [int(t) if t.isdigit() else t for t in toks])


def presampled_states(cfg: ExperimentConfig, rng: np.random.Generator) -> np.ndarray | None:
    st, game, T = cfg.states, cfg.game, cfg.T
    kind = st["kind"]
    if kind == "iid":
        probs = np.asarray(st.get("probs", [1 / game.n_states] * game.n_states), dtype=float)
        if probs.shape != (game.n_states,) or abs(probs.sum() - 1) > 1e-9 or probs.min() < 0:
            raise ConfigError("config field 'states.probs' must be a distribution over the states")
        return rng.choice(game.n_states, size=T, p=probs).astype(np.int64)
    if kind in ("file", "sequence"):
        ys = _read_state_file(game, _field(st, "path", str, where="states")) if kind == "file" \
            else _state_labels(game, _field(st, "values", list, where="states"))
        if len(ys) < T:
            raise ConfigError(f"state {kind} has {len(ys)} states but T = {T}")
        return ys[:T]
    if kind == "lower-bound":
        first = _state_labels(game, [_field(st, "first", (str, int), where="states")])[0]
        ys = rng.integers(0, game.n_states, size=T).astype(np.int64)
        ys[0] = first
        return ys
    return None  # anti-forecaster: generated online


def grid_resolution(m, T: int) -> int:
    """``m`` as given, or for "auto" the power of two at or above sqrt(T) (at least 32)."""
    if m == "auto":
        return max(32, 2 ** math.ceil(math.log2(math.sqrt(max(T, 1)))))
    if not isinstance(m, int) or isinstance(m, bool) or m < 1:
        raise ConfigError("config field 'forecaster.m' must be a positive integer or \"auto\"")
    return m


def make_forecaster(cfg: ExperimentConfig, families, rng: np.random.Generator):
    fc, Y = cfg.forecaster, cfg.game.n_states
    kind = fc["kind"]
    m = grid_resolution(fc.get("m", 32), cfg.T)
    if kind == "calibrated":
        return CalibratedForecaster(Y, m, rng)
    if kind == "event-unbiased":
        return EventUnbiasedForecaster(families, Y, m, rng, refine=int(fc.get("refine", 30)))
    probs = fc.get("probs")
    if probs is None:
        raise ConfigError("config field 'forecaster.probs' is required for a fixed forecaster")
    try:
        return FixedForecaster(probs, Y)
    except DomainError as e:
        raise ConfigError(f"config field 'forecaster.probs': {e}") from None


def generate_stream(cfg: ExperimentConfig, mech: Mechanism, stream: int = 0) -> Stream:
    s_states, s_fc, _ = _seeds(cfg, stream)
    rng_y = np.random.default_rng(s_states)
    families = event_families(cfg.game, mech, cfg.events)
    forecaster = make_forecaster(cfg, families, np.random.default_rng(s_fc))
    ys = presampled_states(cfg, rng_y)
    T, Y = cfg.T, cfg.game.n_states
    states = np.zeros(T, dtype=np.int64)
    fcs, means = np.zeros((T, Y)), np.zeros((T, Y))
    for t in range(T):
        draw = forecaster.step()
        if ys is None:
            low = np.flatnonzero(draw.mean <= draw.mean.min() + 1e-12)
            y = int(low[0]) if len(low) == 1 else int(rng_y.choice(low))
        else:
            y = int(ys[t])
        states[t], fcs[t], means[t] = y, draw.forecast, draw.mean
        forecaster.update(draw.cell, y)
    return Stream(states, fcs, means, families)


# ---------------------------------------------------------------------------
# transcripts


@dataclass
class Transcript:
    game: Game
    label: str
    states: np.ndarray  # (T,)
    forecasts: np.ndarray  # (T, Y)
    policies: list  # distinct policies in order of first use
    policy_idx: np.ndarray  # (T,)
    recs: np.ndarray  # (T,)
    actions: np.ndarray  # (R, T)
    U: np.ndarray  # (R, T)
    V: np.ndarray  # (R, T)
    opt_policies: list | None = None
    opt_idx: np.ndarray | None = None
    opt_actions: np.ndarray | None = None
    agent_info: dict = field(default_factory=dict)

    @property
    def T(self) -> int:
        return len(self.states)

    @property
    def reps(self) -> int:
        return self.actions.shape[0]

    def utility_rows(self) -> tuple[np.ndarray, np.ndarray]:
        """U(., p_t, y_t) and V(., p_t, y_t) for every action: two (T, A) arrays."""
        tabs = [self.game.payoffs(p) for p in self.policies]
        Ut = np.stack([u for u, _ in tabs])  # (P, A, Y)
        Vt = np.stack([v for _, v in tabs])
        return Ut[self.policy_idx, :, self.states], Vt[self.policy_idx, :, self.states]

    def contexts(self) -> tuple[np.ndarray, int]:
        """Context id per round for the (policy, recommendation) pairs, and their count."""
        A = self.game.n_actions
        raw = self.policy_idx * A + self.recs
        _, ctx = np.unique(raw, return_inverse=True)
        ctx = ctx.reshape(-1)
        return ctx, int(ctx.max()) + 1 if len(ctx) else 0

    def to_csv(self, header: bool = True, rep_offset: int = 0) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        Y = self.game.n_states
        if header:
            buf.write(f"#schema={TRANSCRIPT_SCHEMA}\n")
            w.writerow(["rep", "t", *[f"pi_{s}" for s in self.game.states], "p", "r", "a", "y", "U", "V"])
        plabels = [self.game.policy_label(p) for p in self.policies]
        alabels = [self.game.action_label(a) for a in range(self.game.n_actions)]
        fc = [[repr(float(x)) for x in row] for row in self.forecasts]
        for r in range(self.reps):
            for t in range(self.T):
                w.writerow([
                    r + rep_offset, t + 1, *fc[t][:Y], plabels[self.policy_idx[t]], alabels[self.recs[t]],
                    alabels[self.actions[r, t]], self.game.states[self.states[t]],
                    repr(float(self.U[r, t])), repr(float(self.V[r, t])),
                ])
        return buf.getvalue()


def transcripts_csv(transcripts: Sequence[Transcript]) -> str:
    """One CSV for several streams; repetition numbers continue across streams."""
    parts, off = [], 0
    for k, tr in enumerate(transcripts):
        parts.append(tr.to_csv(header=k == 0, rep_offset=off))
        off += tr.reps
    return "".join(parts)


def _play(game: Game, agent, label, states, forecasts, policies, pidx, recs, R) -> Transcript:
    T = len(states)
    tabs = [game.payoffs(p) for p in policies]
    actions = np.zeros((R, T), dtype=np.int64)
    if getattr(agent, "kind", None) == "follower":
        actions[:] = recs[None, :]
    else:
        for t in range(T):
            p = policies[pidx[t]]
            a = agent.act(t + 1, p, int(recs[t]))
            actions[:, t] = a
            agent.observe(t + 1, p, int(recs[t]), a, int(states[t]), tabs[pidx[t]][0][:, states[t]])
    Ut = np.stack([u for u, _ in tabs])
    Vt = np.stack([v for _, v in tabs])
    U = Ut[pidx[None, :], actions, states[None, :]]
    V = Vt[pidx[None, :], actions, states[None, :]]
    info = {}
    if isinstance(agent, SwapLearner):
        info["max_residual"] = agent.max_residual
        info["internal_swap_regret"] = agent.swap_regret()
    if isinstance(agent, AdversaryL):
        sc = agent.script
        info.update(phase=sc.phase, noreg_from=sc.noreg_from, balanced_all=sc.balanced_all,
                    trigger=sc.trigger, max_residual=agent.noreg.max_residual)
    return Transcript(game, label, states, forecasts, list(policies), pidx, recs, actions, U, V, agent_info=info)


def _intern(seq, memo, out):
    idx = np.zeros(len(seq), dtype=np.int64)
    for t, p in enumerate(seq):
        k = memo.get(p)
        if k is None:
            k = memo[p] = len(out)
            out.append(p)
        idx[t] = k
    return idx


def _agent_rng(cfg: ExperimentConfig, stream: int, slot: int) -> np.random.Generator:
    _, _, s_agents = _seeds(cfg, stream)
    return np.random.default_rng(s_agents.spawn(slot + 1)[slot])


def _reps_per_stream(cfg: ExperimentConfig) -> int:
    return 1 if cfg.resample_states else cfg.reps


def run_protocol(cfg: ExperimentConfig, stream: int = 0, mech: Mechanism | None = None,
                 shared: Stream | None = None) -> Transcript:
    """Realized run: forecasts, choice rule, recommendations, agent actions, states."""
    game = cfg.game
    mech = mech or cfg.mechanism_obj()
    st = shared or generate_stream(cfg, mech, stream)
    T = cfg.T
    pols, recs, opt_pols, opt_a = [], np.zeros(T, dtype=np.int64), [], np.zeros(T, dtype=np.int64)
    memo: dict = {}
    for t in range(T):
        pi = st.forecasts[t]
        key = tuple(np.round(pi, 12))
        hit = memo.get(key)
        if hit is None:
            try:
                p = mech(pi)
                r = recommendation(game, p, pi)
                po, ao, _ = optimistic_benchmark(game, pi, mech.eps)
            except DomainError as e:
                raise RuntimeError(f"round {t + 1}: {e}") from e
            hit = memo[key] = (p, r, po, ao)
        pols.append(hit[0])
        recs[t] = hit[1]
        opt_pols.append(hit[2])
        opt_a[t] = hit[3]
    policies, omemo = [], {}
    pidx = _intern(pols, omemo, policies)
    opt_list, omemo2 = [], {}
    oidx = _intern(opt_pols, omemo2, opt_list)
    agent = make_agent(cfg.agent, game, _reps_per_stream(cfg), _agent_rng(cfg, stream, 0), states=st.states)
    tr = _play(game, agent, "realized", st.states, st.forecasts, policies, pidx, recs, _reps_per_stream(cfg))
    tr.opt_policies, tr.opt_idx, tr.opt_actions = opt_list, oidx, opt_a
    tr.agent_info["stream"] = st
    return tr


def replay_constant(cfg: ExperimentConfig, p0, realized: Transcript, stream: int = 0,
                    recommendation_override: int | None = None, slot: int | None = None) -> Transcript:
    """Counterfactual run of the constant mechanism p0 on the realized forecasts and states."""
    game = cfg.game
    p0 = game.check_policy(p0)
    if p0 not in game.benchmark:
        raise DomainError("constant replays must use a benchmark policy")
    forecasts = realized.forecasts
    if len(forecasts) != len(realized.states):
        raise DomainError("forecast length does not match the state sequence")
    T = len(forecasts)
    if recommendation_override is None:
        memo: dict = {}
        recs = np.zeros(T, dtype=np.int64)
        for t in range(T):
            key = tuple(np.round(forecasts[t], 12))
            if key not in memo:
                memo[key] = recommendation(game, p0, forecasts[t])
            recs[t] = memo[key]
    else:
        recs = np.full(T, int(recommendation_override), dtype=np.int64)
    if slot is None:
        slot = 1 + game.benchmark.index(p0)
    R = realized.reps
    agent = make_agent(cfg.agent, game, R, _agent_rng(cfg, stream, slot), states=realized.states)
    return _play(game, agent, f"replay:{game.policy_label(p0)}", realized.states, forecasts, [p0],
                 np.zeros(T, dtype=np.int64), recs, R)


# ---------------------------------------------------------------------------
# diagnostics


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    se = float(x.std(ddof=1) / math.sqrt(len(x))) if len(x) > 1 else 0.0
    return float(x.mean()), se


def per_rep_regret(realized: Transcript, replay: Transcript) -> np.ndarray:
    if replay.actions.shape != realized.actions.shape:
        raise DomainError("replay and realized run differ in shape")
    return (replay.V.sum(axis=1) - realized.V.sum(axis=1)) / realized.T


def policy_regret(realized: Sequence[Transcript], replays: Sequence[Sequence[Transcript]], labels=None) -> dict:
    """PR table. ``replays[k][s]`` is benchmark k replayed on stream s."""
    rows = []
    for k, reps_k in enumerate(replays):
        vals = np.concatenate([per_rep_regret(r, rp) for r, rp in zip(realized, reps_k)])
        m, se = _mean_se(vals)
        rows.append({"benchmark": labels[k] if labels else k, "mean": m, "stderr": se})
    best = max(rows, key=lambda r: r["mean"]) if rows else None
    return {"by_benchmark": rows, "PR": best["mean"] if best else 0.0, "PR_stderr": best["stderr"] if best else 0.0}


def _cell_sums(tr: Transcript, u_all: np.ndarray):
    """S[r, c, a, a'] = sum over rounds in context c where rep r played a of U(a')."""
    ctx, n_ctx = tr.contexts()
    R, A = tr.reps, tr.game.n_actions
    S = np.zeros((R, n_ctx, A, A))
    for r in range(R):
        np.add.at(S[r], (ctx, tr.actions[r]), u_all)
    return S


def swap_regret(tr: Transcript) -> np.ndarray:
    """Contextual swap regret per repetition (sum, not divided by T)."""
    u_all, _ = tr.utility_rows()
    S = _cell_sums(tr, u_all)
    diag = np.diagonal(S, axis1=2, axis2=3)
    return (S.max(axis=3) - diag).sum(axis=(1, 2))


def neg_regret(tr: Transcript) -> np.ndarray:
    """Realized utility minus the best fixed map context -> action, per repetition (sum)."""
    u_all, _ = tr.utility_rows()
    ctx, n_ctx = tr.contexts()
    per_ctx = np.zeros((n_ctx, tr.game.n_actions))
    np.add.at(per_ctx, ctx, u_all)
    return tr.U.sum(axis=1) - per_ctx.max(axis=1).sum()


def secret_info(tr: Transcript) -> list[dict]:
    """Per context: (1/n)|sum U(a_t) - sum U(mu_hat)| and the V analogue, averaged over repetitions."""
    u_all, v_all = tr.utility_rows()
    ctx, n_ctx = tr.contexts()
    R, A = tr.reps, tr.game.n_actions
    n = np.bincount(ctx, minlength=n_ctx).astype(float)
    cu, cv = np.zeros((n_ctx, A)), np.zeros((n_ctx, A))
    np.add.at(cu, ctx, u_all)
    np.add.at(cv, ctx, v_all)
    dev_u, dev_v = np.zeros((R, n_ctx)), np.zeros((R, n_ctx))
    for r in range(R):
        counts = np.zeros((n_ctx, A))
        np.add.at(counts, (ctx, tr.actions[r]), 1.0)
        mu = counts / n[:, None]
        ru, rv = np.zeros(n_ctx), np.zeros(n_ctx)
        np.add.at(ru, ctx, tr.U[r])
        np.add.at(rv, ctx, tr.V[r])
        dev_u[r] = np.abs(ru - (mu * cu).sum(axis=1)) / n
        dev_v[r] = np.abs(rv - (mu * cv).sum(axis=1)) / n
    first = np.zeros(n_ctx, dtype=np.int64)
    first[ctx[::-1]] = np.arange(len(ctx))[::-1]
    out = []
    for c in range(n_ctx):
        t = first[c]
        out.append({
            "policy": tr.game.policy_label(tr.policies[tr.policy_idx[t]]),
            "recommendation": tr.game.action_label(int(tr.recs[t])),
            "n": int(n[c]),
            "dev_U": float(dev_u[:, c].mean()),
            "dev_V": float(dev_v[:, c].mean()),
        })
    return out


def assumption_diagnostics(tr: Transcript) -> dict:
    sr, nr = swap_regret(tr), neg_regret(tr)
    return {
        "swap_regret": sr,
        "neg_regret": nr,
        "ugap": sr + nr,
        "secret_info": secret_info(tr),
    }


def regret_decomposition(realized: Transcript, replay: Transcript) -> dict:
    """Terms (a), (b), (c) per repetition (sums) and the identity error against T * regret."""
    if realized.opt_idx is None:
        raise DomainError("the realized transcript carries no optimistic trace")
    g = realized.game
    T = realized.T
    ys = realized.states
    vr = np.array([g.payoffs(p)[1] for p in realized.policies])  # (P, A, Y)
    vo = np.array([g.payoffs(p)[1] for p in realized.opt_policies])
    v_rec = vr[realized.policy_idx, realized.recs, ys]
    v_opt = vo[realized.opt_idx, realized.opt_actions, ys]
    a = (v_opt - v_rec).sum() * np.ones(realized.reps)
    b = (v_rec[None, :] - realized.V).sum(axis=1)
    c = (replay.V - v_opt[None, :]).sum(axis=1)
    total = T * per_rep_regret(realized, replay)
    return {"a": a, "b": b, "c": c, "identity_error": float(np.abs(a + b + c - total).max())}


def disagreement_diagnostic(tr: Transcript, delta_gap: float | None = None) -> dict:
    """Count of rounds with action != recommendation and the small-disagreement bound.

    bound = (SwapReg + (1 + d) * sum_{p,r,y} sqrt(n_{p,r,y}) / d) / d, with d the
    smallest per-state utility gap between the two actions over the policies used.
    """
    g = tr.game
    if g.n_actions != 2:
        raise DomainError("the disagreement diagnostic needs exactly two actions")
    gaps = [np.abs(g.payoffs(p)[0][0] - g.payoffs(p)[0][1]).min() for p in tr.policies]
    d = float(min(gaps)) if delta_gap is None else float(delta_gap)
    if d <= TAU_EQ:
        raise DomainError("a policy in use has a per-state utility tie (gap <= tau_eq)")
    ctx, n_ctx = tr.contexts()
    cells = np.zeros((n_ctx, g.n_states))
    np.add.at(cells, (ctx, tr.states), 1.0)
    root = np.sqrt(cells).sum()
    sr = swap_regret(tr)
    count = (tr.actions != tr.recs[None, :]).sum(axis=1)
    bound = (sr + (1 + d) * root / d) / d
    return {"count": count, "bound": bound, "delta": d, "violated": count > bound + 1e-9}


def fit_m1_m2(v_gap: np.ndarray, ugap: np.ndarray) -> dict:
    """Least-squares affine fit v_gap ~ M1 * ugap + M2 (per-round quantities)."""
    v_gap, ugap = np.asarray(v_gap, float), np.asarray(ugap, float)
    if len(v_gap) < 2 or np.ptp(ugap) < 1e-12:
        return {"M1": None, "M2": float(v_gap.mean()) if len(v_gap) else None}
    M1, M2 = np.polyfit(ugap, v_gap, 1)
    return {"M1": float(M1), "M2": float(M2)}


def loglog_slope(xs, ys) -> float | None:
    xs, ys = np.asarray(xs, float), np.asarray(ys, float)
    if len(xs) < 2 or np.any(ys <= 0):
        return None
    return float(np.polyfit(np.log(xs), np.log(ys), 1)[0])


# ---------------------------------------------------------------------------
# full experiment


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    realized: list
    replays: list  # replays[k][s]
    report: dict


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    game = cfg.game
    mech = cfg.mechanism_obj()
    n_streams = cfg.reps if cfg.resample_states else 1
    bench = list(game.benchmark)
    recs = cfg.benchmark_recommendations or (None,) * len(bench)
    realized, replays = [], [[] for _ in bench]
    for s in range(n_streams):
        tr = run_protocol(cfg, s, mech)
        realized.append(tr)
        for k, p0 in enumerate(bench):
            replays[k].append(replay_constant(cfg, p0, tr, s, recs[k], slot=1 + k))
    report = build_report(cfg, mech, realized, replays)
    return ExperimentResult(cfg, realized, replays, report)


def _cat(xs):
    return np.concatenate([np.atleast_1d(x) for x in xs])


def build_report(cfg: ExperimentConfig, mech: Mechanism, realized, replays) -> dict:
    game, T = cfg.game, cfg.T
    labels = []
    recs = cfg.benchmark_recommendations or (None,) * len(game.benchmark)
    for p0, r in zip(game.benchmark, recs):
        labels.append(game.policy_label(p0) + ("" if r is None else f"|{game.action_label(r)}"))
    pr = policy_regret(realized, replays, labels)
    diags = [assumption_diagnostics(tr) for tr in realized]
    sr, nr = _cat([d["swap_regret"] for d in diags]), _cat([d["neg_regret"] for d in diags])
    ug = sr + nr
    # recommendation-vs-action value gap, per repetition per round
    v_gap = []
    for tr in realized:
        _, v_all = tr.utility_rows()
        v_rec = v_all[np.arange(T), tr.recs]
        v_gap.append((v_rec[None, :] - tr.V).sum(axis=1) / T)
    v_gap = _cat(v_gap)
    decomp = []
    for k, lab in enumerate(labels):
        parts = [regret_decomposition(tr, rp) for tr, rp in zip(realized, replays[k])]
        decomp.append({
            "benchmark": lab,
            "a": _mean_se(_cat([p["a"] for p in parts]) / T)[0],
            "b": _mean_se(_cat([p["b"] for p in parts]) / T)[0],
            "c": _mean_se(_cat([p["c"] for p in parts]) / T)[0],
            "identity_error": max(p["identity_error"] for p in parts),
        })
    st0 = realized[0].agent_info["stream"]
    bias = audit_bias(st0.forecasts, st0.states, st0.families)
    bias_max = max(realized_bias_max(tr) for tr in realized)
    secret = diags[0]["secret_info"]
    report = {
        "schema": REPORT_SCHEMA,
        "config": _jsonable(cfg.raw),
        "T": T,
        "reps": cfg.reps,
        "mechanism": mech.describe(),
        "policy_regret": pr,
        "swap_regret": _summary(sr / T),
        "neg_regret": _summary(nr / T),
        "ugap": _summary(ug / T),
        "secret_info": {
            "max_dev_U": max((r["dev_U"] for r in secret), default=0.0),
            "max_dev_V": max((r["dev_V"] for r in secret), default=0.0),
            "by_context": secret,
        },
        "bias": {"max_alpha": bias_max, "events": bias},
        "decomposition": decomp,
        "m1_m2": fit_m1_m2(v_gap, ug / T),
        "mean_principal_value": float(np.mean([tr.V.mean() for tr in realized])),
    }
    if game.n_actions == 2:
        try:
            dd = [disagreement_diagnostic(tr) for tr in realized]
            report["disagreement"] = {
                "count_mean": float(_cat([d["count"] for d in dd]).mean()),
                "bound_mean": float(_cat([d["bound"] for d in dd]).mean()),
                "violations": int(_cat([d["violated"] for d in dd]).sum()),
                "delta": min(d["delta"] for d in dd),
            }
        except DomainError as e:
            report["disagreement"] = {"skipped": str(e)}
    infos = [tr.agent_info for tr in realized]
    if "max_residual" in infos[0]:
        report["max_stationary_residual"] = max(i["max_residual"] for i in infos)
    if "balanced_all" in infos[0]:
        report["adversary"] = {
            "balanced_all_fraction": float(np.mean([i["balanced_all"] for i in infos])),
            "noreg_from": [i["noreg_from"] for i in infos],
            "trigger": infos[0]["trigger"],
        }
    return report


def realized_bias_max(tr: Transcript) -> float:
    st = tr.agent_info["stream"]
    rows = audit_bias(st.forecasts, st.states, st.families)
    return max((r["alpha"] for r in rows), default=0.0)


def _summary(x: np.ndarray) -> dict:
    m, se = _mean_se(x)
    return {"mean": m, "stderr": se, "max": float(np.max(x)), "min": float(np.min(x))}


def _jsonable(x: Any):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    return x


def report_json(report: dict) -> str:
    return json.dumps(_jsonable(report), sort_keys=True, indent=2) + "\n"
