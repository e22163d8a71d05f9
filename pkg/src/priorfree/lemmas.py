"""Randomized property suites for the game primitives and both oracles, plus the
exhaustive certificate that the two-contract tie game has no optimal stable policy.

Each suite draws its own instances from a seeded generator and counts failures.
``verify_lemmas`` runs all of them; ``certify_impossibility`` scans a parameter grid.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import fixtures
from .game import (
    TAU_EQ,
    LinearContractGame,
    PersuasionGame,
    best_response_set,
    expected_table,
    optimistic_best_response,
    optimistic_from_tables,
)
from .oracles.linear import (
    LinearOracleParams,
    check_monotonicity,
    distinct_contracts,
    is_stable,
    linear_stable_oracle,
    optimistic_benchmark,
    stability_from_tables,
    tie_contracts,
)
from .oracles.persuasion import (
    PersuasionOracleParams,
    PosteriorDistribution,
    best_strategy,
    build_envelope,
    concave_closure,
    persuasion_stable_oracle,
    scheme_from_posteriors,
    stabilize_closure,
    stabilized_posteriors,
)


@dataclass
class SuiteResult:
    name: str
    cases: int = 0
    failures: int = 0
    first_failure: str | None = None

    @property
    def passed(self) -> bool:
        return self.failures == 0 and self.cases > 0

    def check(self, ok: bool, detail) -> None:
        self.cases += 1
        if not ok:
            self.failures += 1
            if self.first_failure is None:
                self.first_failure = detail() if callable(detail) else str(detail)

    def row(self) -> dict:
        return {"suite": self.name, "cases": self.cases, "failures": self.failures,
                "status": "PASS" if self.passed else "FAIL", "first_failure": self.first_failure or ""}


# ---------------------------------------------------------------------------
# random instances


def random_forecast(rng: np.random.Generator, n: int) -> np.ndarray:
    pi = rng.dirichlet(np.ones(n))
    if rng.random() < 0.1:  # occasionally a vertex of the simplex
        pi = np.eye(n)[rng.integers(n)]
    return pi


def random_linear_game(rng: np.random.Generator, max_actions: int = 4) -> LinearContractGame:
    n_a = int(rng.integers(1, max_actions + 1))
    n_y = int(rng.integers(2, 4))
    n_o = int(rng.integers(1, 4))
    while True:
        costs = rng.random(n_a)
        if rng.random() < 0.3:
            costs = np.round(costs, 1)
        if n_a == 1 or np.min(np.diff(np.sort(costs))) > 1e-3:
            break
    values = rng.random(n_o)
    if rng.random() < 0.3:
        values = np.round(values, 1)
    actions = [f"a{i}" for i in range(n_a)]
    states = [f"y{i}" for i in range(n_y)]
    outcomes = [f"o{i}" for i in range(n_o)]
    omap = {a: {y: outcomes[rng.integers(n_o)] for y in states} for a in actions}
    bench = sorted(set(np.round(rng.random(int(rng.integers(1, 4))), 3).tolist()))
    return LinearContractGame(
        states=states, actions=actions, outcomes=outcomes,
        value=dict(zip(outcomes, values.tolist())), cost=dict(zip(actions, costs.tolist())),
        outcome_map=omap, benchmark=bench,
    )


def random_persuasion_game(rng: np.random.Generator, max_strategies: int = 4, min_width: float = 0.08) -> PersuasionGame:
    """Agent lines whose upper envelope uses every strategy on an interval of width >= ``min_width``."""
    n = int(rng.integers(2, max_strategies + 1))
    while True:
        cuts = np.sort(rng.random(n - 1))
        widths = np.diff(np.concatenate([[0.0], cuts, [1.0]]))
        if widths.min() >= min_width:
            break
    slopes = np.sort(rng.uniform(-1, 1, n))
    while np.min(np.diff(slopes)) < 0.05:
        slopes = np.sort(rng.uniform(-1, 1, n))
    icpt = np.zeros(n)
    icpt[0] = rng.uniform(0, 1)
    for s in range(n - 1):
        icpt[s + 1] = icpt[s] + (slopes[s] - slopes[s + 1]) * cuts[s]
    u = np.stack([icpt, icpt + slopes], axis=1)
    lo, hi = u.min(), u.max()
    u = (u - lo) / (hi - lo)
    perm = rng.permutation(n)
    v = rng.random(n)
    if rng.random() < 0.3:
        v = np.round(v, 1)
    return PersuasionGame(
        strategies=tuple(f"s{i}" for i in range(n)),
        agent_utility=u[perm],
        principal_value=v[perm],
    )


# ---------------------------------------------------------------------------
# game-core suites


def suite_br_monotone(rng, cases: int) -> SuiteResult:
    res = SuiteResult("best-response set monotone in eps")
    for _ in range(cases):
        g = random_linear_game(rng)
        p, pi = float(rng.random()), random_forecast(rng, g.n_states)
        e1, e2 = np.sort(rng.random(2) * 0.5)
        b1, b2 = set(best_response_set(g, p, pi, e1)), set(best_response_set(g, p, pi, e2))
        res.check(b1 <= b2, lambda: f"p={p} pi={pi} eps=({e1},{e2}) {b1} not in {b2}")
    return res


def suite_optimistic_in_br(rng, cases: int) -> SuiteResult:
    res = SuiteResult("optimistic response lies in the best-response set")
    for _ in range(cases):
        g = random_linear_game(rng)
        p, pi, eps = float(rng.random()), random_forecast(rng, g.n_states), float(rng.random() * 0.3)
        a = optimistic_best_response(g, p, pi, eps)
        res.check(a in best_response_set(g, p, pi, eps), lambda: f"p={p} pi={pi} eps={eps} a={a}")
    return res


def suite_expected_utilities(rng, cases: int) -> SuiteResult:
    res = SuiteResult("expected utilities match per-state sums and lie in [-1,1]")
    for _ in range(cases):
        g = random_linear_game(rng)
        p, pi = float(rng.random()), random_forecast(rng, g.n_states)
        u, v = expected_table(g, p, pi)
        ok = True
        for i, a in enumerate(g.actions):
            bu = sum(pi[k] * (p * g.value[g.outcome_map[a][y]] - g.cost[a]) for k, y in enumerate(g.states))
            bv = sum(pi[k] * (1 - p) * g.value[g.outcome_map[a][y]] for k, y in enumerate(g.states))
            ok &= abs(bu - u[i]) <= 1e-12 and abs(bv - v[i]) <= 1e-12
        ok &= bool(np.all(np.abs(u) <= 1 + 1e-12) and np.all(np.abs(v) <= 1 + 1e-12))
        res.check(ok, lambda: f"p={p} pi={pi} u={u} v={v}")
    return res


# ---------------------------------------------------------------------------
# linear-contract suites


def suite_ties(rng, cases: int) -> SuiteResult:
    res = SuiteResult("distinct tie contracts <= |A| - 1")
    for _ in range(cases):
        g = random_linear_game(rng, max_actions=6)
        pi = random_forecast(rng, g.n_states)
        ps = distinct_contracts(tie_contracts(g, pi))
        res.check(len(ps) <= max(g.n_actions - 1, 0), lambda: f"pi={pi} ties={ps} |A|={g.n_actions}")
    return res


def suite_gap(rng, cases: int) -> SuiteResult:
    """If a is the exact best response at p-b and p+b, its margin at p is >= delta_c * b."""
    res = SuiteResult("best response on both sides has margin >= delta_c * beta")
    while res.cases < cases:
        g = random_linear_game(rng)
        if g.n_actions < 2:
            continue
        pi = random_forecast(rng, g.n_states)
        b = float(rng.uniform(1e-3, 0.2))
        p = float(rng.uniform(b, 1 - b))
        lo = best_response_set(g, p - b, pi)
        hi = best_response_set(g, p + b, pi)
        if len(lo) != 1 or lo != hi:
            continue
        a = lo[0]
        u, _ = expected_table(g, p, pi)
        margin = u[a] - np.max(np.delete(u, a))
        res.check(margin >= g.delta_c * b - TAU_EQ, lambda: f"p={p} beta={b} pi={pi} margin={margin} need={g.delta_c * b}")
    return res


def suite_monotonicity(rng, cases: int) -> SuiteResult:
    res = SuiteResult("max f over eps-best responses nondecreasing in p")
    for _ in range(cases):
        g = random_linear_game(rng)
        pi = random_forecast(rng, g.n_states)
        p2, p1 = np.sort(rng.random(2))
        if rng.random() < 0.1:
            p1 = p2
        eps = float(rng.random() * 0.3) if rng.random() < 0.8 else 0.0
        res.check(check_monotonicity(g, pi, float(p1), float(p2), eps), lambda: f"pi={pi} p1={p1} p2={p2} eps={eps}")
    return res


def _random_linear_params(rng) -> LinearOracleParams:
    beta = float(10 ** rng.uniform(-3, -0.3))
    k = int(rng.integers(2, 101))
    return LinearOracleParams(beta=beta, delta=1.0 / k)


def suites_linear_oracle(rng, cases: int, stability=is_stable) -> list[SuiteResult]:
    stab = SuiteResult("linear oracle output is (delta_c beta/2, 0)-stable or equals 1")
    opt = SuiteResult("linear oracle value within |A|(beta+delta) of the optimistic benchmark")
    prox = SuiteResult("linear oracle output within |A|(beta+delta) above the optimistic contract")
    for _ in range(cases):
        g = random_linear_game(rng)
        pi = random_forecast(rng, g.n_states)
        params = _random_linear_params(rng)
        eps = params.eps(g)
        p = linear_stable_oracle(g, pi, params, stability=stability)
        slack = g.n_actions * (params.beta + params.delta)
        ok = p == 1.0 or is_stable(g, p, pi, eps, 0.0).valid
        stab.check(ok, lambda: f"pi={pi} beta={params.beta} delta={params.delta} p={p}")
        p_opt, _, bench_val = optimistic_benchmark(g, pi, eps)
        u, v = expected_table(g, p, pi)
        got = v[optimistic_from_tables(u, v)]
        opt.check(got >= bench_val - slack - TAU_EQ, lambda: f"pi={pi} p={p} V={got} bench={bench_val} slack={slack}")
        prox.check(p <= p_opt + slack + TAU_EQ, lambda: f"pi={pi} p={p} p_opt={p_opt} slack={slack}")
    return [stab, opt, prox]


# ---------------------------------------------------------------------------
# persuasion suites


def _random_persuasion_params(rng, C: float) -> PersuasionOracleParams:
    beta = float(rng.uniform(0.01, 0.99) * C / 4)
    x = None if rng.random() < 0.7 else float(rng.random())
    return PersuasionOracleParams.with_beta(beta, x=x)


def suites_persuasion_oracle(rng, cases: int) -> list[SuiteResult]:
    bp = SuiteResult("stabilized posteriors are Bayes-plausible")
    prior = SuiteResult("discretized scheme moves the implied prior by at most 2 delta")
    stab = SuiteResult("persuasion oracle passes brute-force stability over all deviation maps")
    opt = SuiteResult("persuasion oracle value within the stated optimality gap")
    for _ in range(cases):
        g = random_persuasion_game(rng)
        env = build_envelope(g)
        params = _random_persuasion_params(rng, env.C)
        mu = float(rng.random())
        if rng.random() < 0.1:
            mu = float(rng.choice(env.boundaries))
        dist, signals = stabilized_posteriors(g, mu, params.beta)
        taus = np.array([t for t, _ in dist.pairs])
        mus = np.array([m for _, m in dist.pairs])
        bp.check(abs(taus.sum() - 1) <= 1e-9 and abs(taus @ mus - mu) <= 1e-9, lambda: f"mu={mu} pairs={dist.pairs}")

        scheme = persuasion_stable_oracle(g, mu, params)
        if len(signals) == 2 and 0 < mu < 1:
            implied = []
            for (tau, _), s in zip(dist.pairs, signals):
                ph = scheme.array[s]
                den = ph[1] * mu + ph[0] * (1 - mu)
                implied.append(ph[1] * mu / den if den > 0 else 0.0)
            dev = abs(float(taus @ np.array(implied)) - mu)
            prior.check(dev <= 2 * params.delta + 1e-12, lambda: f"mu={mu} dev={dev} delta={params.delta}")
        else:
            prior.check(True, "")

        pi = np.array([1 - mu, mu])
        u, v = expected_table(g, scheme, pi)
        ag, pg = params.stability(env)
        cert = stability_from_tables(u, v, ag, pg, scheme)
        stab.check(cert.valid, lambda: f"mu={mu} beta={params.beta} x={params.x_value} violated={cert.violated()}")

        vstar = float(concave_closure(g, env)(mu))
        got = float(v[optimistic_from_tables(u, v)])
        gap = params.optimality_gap(env)
        opt.check(got >= vstar - gap - TAU_EQ, lambda: f"mu={mu} V={got} v*={vstar} gap={gap}")
    return [bp, prior, stab, opt]


def suite_closure(rng, cases: int, grid: int = 1001) -> SuiteResult:
    res = SuiteResult("concave closure dominates v(s*(mu)) and is concave")
    mus = np.linspace(0, 1, grid)
    for _ in range(cases):
        g = random_persuasion_game(rng)
        clo = concave_closure(g)
        vals = clo(mus)
        base = np.array([g.v[best_strategy(g, m)] for m in mus])
        dom = bool(np.all(vals >= base - 1e-12))
        second = vals[:-2] - 2 * vals[1:-1] + vals[2:]
        conc = bool(np.all(second <= 1e-12))
        ends = abs(clo.points[0][0]) < 1e-12 and abs(clo.points[-1][0] - 1) < 1e-12
        res.check(dom and conc and ends, lambda: f"points={clo.points} dominance={dom} concave={conc}")
    return res


def suite_stabilized_sandwich(rng, cases: int, grid: int = 201) -> SuiteResult:
    res = SuiteResult("stabilized closure v' <= v* <= v' + 3 beta/C")
    mus = np.linspace(0, 1, grid)
    for _ in range(cases):
        g = random_persuasion_game(rng)
        env = build_envelope(g)
        clo = concave_closure(g, env)
        beta = float(rng.uniform(0, 0.99) * env.C / 4)
        st = stabilize_closure(g, env, clo, beta)
        a, b = st(mus), clo(mus)
        ok = bool(np.all(a <= b + 1e-12) and np.all(b <= a + 3 * beta / env.C + 1e-12))
        res.check(ok, lambda: f"beta={beta} C={env.C} worst={float(np.max(b - a))}")
    return res


def suite_scheme_roundtrip(rng, cases: int) -> SuiteResult:
    res = SuiteResult("posteriors -> scheme -> posteriors round trip")
    for _ in range(cases):
        mu = float(rng.uniform(0.01, 0.99))
        lo, hi = float(rng.uniform(0, mu)), float(rng.uniform(mu, 1))
        if hi - lo < 1e-6:
            continue
        tau = (hi - mu) / (hi - lo)
        dist = PosteriorDistribution(((tau, lo), (1 - tau, hi)), mu)
        sch = scheme_from_posteriors(dist, [0, 1], 2)
        back = sch.posteriors(mu)
        ok = all(abs(t - bt) <= 1e-9 and abs(m - bm) <= 1e-9 for (t, m), (bt, bm) in zip(dist.pairs, back))
        res.check(ok and len(back) == 2, lambda: f"mu={mu} in={dist.pairs} out={back}")
    return res


# ---------------------------------------------------------------------------
# driver


def verify_lemmas(seed: int = 0, cases: int = 1000, oracle_cases: int = 10_000,
                  persuasion_cases: int = 1000, stability=is_stable) -> list[SuiteResult]:
    """Run every suite. ``stability`` is handed to the linear oracle (test hook for mutants)."""
    ss = np.random.SeedSequence(seed).spawn(12)
    rngs = [np.random.default_rng(s) for s in ss]
    out = [
        suite_br_monotone(rngs[0], cases),
        suite_optimistic_in_br(rngs[1], cases),
        suite_expected_utilities(rngs[2], cases),
        suite_ties(rngs[3], cases),
        suite_gap(rngs[4], cases),
        suite_monotonicity(rngs[5], cases),
        *suites_linear_oracle(rngs[6], oracle_cases, stability=stability),
        *suites_persuasion_oracle(rngs[7], persuasion_cases),
        suite_closure(rngs[8], cases),
        suite_stabilized_sandwich(rngs[9], cases),
        suite_scheme_roundtrip(rngs[10], cases),
    ]
    return out


def flipped_stability(game, policy, forecast, beta, gamma):
    """Mutant of ``is_stable`` with the agent-gap inequality reversed."""
    u, v = expected_table(game, policy, forecast)
    best = optimistic_from_tables(u, v)
    cert = stability_from_tables(-u, v, beta, gamma, policy)
    cert.best = best
    return cert


# ---------------------------------------------------------------------------
# impossibility certificate for the two-contract tie game


@dataclass
class PolicyCheck:
    policy: float
    stable: bool
    optimal: bool
    binding: list = field(default_factory=list)

    @property
    def qualifies(self) -> bool:
        return self.stable and self.optimal


def optimal_stable_check(game, policy, forecast, c: float, eps: float, beta: float, gamma: float) -> PolicyCheck:
    """Both conditions of a (c, eps, beta, gamma)-optimal stable policy, with the failing ones named."""
    cert = is_stable(game, policy, forecast, beta, gamma)
    _, _, bench = optimistic_benchmark(game, forecast, eps)
    u, v = expected_table(game, policy, forecast)
    val = float(v[optimistic_from_tables(u, v)])
    optimal = val >= bench - c - TAU_EQ
    binding = []
    for a in cert.violated():
        binding.append(
            f"stability: action {game.actions[a]} loses the agent {u[cert.best] - u[a]:.6g} < beta={beta:.6g} "
            f"and costs the principal {v[cert.best] - v[a]:.6g} > gamma={gamma:.6g}"
        )
    if not optimal:
        binding.append(f"optimality: V={val:.6g} < benchmark {bench:.6g} - c={c:.6g}")
    return PolicyCheck(float(policy), cert.valid, optimal, binding)


@dataclass
class ImpossibilityReport:
    certified: bool
    points: int
    counterexamples: list
    grid: dict
    binding: dict

    def to_dict(self) -> dict:
        return {"certified": self.certified, "grid_points": self.points, "grid": self.grid,
                "counterexamples": self.counterexamples[:20], "binding_constraints": self.binding}


def default_grid(n: int = 11) -> dict:
    return {
        "c": np.linspace(0.0, 0.25, n).tolist(),
        "gamma": np.linspace(0.0, 0.5, n).tolist(),
        "beta": np.geomspace(1e-6, 1.0, n).tolist(),
    }


def certify_impossibility(game=None, grid: dict | None = None, eps: float = 0.0, forecasts=None) -> ImpossibilityReport:
    """At every grid point (c, gamma, beta), look for a forecast under which no benchmark policy qualifies.

    The tie game's payoffs do not depend on the state, so any forecast works;
    a handful are checked. A point where every forecast admits a qualifying
    policy is a counterexample.
    """
    game = game or fixtures.prop2_game()
    grid = grid or default_grid()
    forecasts = forecasts if forecasts is not None else [np.eye(game.n_states)[0], np.full(game.n_states, 1 / game.n_states)]
    cexs, binding = [], {}
    n = 0
    for c, gamma, beta in itertools.product(grid["c"], grid["gamma"], grid["beta"]):
        n += 1
        blocked = False
        for pi in forecasts:
            checks = [optimal_stable_check(game, p, pi, c, eps, beta, gamma) for p in game.benchmark]
            if not any(ch.qualifies for ch in checks):
                blocked = True
                for ch in checks:
                    for b in ch.binding:
                        key = f"p={ch.policy:g}: {b.split(':')[0]}"
                        binding[key] = binding.get(key, 0) + 1
                break
        if not blocked:
            ok = [ch.policy for ch in checks if ch.qualifies]
            cexs.append({"c": c, "gamma": gamma, "beta": beta, "qualifying": ok,
                         "binding": {f"{ch.policy:g}": ch.binding for ch in checks}})
    return ImpossibilityReport(not cexs, n, cexs, {k: [min(v), max(v), len(v)] for k, v in grid.items()}, binding)


def explain_point(game, c: float, gamma: float, beta: float, eps: float = 0.0, forecast=None) -> list[PolicyCheck]:
    game = game or fixtures.prop2_game()
    pi = np.full(game.n_states, 1 / game.n_states) if forecast is None else np.asarray(forecast, dtype=float)
    return [optimal_stable_check(game, p, pi, c, eps, beta, gamma) for p in game.benchmark]
