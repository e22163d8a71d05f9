import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from priorfree import fixtures
from priorfree.game import DomainError, LinearContractGame, PersuasionGame, expected_table
from priorfree.lemmas import random_forecast, random_linear_game, random_persuasion_game
from priorfree.oracles.linear import (
    LinearOracleParams,
    check_monotonicity,
    distinct_contracts,
    is_stable,
    linear_stable_oracle,
    tie_contracts,
)
from priorfree.oracles.persuasion import (
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

seeds = st.integers(0, 2**32 - 1)
HALF = [0.5, 0.5]


@pytest.fixture
def g2():
    return fixtures.prop2_game()


@pytest.fixture
def pros():
    return fixtures.prosecutor_game(0.3)


# -- linear contracts -----------------------------------------------------------


def test_tie_at_quarter(g2):
    ties = tie_contracts(g2, HALF)
    assert len(ties) == 1
    assert ties[0][0] == pytest.approx(0.25) and ties[0][1] == (0, 1)


def test_equal_f_distinct_costs_never_tie():
    g = LinearContractGame(("y0", "y1"), ("a", "b"), ("o",), {"o": 1.0}, {"a": 0.1, "b": 0.3},
                           {"a": {"y0": "o", "y1": "o"}, "b": {"y0": "o", "y1": "o"}})
    assert tie_contracts(g, HALF, best_only=False) == []


def test_stability_examples(g2):
    assert not is_stable(g2, 0.25, HALF, 1e-3, 0.5).valid
    cert = is_stable(g2, 0.30, HALF, 0.0125, 0.0)
    assert cert.valid and cert.verdicts == {0: "agent-gap"}
    g = fixtures.effort_game()
    for beta, gamma in ((0.3, 0.0), (1.0, 0.2)):
        assert is_stable(g, 1.0, [0.2, 0.8], beta, gamma).valid


def test_linear_oracle_example(g2):
    params = LinearOracleParams(beta=0.1, delta=0.05)
    assert params.eps(g2) == pytest.approx(0.0125)
    assert linear_stable_oracle(g2, HALF, params) == pytest.approx(0.30)


def test_linear_oracle_falls_back_to_one(g2):
    params = LinearOracleParams(beta=8.0, delta=0.5)
    assert 0.25 > 1 - g2.n_actions * (params.beta + params.delta)
    assert linear_stable_oracle(g2, HALF, params) == 1.0


def test_linear_oracle_single_action():
    g = LinearContractGame(("y0", "y1"), ("only",), ("o",), {"o": 0.8}, {"only": 0.1},
                           {"only": {"y0": "o", "y1": "o"}}, benchmark=(0.33,))
    assert linear_stable_oracle(g, HALF, LinearOracleParams(0.1, 0.1)) == pytest.approx(0.4)


def test_monotonicity_examples(g2):
    assert check_monotonicity(g2, HALF, 0.5, 0.25, 0.0)
    assert check_monotonicity(g2, HALF, 0.4, 0.4, 0.1)


def test_bad_params():
    with pytest.raises(DomainError):
        LinearOracleParams(0.0, 0.1)
    with pytest.raises(DomainError):
        PersuasionOracleParams(beta=0.1, delta=0.1)


def _brute_stable(u, v, beta, gamma):
    """Independent check over every action, optimistic best response recomputed here."""
    top = u.max()
    cand = [a for a in range(len(u)) if u[a] >= top - 1e-9]
    best = max(cand, key=lambda a: (v[a], -a))
    best = min(a for a in cand if v[a] >= v[best] - 1e-9)
    return all(u[a] <= u[best] - beta + 1e-9 or v[a] >= v[best] - gamma - 1e-9 for a in range(len(u)) if a != best)


@given(seeds, st.floats(1e-3, 0.5), st.integers(2, 60))
def test_linear_oracle_properties(seed, beta, k):
    rng = np.random.default_rng(seed)
    g = random_linear_game(rng)
    pi = random_forecast(rng, g.n_states)
    params = LinearOracleParams(beta, 1 / k)
    eps = params.eps(g)
    p = linear_stable_oracle(g, pi, params)
    # brute-force scan of the grid with an independent stability test
    bench_vals = []
    for p0 in g.benchmark:
        u, v = expected_table(g, p0, pi)
        br = [a for a in range(g.n_actions) if u[a] >= u.max() - eps - 1e-9]
        bench_vals.append((max(v[a] for a in br), p0))
    best_val = max(x for x, _ in bench_vals)
    p_opt = next(p0 for x, p0 in bench_vals if x >= best_val - 1e-9)
    expect = 1.0
    for q in np.arange(k + 1) / k:
        if q < p_opt - 1e-9:
            continue
        u, v = expected_table(g, q, pi)
        if _brute_stable(u, v, eps, 0.0):
            expect = float(q)
            break
    assert p == pytest.approx(expect, abs=1e-12)
    slack = g.n_actions * (beta + 1 / k)
    u, v = expected_table(g, p, pi)
    cand = [a for a in range(g.n_actions) if u[a] >= u.max() - 1e-9]
    assert max(v[a] for a in cand) >= best_val - slack - 1e-9
    assert p <= p_opt + slack + 1e-9


@given(seeds)
def test_tie_count_bound(seed):
    rng = np.random.default_rng(seed)
    g = random_linear_game(rng, max_actions=6)
    pi = random_forecast(rng, g.n_states)
    assert len(distinct_contracts(tie_contracts(g, pi))) <= max(g.n_actions - 1, 0)


@given(seeds, st.floats(0, 1), st.floats(0, 1), st.floats(0, 0.3))
def test_monotonicity_property(seed, a, b, eps):
    rng = np.random.default_rng(seed)
    g = random_linear_game(rng)
    pi = random_forecast(rng, g.n_states)
    assert check_monotonicity(g, pi, max(a, b), min(a, b), eps)


# -- persuasion -------------------------------------------------------------------


def test_prosecutor_envelope(pros):
    env = build_envelope(pros)
    assert env.intervals == ((0.0, 0.5), (0.5, 1.0))
    assert env.strategies == (0, 1)
    assert env.C == pytest.approx(0.5) and env.c1 == pytest.approx(2.0)


def test_dominated_strategy_rejected():
    g = PersuasionGame(("a", "b"), [[1.0, 1.0], [0.0, 0.0]], [0.0, 1.0])
    with pytest.raises(DomainError):
        build_envelope(g)


def test_three_strategy_envelope_matches_grid():
    g = PersuasionGame(("down", "flat", "up"), [[1.0, 0.0], [0.6, 0.6], [0.0, 1.0]], [0.2, 0.5, 1.0])
    env = build_envelope(g)
    assert len(env.intervals) == 3
    mus = np.linspace(0, 1, 10_000)
    lines = np.array([[1 - m, 0.6, m] for m in mus])
    owner = lines.argmax(axis=1)
    for (lo, hi), s in zip(env.intervals, env.strategies):
        inside = (mus > lo + 1e-9) & (mus < hi - 1e-9)
        assert np.all(owner[inside] == s)
    assert env.intervals[0][1] == pytest.approx(0.4) and env.intervals[1][1] == pytest.approx(0.6)


def test_prosecutor_closure(pros):
    clo = concave_closure(pros)
    pts = set((round(x, 12), round(y, 12)) for x, y in clo.points)
    assert {(0.0, 0.0), (0.5, 1.0), (1.0, 1.0)} <= pts
    assert float(clo(0.3)) == 0.6


def test_constant_value_closure():
    g = PersuasionGame(("a", "b"), [[1.0, 0.0], [0.0, 1.0]], [0.4, 0.4])
    assert np.allclose(concave_closure(g)(np.linspace(0, 1, 11)), 0.4)


def test_stabilize_prosecutor(pros):
    env = build_envelope(pros)
    clo = concave_closure(pros, env)
    st_ = stabilize_closure(pros, env, clo, 0.05)
    assert any(abs(x - 0.55) < 1e-12 and abs(y - 1) < 1e-12 for x, y in st_.points)
    assert float(st_(0.3)) == pytest.approx(0.3 / 0.55)
    assert float(clo(0.3) - st_(0.3)) <= 3 * 0.05 / env.C
    assert stabilize_closure(pros, env, clo, 0.0) == clo


def test_scheme_from_posteriors_prosecutor():
    dist = PosteriorDistribution(((0.4, 0.0), (0.6, 0.5)), 0.3)
    m = scheme_from_posteriors(dist, [0, 1], 2).array
    assert m[1, 1] == pytest.approx(1.0)
    assert m[1, 0] == pytest.approx(3 / 7)
    assert m[0, 0] == pytest.approx(4 / 7)


def test_single_posterior_is_uninformative():
    m = scheme_from_posteriors(PosteriorDistribution(((1.0, 0.3),), 0.3), [1], 2).array
    assert m.tolist() == [[0.0, 0.0], [1.0, 1.0]]


def test_persuasion_oracle_prosecutor(pros):
    params = PersuasionOracleParams.with_beta(0.05)
    assert params.delta == pytest.approx(0.05**2 / 16)
    sch = persuasion_stable_oracle(pros, 0.3, params)
    post = [(t, m) for t, m in sch.posteriors(0.3) if t > 0]
    taus = np.array([t for t, _ in post])
    mus = np.array([m for _, m in post])
    assert abs(taus.sum() - 1) <= 1e-9 and abs(taus @ mus - 0.3) <= 1e-9
    tol = 2 * math.sqrt(params.delta)
    assert min(abs(mus - 0.0)) <= tol and min(abs(mus - 0.55)) <= tol


def test_persuasion_oracle_no_split(pros):
    params = PersuasionOracleParams.with_beta(0.05)
    sch = persuasion_stable_oracle(pros, 0.8, params)
    assert sch.array.tolist() == [[0.0, 0.0], [1.0, 1.0]]


def _brute_envelope_value(g, mu):
    return g.v[best_strategy(g, mu)]


@given(seeds)
def test_closure_against_pairwise_hull(seed):
    """v* at a mu equals the best chord over all pairs of boundary points around mu."""
    rng = np.random.default_rng(seed)
    g = random_persuasion_game(rng)
    env = build_envelope(g)
    clo = concave_closure(g, env)
    xs = env.boundaries
    ys = [_brute_envelope_value(g, x) for x in xs]
    for mu in np.linspace(0, 1, 41):
        best = max(y for x, y in zip(xs, ys) if abs(x - mu) < 1e-12) if any(abs(x - mu) < 1e-12 for x in xs) else -1
        for i in range(len(xs)):
            for j in range(len(xs)):
                if xs[i] < mu < xs[j]:
                    t = (xs[j] - mu) / (xs[j] - xs[i])
                    best = max(best, t * ys[i] + (1 - t) * ys[j])
        assert float(clo(mu)) == pytest.approx(best, abs=1e-9)
        assert float(clo(mu)) >= _brute_envelope_value(g, mu) - 1e-12


@given(seeds, st.floats(0.01, 0.99), st.floats(0, 1))
def test_persuasion_oracle_brute_force(seed, frac, mu):
    rng = np.random.default_rng(seed)
    g = random_persuasion_game(rng)
    env = build_envelope(g)
    params = PersuasionOracleParams.with_beta(frac * env.C / 4)
    dist, _ = stabilized_posteriors(g, mu, params.beta)
    taus = np.array([t for t, _ in dist.pairs])
    assert abs(taus @ np.array([m for _, m in dist.pairs]) - mu) <= 1e-9
    sch = persuasion_stable_oracle(g, mu, params)
    u, v = expected_table(g, sch, [1 - mu, mu])  # one row per signal-to-strategy map
    ag, pg = params.stability(env)
    assert _brute_stable(u, v, ag, pg)
