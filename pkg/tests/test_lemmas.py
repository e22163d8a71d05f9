import numpy as np

from priorfree import fixtures
from priorfree.game import TabularGame
from priorfree.lemmas import (
    certify_impossibility,
    default_grid,
    explain_point,
    flipped_stability,
    verify_lemmas,
)


def test_small_run_all_pass():
    res = verify_lemmas(seed=3, cases=60, oracle_cases=200, persuasion_cases=60)
    assert all(r.passed for r in res), [r.row() for r in res if not r.passed]
    assert len({r.name for r in res}) == len(res) == 16


def test_mutant_is_caught():
    res = verify_lemmas(seed=0, cases=10, oracle_cases=500, persuasion_cases=10, stability=flipped_stability)
    bad = [r for r in res if not r.passed]
    assert bad and any("stable" in r.name for r in bad)
    assert bad[0].first_failure is not None


def test_default_grid_certified():
    rep = certify_impossibility()
    assert rep.certified and rep.points == 11**3 and not rep.counterexamples
    g = default_grid()
    assert g["c"][-1] == 0.25 and g["gamma"][-1] == 0.5 and g["beta"][0] == 1e-6 and g["beta"][-1] == 1.0
    assert rep.binding["p=0.25: stability"] == rep.points


def test_relaxed_gamma_shows_binding_constraint():
    grid = {**default_grid(), "gamma": [0.8]}
    rep = certify_impossibility(grid=grid)
    assert not rep.certified
    cx = rep.counterexamples[0]
    assert cx["qualifying"] == [0.25]
    assert any(b.startswith("optimality") for b in cx["binding"]["0.5"])
    checks = explain_point(None, c=0.0, gamma=0.8, beta=0.1)
    assert checks[0].qualifies and not checks[1].optimal


def test_single_policy_game_is_vacuously_optimal_stable():
    g = TabularGame(["s0", "s1"], ["only"], ["p"], [[[0, 0]]], [[[0.5, 0.5]]])
    rep = certify_impossibility(g)
    assert not rep.certified
    assert all(cx["qualifying"] == [0] for cx in rep.counterexamples)


def test_tie_game_at_any_forecast():
    g = fixtures.prop2_game()
    rep = certify_impossibility(g, forecasts=[np.array([0.3, 0.7])])
    assert rep.certified
