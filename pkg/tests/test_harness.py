import itertools
import json

import numpy as np
import pytest

from priorfree import fixtures
from priorfree.game import DomainError, TabularGame, optimistic_best_response
from priorfree.harness import (
    ConfigError,
    ExperimentConfig,
    Transcript,
    assumption_diagnostics,
    disagreement_diagnostic,
    grid_resolution,
    neg_regret,
    regret_decomposition,
    replay_constant,
    report_json,
    run_experiment,
    run_protocol,
    swap_regret,
    transcripts_csv,
)


def cfg(**over):
    d = {"game": {"fixture": "effort"}, "mechanism": {"kind": "stable-oracle"},
         "forecaster": {"kind": "calibrated"}, "agent": "swap", "states": {"kind": "iid"}, "T": 500, "reps": 3}
    d.update(over)
    return ExperimentConfig.from_dict(d)


def test_single_round_follower():
    c = cfg(T=1, agent="follower", forecaster={"kind": "fixed", "probs": [1.0, 0.0]}, reps=1)
    tr = run_protocol(c)
    p = tr.policies[tr.policy_idx[0]]
    assert tr.actions[0, 0] == tr.recs[0] == optimistic_best_response(c.game, p, [1.0, 0.0])


def test_tie_game_general_mechanism():
    c = cfg(game={"fixture": "prop2"}, mechanism={"kind": "general"}, agent="follower", T=200)
    tr = run_protocol(c)
    assert [tr.policies[i] for i in tr.policy_idx] == [0.25] * 200
    assert np.all(tr.recs == 1)


def test_same_seed_same_bytes():
    a, b = run_experiment(cfg(seed=5)), run_experiment(cfg(seed=5))
    assert transcripts_csv(a.realized) == transcripts_csv(b.realized)
    assert report_json(a.report) == report_json(b.report)
    c = run_experiment(cfg(seed=6))
    assert transcripts_csv(a.realized) != transcripts_csv(c.realized)


def test_transcript_csv_header():
    text = transcripts_csv(run_experiment(cfg(T=5, reps=2)).realized)
    lines = text.splitlines()
    assert lines[0] == "#schema=transcript/1"
    assert lines[1] == "rep,t,pi_easy,pi_hard,p,r,a,y,U,V"
    assert len(lines) == 2 + 10


def test_utilities_recomputable():
    tr = run_protocol(cfg())
    g = tr.game
    for t in range(0, tr.T, 37):
        U, V = g.payoffs(tr.policies[tr.policy_idx[t]])
        for r in range(tr.reps):
            assert tr.U[r, t] == U[tr.actions[r, t], tr.states[t]]
            assert tr.V[r, t] == V[tr.actions[r, t], tr.states[t]]


def test_replay_follower_and_errors():
    c = cfg(game={"fixture": "prop2"}, mechanism={"kind": "general"}, agent="follower", T=50)
    tr = run_protocol(c)
    rp = replay_constant(c, 0.5, tr)
    assert np.all(rp.actions == 1) and np.all(rp.recs == 1)
    with pytest.raises(DomainError):
        replay_constant(c, 0.3, tr)
    bad = run_protocol(c)
    bad.forecasts = bad.forecasts[:-1]
    with pytest.raises(DomainError):
        replay_constant(c, 0.5, bad)


def test_replay_follower_recommends_optimistic():
    c = cfg(agent="follower", T=300)
    tr = run_protocol(c)
    rp = replay_constant(c, 0.8, tr)
    for t in range(0, 300, 17):
        assert rp.actions[0, t] == optimistic_best_response(c.game, 0.8, tr.forecasts[t])


def test_realized_best_replay_gives_nonpositive_pr():
    c = cfg(game={"fixture": "prop2"}, mechanism={"kind": "general"}, agent="follower", T=100)
    pr = run_experiment(c).report["policy_regret"]
    assert pr["PR"] <= 1e-12


def _hand_transcript(actions):
    g = TabularGame(["y0", "y1"], ["a1", "a2"], ["p"], [[[0, 0]], [[1, 1]]], [[[0, 0]], [[0, 0]]])
    T = len(actions)
    acts = np.array([actions])
    return Transcript(g, "hand", np.zeros(T, dtype=np.int64), np.tile([0.5, 0.5], (T, 1)), [0],
                      np.zeros(T, dtype=np.int64), np.zeros(T, dtype=np.int64), acts,
                      acts.astype(float), np.zeros((1, T)))


def test_hand_transcript_swap_regret():
    tr = _hand_transcript([0, 0, 1, 1])
    assert swap_regret(tr)[0] / tr.T == pytest.approx(2 / 4)
    d = assumption_diagnostics(tr)
    assert d["ugap"][0] >= 0


def _swap_brute(tr, r):
    """Enumerate every modification rule (context, action) -> action."""
    u_all, _ = tr.utility_rows()
    ctx, n_ctx = tr.contexts()
    A = tr.game.n_actions
    total = 0.0
    for c in range(n_ctx):
        rows = np.flatnonzero(ctx == c)
        best = max(sum(u_all[t, h[tr.actions[r, t]]] - u_all[t, tr.actions[r, t]] for t in rows)
                   for h in itertools.product(range(A), repeat=A))
        total += best
    return total


def test_follower_diagnostics():
    c = cfg(agent="follower", T=400)
    tr = run_protocol(c)
    d = assumption_diagnostics(tr)
    assert d["swap_regret"][0] == pytest.approx(_swap_brute(tr, 0), abs=1e-9)
    assert all(x["dev_U"] == 0 and x["dev_V"] == 0 for x in d["secret_info"])
    dd = disagreement_diagnostic(tr)
    assert np.all(dd["count"] == 0) and not dd["violated"].any()


def test_swap_learner_diagnostics_brute():
    tr = run_protocol(cfg(T=300, reps=2))
    sr = swap_regret(tr)
    nr = neg_regret(tr)
    for r in range(2):
        assert sr[r] == pytest.approx(_swap_brute(tr, r), abs=1e-9)
        assert sr[r] + nr[r] >= -1e-9


def test_decomposition_identity_and_follower_term():
    c = cfg(agent="follower", T=400)
    res = run_experiment(c)
    for rp in (res.replays[0][0], res.replays[1][0]):
        d = regret_decomposition(res.realized[0], rp)
        assert d["identity_error"] <= 1e-9
        assert np.all(d["b"] == 0)
    res = run_experiment(cfg(T=400))
    assert max(x["identity_error"] for x in res.report["decomposition"]) <= 1e-9


def test_constant_mechanism_cancels():
    c = cfg(mechanism={"kind": "constant", "policy": 0.5}, agent="follower", T=300)
    res = run_experiment(c)
    d = regret_decomposition(res.realized[0], res.replays[0][0])
    assert d["a"][0] + d["b"][0] + d["c"][0] == pytest.approx(0, abs=1e-9)
    assert res.report["policy_regret"]["by_benchmark"][0]["mean"] == pytest.approx(0, abs=1e-12)


def test_missing_trace():
    tr = _hand_transcript([0, 1])
    with pytest.raises(DomainError):
        regret_decomposition(tr, tr)


def test_disagreement_needs_gap():
    c = cfg(game={"fixture": "prop2"}, mechanism={"kind": "general"}, agent="follower", T=20)
    with pytest.raises(DomainError):
        disagreement_diagnostic(run_protocol(c))


def test_disagreement_clairvoyant_agent_runs():
    c = ExperimentConfig.from_dict({
        "game": {"fixture": "lower-bound"}, "mechanism": {"kind": "constant", "policy": 0.6},
        "forecaster": {"kind": "calibrated"}, "agent": "adversary-L",
        "states": {"kind": "lower-bound", "first": "H"}, "T": 400, "reps": 2})
    dd = disagreement_diagnostic(run_protocol(c))
    assert dd["violated"].dtype == bool  # a flag, not an assertion


@pytest.mark.parametrize("game", ["effort", "prop2", "lower-bound"])
@pytest.mark.parametrize("states", ["iid", "anti-forecaster"])
@pytest.mark.parametrize("fc", ["calibrated", "event-unbiased"])
def test_follower_regret_bounded_by_bias(game, states, fc):
    c = ExperimentConfig.from_dict({
        "game": {"fixture": game}, "mechanism": {"kind": "general"}, "forecaster": {"kind": fc},
        "events": "E34", "agent": "follower", "states": {"kind": states}, "T": 2048, "reps": 1})
    r = run_experiment(c).report
    ev = r["bias"]["events"]
    assert r["policy_regret"]["PR"] <= 3 * r["bias"]["max_alpha"] * len(ev) + 1e-12


def test_resampled_streams_differ():
    c = cfg(resample_states=True, reps=3, T=50)
    res = run_experiment(c)
    assert len(res.realized) == 3
    assert len({tuple(tr.states) for tr in res.realized}) > 1
    text = transcripts_csv(res.realized)
    assert {line.split(",")[0] for line in text.splitlines()[2:]} == {"0", "1", "2"}


def test_grid_resolution():
    assert grid_resolution("auto", 2**10) == 32
    assert grid_resolution("auto", 2**16) == 256
    assert grid_resolution(16, 10**6) == 16
    with pytest.raises(ConfigError):
        grid_resolution(0, 5)


@pytest.mark.parametrize("patch, field", [
    ({"game": {"fixture": "nope"}}, "game.fixture"),
    ({"mechanism": {"kind": "magic"}}, "mechanism.kind"),
    ({"T": 0}, "'T'"),
    ({"T": [10, 20]}, "'T'"),
    ({"reps": 0}, "reps"),
    ({"agent": "robot"}, "agent"),
    ({"states": {"kind": "iid", "probs": [2, -1]}}, "states.probs"),
    ({"forecaster": {"kind": "calibrated", "m": -3}}, "forecaster.m"),
    ({"mechanism": {"kind": "constant"}}, "mechanism.policy"),
])
def test_config_errors_name_the_field(patch, field):
    d = {"game": {"fixture": "effort"}, "mechanism": {"kind": "stable-oracle"},
         "states": {"kind": "iid"}, "T": 10}
    d.update(patch)
    with pytest.raises(ConfigError, match=field.replace(".", r"\.")):
        run_experiment(ExperimentConfig.from_dict(d))


def test_missing_required_field():
    with pytest.raises(ConfigError, match="states"):
        ExperimentConfig.from_dict({"game": {"fixture": "effort"}, "mechanism": {"kind": "general"}, "T": 3})


def test_report_is_json():
    r = json.loads(report_json(run_experiment(cfg(T=100)).report))
    assert r["schema"] == "report/1"
    assert {"policy_regret", "swap_regret", "neg_regret", "ugap", "secret_info", "bias",
            "decomposition", "m1_m2", "disagreement"} <= set(r)
