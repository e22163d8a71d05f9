import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import linprog

from priorfree.forecasting import (
    BiasLedger,
    CalibratedForecaster,
    Event,
    EventFamily,
    EventUnbiasedForecaster,
    ForecastGrid,
    always_on,
    audit_bias,
    bias_csv,
    solve_minimax,
    update_ledgers,
)
from priorfree.harness import ExperimentConfig, generate_stream


def lp_value(A):
    """min over row mixtures w of max_y (w @ A)[y], by a generic LP."""
    n, Y = A.shape
    c = np.r_[np.zeros(n), 1.0]
    A_ub = np.c_[A.T, -np.ones(Y)]
    res = linprog(c, A_ub=A_ub, b_ub=np.zeros(Y), A_eq=np.r_[np.ones(n), 0.0][None, :], b_eq=[1.0],
                  bounds=[(0, None)] * n + [(None, None)], method="highs")
    return res.fun


@given(st.integers(0, 2**32 - 1), st.integers(1, 140), st.sampled_from([2, 3]))
def test_minimax_matches_lp(seed, n, Y):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(n, Y))
    if rng.random() < 0.3:
        A = np.round(A, 1)  # many exact ties
    support, w, val = solve_minimax(A)
    assert len(support) <= Y + 1
    assert w.min() >= -1e-12 and abs(w.sum() - 1) <= 1e-9
    achieved = (w @ A[support]).max()
    assert achieved <= val + 1e-9
    assert val <= lp_value(A) + 1e-7


def test_ledger_single_update():
    led = BiasLedger([always_on()], 2)
    update_ledgers([led], [0.5, 0.5], 0)
    assert led.b[0].tolist() == [-0.5, 0.5]
    off = BiasLedger([Event("never", lambda pi: False)], 2)
    update_ledgers([off], [0.5, 0.5], 0)
    assert off.b[0].tolist() == [0.0, 0.0]


def test_three_round_alpha():
    led = BiasLedger([always_on()], 2)
    for y in (0, 1, 0):
        led.update([0.5, 0.5], y)
    assert led.alpha()[0] == pytest.approx(1 / 3)
    rows = audit_bias([[0.5, 0.5]] * 3, [0, 1, 0], [always_on()])
    assert rows[0]["alpha"] == pytest.approx(1 / 3)


def test_prescient_forecasts_have_no_bias():
    ys = np.random.default_rng(1).integers(0, 3, 200)
    fam = EventFamily("argmax", lambda pi: int(np.argmax(pi)))
    rows = audit_bias(np.eye(3)[ys], ys, [always_on(), fam])
    assert all(r["alpha"] == 0 for r in rows)


def test_bias_csv_schema():
    text = bias_csv(audit_bias([[0.5, 0.5]] * 3, [0, 1, 0], [always_on()]))
    lines = text.splitlines()
    assert lines[0] == "#schema=bias/1"
    assert lines[1] == "event_id,n_E,alpha,T"
    assert lines[2].startswith("all,3,")


def test_first_round_uniform_cell():
    f = CalibratedForecaster(2, 32, np.random.default_rng(0))
    d = f.step()
    assert np.allclose(d.forecast, [0.5, 0.5])
    assert np.abs(d.forecast - np.array([1, 0])).sum() <= 2


def test_calibrated_tracks_constant_state():
    f = CalibratedForecaster(2, 32, np.random.default_rng(0))
    total = np.zeros(2)
    for _ in range(10_000):
        d = f.step()
        total += d.forecast
        f.update(d.cell, 0)
    assert total[0] / 10_000 >= 0.95


def test_calibration_error_fair_coin():
    T, m = 100_000, 32
    rng = np.random.default_rng(7)
    f = CalibratedForecaster(2, m, np.random.default_rng(8))
    ys = rng.integers(0, 2, T)
    for y in ys:
        d = f.step()
        f.update(d.cell, int(y))
    err = np.abs(f.ledger.errors()).sum(axis=1).max() / T
    assert err <= 5 * m / np.sqrt(T)


def test_event_unbiased_adversarial_single_event():
    f = EventUnbiasedForecaster([always_on()], 2, 32, np.random.default_rng(0))
    for _ in range(10_000):
        d = f.step()
        y = int(np.argmin(d.mean))
        f.update(d.cell, y)
    assert np.abs(f.ledger.b[0]).sum() / 10_000 <= 0.05


def test_event_unbiased_never_active_event():
    never = Event("never", lambda pi: False)
    f = EventUnbiasedForecaster([always_on(), never], 2, 16, np.random.default_rng(0))
    for t in range(300):
        d = f.step()
        f.update(d.cell, t % 2)
    assert f.ledger.b[f.ledger.ids.index("never")].tolist() == [0.0, 0.0]


def _stream(kind, T, events, fc="event-unbiased", game="prop2", mech="general"):
    cfg = ExperimentConfig.from_dict({
        "game": {"fixture": game}, "mechanism": {"kind": mech}, "forecaster": {"kind": fc, "m": 32},
        "events": events, "agent": "follower", "states": {"kind": kind}, "T": T, "reps": 1})
    return generate_stream(cfg, cfg.mechanism_obj())


def test_e4_bias_decays_on_tie_game():
    amax = {}
    for T in (2**14, 2**16):
        st = _stream("anti-forecaster", T, "E34")
        amax[T] = max(r["alpha"] for r in audit_bias(st.forecasts, st.states, st.families))
    assert amax[2**16] <= 2 * amax[2**14] * (2**14 / 2**16) ** 0.35


def test_incremental_ledger_matches_audit():
    f_rng = np.random.default_rng(3)
    fam = EventFamily("hi", lambda pi: pi[1] > 0.5)
    f = EventUnbiasedForecaster([always_on(), fam], 2, 16, f_rng)
    fcs, ys = [], []
    for t in range(2000):
        d = f.step()
        y = int(f_rng.random() < 0.3)
        fcs.append(d.forecast)
        ys.append(y)
        f.update(d.cell, y)
    rows = {r["event_id"]: r for r in audit_bias(fcs, ys, [always_on(), EventFamily("hi", lambda pi: pi[1] > 0.5)])}
    for k, eid in enumerate(f.ledger.ids):
        assert rows[eid]["n_E"] == f.ledger.n[k]
        assert rows[eid]["alpha"] == pytest.approx(f.ledger.alpha()[k], abs=1e-12)


@pytest.mark.parametrize("kind", ["iid", "anti-forecaster"])
def test_calibration_bounds_event_bias(kind):
    st = _stream(kind, 4096, "E123", fc="calibrated", game="effort", mech="stable-oracle")
    grid = ForecastGrid(2, 32)
    cells = np.array([grid.index(pi) for pi in st.forecasts])
    err = np.zeros((len(grid), 2))
    np.add.at(err, cells, st.forecasts - np.eye(2)[st.states])
    T = len(cells)
    for r in audit_bias(st.forecasts, st.states, st.families):
        fam = next(f for f in st.families if r["event_id"].startswith(f.prefix + ":"))
        key = r["event_id"][len(fam.prefix) + 1:]
        on = [g for g in range(len(grid)) if str(fam.key(grid.cells[g])) == key]
        assert r["alpha"] <= np.abs(err[on]).sum() / T + 1e-12


def test_grid_bias_of_calibrated_run():
    st = _stream("iid", 2**14, "E123", fc="calibrated", game="effort", mech="stable-oracle")
    cells = [EventFamily("cell", lambda pi: tuple(np.round(pi, 9)))]
    amax = max(r["alpha"] for r in audit_bias(st.forecasts, st.states, cells))
    assert amax <= 2 * 3 / np.sqrt(2**14)


@given(st.integers(0, 2**32 - 1))
def test_support_size(seed):
    rng = np.random.default_rng(seed)
    f = CalibratedForecaster(3, 8, rng)
    for _ in range(20):
        d = f.step()
        assert len(d.support) <= 4
        f.update(d.cell, int(rng.integers(0, 3)))
