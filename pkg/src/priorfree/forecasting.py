"""Forecasts with low bias conditional on forecast-measurable events.

Two forecasters choose a randomized forecast each round by approachability:

* ``CalibratedForecaster`` keeps per-cell calibration errors and minimizes the
  worst-case expected growth of their squared norm. Calibration covers every
  event that is a function of the forecast.
* ``EventUnbiasedForecaster`` works directly on the bias vectors of a declared
  event list and minimizes the worst-case growth of sum_E <b_E, pi - y>.

Both only see past states. ``FixedForecaster`` repeats one distribution.
"""
from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass
from typing import Callable, Hashable, Sequence

import numpy as np
from scipy.optimize import linprog

from .game import DomainError


class ForecastGrid:
    """All probability vectors over ``n_states`` with entries in multiples of 1/m."""

    def __init__(self, n_states: int, m: int = 32):
        if n_states < 2 or m < 1:
            raise DomainError("grid needs at least two states and m >= 1")
        self.n_states, self.m = n_states, m
        if n_states == 2:
            k = np.arange(m + 1)
            self.cells = np.stack([(m - k) / m, k / m], axis=1)
        else:
            comps = [c for c in itertools.product(range(m + 1), repeat=n_states - 1) if sum(c) <= m]
            self.cells = np.array([[m - sum(c), *c] for c in comps], dtype=float) / m
        self.cells.setflags(write=False)

    def __len__(self):
        return len(self.cells)

    def center(self) -> int:
        d = np.abs(self.cells - 1 / self.n_states).sum(axis=1)
        return int(np.argmin(d))

    def index(self, forecast) -> int:
        hit = np.flatnonzero(np.abs(self.cells - np.asarray(forecast)).max(axis=1) < 1e-12)
        if len(hit) == 0:
            raise DomainError("forecast is not a grid cell")
        return int(hit[0])


@dataclass(frozen=True)
class Event:
    id: str
    predicate: Callable[[np.ndarray], bool]

    def __call__(self, forecast) -> bool:
        return bool(self.predicate(np.asarray(forecast, dtype=float)))

    def key(self, forecast):
        return True if self(forecast) else None

    def event_id(self, key) -> str:
        return self.id


class EventFamily:
    """Indicator events {key_fn(pi) = k}, one per value k; a key of None fires nothing.

    Families let event sets such as "(p*(pi), a*) = (p, a)" be declared without
    listing every policy in advance. Keys are memoized per forecast.
    """

    def __init__(self, prefix: str, key_fn: Callable[[np.ndarray], Hashable]):
        self.prefix = prefix
        self.key_fn = key_fn
        self._memo: dict = {}

    def key(self, forecast):
        pi = np.asarray(forecast, dtype=float)
        k = tuple(np.round(pi, 12))
        if k not in self._memo:
            self._memo[k] = self.key_fn(pi)
        return self._memo[k]

    def event_id(self, key) -> str:
        return f"{self.prefix}:{key}"

    def event(self, key) -> Event:
        return Event(self.event_id(key), lambda pi, key=key: self.key(pi) == key)


def keyed_events(prefix: str, key_fn: Callable[[np.ndarray], Hashable], keys: Sequence[Hashable]) -> list[Event]:
    """One indicator event per key, all sharing a memoized ``key_fn``."""
    fam = EventFamily(prefix, key_fn)
    return [fam.event(k) for k in keys]


def always_on() -> Event:
    return Event("all", lambda pi: True)


class BiasLedger:
    """b_E = sum E(pi_t)(pi_t - y_t) and activation counts n_E.

    ``events`` may mix plain events and families; ids of family members are
    registered the first time they are seen. Plain events are registered upfront.
    """

    def __init__(self, events: Sequence, n_states: int):
        self.families = list(events)
        self.n_states = n_states
        self.ids: list[str] = []
        self._index: dict[str, int] = {}
        self.b = np.zeros((0, n_states))
        self.n = np.zeros(0, dtype=np.int64)
        self.t = 0
        for f in self.families:
            if isinstance(f, Event):
                self.register(f.id)

    def register(self, event_id: str) -> int:
        if event_id not in self._index:
            self._index[event_id] = len(self.ids)
            self.ids.append(event_id)
            self.b = np.vstack([self.b, np.zeros((1, self.n_states))])
            self.n = np.append(self.n, 0)
        return self._index[event_id]

    def active(self, forecast) -> list[int]:
        """Indices of the events firing at ``forecast`` (registering new ones)."""
        out = []
        for f in self.families:
            k = f.key(forecast)
            if k is not None:
                out.append(self.register(f.event_id(k)))
        return out

    def update(self, forecast, y: int, active: Sequence[int] | None = None):
        pi = np.asarray(forecast, dtype=float)
        if active is None:
            active = self.active(pi)
        err = pi.copy()
        err[y] -= 1
        idx = np.asarray(active, dtype=int)
        self.b[idx] += err
        self.n[idx] += 1
        self.t += 1

    def alpha(self, T: int | None = None) -> np.ndarray:
        T = self.t if T is None else T
        return np.abs(self.b).sum(axis=1) / max(T, 1)

    def table(self) -> list[dict]:
        a = self.alpha()
        return [{"event_id": i, "n_E": int(self.n[k]), "alpha": float(a[k]), "T": self.t} for k, i in enumerate(self.ids)]


class CalibrationLedger:
    def __init__(self, grid: ForecastGrid):
        self.grid = grid
        self.n = np.zeros(len(grid), dtype=np.int64)
        self.sum_y = np.zeros((len(grid), grid.n_states))

    def update(self, cell: int, y: int):
        self.n[cell] += 1
        self.sum_y[cell, y] += 1

    def errors(self) -> np.ndarray:
        """Per-cell calibration error vectors sum(g - y_t) over rounds forecasting g."""
        return self.n[:, None] * self.grid.cells - self.sum_y


def update_ledgers(ledgers, forecast, realized_state: int, cell: int | None = None):
    for led in ledgers:
        if isinstance(led, CalibrationLedger):
            led.update(led.grid.index(forecast) if cell is None else cell, realized_state)
        else:
            led.update(forecast, realized_state)
    return ledgers


# ---------------------------------------------------------------------------
# per-round minimax: min over q in simplex of max_y sum_g q_g A[g, y]


def solve_minimax(A: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    """Returns (support rows, weights, value). Support size is at most n_cols + 1."""
    if A.shape[1] == 2:
        return _solve_two(A)
    return _solve_lp(A)


def _solve_two(A):
    """Two-column minimax via its dual.

    max over lambda in [0,1] of h(lambda) = min_k (A[k,1] + lambda (A[k,0] - A[k,1]))
    is a concave maximization. A grid pass brackets the maximizer, rows that
    cannot touch the lower envelope inside the bracket are dropped, and the
    optimum is the best crossing of a rising and a falling survivor. The
    optimal mixture puts weight on that pair. Pure rows win ties; among pure
    rows the first does.
    """
    m0, m1 = A[:, 0], A[:, 1]
    pure = np.maximum(m0, m1)
    g = int(np.argmin(pure))
    best, support, weights = pure[g], np.array([g]), np.array([1.0])
    d = m0 - m1
    pos, neg = d > 0, d < 0
    if not (pos.any() and neg.any()):
        return support, weights, float(best)
    env = (m1[:, None] + d[:, None] * _LAMBDA_GRID[None, :]).min(axis=0)
    k = int(np.argmax(env))
    lo, hi = _LAMBDA_GRID[max(k - 1, 0)], _LAMBDA_GRID[min(k + 1, len(_LAMBDA_GRID) - 1)]
    h_lo, h_hi = m1 + lo * d, m1 + hi * d
    # the envelope peak inside [lo, hi] is at most any single line's max there
    cap = np.maximum(h_lo, h_hi).min()
    keep = np.minimum(h_lo, h_hi) <= cap + 1e-12
    P = np.flatnonzero(keep & pos)
    N = np.flatnonzero(keep & neg)
    C = np.flatnonzero(keep)
    if len(P) == 0 or len(N) == 0:
        return support, weights, float(best)
    dp, dn = d[P][:, None], d[N][None, :]
    lam = (m1[N][None, :] - m1[P][:, None]) / (dp - dn)
    vals = (m1[C][None, None, :] + lam[..., None] * d[C][None, None, :]).min(axis=2)
    own = m1[P][:, None] + lam * dp
    # a pair counts only if it crosses on the envelope inside [0, 1]; endpoint optima are pure rows
    vals[(lam < 0) | (lam > 1) | (own > vals + 1e-12)] = -np.inf
    a, b_ = np.unravel_index(int(np.argmax(vals)), vals.shape)
    i, j = int(P[a]), int(N[b_])
    w = -d[j] / (d[i] - d[j])
    val = w * m0[i] + (1 - w) * m0[j]
    if val < best - 1e-12:
        best, support, weights = val, np.array([i, j]), np.array([w, 1 - w])
    return support, weights, float(best)


_LAMBDA_GRID = np.linspace(0.0, 1.0, 65)


def _solve_lp(A):
    K, Y = A.shape
    c = np.zeros(K + 1)
    c[-1] = 1.0
    A_ub = np.hstack([A.T, -np.ones((Y, 1))])
    A_eq = np.hstack([np.ones((1, K)), np.zeros((1, 1))])
    res = linprog(
        c, A_ub=A_ub, b_ub=np.zeros(Y), A_eq=A_eq, b_eq=[1.0],
        bounds=[(0, None)] * K + [(None, None)], method="highs-ds",
    )
    if res.status != 0:
        raise RuntimeError(f"minimax LP failed: {res.message}")
    q = np.clip(res.x[:K], 0, None)
    support = np.flatnonzero(q > 1e-12)
    w = q[support] / q[support].sum()
    return support, w, float(res.x[-1])


@dataclass
class ForecastDraw:
    cell: int
    forecast: np.ndarray
    support: np.ndarray
    weights: np.ndarray
    mean: np.ndarray


class _GridForecaster:
    def __init__(self, grid: ForecastGrid, rng: np.random.Generator):
        self.grid = grid
        self.rng = rng
        self.t = 0

    def distribution(self) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def propose(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        support, weights = self.distribution()
        mean = weights @ self.grid.cells[support]
        return support, weights, mean

    def sample(self, support, weights) -> int:
        if len(support) == 1:
            return int(support[0])
        u = self.rng.random()
        k = int(np.searchsorted(np.cumsum(weights), u, side="right"))
        return int(support[min(k, len(support) - 1)])

    def step(self) -> ForecastDraw:
        support, weights, mean = self.propose()
        cell = self.sample(support, weights)
        return ForecastDraw(cell, self.grid.cells[cell], support, weights, mean)


class CalibratedForecaster(_GridForecaster):
    kind = "calibrated"

    def __init__(self, n_states: int, m: int = 32, rng: np.random.Generator | None = None):
        super().__init__(ForecastGrid(n_states, m), rng or np.random.default_rng(0))
        self.ledger = CalibrationLedger(self.grid)
        # squared distance from each cell to each vertex: |g - e_y|^2
        eye = np.eye(n_states)
        self._sq = ((self.grid.cells[:, None, :] - eye[None, :, :]) ** 2).sum(axis=2)

    def distribution(self):
        e = self.ledger.errors()
        cells = self.grid.cells
        # 2<e_g, g - e_y> + |g - e_y|^2
        A = 2 * ((e * cells).sum(axis=1)[:, None] - e) + self._sq
        support, w, _ = solve_minimax(A)
        return support, w

    def update(self, cell: int, y: int):
        self.ledger.update(cell, y)
        self.t += 1


class EventUnbiasedForecaster(_GridForecaster):
    """Approachability on the event-bias vectors.

    With two states the objective sum_E <b_E, pi - y> is linear in pi on every
    run of forecasts that activate the same events, so only the ends of those
    runs matter. Runs are located by scanning the m-grid and bisecting every
    membership change down to ``2**-refine``; the forecasts then live on that
    fine dyadic grid, which keeps the cost of randomizing across an event
    boundary negligible. With three or more states the plain m-grid is used.
    """

    kind = "event-unbiased"

    def __init__(self, events: Sequence, n_states: int, m: int = 32,
                 rng: np.random.Generator | None = None, refine: int = 30):
        super().__init__(ForecastGrid(n_states, m), rng or np.random.default_rng(0))
        if not events:
            events = [always_on()]
        self.ledger = BiasLedger(events, n_states)
        self.refine = refine
        if n_states == 2 and refine:
            pts = self._boundary_points()
        else:
            pts = self.grid.cells
        center = np.full(n_states, 1 / n_states)
        order = np.argsort(np.abs(pts - center).sum(axis=1), kind="stable")
        self.points = pts[order]
        active = [self.ledger.active(c) for c in self.points]
        width = max(1, max(len(a) for a in active))
        # padded index table; the extra row of zeros absorbs the padding
        self._idx = np.full((len(self.points), width), -1, dtype=np.int64)
        for k, a in enumerate(active):
            self._idx[k, : len(a)] = a

    def _membership(self, x: float) -> tuple:
        pi = np.array([1 - x, x])
        return tuple(f.key(pi) for f in self.ledger.families)

    def _boundary_points(self) -> np.ndarray:
        step = 2.0 ** -self.refine
        xs = {0.0, 0.5, 1.0}
        scan = self.grid.cells[:, 1]
        mem = [self._membership(x) for x in scan]

        def split(lo, hi, mlo, mhi):
            if hi - lo <= step:
                xs.update((lo, hi))
                return
            mid = np.floor((lo + hi) / 2 / step) * step
            if mid <= lo:
                mid = lo + step
            mm = self._membership(mid)
            if mm != mlo:
                split(lo, mid, mlo, mm)
            if mm != mhi:
                split(mid, hi, mm, mhi)

        for i in range(len(scan) - 1):
            if mem[i] != mem[i + 1]:
                split(float(scan[i]), float(scan[i + 1]), mem[i], mem[i + 1])
        x = np.array(sorted(xs))
        return np.stack([1 - x, x], axis=1)

    def propose(self):
        support, weights = self.distribution()
        return support, weights, weights @ self.points[support]

    def step(self) -> ForecastDraw:
        support, weights, mean = self.propose()
        k = self.sample(support, weights)
        return ForecastDraw(k, self.points[k], support, weights, mean)

    def active(self, k: int) -> np.ndarray:
        row = self._idx[k]
        return row[row >= 0]

    def distribution(self):
        b = np.vstack([self.ledger.b, np.zeros((1, self.ledger.n_states))])
        s = b[self._idx].sum(axis=1)  # summed bias over the active events, per point
        A = (s * self.points).sum(axis=1)[:, None] - s
        return solve_minimax(A)[:2]

    def update(self, cell: int, y: int):
        self.ledger.update(self.points[cell], y, self.active(cell))
        self.t += 1


class FixedForecaster:
    kind = "fixed"

    def __init__(self, probs, n_states: int):
        self.pi = np.asarray(probs, dtype=float)
        if self.pi.shape != (n_states,) or abs(self.pi.sum() - 1) > 1e-9:
            raise DomainError("fixed forecast must be a probability vector over the states")

    def step(self) -> ForecastDraw:
        return ForecastDraw(-1, self.pi, np.array([-1]), np.array([1.0]), self.pi)

    def update(self, cell, y):
        pass


def forecast_step_calibrated(forecaster: CalibratedForecaster) -> ForecastDraw:
    return forecaster.step()


def forecast_step_event_unbiased(forecaster: EventUnbiasedForecaster) -> ForecastDraw:
    return forecaster.step()


# ---------------------------------------------------------------------------
# auditing


def audit_bias(forecasts, states, events: Sequence) -> list[dict]:
    """alpha(E) = (1/T) |sum_t E(pi_t)(pi_t - y_t)|_1 for each event, recomputed from scratch.

    Plain events always get a row; family members get one once they fire.
    """
    forecasts = np.asarray(forecasts, dtype=float)
    states = np.asarray(states, dtype=int)
    T = len(states)
    led = BiasLedger(events, forecasts.shape[1] if forecasts.ndim == 2 else 2)
    if T:
        err = forecasts.copy()
        err[np.arange(T), states] -= 1
        uniq, inv = np.unique(forecasts, axis=0, return_inverse=True)
        inv = inv.reshape(-1)
        sums = np.zeros((len(uniq), forecasts.shape[1]))
        np.add.at(sums, inv, err)
        counts = np.bincount(inv, minlength=len(uniq))
        for u in range(len(uniq)):
            idx = np.asarray(led.active(uniq[u]), dtype=int)
            led.b[idx] += sums[u]
            led.n[idx] += counts[u]
    led.t = T
    return led.table()


BIAS_SCHEMA = "bias/1"


def bias_csv(rows: list[dict], header: bool = True) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if header:
        buf.write(f"#schema={BIAS_SCHEMA}\n")
        w.writerow(["event_id", "n_E", "alpha", "T"])
    for r in rows:
        w.writerow([r["event_id"], r["n_E"], repr(r["alpha"]), r["T"]])
    return buf.getvalue()
