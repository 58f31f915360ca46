"""Strategy evaluation on shared simulated paths.

Every strategy sees the same exogenous noise (regime paths and return
shocks), so sampling error largely cancels in comparisons; paired standard
errors make that explicit. The final period always force-sells whatever is
left, and terminal wealth is the accumulated cash.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from execkit.dp import ValueTable, utility
from execkit.market import MarketSpec, draw_noise, noise_returns
from execkit.ortho import OrthoDecomposition, value_weights
from execkit.policy import MlpPolicy, _cost_mats


def uniform_integer_schedule(total: int, periods: int) -> np.ndarray:
    """Equal integer split with the remainder on the earliest periods."""
    base, rem = divmod(int(total), periods)
    out = np.full(periods, base, dtype=float)
    out[:rem] += 1.0
    return out


def benchmark_schedule(spec: MarketSpec, integer: bool = True) -> np.ndarray:
    """The uniform seller: initial_chunks / horizon each period, per asset."""
    chunks = np.asarray(spec.initial_chunks, dtype=float)
    if not integer:
        return np.tile(chunks / spec.horizon, (spec.horizon, 1))
    cols = [uniform_integer_schedule(int(round(c)), spec.horizon) for c in chunks]
    return np.stack(cols, axis=1)


class BenchmarkStrategy:
    """Sells the uniform schedule regardless of the market state."""

    def __init__(self, spec: MarketSpec, integer: bool = True):
        self.schedule = benchmark_schedule(spec, integer=integer)

    def begin(self, spec, regimes, eps):
        pass

    def act(self, t, regimes, remaining, prices, cash):
        return np.broadcast_to(self.schedule[t], remaining.shape).copy()


class MlpStrategy:
    """Wraps a trained network policy."""

    def __init__(self, policy: MlpPolicy):
        self.policy = policy

    def begin(self, spec, regimes, eps):
        pass

    def act(self, t, regimes, remaining, prices, cash):
        return self.policy.act(t, regimes, remaining, prices, cash)


class OrthoDpStrategy:
    """Drives the asset trades from per-portfolio value tables.

    Each synthetic portfolio runs its own normalized state machine (price,
    cash, chunks) fed by the realized regime path and its projected return;
    the chosen portfolio chunk trades are converted to asset space through
    the decomposition weights and clamped to feasibility.
    """

    def __init__(self, decomp: OrthoDecomposition, tables: list[ValueTable | None]):
        if len(tables) != len(decomp.sub_specs):
            raise ValueError("one value table per portfolio is required")
        for sub, tab in zip(decomp.sub_specs, tables):
            if (sub is None) != (tab is None):
                raise ValueError("tables must be None exactly for untradable portfolios")
        if all(t is None for t in tables):
            raise ValueError("no tradable portfolio in the decomposition")
        self.decomp = decomp
        self.tables = tables

    def begin(self, spec: MarketSpec, regimes: np.ndarray, eps: np.ndarray):
        B = regimes.shape[0]
        n_pf = len(self.tables)
        rets = noise_returns(spec, regimes, eps)
        V = np.stack([
            value_weights(row, spec.initial_prices) if sub is not None
            else np.zeros(spec.n_assets)
            for row, sub in zip(self.decomp.weights, self.decomp.sub_specs)
        ])
        self.rho = np.einsum("btn,jn->btj", rets, V)
        self.q = np.ones((B, n_pf))
        self.cash = np.zeros((B, n_pf))
        self.s = np.tile(
            np.array([0 if sub is None else sub.total_chunks
                      for sub in self.decomp.sub_specs], dtype=np.int64),
            (B, 1),
        )
        self.x_group = np.zeros((B, n_pf), dtype=np.int64)
        live = [t for t in self.tables if t is not None]
        sizes = np.asarray(live[0].group_sizes, dtype=np.int64)
        for tab in live[1:]:
            if tuple(tab.group_sizes) != tuple(sizes):
                raise ValueError("portfolio tables disagree on step grouping")
        starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
        self.epoch_of_t = np.searchsorted(starts, np.arange(spec.horizon), "right") - 1
        self.offset_of_t = np.arange(spec.horizon) - starts[self.epoch_of_t]
        self.size_of_t = sizes[self.epoch_of_t]

    def act(self, t, regimes, remaining, prices, cash):
        n_pf = len(self.tables)
        B = len(regimes)
        e = int(self.epoch_of_t[t])
        u = int(self.offset_of_t[t])
        k = int(self.size_of_t[t])
        step = np.zeros((B, n_pf))
        for j, tab in enumerate(self.tables):
            if tab is None:
                continue
            if u == 0:
                grid = tab.cash_grid
                c = self.cash[:, j] / self.q[:, j]
                knots = np.clip(np.searchsorted(grid, c), 1, len(grid) - 1)
                below = (grid[knots] - c) > (c - grid[knots - 1])
                knots = knots - below
                x = tab.policy[regimes, knots, self.s[:, j], e].astype(np.int64)
                self.x_group[:, j] = x
                self.s[:, j] -= x
            x = self.x_group[:, j]
            step[:, j] = x // k + (u < x % k)
        # advance each portfolio machine under its own sub-problem dynamics
        for j, sub in enumerate(self.decomp.sub_specs):
            if sub is None:
                continue
            xj = step[:, j]
            a1 = sub.temp_linear[regimes]
            a2 = sub.temp_quad[regimes]
            b1 = sub.perm_linear[regimes]
            b2 = sub.perm_quad[regimes]
            self.cash[:, j] += xj * self.q[:, j] * (1.0 - a1 * xj - a2 * xj * xj)
            self.q[:, j] *= (1.0 - b1 * xj - b2 * xj * xj) * (1.0 + self.rho[:, t, j])
        assets = step @ self.decomp.weights
        return np.clip(assets, 0.0, remaining)


def run_strategy(spec: MarketSpec, strategy, regimes: np.ndarray, eps: np.ndarray,
                 record_trades: bool = False, name: str | None = None):
    """Execute a strategy on frozen noise; returns wealth and optional trades.

    Actions beyond rounding noise outside [0, remaining] are a bug in the
    strategy, not something to silently repair, so they raise with the
    offending path and period. Tiny excursions are clamped.
    """
    B = regimes.shape[0]
    T = spec.horizon
    label = name or type(strategy).__name__
    tol = 1e-9 * max(1.0, float(np.max(spec.initial_chunks)))
    tl, tq, pl, pq = _cost_mats(spec)
    rets = noise_returns(spec, regimes, eps)
    prices = np.broadcast_to(
        np.asarray(spec.initial_prices, dtype=float), (B, spec.n_assets)
    ).copy()
    remaining = np.broadcast_to(
        np.asarray(spec.initial_chunks, dtype=float), (B, spec.n_assets)
    ).copy()
    cash = np.zeros(B)
    trades = np.zeros((B, T, spec.n_assets)) if record_trades else None
    strategy.begin(spec, regimes, eps)
    for t in range(T):
        reg = regimes[:, t]
        if t == T - 1:
            a = remaining.copy()
        else:
            a = np.asarray(strategy.act(t, reg, remaining, prices, cash), dtype=float)
            bad = ~np.isfinite(a) | (a < -tol) | (a > remaining + tol)
            if np.any(bad):
                b, j = map(int, np.argwhere(bad)[0])
                raise ValueError(
                    f"strategy {label!r} proposed infeasible trade {a[b, j]!r} "
                    f"for asset {j} at t={t} (remaining {remaining[b, j]!r}, "
                    f"path {b})"
                )
            a = np.clip(a, 0.0, remaining)
        if record_trades:
            trades[:, t] = a
        a2 = a * a
        frac = np.einsum("bkj,bj->bk", tl[reg], a) + np.einsum("bkj,bj->bk", tq[reg], a2)
        drop = np.einsum("bkj,bj->bk", pl[reg], a) + np.einsum("bkj,bj->bk", pq[reg], a2)
        cash = cash + np.einsum("bk,bk->b", a * prices, 1.0 - frac)
        prices = prices * (1.0 - drop) * (1.0 + rets[:, t])
        remaining = remaining - a
    if record_trades:
        return cash, trades
    return cash


@dataclass
class EvalReport:
    """Wealth distribution summary for one strategy on one noise set."""

    name: str
    wealth: np.ndarray = field(repr=False)
    mean: float = 0.0
    median: float = 0.0
    std: float = 0.0
    se_mean: float = 0.0
    se_std: float = 0.0

    @classmethod
    def from_wealth(cls, name: str, wealth: np.ndarray) -> "EvalReport":
        n = len(wealth)
        std = float(np.std(wealth, ddof=1))
        return cls(
            name=name,
            wealth=wealth,
            mean=float(np.mean(wealth)),
            median=float(np.median(wealth)),
            std=std,
            se_mean=std / np.sqrt(n),
            se_std=std / np.sqrt(2.0 * (n - 1)),
        )

    @property
    def n_paths(self) -> int:
        return len(self.wealth)

    def utility_stats(self, gamma: float):
        u = utility(self.wealth, gamma)
        return float(np.mean(u)), float(np.std(u, ddof=1) / np.sqrt(len(u)))


def paired_se(wealth_a: np.ndarray, wealth_b: np.ndarray) -> float:
    """Standard error of mean(a - b) on common noise."""
    d = wealth_a - wealth_b
    return float(np.std(d, ddof=1) / np.sqrt(len(d)))


def evaluate_strategies(spec: MarketSpec, strategies: dict, n_paths: int,
                        rng: np.random.Generator, initial_regime: int | None = None,
                        record_trades: bool = False):
    """Run every strategy on one shared noise draw.

    Returns (reports, wealths, trades) keyed by strategy name; trades is
    None unless requested.
    """
    regimes, eps = draw_noise(spec, n_paths, rng, initial_regime=initial_regime)
    reports: dict[str, EvalReport] = {}
    wealths: dict[str, np.ndarray] = {}
    trades: dict[str, np.ndarray] = {} if record_trades else None
    for name, strat in strategies.items():
        out = run_strategy(spec, strat, regimes, eps, record_trades=record_trades,
                           name=name)
        w = out[0] if record_trades else out
        if record_trades:
            trades[name] = out[1]
        wealths[name] = w
        reports[name] = EvalReport.from_wealth(name, w)
    return reports, wealths, trades
