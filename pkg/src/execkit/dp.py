"""Scalar liquidation by backward dynamic programming.

State is (regime, normalized cash, remaining chunks, decision epoch) where
cash is divided by the current asset price and the price itself is
normalized to 1 at every state. CRRA scaling, U(a*w) = a**gamma * U(w),
removes the price level from the state: the backup multiplies the
continuation value by the realized relative price raised to gamma (or adds
the log price when gamma is 0) instead of tracking prices.

Decisions may be grouped: one chunk count per group of consecutive periods,
executed as equal per-step sales with the remainder on the earliest steps.
The ungrouped problem is the group-size-1 special case of the same backup.
"""

from __future__ import annotations

import itertools
import logging
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

GRID_KNOTS = 101
GRID_SPAN = 1.5  # upper bound of the default cash grid, in units of total chunks

TABLE_MAGIC = b"EXKT"
TABLE_FORMAT_VERSION = 1


@dataclass(eq=False)
class SingleAssetSpec:
    """One asset (or synthetic portfolio) to liquidate over a fixed horizon.

    Cost coefficients are per regime: selling x chunks loses the fraction
    temp_linear[i]*x + temp_quad[i]*x**2 of the proceeds and knocks the
    price down by the factor perm_linear[i]*x + perm_quad[i]*x**2.
    """

    horizon: int
    n_regimes: int
    transition: np.ndarray
    mean_return: np.ndarray
    var_return: np.ndarray
    temp_linear: np.ndarray
    temp_quad: np.ndarray
    perm_linear: np.ndarray
    perm_quad: np.ndarray
    total_chunks: int
    gamma: float
    step_groups: tuple[tuple[int, ...], ...] | None = None

    def __post_init__(self):
        for name in ("transition", "mean_return", "var_return", "temp_linear",
                     "temp_quad", "perm_linear", "perm_quad"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        if np.any(self.var_return < 0):
            raise ValueError("negative return variance")

    @property
    def groups(self) -> tuple[tuple[int, ...], ...]:
        if self.step_groups is not None:
            return self.step_groups
        return tuple((t,) for t in range(self.horizon))

    def proceeds_factor(self, regime: int, x: float) -> float:
        """Chunks sold times one minus the temporary cost, at unit price."""
        return x * (1.0 - self.temp_linear[regime] * x - self.temp_quad[regime] * x * x)

    def price_factor(self, regime: int, x: float) -> float:
        """Multiplier the permanent impact applies to the price."""
        return 1.0 - self.perm_linear[regime] * x - self.perm_quad[regime] * x * x


@dataclass
class McConfig:
    """Monte-Carlo settings for the expectation inside the backup.

    n_iterations independent batches of n_samples draws are averaged with
    equal weight, which is arithmetically a single batch of their union;
    both knobs are kept so sample budgets stay recognizable.
    """

    n_samples: int = 1000
    n_iterations: int = 3
    seed: int | np.random.SeedSequence = 0


@dataclass(eq=False)
class ValueTable:
    """Solved values and argmax policy on the state grid.

    values[i, g, s, e]: regime i, cash knot g, s chunks remaining, epoch e.
    policy holds the chunk count to sell at that state (forced to s at the
    last epoch).
    """

    cash_grid: np.ndarray
    values: np.ndarray
    policy: np.ndarray
    gamma: float
    group_sizes: tuple[int, ...]

    @property
    def n_epochs(self) -> int:
        return self.values.shape[3]


def utility(w, gamma: float):
    """CRRA utility w**gamma / gamma, with the log limit at gamma = 0."""
    w = np.asarray(w, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        if gamma == 0.0:
            out = np.where(w > 0, np.log(np.maximum(w, 1e-300)), -np.inf)
        else:
            out = np.where(w > 0, np.power(np.maximum(w, 1e-300), gamma) / gamma, -np.inf)
    return out if out.ndim else float(out)


def make_cash_grid(total_chunks: int, upper: float | None = None,
                   knots: int = GRID_KNOTS) -> np.ndarray:
    """Geometric grid on [0, upper] with a zero knot prepended."""
    if upper is None:
        upper = GRID_SPAN * total_chunks
    return np.concatenate([[0.0], np.geomspace(upper * 1e-3, upper, knots - 1)])


def required_cash_bound(spec: SingleAssetSpec) -> float:
    """Heuristic upper bound on reachable normalized cash.

    Cash over price grows when the price falls, so only downside drift,
    a three-sigma return spread and the permanent-impact haircut matter.
    """
    T = spec.horizon
    s = float(spec.total_chunks)
    drift = max(0.0, -float(np.min(spec.mean_return))) * T
    spread = 3.0 * float(np.sqrt(np.max(spec.var_return))) * np.sqrt(T)
    perm = float(np.max(spec.perm_linear * s + spec.perm_quad * s * s))
    return s * float(np.exp(drift + spread)) / max(1.0 - perm, 1e-6)


def _check_costs(spec: SingleAssetSpec) -> None:
    s = float(spec.total_chunks)
    temp = spec.temp_linear * s + spec.temp_quad * s * s
    perm = spec.perm_linear * s + spec.perm_quad * s * s
    if np.any(temp >= 1.0):
        raise ValueError("temporary cost reaches 100% for the full position")
    if np.any(perm >= 1.0):
        raise ValueError("permanent impact wipes out the price for the full position")


def _group_trades(chunks: int, group_len: int) -> np.ndarray:
    """Split a chunk count into equal per-step sales, remainder first."""
    base, rem = divmod(int(chunks), group_len)
    out = np.full(group_len, base, dtype=float)
    out[:rem] += 1.0
    return out


def _interp_weights(grid: np.ndarray, q: np.ndarray):
    """Linear interpolation indices/weights on the cash grid, clamped at the ends."""
    j = np.clip(np.searchsorted(grid, q), 1, len(grid) - 1)
    lo = grid[j - 1]
    w = (q - lo) / (grid[j] - lo)
    return j - 1, np.clip(w, 0.0, 1.0)


def solve_dp(spec: SingleAssetSpec, mc: McConfig | None = None,
             cash_grid: np.ndarray | None = None) -> ValueTable:
    """Backward induction over (regime, cash knot, chunks, epoch).

    The expectation is stratified by the regime right after the first period
    of the epoch (exact transition-row weights); inner-period regimes and all
    returns are Monte-Carlo sampled, with draws shared across candidate
    actions and cash knots. When an epoch spans one period and the return
    variance of the stratum regime is zero there is nothing left to sample,
    so a single draw is used and the backup is exact. Ties in the action
    value go to the smaller trade.
    """
    mc = mc or McConfig()
    if spec.total_chunks < 1:
        raise ValueError("spec has no chunks to sell")
    _check_costs(spec)
    need = required_cash_bound(spec)
    if cash_grid is None:
        upper = GRID_SPAN * spec.total_chunks
        if upper < need:
            log.info("widening default cash grid upper bound %.4g -> %.4g", upper, need)
            upper = 1.05 * need
        cash_grid = make_cash_grid(spec.total_chunks, upper)
    grid = np.asarray(cash_grid, dtype=float)
    if grid[-1] < need * 0.999:
        raise ValueError(
            f"cash grid upper bound {grid[-1]:.4g} too small; "
            f"needs at least {need:.4g} to cover reachable cash"
        )

    groups = spec.groups
    if list(itertools.chain.from_iterable(groups)) != list(range(spec.horizon)):
        raise ValueError("step groups must partition the horizon in order")
    m = spec.n_regimes
    S0 = int(spec.total_chunks)
    G = len(grid)
    E = len(groups)
    gamma = spec.gamma
    sigma = np.sqrt(spec.var_return)

    rng = np.random.default_rng(mc.seed)
    values = np.full((m, G, S0 + 1, E), -np.inf)
    policy = np.zeros((m, G, S0 + 1, E), dtype=np.int32)
    n_clamped = 0
    n_queries = 0
    row_base = (np.arange(G) * (m * G))[:, None]

    # Fixed trades walked through k inner periods for every sample. regs[u]
    # is the regime in force at inner period u (regs[0] = start regime),
    # rets[u] the return drawn right after period u, from regime regs[u+1].
    def inner_path(i, j, k, n, path_rng):
        regs = np.empty((k + 1, n), dtype=np.int64)
        regs[0] = i
        regs[1] = j
        for u in range(2, k + 1):
            roll = path_rng.random(n)
            cum = np.cumsum(spec.transition[regs[u - 1]], axis=1)
            regs[u] = np.minimum((roll[:, None] > cum).sum(axis=1), m - 1)
        eps = path_rng.standard_normal((k, n))
        rets = spec.mean_return[regs[1:]] + sigma[regs[1:]] * eps
        return regs, rets

    for e in range(E - 1, -1, -1):
        k = len(groups[e])
        last = e == E - 1
        v_flat = None
        if not last:
            v_flat = np.ascontiguousarray(values[:, :, :, e + 1]).reshape(m * G, S0 + 1)
        for i in range(m):
            # action value q_acc[g, x, s_next], filled stratum by stratum
            q_acc = np.zeros((G, S0 + 1, S0 + 1))
            for j in range(m):
                w_j = spec.transition[i, j]
                if w_j == 0.0:
                    continue
                exact = k == 1 and sigma[j] == 0.0
                n = 1 if exact else mc.n_samples * mc.n_iterations
                regs, rets = inner_path(i, j, k, n, rng)
                for x in range(S0 + 1):
                    trades = _group_trades(x, k)
                    price = np.ones(n)
                    gain = np.zeros(n)
                    for u in range(k):
                        r_u = regs[u]
                        xu = trades[u]
                        gain += price * xu * (
                            1.0 - spec.temp_linear[r_u] * xu - spec.temp_quad[r_u] * xu * xu
                        )
                        price = price * (
                            1.0 - spec.perm_linear[r_u] * xu - spec.perm_quad[r_u] * xu * xu
                        ) * (1.0 + rets[u])
                    wealth = grid[:, None] + gain[None, :]
                    # no chunks after this epoch: cash is the terminal wealth
                    q_acc[:, x, 0] += w_j * utility(wealth, gamma).mean(axis=1)
                    if last or x == S0:
                        continue
                    price = np.maximum(price, 1e-12)
                    cash_next = wealth / price[None, :]
                    n_queries += cash_next.size
                    n_clamped += int((cash_next > grid[-1]).sum())
                    idx, w = _interp_weights(grid, cash_next)
                    if gamma == 0.0:
                        w_lo, w_hi = 1.0 - w, w
                        shift = float(np.log(price).mean())
                    else:
                        factor = np.power(price, gamma)[None, :]
                        w_lo, w_hi = factor * (1.0 - w), factor * w
                        shift = 0.0
                    # scatter interpolation weights into a (G, m*G) stencil,
                    # then one matmul covers every remaining-chunk slice
                    flat = regs[k][None, :] * G + idx + row_base
                    stencil = np.bincount(
                        np.concatenate([flat.ravel(), (flat + 1).ravel()]),
                        weights=np.concatenate([w_lo.ravel(), w_hi.ravel()]) / n,
                        minlength=G * m * G,
                    ).reshape(G, m * G)
                    cont = stencil @ v_flat[:, 1 : S0 + 1 - x]
                    q_acc[:, x, 1 : S0 + 1 - x] += w_j * (cont + shift)
            ar = np.arange(S0 + 1)
            for s in range(S0 + 1):
                if last:
                    values[i, :, s, e] = q_acc[:, s, 0]
                    policy[i, :, s, e] = s
                else:
                    block = q_acc[:, ar[: s + 1], s - ar[: s + 1]]
                    best = np.argmax(block, axis=1)  # first max: smaller trade wins ties
                    values[i, :, s, e] = block[np.arange(G), best]
                    policy[i, :, s, e] = best
    if n_clamped:
        log.warning(
            "cash grid clamped %d of %d interpolation queries (%.3g%%)",
            n_clamped, n_queries, 100.0 * n_clamped / n_queries,
        )
    return ValueTable(
        cash_grid=grid,
        values=values,
        policy=policy,
        gamma=gamma,
        group_sizes=tuple(len(g) for g in groups),
    )


def nearest_knot(grid: np.ndarray, c: float) -> int:
    j = int(np.clip(np.searchsorted(grid, c), 1, len(grid) - 1))
    return j if (grid[j] - c) <= (c - grid[j - 1]) else j - 1


def rollout_policy(table: ValueTable, spec: SingleAssetSpec,
                   regimes: np.ndarray, returns: np.ndarray) -> dict:
    """Run the table policy along one realized path.

    regimes[t] is the regime during period t; returns[t] moves the price
    from period t to t+1 (the final entry is accepted but has no effect).
    Prices and cash are relative to the initial price. Returns per-period
    schedule, prices, cash and the terminal wealth.
    """
    regimes = np.asarray(regimes, dtype=int)
    returns = np.asarray(returns, dtype=float)
    if len(regimes) != spec.horizon or len(returns) != spec.horizon:
        raise ValueError("path length must equal the horizon")
    groups = spec.groups
    if tuple(table.group_sizes) != tuple(len(g) for g in groups):
        raise ValueError("table was solved for a different step grouping")
    grid = table.cash_grid
    schedule = np.zeros(spec.horizon)
    prices = np.zeros(spec.horizon)
    cash_series = np.zeros(spec.horizon)
    price = 1.0
    cash = 0.0
    s = int(spec.total_chunks)
    clamped = 0
    for e, group in enumerate(groups):
        i = regimes[group[0]]
        c_norm = cash / price
        if c_norm > grid[-1]:
            clamped += 1
        x = int(table.policy[i, nearest_knot(grid, c_norm), s, e])
        trades = _group_trades(x, len(group))
        for u, t in enumerate(group):
            reg = regimes[t]
            xu = trades[u]
            prices[t] = price
            cash += xu * price * (
                1.0 - spec.temp_linear[reg] * xu - spec.temp_quad[reg] * xu * xu
            )
            cash_series[t] = cash
            price *= 1.0 - spec.perm_linear[reg] * xu - spec.perm_quad[reg] * xu * xu
            price *= 1.0 + returns[t]
            schedule[t] = xu
        s -= x
    if clamped:
        log.warning("policy lookup clamped %d states above the cash grid", clamped)
    return {
        "schedule": schedule,
        "prices": prices,
        "cash": cash_series,
        "terminal_wealth": cash,
        "remaining": s,
    }


def aggregate_steps(spec: SingleAssetSpec, group_size: int) -> SingleAssetSpec:
    """Group consecutive periods so the DP makes one decision per group."""
    if spec.step_groups is not None:
        raise ValueError("spec already carries step groups")
    if not 1 <= group_size <= spec.horizon:
        raise ValueError(f"group size must lie in [1, {spec.horizon}]")
    ts = range(spec.horizon)
    groups = tuple(
        tuple(ts[a : a + group_size]) for a in range(0, spec.horizon, group_size)
    )
    return replace(spec, step_groups=groups)


def save_table(table: ValueTable, path: str | Path) -> None:
    """Binary layout: magic, u32 version, u32 dims (regimes, knots, chunk
    levels, epochs), f64 gamma, u32 group sizes, then the cash grid (f64),
    values (f64) and policy (i32), all little-endian C order."""
    m, G, S1, E = table.values.shape
    with open(path, "wb") as fh:
        fh.write(TABLE_MAGIC)
        fh.write(struct.pack("<IIIII", TABLE_FORMAT_VERSION, m, G, S1, E))
        fh.write(struct.pack("<d", table.gamma))
        fh.write(struct.pack(f"<{E}I", *table.group_sizes))
        fh.write(table.cash_grid.astype("<f8").tobytes())
        fh.write(table.values.astype("<f8").tobytes())
        fh.write(table.policy.astype("<i4").tobytes())


def load_table(path: str | Path) -> ValueTable:
    raw = Path(path).read_bytes()
    if raw[:4] != TABLE_MAGIC:
        raise ValueError("not a value-table file")
    version, m, G, S1, E = struct.unpack_from("<IIIII", raw, 4)
    if version != TABLE_FORMAT_VERSION:
        raise ValueError(f"unsupported table format version {version}")
    off = 24
    (gamma,) = struct.unpack_from("<d", raw, off)
    off += 8
    group_sizes = struct.unpack_from(f"<{E}I", raw, off)
    off += 4 * E
    grid = np.frombuffer(raw, dtype="<f8", count=G, offset=off).copy()
    off += 8 * G
    n_vals = m * G * S1 * E
    vals = np.frombuffer(raw, dtype="<f8", count=n_vals, offset=off).copy()
    off += 8 * n_vals
    pol = np.frombuffer(raw, dtype="<i4", count=n_vals, offset=off).copy()
    return ValueTable(
        cash_grid=grid,
        values=vals.reshape(m, G, S1, E),
        policy=pol.reshape(m, G, S1, E),
        gamma=gamma,
        group_sizes=tuple(group_sizes),
    )
