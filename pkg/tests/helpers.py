"""Shared builders and independent oracles for the test suite.

The oracles recompute expectations straight from the market mechanics with
plain Python recursion, so they share no code path with the solvers they
check (beyond the scalar cost factors, which are the model definition).
"""
from __future__ import annotations

import itertools

import numpy as np

from execkit.dp import SingleAssetSpec, ValueTable, nearest_knot, utility
from execkit.market import MarketSpec, RegimeParams

# liquidity profile used by most single-asset cases: 0.2% + 0.01% x temporary,
# 0.01% + 0.02% x permanent, per chunk traded
BASE_COSTS = dict(tl=0.002, tq=1e-4, pl=1e-4, pq=2e-4)


def diag_regime(n, mean=0.0, var=0.0, tl=0.002, tq=1e-4, pl=1e-4, pq=2e-4,
                cross_cov=0.0):
    """RegimeParams with diagonal impact matrices and optional common cov."""
    mean = np.full(n, mean, float) if np.isscalar(mean) else np.asarray(mean, float)
    if np.isscalar(var):
        cov = np.full((n, n), cross_cov, float)
        np.fill_diagonal(cov, var)
    else:
        cov = np.asarray(var, float)

    def mat(v):
        return np.diag(np.full(n, v, float)) if np.isscalar(v) else np.asarray(v, float)

    return RegimeParams(
        mean_return=mean,
        return_cov=cov,
        temp_linear=mat(tl),
        temp_quad=mat(tq),
        perm_linear=mat(pl),
        perm_quad=mat(pq),
    )


def market(regimes, transition, T=10, prices=1.0, chunks=20, name=""):
    rp = tuple(regimes)
    n = len(rp[0].mean_return)
    prices = np.full(n, prices, float) if np.isscalar(prices) else np.asarray(prices, float)
    chunks = np.full(n, chunks, float) if np.isscalar(chunks) else np.asarray(chunks, float)
    return MarketSpec(
        n_assets=n,
        n_regimes=len(rp),
        horizon=T,
        transition=np.asarray(transition, float),
        regimes=rp,
        initial_prices=prices,
        initial_chunks=chunks,
        name=name,
    )


def scalar_case(T, S0, m=1, transition=None, mean=0.0, var=0.0, gamma=-1.0,
                tl=0.002, tq=1e-4, pl=1e-4, pq=2e-4):
    """SingleAssetSpec with per-regime scalars broadcast as needed."""
    if transition is None:
        transition = np.eye(1) if m == 1 else np.full((m, m), 1.0 / m)
    arr = lambda v: np.full(m, v, float) if np.isscalar(v) else np.asarray(v, float)
    return SingleAssetSpec(
        horizon=T,
        n_regimes=m,
        transition=np.asarray(transition, float),
        mean_return=arr(mean),
        var_return=arr(var),
        temp_linear=arr(tl),
        temp_quad=arr(tq),
        perm_linear=arr(pl),
        perm_quad=arr(pq),
        total_chunks=S0,
        gamma=gamma,
    )


def oracle_family():
    """Zero-variance grid of small cases for the exact policy-value check.

    Covers T in {2, 3}, S0 in {2, 3, 4}, one- and two-regime chains, with a
    return switch and a liquidity switch as the two-regime variants.
    """
    switch = [[0.95, 0.05], [0.08, 0.92]]
    for T, S0, m, shape in itertools.product((2, 3), (2, 3, 4), (1, 2), ("ret", "liq")):
        if m == 1:
            if shape == "liq":
                continue
            spec = scalar_case(T, S0, m=1, mean=0.0, var=0.0, gamma=-1.0)
        elif shape == "ret":
            spec = scalar_case(T, S0, m=2, transition=switch,
                               mean=[1e-3, -8e-5], var=0.0, gamma=-1.0)
        else:
            spec = scalar_case(T, S0, m=2, transition=switch,
                               mean=[1e-3, 1e-3], var=0.0, gamma=-1.0,
                               tl=[0.002, 0.006], tq=[1e-4, 3e-4],
                               pl=[1e-4, 3e-4], pq=[2e-4, 6e-4])
        yield f"T{T}_S{S0}_m{m}_{shape}", spec


def exact_best_value(spec: SingleAssetSpec, regime: int) -> float:
    """Optimal expected utility over all nonanticipative integer schedules.

    Exact expectimax recursion over the regime tree; valid only for zero
    return variance, where the regime path is the sole source of randomness.
    """
    assert np.all(spec.var_return == 0.0)
    T, m, P, mu = spec.horizon, spec.n_regimes, spec.transition, spec.mean_return

    def rec(t, i, price, cash, s):
        if t == T:
            return utility(cash, spec.gamma)
        xs = (s,) if t == T - 1 else range(s + 1)
        best = -np.inf
        for x in xs:
            cash2 = cash + price * spec.proceeds_factor(i, x)
            p2 = price * spec.price_factor(i, x)
            total = 0.0
            for j in range(m):
                w = P[i, j]
                if w:
                    total += w * rec(t + 1, j, p2 * (1.0 + mu[j]), cash2, s - x)
            best = max(best, total)
        return best

    return rec(0, regime, 1.0, 0.0, spec.total_chunks)


def exact_policy_value(table: ValueTable, spec: SingleAssetSpec, regime: int) -> float:
    """Exact expected utility of following a solved table's policy.

    Same recursion as exact_best_value with the action pinned to the table
    lookup, so a common optimal schedule produces bitwise-identical values.
    """
    assert np.all(spec.var_return == 0.0)
    assert len(table.group_sizes) == spec.horizon, "ungrouped tables only"
    T, m, P, mu = spec.horizon, spec.n_regimes, spec.transition, spec.mean_return
    grid = table.cash_grid

    def rec(t, i, price, cash, s):
        if t == T:
            return utility(cash, spec.gamma)
        if t == T - 1:
            x = s
        else:
            x = int(table.policy[i, nearest_knot(grid, cash / price), s, t])
        cash2 = cash + price * spec.proceeds_factor(i, x)
        p2 = price * spec.price_factor(i, x)
        total = 0.0
        for j in range(m):
            w = P[i, j]
            if w:
                total += w * rec(t + 1, j, p2 * (1.0 + mu[j]), cash2, s - x)
        return total

    return rec(0, regime, 1.0, 0.0, spec.total_chunks)


def fd_grad(f, params, h=1e-5):
    """Central finite differences of the scalar f() in each array of params.

    Wiggles entries in place (f must close over the same arrays) with a
    step scaled by the entry magnitude.
    """
    grads = []
    for p in params:
        g = np.zeros_like(p)
        flat, gf = p.ravel(), g.ravel()
        for k in range(flat.size):
            old = flat[k]
            step = h * max(1.0, abs(old))
            flat[k] = old + step
            up = f()
            flat[k] = old - step
            dn = f()
            flat[k] = old
            gf[k] = (up - dn) / (2.0 * step)
        grads.append(g)
    return grads


def grad_close(analytic, numeric, rel=1e-4, floor=1e-7):
    """Componentwise |a - n| <= max(rel * |n|, floor) across parameter lists."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        err = np.abs(a - n)
        tol = np.maximum(rel * np.abs(n), floor)
        if np.any(err > tol):
            return False, float((err / np.maximum(tol, 1e-300)).max())
        worst = max(worst, float((err / np.maximum(tol, 1e-300)).max()))
    return True, worst


def rows_match_up_to_sign(got: np.ndarray, want: np.ndarray, atol: float) -> bool:
    """Bijective match of rows allowing sign flips and reordering."""
    n = want.shape[0]
    used: set[int] = set()
    for r in range(n):
        hit = None
        for c in range(n):
            if c in used:
                continue
            if (np.max(np.abs(got[c] - want[r])) <= atol
                    or np.max(np.abs(got[c] + want[r])) <= atol):
                hit = c
                break
        if hit is None:
            return False
        used.add(hit)
    return True


def row_stochastic(mat: np.ndarray, floor: float = 1e-3) -> np.ndarray:
    """Normalize a nonnegative matrix into a strictly positive stochastic one."""
    m = np.asarray(mat, float) + floor
    return m / m.sum(axis=1, keepdims=True)
