"""Regime-switching market with quadratic temporary and permanent impact.

An observable Markov chain selects the active regime each period. Selling
x chunks (a vector over assets) costs a temporary impact fraction
``temp_linear @ x + temp_quad @ x**2`` of the proceeds of each asset, and
depresses prices going forward by the permanent fraction
``perm_linear @ x + perm_quad @ x**2``. Returns are drawn after the trade
and the permanent impact have been applied; regime switches happen at the
end of each period.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

# Trades this far below zero are treated as numerical noise and clamped.
TRADE_FLOOR = -1e-9


class ImpactOverflowError(RuntimeError):
    """An impact cost fraction reached or exceeded 1."""


@dataclass(eq=False)
class RegimeParams:
    """Per-regime return distribution and impact coefficients.

    All impact matrices are n x n, stored exactly as given (they are not
    assumed symmetric). Diagonals must be nonnegative; off-diagonal cross
    impact may be negative.
    """

    mean_return: np.ndarray
    return_cov: np.ndarray
    temp_linear: np.ndarray
    temp_quad: np.ndarray
    perm_linear: np.ndarray
    perm_quad: np.ndarray

    def __post_init__(self):
        self.mean_return = np.asarray(self.mean_return, dtype=float)
        self.return_cov = np.asarray(self.return_cov, dtype=float)
        for name in ("temp_linear", "temp_quad", "perm_linear", "perm_quad"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))


@dataclass(eq=False)
class MarketSpec:
    """Full description of one liquidation problem."""

    n_assets: int
    n_regimes: int
    horizon: int
    transition: np.ndarray
    regimes: list[RegimeParams]
    initial_prices: np.ndarray
    initial_chunks: np.ndarray
    name: str = ""

    def __post_init__(self):
        self.transition = np.asarray(self.transition, dtype=float)
        self.initial_prices = np.asarray(self.initial_prices, dtype=float)
        self.initial_chunks = np.asarray(self.initial_chunks, dtype=float)

    @property
    def initial_value(self) -> float:
        return float(self.initial_prices @ self.initial_chunks)


@dataclass
class PathState:
    """Mutable state of one simulated liquidation path."""

    t: int
    regime: int
    prices: np.ndarray
    remaining: np.ndarray
    cash: float

    @classmethod
    def initial(cls, spec: MarketSpec, regime: int) -> "PathState":
        return cls(
            t=0,
            regime=int(regime),
            prices=spec.initial_prices.copy(),
            remaining=spec.initial_chunks.astype(float).copy(),
            cash=0.0,
        )


def temporary_cost(spec: MarketSpec, regime: int, x: np.ndarray) -> np.ndarray:
    """Fraction of proceeds lost per asset when trading x in the given regime."""
    p = spec.regimes[regime]
    x = np.asarray(x, dtype=float)
    return p.temp_linear @ x + p.temp_quad @ (x * x)


def permanent_cost(spec: MarketSpec, regime: int, x: np.ndarray) -> np.ndarray:
    """Fraction by which prices are permanently depressed by trading x."""
    p = spec.regimes[regime]
    x = np.asarray(x, dtype=float)
    return p.perm_linear @ x + p.perm_quad @ (x * x)


def _clean_trade(x: np.ndarray, remaining: np.ndarray) -> np.ndarray:
    """Validate 0 <= x <= remaining up to numerical noise and clamp."""
    x = np.asarray(x, dtype=float)
    if np.any(x < TRADE_FLOOR):
        raise ValueError(f"negative trade {x.min():.3e} below tolerance {TRADE_FLOOR:.0e}")
    over = x - remaining
    if np.any(over > 1e-9):
        raise ValueError(
            f"trade exceeds remaining inventory by {over.max():.3e} "
            f"(trade {x}, remaining {remaining})"
        )
    return np.clip(x, 0.0, remaining)


def execute_trade(
    state: PathState, x: np.ndarray, params: RegimeParams
) -> tuple[float, np.ndarray]:
    """Sell x chunks at the current prices.

    Returns (proceeds, new_prices). Proceeds are reduced by the temporary
    impact; new prices carry the permanent impact. The caller is
    responsible for folding these into the path state.

    Raises ImpactOverflowError if any impact fraction reaches 1.
    """
    x = _clean_trade(x, state.remaining)
    xx = x * x
    tcost = params.temp_linear @ x + params.temp_quad @ xx
    pcost = params.perm_linear @ x + params.perm_quad @ xx
    if np.any(tcost >= 1.0) or np.any(pcost >= 1.0):
        raise ImpactOverflowError(
            f"impact overflow: temporary {tcost.max():.4f}, permanent {pcost.max():.4f} "
            f"for trade {x}"
        )
    proceeds = float(np.dot(x * state.prices, 1.0 - tcost))
    new_prices = state.prices * (1.0 - pcost)
    return proceeds, new_prices


def return_cholesky(cov: np.ndarray) -> np.ndarray:
    """Factor L with L @ L.T = cov.

    Plain Cholesky when the covariance is positive definite. Singular but
    positive semidefinite covariances (degenerate regimes, zero-variance test
    markets) get an eigenvalue factor instead, so a zero matrix yields
    exactly zero noise rather than jitter.
    """
    cov = np.asarray(cov, dtype=float)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        w, q = np.linalg.eigh((cov + cov.T) / 2.0)
        if w.min() < -1e-8 * max(1.0, float(w.max())):
            raise np.linalg.LinAlgError(
                f"covariance is not positive semidefinite (min eigenvalue {w.min():.3e})"
            ) from None
        return q * np.sqrt(np.clip(w, 0.0, None))


def sample_return(spec: MarketSpec, regime: int, rng: np.random.Generator) -> np.ndarray:
    """One joint return draw for the given regime."""
    p = spec.regimes[regime]
    chol = return_cholesky(p.return_cov)
    return p.mean_return + chol @ rng.standard_normal(spec.n_assets)


def step_regime(spec: MarketSpec, regime: int, rng: np.random.Generator) -> int:
    """Sample the next regime from the transition row of the current one."""
    row = spec.transition[regime]
    return int(rng.choice(len(row), p=row))


def stationary_distribution(transition: np.ndarray) -> np.ndarray:
    """Stationary distribution pi with pi @ P = pi.

    For a chain with a unique stationary law this solves the eigenproblem
    directly. Reducible chains have many stationary laws; we return the
    Cesaro limit started from the uniform distribution and warn.
    """
    P = np.asarray(transition, dtype=float)
    m = P.shape[0]
    w, v = np.linalg.eig(P.T)
    close = np.where(np.abs(w - 1.0) < 1e-9)[0]
    if len(close) == 1:
        pi = np.real(v[:, close[0]])
        pi = np.abs(pi) / np.abs(pi).sum()
    else:
        warnings.warn("transition chain is reducible; stationary law is not unique")
        avg = np.eye(m)
        acc = np.eye(m)
        for _ in range(512):
            acc = acc @ P
            avg = avg + acc
        pi = np.full(m, 1.0 / m) @ (avg / 513.0)
        pi = pi / pi.sum()
    resid = np.max(np.abs(pi @ P - pi))
    if resid > 1e-8:
        raise np.linalg.LinAlgError(f"stationary distribution residual {resid:.2e}")
    return pi


def draw_noise(spec: MarketSpec, n_paths: int, rng: np.random.Generator,
               initial_regime: int | None = None):
    """Exogenous randomness for n_paths simulated liquidations.

    Returns (regimes, eps): regimes has shape (n_paths, horizon + 1) with
    regimes[:, t] in force during period t (the extra column is the regime
    whose return moves prices after period horizon - 1); eps is standard
    normal with shape (n_paths, horizon, n_assets). Initial regimes are
    drawn from the stationary law unless pinned.
    """
    T = spec.horizon
    regimes = np.empty((n_paths, T + 1), dtype=np.int64)
    if initial_regime is None:
        pi = stationary_distribution(spec.transition)
        regimes[:, 0] = rng.choice(spec.n_regimes, size=n_paths, p=pi)
    else:
        regimes[:, 0] = initial_regime
    cum = np.cumsum(spec.transition, axis=1)
    for t in range(1, T + 1):
        roll = rng.random(n_paths)
        regimes[:, t] = np.minimum(
            (roll[:, None] > cum[regimes[:, t - 1]]).sum(axis=1), spec.n_regimes - 1
        )
    eps = rng.standard_normal((n_paths, T, spec.n_assets))
    return regimes, eps


def noise_returns(spec: MarketSpec, regimes: np.ndarray, eps: np.ndarray) -> np.ndarray:
    """Realized joint returns for pre-drawn noise.

    The return over period t is distributed by the regime entered at the end
    of that period, regimes[:, t + 1].
    """
    chols = np.stack([return_cholesky(p.return_cov) for p in spec.regimes])
    means = np.stack([p.mean_return for p in spec.regimes])
    nxt = regimes[:, 1:]
    return means[nxt] + np.einsum("btij,btj->bti", chols[nxt], eps)
