"""Approximately orthogonal portfolios from the average permanent-impact matrix.

Permanent cross impact couples the assets, so per-asset schedules interact.
Evaluating the permanent impact at the mean trading rate and averaging over
the stationary regime distribution gives one matrix whose eigenvectors trade
almost independently of each other. Each eigenvector becomes a synthetic
single asset whose scalar liquidation problem is solved on its own.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from execkit.dp import SingleAssetSpec
from execkit.market import MarketSpec, stationary_distribution

log = logging.getLogger(__name__)


@dataclass(eq=False)
class OrthoDecomposition:
    """Portfolio weights and scalar sub-problems for one market spec.

    Rows of ``weights`` are the portfolios expressed in asset units. Selling
    a row vector q of portfolio chunks sells ``q @ weights`` asset chunks,
    so ``chunk_targets @ weights`` equals the initial asset inventory.
    """

    avg_impact: np.ndarray
    eigenvalues: np.ndarray
    weights: np.ndarray
    inverse_weights: np.ndarray
    chunk_targets: np.ndarray
    sub_specs: list[SingleAssetSpec | None]  # None: portfolio is not tradable
    symmetrized: bool = False


def average_impact_matrix(spec: MarketSpec) -> np.ndarray:
    """Permanent impact per chunk at the mean trading rate, regime-averaged.

    Entry (k, j) is the stationary-weighted impact on asset k of selling
    asset j at its average rate initial_chunks[j] / horizon.
    """
    if spec.horizon < 1:
        raise ValueError("horizon must be at least 1 to define a trading rate")
    pi = stationary_distribution(spec.transition)
    xbar = spec.initial_chunks / spec.horizon
    avg = np.zeros((spec.n_assets, spec.n_assets))
    for w, reg in zip(pi, spec.regimes):
        avg += w * (reg.perm_linear * xbar + reg.perm_quad * xbar**2)
    return avg


def _fix_signs(weights: np.ndarray) -> np.ndarray:
    """Flip each row so its largest-magnitude entry is positive."""
    out = weights.copy()
    for r in range(out.shape[0]):
        lead = np.argmax(np.abs(out[r]))
        if out[r, lead] < 0:
            out[r] = -out[r]
    return out


def decompose(avg_impact: np.ndarray) -> tuple[np.ndarray, np.ndarray, bool]:
    """Eigen-decompose the average impact matrix.

    Returns (eigenvalues, weights, symmetrized): rows of weights are unit-norm
    eigenvectors ordered by descending eigenvalue, each with its
    largest-magnitude entry positive. The matrix is used as given; only if a
    complex eigenpair shows up do we fall back to the symmetrized matrix and
    flag it.
    """
    avg = np.asarray(avg_impact, dtype=float)
    vals, vecs = np.linalg.eig(avg)
    symmetrized = False
    if np.max(np.abs(vals.imag)) > 1e-12 * max(1.0, np.max(np.abs(vals.real))):
        log.warning("complex eigenvalues in impact matrix; using symmetrized fallback")
        symmetrized = True
        vals, vecs = np.linalg.eigh(0.5 * (avg + avg.T))
    vals = vals.real
    vecs = vecs.real
    order = np.argsort(-vals)
    vals = vals[order]
    weights = vecs[:, order].T
    weights = weights / np.linalg.norm(weights, axis=1, keepdims=True)
    return vals, _fix_signs(weights), symmetrized


def chunk_targets(weights: np.ndarray, initial_chunks: np.ndarray) -> np.ndarray:
    """Portfolio chunk counts q solving q @ weights = initial_chunks."""
    return np.linalg.solve(weights.T, np.asarray(initial_chunks, dtype=float))


def value_weights(weights_row: np.ndarray, initial_prices: np.ndarray) -> np.ndarray:
    """Per-dollar exposure of one portfolio chunk to each asset's return."""
    e = np.asarray(weights_row, dtype=float)
    p0 = np.asarray(initial_prices, dtype=float)
    return (e * p0) / float(e @ p0)


def project_sub_spec(
    spec: MarketSpec, weights_row: np.ndarray, target: float, gamma: float
) -> SingleAssetSpec:
    """Scalar liquidation spec for one portfolio.

    The portfolio return is value weighted: one chunk of the portfolio is
    worth weights_row @ initial_prices dollars, so the per-dollar return is
    v @ r with v = (weights_row * p0) / (weights_row @ p0). Cost coefficients
    come from the same value weighting of the impact of trading x chunks of
    the portfolio, which stays exactly quadratic in x.
    """
    e = np.asarray(weights_row, dtype=float)
    if float(e @ spec.initial_prices) <= 0:
        raise ValueError(
            f"non-positive portfolio price {float(e @ spec.initial_prices):.6f}; "
            "this portfolio cannot be valued as a single asset"
        )
    v = value_weights(e, spec.initial_prices)
    means = np.array([float(v @ r.mean_return) for r in spec.regimes])
    varis = np.array([float(v @ r.return_cov @ v) for r in spec.regimes])
    ee = e * e
    return SingleAssetSpec(
        horizon=spec.horizon,
        n_regimes=spec.n_regimes,
        transition=spec.transition.copy(),
        mean_return=means,
        var_return=varis,
        temp_linear=np.array([float(v @ (r.temp_linear @ e)) for r in spec.regimes]),
        temp_quad=np.array([float(v @ (r.temp_quad @ ee)) for r in spec.regimes]),
        perm_linear=np.array([float(v @ (r.perm_linear @ e)) for r in spec.regimes]),
        perm_quad=np.array([float(v @ (r.perm_quad @ ee)) for r in spec.regimes]),
        total_chunks=int(round(target)),
        gamma=gamma,
    )


def decompose_market(spec: MarketSpec, gamma: float) -> OrthoDecomposition:
    """Full decomposition: average impact, eigen portfolios, scalar sub-specs.

    A portfolio whose chunk target comes out negative is sold short by
    construction, so we trade the negated weight vector instead (target and
    row flip sign together, leaving targets @ weights unchanged). A
    portfolio whose chunk value weights @ prices is still non-positive after
    that cannot be priced as a single sellable asset, and one whose target
    rounds below a single chunk has nothing for the integer DP to sell;
    either way it gets no scalar sub-problem and simply never trades
    (sub_specs entry None). Whatever asset inventory it would have carried
    is picked up by the forced final liquidation.
    """
    avg = average_impact_matrix(spec)
    vals, weights, symmetrized = decompose(avg)
    weights = weights.copy()
    targets = chunk_targets(weights, spec.initial_chunks)
    flip = targets < 0
    if flip.any():
        log.info("negating %d portfolio(s) with negative chunk targets: %s",
                 int(flip.sum()), np.flatnonzero(flip).tolist())
        weights[flip] *= -1.0
        targets = np.where(flip, -targets, targets)
    subs: list[SingleAssetSpec | None] = []
    for k in range(spec.n_assets):
        price = float(weights[k] @ spec.initial_prices)
        if price <= 0:
            log.warning(
                "portfolio %d has non-positive chunk value %.4f; "
                "it will not be traded by the scalar baseline", k, price)
            subs.append(None)
        elif int(round(targets[k])) < 1:
            log.warning(
                "portfolio %d rounds to zero chunks (target %.4g); "
                "it will not be traded by the scalar baseline", k, targets[k])
            subs.append(None)
        else:
            subs.append(project_sub_spec(spec, weights[k], targets[k], gamma))
    return OrthoDecomposition(
        avg_impact=avg,
        eigenvalues=vals,
        weights=weights,
        inverse_weights=np.linalg.inv(weights),
        chunk_targets=targets,
        sub_specs=subs,
        symmetrized=symmetrized,
    )


def convert_schedule(
    portfolio_trades: np.ndarray,
    weights: np.ndarray,
    initial_chunks: np.ndarray,
    negative_floor: float = -1e-9,
    correct: bool = True,
) -> np.ndarray:
    """Map per-period portfolio trades (T x n) back to asset trades (T x n).

    Rounding of chunk targets leaves the asset totals slightly off, so with
    ``correct=True`` the final period absorbs the residual so the schedule
    liquidates exactly. ``correct=False`` returns the bare linear image of the
    portfolio trades. Entries that come out barely negative are clamped to
    zero; anything below ``negative_floor`` is an error.
    """
    trades = np.atleast_2d(np.asarray(portfolio_trades, dtype=float))
    assets = trades @ weights
    if correct:
        resid = np.asarray(initial_chunks, dtype=float) - assets.sum(axis=0)
        assets[-1] += resid
    low = assets.min()
    if low < negative_floor:
        raise ValueError(
            f"converted schedule has negative trade {low:.3e} below {negative_floor:.0e}"
        )
    return np.clip(assets, 0.0, None)
