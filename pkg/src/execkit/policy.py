"""One-hidden-layer selling policy trained by pathwise gradients.

The network maps the normalized state (time, regime one-hot, remaining
chunks, prices, cash) to a fraction of each remaining position via a
sigmoid; the last period always sells whatever is left. Training simulates
a batch of liquidations on frozen exogenous noise and backpropagates the
objective through the market dynamics by hand; no autodiff framework is
involved, so the whole path gradient is a few hundred lines of numpy.

Workflow: init -> pretrain toward a baseline strategy (supervised, on its
realized actions) -> random turbulence kick -> pathwise ascent of the CRRA
or mean-variance objective with Adam.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from execkit.config import Objective
from execkit.dp import utility
from execkit.market import MarketSpec, draw_noise, noise_returns

LEAK = 0.01


@dataclass(eq=False)
class MlpPolicy:
    """Network weights plus the normalizers that define its input features."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    horizon: int
    n_regimes: int
    initial_chunks: np.ndarray
    initial_prices: np.ndarray
    initial_value: float
    leak: float = LEAK

    @property
    def n_assets(self) -> int:
        return len(self.initial_chunks)

    @property
    def hidden_units(self) -> int:
        return len(self.b1)

    @property
    def feature_dim(self) -> int:
        return 2 + self.n_regimes + 2 * self.n_assets

    @classmethod
    def init(cls, spec: MarketSpec, hidden_units: int,
             rng: np.random.Generator) -> "MlpPolicy":
        """Uniform(+-sqrt(6/(fan_in+fan_out))) weights, zero biases."""
        d = 2 + spec.n_regimes + 2 * spec.n_assets
        lim1 = np.sqrt(6.0 / (d + hidden_units))
        lim2 = np.sqrt(6.0 / (hidden_units + spec.n_assets))
        return cls(
            W1=rng.uniform(-lim1, lim1, (hidden_units, d)),
            b1=np.zeros(hidden_units),
            W2=rng.uniform(-lim2, lim2, (spec.n_assets, hidden_units)),
            b2=np.zeros(spec.n_assets),
            horizon=spec.horizon,
            n_regimes=spec.n_regimes,
            initial_chunks=np.asarray(spec.initial_chunks, dtype=float),
            initial_prices=np.asarray(spec.initial_prices, dtype=float),
            initial_value=float(spec.initial_value),
        )

    @property
    def params(self) -> list[np.ndarray]:
        return [self.W1, self.b1, self.W2, self.b2]

    def copy(self) -> "MlpPolicy":
        return MlpPolicy(
            W1=self.W1.copy(), b1=self.b1.copy(),
            W2=self.W2.copy(), b2=self.b2.copy(),
            horizon=self.horizon, n_regimes=self.n_regimes,
            initial_chunks=self.initial_chunks.copy(),
            initial_prices=self.initial_prices.copy(),
            initial_value=self.initial_value, leak=self.leak,
        )

    def features(self, t: int, regimes: np.ndarray, remaining: np.ndarray,
                 prices: np.ndarray, cash: np.ndarray) -> np.ndarray:
        B = len(regimes)
        z = np.zeros((B, self.feature_dim))
        z[:, 0] = t / self.horizon
        z[np.arange(B), 1 + regimes] = 1.0
        n, m = self.n_assets, self.n_regimes
        z[:, 1 + m : 1 + m + n] = remaining / self.initial_chunks
        z[:, 1 + m + n : 1 + m + 2 * n] = prices / self.initial_prices
        z[:, -1] = cash / self.initial_value
        return z

    def raw_outputs(self, z: np.ndarray):
        u1 = z @ self.W1.T + self.b1
        h = np.where(u1 > 0, u1, self.leak * u1)
        raw = h @ self.W2.T + self.b2
        return raw, h, u1

    def act(self, t: int, regimes: np.ndarray, remaining: np.ndarray,
            prices: np.ndarray, cash: np.ndarray) -> np.ndarray:
        """Batch of actions; the final period liquidates the remainder."""
        if t == self.horizon - 1:
            return remaining.copy()
        z = self.features(t, regimes, remaining, prices, cash)
        raw, _, _ = self.raw_outputs(z)
        return remaining / (1.0 + np.exp(-raw))


def _cost_mats(spec: MarketSpec):
    tl = np.stack([p.temp_linear for p in spec.regimes])
    tq = np.stack([p.temp_quad for p in spec.regimes])
    pl = np.stack([p.perm_linear for p in spec.regimes])
    pq = np.stack([p.perm_quad for p in spec.regimes])
    return tl, tq, pl, pq


def simulate_paths(policy: MlpPolicy, spec: MarketSpec, regimes: np.ndarray,
                   eps: np.ndarray, want_tape: bool = False):
    """Run a batch of liquidations on frozen noise.

    Returns terminal wealth (cash after the forced final sale) and, when
    want_tape is set, the intermediates the backward pass needs.
    """
    B, T1 = regimes.shape
    T = spec.horizon
    if T1 != T + 1:
        raise ValueError("regime paths must have horizon + 1 columns")
    tl, tq, pl, pq = _cost_mats(spec)
    rets = noise_returns(spec, regimes, eps)
    prices = np.broadcast_to(spec.initial_prices, (B, spec.n_assets)).copy()
    remaining = np.broadcast_to(
        np.asarray(spec.initial_chunks, dtype=float), (B, spec.n_assets)
    ).copy()
    cash = np.zeros(B)
    tape = []
    for t in range(T):
        reg = regimes[:, t]
        final = t == T - 1
        if final:
            a = remaining
            z = h = u1 = s = None
        else:
            z = policy.features(t, reg, remaining, prices, cash)
            raw, h, u1 = policy.raw_outputs(z)
            s = 1.0 / (1.0 + np.exp(-raw))
            a = remaining * s
        a2 = a * a
        frac = np.einsum("bkj,bj->bk", tl[reg], a) + np.einsum("bkj,bj->bk", tq[reg], a2)
        drop = np.einsum("bkj,bj->bk", pl[reg], a) + np.einsum("bkj,bj->bk", pq[reg], a2)
        ret1 = 1.0 + rets[:, t]
        if want_tape:
            tape.append({
                "reg": reg, "z": z, "u1": u1, "h": h, "s": s, "a": a,
                "frac": frac, "drop": drop, "prices": prices, "ret1": ret1,
            })
        cash = cash + np.einsum("bk,bk->b", a * prices, 1.0 - frac)
        if not final:
            prices = prices * (1.0 - drop) * ret1
            remaining = remaining - a
    if want_tape:
        return cash, tape
    return cash


def backprop_paths(policy: MlpPolicy, spec: MarketSpec, tape: list[dict],
                   g_wealth: np.ndarray) -> list[np.ndarray]:
    """Reverse-mode gradient of sum_b g_wealth[b] * wealth[b] in the params.

    Mirrors simulate_paths step by step; the exogenous noise is a constant
    of the differentiation.
    """
    tl, tq, pl, pq = _cost_mats(spec)
    n, m = policy.n_assets, policy.n_regimes
    gW1 = np.zeros_like(policy.W1)
    gb1 = np.zeros_like(policy.b1)
    gW2 = np.zeros_like(policy.W2)
    gb2 = np.zeros_like(policy.b2)
    g_cash = g_wealth.copy()
    g_prices = None
    g_rem = None
    for t in range(spec.horizon - 1, -1, -1):
        rec = tape[t]
        reg, a, frac, prices = rec["reg"], rec["a"], rec["frac"], rec["prices"]
        final = t == spec.horizon - 1
        # proceeds = sum_k a_k p_k (1 - frac_k) entered cash
        ap = a * prices
        g_a = g_cash[:, None] * (
            prices * (1.0 - frac)
            - np.einsum("bkj,bk->bj", tl[reg], ap)
            - 2.0 * a * np.einsum("bkj,bk->bj", tq[reg], ap)
        )
        g_p = g_cash[:, None] * (a * (1.0 - frac))
        if final:
            # a was remaining itself and prices were not updated
            g_rem = g_a if g_rem is None else g_rem + g_a
            g_prices = g_p if g_prices is None else g_prices + g_p
            continue
        drop, ret1 = rec["drop"], rec["ret1"]
        # price update p' = p (1 - drop) ret1
        v1 = g_prices * prices * ret1
        g_a -= np.einsum("bkj,bk->bj", pl[reg], v1) + 2.0 * a * np.einsum(
            "bkj,bk->bj", pq[reg], v1
        )
        g_p += g_prices * (1.0 - drop) * ret1
        # remaining update
        g_a -= g_rem
        # through the network: a = remaining * sigmoid(raw)
        z, u1, h, s = rec["z"], rec["u1"], rec["h"], rec["s"]
        rem = rec["z"][:, 1 + m : 1 + m + n] * policy.initial_chunks
        g_s = g_a * rem
        g_rem = g_rem + g_a * s
        g_raw = g_s * s * (1.0 - s)
        gW2 += g_raw.T @ h
        gb2 += g_raw.sum(axis=0)
        g_h = g_raw @ policy.W2
        g_u1 = g_h * np.where(u1 > 0, 1.0, policy.leak)
        gW1 += g_u1.T @ z
        gb1 += g_u1.sum(axis=0)
        g_z = g_u1 @ policy.W1
        # unpack feature gradients
        g_rem = g_rem + g_z[:, 1 + m : 1 + m + n] / policy.initial_chunks
        g_p += g_z[:, 1 + m + n : 1 + m + 2 * n] / policy.initial_prices
        g_cash = g_cash + g_z[:, -1] / policy.initial_value
        g_prices = g_p
    return [gW1, gb1, gW2, gb2]


def objective_grad(wealth: np.ndarray, objective: Objective, scale: float = 1.0):
    """Objective value and its gradient in the per-path terminal wealth.

    CRRA is evaluated on wealth/scale. U is homogeneous in its argument, so
    any positive scale leaves the argmax unchanged, but it keeps the gradient
    magnitude sane at very negative gamma: 630.0**-21 underflows Adam's
    epsilon, (630/630.0)**-21 does not. Mean-variance stays in raw currency
    so the risk-aversion coefficient keeps its units.
    """
    B = len(wealth)
    if objective.kind == "crra":
        g = objective.gamma
        if g <= 0 and np.any(wealth <= 0):
            raise FloatingPointError(
                f"wealth underflow: terminal wealth min {wealth.min():.3e} "
                f"with gamma={g}"
            )
        w = wealth / scale
        value = float(np.mean(utility(w, g)))
        grad = np.power(np.maximum(w, 1e-300), g - 1.0) / (B * scale)
        return value, grad
    if B < 2:
        raise ValueError("mean-variance objective needs at least 2 paths per batch")
    lam = objective.risk_aversion
    mean = wealth.mean()
    var = wealth.var(ddof=1)
    value = float(mean - lam * var)
    grad = np.full(B, 1.0 / B) - lam * 2.0 * (wealth - mean) / (B - 1)
    return value, grad


@dataclass
class AdamState:
    """First/second moment accumulators for gradient ascent."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0

    @classmethod
    def like(cls, params: list[np.ndarray]) -> "AdamState":
        return cls(m=[np.zeros_like(p) for p in params],
                   v=[np.zeros_like(p) for p in params])


def adam_ascend(params: list[np.ndarray], grads: list[np.ndarray],
                state: AdamState, lr: float, beta1: float = 0.9,
                beta2: float = 0.999, eps: float = 1e-8) -> None:
    state.step += 1
    t = state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m += (1.0 - beta1) * (g - m)
        v += (1.0 - beta2) * (g * g - v)
        mhat = m / (1.0 - beta1**t)
        vhat = v / (1.0 - beta2**t)
        p += lr * mhat / (np.sqrt(vhat) + eps)


@dataclass
class TrainConfig:
    """Knobs for both supervised pretraining and pathwise training."""

    batch_size: int = 256
    train_steps: int = 1000
    pretrain_states: int = 10000
    pretrain_steps: int = 1500
    lr: float = 1e-3
    pretrain_lr: float = 1e-2  # supervised stage is full batch and cheap
    turbulence: float = 1e-3


@dataclass
class TrainResult:
    policy: MlpPolicy
    curve: np.ndarray = field(repr=False)
    wealth_curve: np.ndarray | None = field(default=None, repr=False)


def collect_baseline_dataset(policy: MlpPolicy, spec: MarketSpec, baseline,
                             n_states: int, rng: np.random.Generator):
    """Roll the baseline strategy and record (features, action, remaining).

    One state per (path, period) pair, actions as chunk vectors. Final
    periods are forced for every strategy and carry no signal, so they are
    excluded.
    """
    T = spec.horizon
    if T < 2:
        raise ValueError("baseline dataset empty: horizon 1 only has the forced trade")
    B = -(-n_states // (T - 1))
    regimes, eps = draw_noise(spec, B, rng)
    tl, tq, pl, pq = _cost_mats(spec)
    rets = noise_returns(spec, regimes, eps)
    baseline.begin(spec, regimes, eps)
    prices = np.broadcast_to(spec.initial_prices, (B, spec.n_assets)).copy()
    remaining = np.broadcast_to(
        np.asarray(spec.initial_chunks, dtype=float), (B, spec.n_assets)
    ).copy()
    cash = np.zeros(B)
    zs, ys, rems = [], [], []
    for t in range(T - 1):
        reg = regimes[:, t]
        zs.append(policy.features(t, reg, remaining, prices, cash))
        a = np.clip(baseline.act(t, reg, remaining, prices, cash), 0.0, remaining)
        ys.append(a)
        rems.append(remaining.copy())
        a2 = a * a
        frac = np.einsum("bkj,bj->bk", tl[reg], a) + np.einsum("bkj,bj->bk", tq[reg], a2)
        drop = np.einsum("bkj,bj->bk", pl[reg], a) + np.einsum("bkj,bj->bk", pq[reg], a2)
        cash = cash + np.einsum("bk,bk->b", a * prices, 1.0 - frac)
        prices = prices * (1.0 - drop) * (1.0 + rets[:, t])
        remaining = remaining - a
    return np.concatenate(zs), np.concatenate(ys), np.concatenate(rems)


def pretrain_policy(policy: MlpPolicy, spec: MarketSpec, baseline,
                    cfg: TrainConfig, data_rng: np.random.Generator,
                    turbulence_rng: np.random.Generator) -> TrainResult:
    """Fit the policy's actions to the baseline strategy, then shake weights.

    Full-batch Adam on the mean squared chunk error between the projected
    actions remaining * sigmoid(raw) and the baseline's actions. Fitting the
    action itself rather than some transform of the raw outputs keeps the
    loss in chunk units and leaves sold-out states (remaining 0, action 0)
    naturally weightless. Afterwards each weight gets a Gaussian kick sized
    relative to the global weight RMS so the pathwise stage does not start
    exactly on the supervised optimum.
    """
    z, y, rem = collect_baseline_dataset(policy, spec, baseline,
                                         cfg.pretrain_states, data_rng)
    denom = float(y.size)
    state = AdamState.like(policy.params)
    curve = np.zeros(cfg.pretrain_steps)
    for it in range(cfg.pretrain_steps):
        raw, h, u1 = policy.raw_outputs(z)
        s = 1.0 / (1.0 + np.exp(-raw))
        err = rem * s - y
        loss = float(np.sum(err * err) / denom)
        if not np.isfinite(loss):
            raise FloatingPointError(f"pretrain loss diverged at step {it}: {loss}")
        curve[it] = loss
        g_raw = (2.0 / denom) * err * rem * s * (1.0 - s)
        gW2 = g_raw.T @ h
        gb2 = g_raw.sum(axis=0)
        g_h = g_raw @ policy.W2
        g_u1 = g_h * np.where(u1 > 0, 1.0, policy.leak)
        gW1 = g_u1.T @ z
        gb1 = g_u1.sum(axis=0)
        # descend the loss = ascend its negation
        adam_ascend(policy.params, [-gW1, -gb1, -gW2, -gb2], state, cfg.pretrain_lr)
    rms = np.sqrt(np.mean(np.concatenate([p.ravel() for p in policy.params]) ** 2))
    scale = cfg.turbulence * rms
    for p in policy.params:
        p += turbulence_rng.normal(0.0, scale, p.shape)
    return TrainResult(policy=policy, curve=curve)


def crra_scale(spec: MarketSpec, objective: Objective) -> float:
    """Wealth normalizer handed to objective_grad: V0 for CRRA, 1 otherwise."""
    if objective.kind == "crra":
        return float(spec.initial_prices @ spec.initial_chunks)
    return 1.0


def train_policy(policy: MlpPolicy, spec: MarketSpec, objective: Objective,
                 cfg: TrainConfig, rng: np.random.Generator) -> TrainResult:
    """Pathwise stochastic gradient ascent of the objective.

    Every step draws a fresh batch of exogenous noise, simulates the batch,
    and follows the exact gradient of the batch objective in the weights.
    The learning rate cosine-decays to a 10% floor. Mean-variance runs
    anneal the risk-aversion coefficient from 0 to its target over the
    first half of the steps: at large risk aversion the variance gradient
    otherwise dominates from step one and drags the policy into a low-mean
    well it never climbs back out of. The curve records the annealed
    objective, so its early entries are mean-like for mean-variance runs.
    """
    scale = crra_scale(spec, objective)
    state = AdamState.like(policy.params)
    curve = np.zeros(cfg.train_steps)
    wealth_curve = np.zeros(cfg.train_steps)
    ramp = cfg.train_steps // 2 if objective.kind == "mean_variance" else 0
    for it in range(cfg.train_steps):
        lr = cfg.lr * (0.1 + 0.45 * (1.0 + np.cos(np.pi * it / cfg.train_steps)))
        obj_t = objective
        if ramp and it + 1 < ramp:
            obj_t = Objective(kind="mean_variance",
                              risk_aversion=objective.risk_aversion * (it + 1) / ramp)
        regimes, eps = draw_noise(spec, cfg.batch_size, rng)
        wealth, tape = simulate_paths(policy, spec, regimes, eps, want_tape=True)
        value, g_wealth = objective_grad(wealth, obj_t, scale)
        curve[it] = value
        wealth_curve[it] = float(wealth.mean())
        grads = backprop_paths(policy, spec, tape, g_wealth)
        adam_ascend(policy.params, grads, state, lr)
    return TrainResult(policy=policy, curve=curve, wealth_curve=wealth_curve)
