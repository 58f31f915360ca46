"""Declarative problem configs: load, validate, canonicalize, hash.

Configs are YAML with explicit per-unit key names and row-major matrices.
Validation returns every problem found, each message prefixed with the key
path of the offending field.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from execkit.market import MarketSpec, RegimeParams

CONFIG_FORMAT_VERSION = 1

REGIME_MATRIX_KEYS = (
    "temp_impact_per_chunk",
    "temp_impact_per_chunk_sq",
    "perm_impact_per_chunk",
    "perm_impact_per_chunk_sq",
)

# how asymmetric a covariance may be before we refuse to symmetrize it
COV_SYMMETRY_TOL = 1e-8


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("invalid config:\n" + "\n".join(f"  - {e}" for e in errors))


@dataclass(frozen=True)
class Objective:
    """Terminal-wealth objective: CRRA utility or a mean-variance tradeoff."""

    kind: str  # "crra" | "mean_variance"
    gamma: float | None = None
    risk_aversion: float | None = None

    def describe(self) -> str:
        if self.kind == "crra":
            return f"crra(gamma={self.gamma})"
        return f"mean_variance(risk_aversion={self.risk_aversion})"


@dataclass
class LoadedConfig:
    spec: MarketSpec
    objective: Objective
    pipeline: dict
    raw: dict
    warnings: list[str] = field(default_factory=list)
    path: str = ""

    @property
    def hash(self) -> str:
        return config_hash(self.raw)


def config_hash(raw: dict) -> str:
    """Stable hash of the parsed config; whitespace and comments do not matter."""
    canon = json.dumps(raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def _matrix(raw, key, n_rows, n_cols, errors) -> np.ndarray | None:
    val = raw.get(key)
    if val is None:
        errors.append(f"{key}: missing")
        return None
    arr = np.asarray(val, dtype=float)
    if arr.shape != (n_rows, n_cols):
        errors.append(f"{key}: expected shape {(n_rows, n_cols)}, got {arr.shape}")
        return None
    if not np.all(np.isfinite(arr)):
        errors.append(f"{key}: contains non-finite entries")
        return None
    return arr


def _vector(raw, key, n, errors) -> np.ndarray | None:
    val = raw.get(key)
    if val is None:
        errors.append(f"{key}: missing")
        return None
    arr = np.asarray(val, dtype=float)
    if arr.shape != (n,):
        errors.append(f"{key}: expected length {n}, got shape {arr.shape}")
        return None
    if not np.all(np.isfinite(arr)):
        errors.append(f"{key}: contains non-finite entries")
        return None
    return arr


def _chain_is_irreducible(P: np.ndarray) -> bool:
    reach = (P > 1e-15) | np.eye(len(P), dtype=bool)
    for _ in range(int(np.ceil(np.log2(max(len(P), 2)))) + 1):
        reach = reach @ reach
    return bool(np.all(reach))


def validate_config(raw: dict) -> tuple[MarketSpec | None, Objective | None, list[str], list[str]]:
    """Check a parsed config dict. Returns (spec, objective, errors, warnings)."""
    errors: list[str] = []
    warns: list[str] = []
    if not isinstance(raw, dict):
        return None, None, ["config root must be a mapping"], warns

    version = raw.get("format_version")
    if version != CONFIG_FORMAT_VERSION:
        errors.append(f"format_version: expected {CONFIG_FORMAT_VERSION}, got {version!r}")

    try:
        n = int(raw.get("n_assets"))
        m = int(raw.get("n_regimes"))
        T = int(raw.get("horizon"))
    except (TypeError, ValueError):
        errors.append("n_assets/n_regimes/horizon: must all be present integers")
        return None, None, errors, warns
    if n < 1:
        errors.append(f"n_assets: must be >= 1, got {n}")
    if m < 1:
        errors.append(f"n_regimes: must be >= 1, got {m}")
    if T < 1:
        errors.append(f"horizon: must be >= 1, got {T}")
    if errors and (n < 1 or m < 1 or T < 1):
        return None, None, errors, warns

    prices = _vector(raw, "initial_prices_usd", n, errors)
    if prices is not None and np.any(prices <= 0):
        errors.append("initial_prices_usd: all prices must be positive")
    chunks = _vector(raw, "initial_chunks", n, errors)
    if chunks is not None:
        if np.any(chunks < 0):
            errors.append("initial_chunks: must be nonnegative")
        if np.any(chunks != np.round(chunks)):
            errors.append("initial_chunks: must be whole numbers of chunks")

    transition = _matrix(raw, "transition", m, m, errors)
    if transition is not None:
        if np.any(transition < 0) or np.any(transition > 1):
            errors.append("transition: entries must lie in [0, 1]")
        sums = transition.sum(axis=1)
        for i, s in enumerate(sums):
            if abs(s - 1.0) > 1e-12:
                errors.append(f"transition[{i}]: row sums to {s!r}, expected 1")
        if not errors and not _chain_is_irreducible(transition):
            warns.append("transition: chain is reducible; stationary distribution is not unique")

    regimes_raw = raw.get("regimes")
    regimes: list[RegimeParams] = []
    if not isinstance(regimes_raw, list) or len(regimes_raw) != m:
        errors.append(f"regimes: expected a list of {m} regime blocks")
    else:
        for i, reg in enumerate(regimes_raw):
            prefix = f"regimes[{i}]"
            mean = _vector(reg, "mean_return_per_period", n, errors=[])
            if mean is None:
                errors.append(f"{prefix}.mean_return_per_period: missing or wrong length")
                continue
            cov = _matrix(reg, "return_cov_per_period", n, n, errors=[])
            if cov is None:
                errors.append(f"{prefix}.return_cov_per_period: missing or wrong shape")
                continue
            asym = np.max(np.abs(cov - cov.T))
            if asym > COV_SYMMETRY_TOL:
                errors.append(
                    f"{prefix}.return_cov_per_period: asymmetric by {asym:.2e} "
                    f"(tolerance {COV_SYMMETRY_TOL:.0e})"
                )
                continue
            if asym > 0:
                warns.append(
                    f"{prefix}.return_cov_per_period: symmetrized (asymmetry {asym:.2e})"
                )
                cov = 0.5 * (cov + cov.T)
            eigs = np.linalg.eigvalsh(cov)
            if eigs.min() < -1e-10 * max(1.0, eigs.max()):
                errors.append(
                    f"{prefix}.return_cov_per_period: not positive semidefinite "
                    f"(min eigenvalue {eigs.min():.2e})"
                )
            mats = {}
            ok = True
            for key in REGIME_MATRIX_KEYS:
                mat = _matrix(reg, key, n, n, errors=[])
                if mat is None:
                    errors.append(f"{prefix}.{key}: missing or wrong shape")
                    ok = False
                    continue
                if np.any(np.diag(mat) < 0):
                    errors.append(f"{prefix}.{key}: diagonal entries must be nonnegative")
                    ok = False
                mats[key] = mat
            if not ok:
                continue
            regimes.append(
                RegimeParams(
                    mean_return=mean,
                    return_cov=cov,
                    temp_linear=mats["temp_impact_per_chunk"],
                    temp_quad=mats["temp_impact_per_chunk_sq"],
                    perm_linear=mats["perm_impact_per_chunk"],
                    perm_quad=mats["perm_impact_per_chunk_sq"],
                )
            )

    objective = None
    obj_raw = raw.get("objective", {"kind": "crra", "gamma": -1.0})
    kind = obj_raw.get("kind") if isinstance(obj_raw, dict) else None
    if kind == "crra":
        gamma = obj_raw.get("gamma")
        if not isinstance(gamma, (int, float)) or gamma >= 1:
            errors.append(f"objective.gamma: CRRA exponent must be a number < 1, got {gamma!r}")
        else:
            objective = Objective(kind="crra", gamma=float(gamma))
    elif kind == "mean_variance":
        lam = obj_raw.get("risk_aversion")
        if not isinstance(lam, (int, float)) or lam < 0:
            errors.append(f"objective.risk_aversion: must be a number >= 0, got {lam!r}")
        else:
            objective = Objective(kind="mean_variance", risk_aversion=float(lam))
    else:
        errors.append(f"objective.kind: expected 'crra' or 'mean_variance', got {kind!r}")

    known = {
        "format_version", "name", "n_assets", "n_regimes", "horizon",
        "initial_prices_usd", "initial_chunks", "transition", "regimes",
        "objective", "pipeline",
    }
    for key in raw:
        if key not in known:
            warns.append(f"{key}: unknown top-level key (ignored)")

    if errors or len(regimes) != m:
        return None, objective, errors, warns

    spec = MarketSpec(
        n_assets=n,
        n_regimes=m,
        horizon=T,
        transition=transition,
        regimes=regimes,
        initial_prices=prices,
        initial_chunks=chunks,
        name=str(raw.get("name", "")),
    )
    return spec, objective, errors, warns


def load_config(path: str | Path) -> LoadedConfig:
    """Load and validate a config file, raising ConfigError on any problem."""
    path = Path(path)
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    spec, objective, errors, warns = validate_config(raw)
    if errors or spec is None or objective is None:
        raise ConfigError(errors or ["config did not produce a usable spec"])
    pipeline = raw.get("pipeline") or {}
    return LoadedConfig(
        spec=spec, objective=objective, pipeline=pipeline, raw=raw,
        warnings=warns, path=str(path),
    )


def dump_config(spec: MarketSpec, objective: Objective, pipeline: dict | None = None) -> dict:
    """Inverse of load: a plain dict that parses back to an identical spec."""

    def mat(a):
        return [[float(v) for v in row] for row in np.asarray(a)]

    def vec(a):
        return [float(v) for v in np.asarray(a)]

    raw = {
        "format_version": CONFIG_FORMAT_VERSION,
        "name": spec.name,
        "n_assets": int(spec.n_assets),
        "n_regimes": int(spec.n_regimes),
        "horizon": int(spec.horizon),
        "initial_prices_usd": vec(spec.initial_prices),
        "initial_chunks": vec(spec.initial_chunks),
        "transition": mat(spec.transition),
        "objective": (
            {"kind": "crra", "gamma": float(objective.gamma)}
            if objective.kind == "crra"
            else {"kind": "mean_variance", "risk_aversion": float(objective.risk_aversion)}
        ),
        "regimes": [
            {
                "mean_return_per_period": vec(r.mean_return),
                "return_cov_per_period": mat(r.return_cov),
                "temp_impact_per_chunk": mat(r.temp_linear),
                "temp_impact_per_chunk_sq": mat(r.temp_quad),
                "perm_impact_per_chunk": mat(r.perm_linear),
                "perm_impact_per_chunk_sq": mat(r.perm_quad),
            }
            for r in spec.regimes
        ],
    }
    if pipeline:
        raw["pipeline"] = pipeline
    return raw


def save_config(raw: dict, path: str | Path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(raw, fh, sort_keys=False, default_flow_style=None)
