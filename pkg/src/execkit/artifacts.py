"""Artifact files: JSON sidecars, CSV tables, and the run manifest.

Every machine-readable artifact carries a format_version and the run_id of
the manifest that produced it, so a table found on disk can be traced back
to the exact config hash, seed and command. The manifest itself also
records wall-clock timings and output digests; those vary run to run, so
reproducibility checks compare every artifact except the manifest.
"""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from execkit import __version__
from execkit.policy import MlpPolicy

FORMAT_VERSION = 1


def make_run_id(config_hash: str, seed: int, command: str) -> str:
    """Deterministic 12-hex id; same config + seed + command -> same id."""
    digest = hashlib.sha256(f"{config_hash}\n{seed}\n{command}".encode()).hexdigest()
    return digest[:12]


def file_sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_json(path: str | Path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def read_json(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())


def write_csv(path: str | Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def read_csv(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------- ortho

def ortho_payload(dec, run_id: str | None = None) -> dict:
    payload = {
        "format_version": FORMAT_VERSION,
        "avg_impact": dec.avg_impact.tolist(),
        "eigenvalues": dec.eigenvalues.tolist(),
        "weights": dec.weights.tolist(),
        "inverse_weights": dec.inverse_weights.tolist(),
        "chunk_targets": dec.chunk_targets.tolist(),
        "symmetrized": dec.symmetrized,
        "tradable": [s is not None for s in dec.sub_specs],
    }
    if run_id is not None:
        payload["run_id"] = run_id
    return payload


def write_ortho_json(path: str | Path, dec, run_id: str | None = None) -> None:
    write_json(path, ortho_payload(dec, run_id))


# ---------------------------------------------------------------- policy

def policy_payload(policy: MlpPolicy, run_id: str | None = None) -> dict:
    payload = {
        "format_version": FORMAT_VERSION,
        "horizon": policy.horizon,
        "n_regimes": policy.n_regimes,
        "leak": policy.leak,
        "initial_chunks": policy.initial_chunks.tolist(),
        "initial_prices": policy.initial_prices.tolist(),
        "initial_value": policy.initial_value,
        "W1": policy.W1.tolist(),
        "b1": policy.b1.tolist(),
        "W2": policy.W2.tolist(),
        "b2": policy.b2.tolist(),
    }
    if run_id is not None:
        payload["run_id"] = run_id
    return payload


def save_policy(path: str | Path, policy: MlpPolicy,
                run_id: str | None = None) -> None:
    write_json(path, policy_payload(policy, run_id))


def load_policy(path: str | Path) -> MlpPolicy:
    raw = read_json(path)
    if raw.get("format_version") != FORMAT_VERSION:
        raise ValueError(
            f"unsupported policy format version {raw.get('format_version')!r}"
        )
    return MlpPolicy(
        W1=np.asarray(raw["W1"], dtype=float),
        b1=np.asarray(raw["b1"], dtype=float),
        W2=np.asarray(raw["W2"], dtype=float),
        b2=np.asarray(raw["b2"], dtype=float),
        horizon=int(raw["horizon"]),
        n_regimes=int(raw["n_regimes"]),
        initial_chunks=np.asarray(raw["initial_chunks"], dtype=float),
        initial_prices=np.asarray(raw["initial_prices"], dtype=float),
        initial_value=float(raw["initial_value"]),
        leak=float(raw["leak"]),
    )


# ---------------------------------------------------------------- tables

def write_train_curve_csv(path: str | Path, curve: np.ndarray,
                          wealth_curve: np.ndarray, run_id: str) -> None:
    rows = [
        (step, float(wealth_curve[step]), float(curve[step]), run_id)
        for step in range(len(curve))
    ]
    write_csv(path, ["step", "mean_wealth", "objective", "run_id"], rows)


def write_pretrain_curve_csv(path: str | Path, curve: np.ndarray,
                             run_id: str) -> None:
    rows = [(step, float(curve[step]), run_id) for step in range(len(curve))]
    write_csv(path, ["step", "loss", "run_id"], rows)


def write_eval_csv(path: str | Path, reports: dict, gamma: float | None,
                   run_id: str) -> None:
    """One row per strategy: wealth moments plus optional CRRA utility."""
    header = ["strategy", "n_paths", "mean_wealth", "se_mean", "median_wealth",
              "std_wealth", "se_std", "mean_utility", "se_utility", "run_id"]
    rows = []
    for name, rep in reports.items():
        if gamma is None:
            mu, se_u = "", ""
        else:
            mu, se_u = rep.utility_stats(gamma)
        rows.append((name, rep.n_paths, rep.mean, rep.se_mean, rep.median,
                     rep.std, rep.se_std, mu, se_u, run_id))
    write_csv(path, header, rows)


def write_frontier_csv(path: str | Path, rows: list[dict], run_id: str) -> None:
    """rows: dicts with lambda/mean/std/restart_id/is_best keys."""
    out = [
        (r["lambda"], r["mean"], r["std"], r["restart_id"],
         int(bool(r["is_best"])), run_id)
        for r in rows
    ]
    write_csv(path, ["lambda", "mean", "std", "restart_id", "is_best", "run_id"], out)


def write_crra_csv(path: str | Path, rows: list[dict], run_id: str) -> None:
    header = ["gamma", "strategy", "n_paths", "mean_wealth", "se_mean",
              "median_wealth", "std_wealth", "se_std", "mean_utility",
              "se_utility", "run_id"]
    out = [
        (r["gamma"], r["strategy"], r["n_paths"], r["mean_wealth"], r["se_mean"],
         r["median_wealth"], r["std_wealth"], r["se_std"], r["mean_utility"],
         r["se_utility"], run_id)
        for r in rows
    ]
    write_csv(path, header, out)


def write_schedule_csv(path: str | Path, rollout: dict, regimes: np.ndarray,
                       run_id: str) -> None:
    """Single-asset rollout schedule: one row per period."""
    sched = rollout["schedule"]
    rows = [
        (t, int(regimes[t]), float(sched[t]), float(rollout["prices"][t]),
         float(rollout["cash"][t]), run_id)
        for t in range(len(sched))
    ]
    write_csv(path, ["t", "regime", "chunks_sold", "price", "cash", "run_id"], rows)


def read_path_file(path: str | Path, horizon: int):
    """Load an exogenous scenario: CSV with columns t, regime, return.

    Rows may arrive in any order; t must cover 0..horizon-1 exactly once.
    """
    rows = read_csv(path)
    if len(rows) != horizon:
        raise ValueError(
            f"path file has {len(rows)} rows, expected horizon {horizon}"
        )
    regimes = np.zeros(horizon, dtype=int)
    returns = np.zeros(horizon)
    seen = set()
    for row in rows:
        t = int(row["t"])
        if t in seen or not 0 <= t < horizon:
            raise ValueError(f"path file period {t} out of range or duplicated")
        seen.add(t)
        regimes[t] = int(row["regime"])
        returns[t] = float(row["return"])
    return regimes, returns


def write_path_file(path: str | Path, regimes: np.ndarray,
                    returns: np.ndarray) -> None:
    rows = [(t, int(regimes[t]), float(returns[t])) for t in range(len(regimes))]
    write_csv(path, ["t", "regime", "return"], rows)


# ---------------------------------------------------------------- manifest

def manifest_payload(config_hash: str, seed: int, command: str,
                     stage_seconds: dict, outputs: dict[str, str],
                     created_utc: str) -> dict:
    """outputs maps artifact name -> path; digests are computed here."""
    return {
        "format_version": FORMAT_VERSION,
        "run_id": make_run_id(config_hash, seed, command),
        "config_hash": config_hash,
        "seed": seed,
        "command": command,
        "tool_version": __version__,
        "stage_seconds": stage_seconds,
        "outputs": {
            name: {"path": str(p), "sha256": file_sha256(p)}
            for name, p in outputs.items()
        },
        "created_utc": created_utc,
    }


def write_manifest(path: str | Path, config_hash: str, seed: int, command: str,
                   stage_seconds: dict, outputs: dict[str, str],
                   created_utc: str) -> dict:
    payload = manifest_payload(config_hash, seed, command, stage_seconds,
                               outputs, created_utc)
    write_json(path, payload)
    return payload
