"""End-to-end orchestration of the liquidation pipeline.

Stages, in order: (i) orthogonal decomposition of the market, (ii) one
scalar DP per portfolio (the only stage with internal parallelism), (iii)
supervised pretraining of the network toward the DP baseline, (iv) pathwise
training of the requested objective, then a Monte-Carlo evaluation report.
Every stage draws from its own named random stream, so reruns with the same
config and seed produce byte-identical artifacts regardless of worker
count.
"""

from __future__ import annotations

import datetime as _dt
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from execkit import artifacts
from execkit.config import LoadedConfig, Objective
from execkit.dp import (McConfig, SingleAssetSpec, ValueTable, aggregate_steps,
                        save_table, solve_dp)
from execkit.evaluate import (BenchmarkStrategy, EvalReport, MlpStrategy,
                              OrthoDpStrategy, evaluate_strategies, run_strategy)
from execkit.market import draw_noise
from execkit.ortho import OrthoDecomposition, decompose_market
from execkit.policy import (MlpPolicy, TrainConfig, TrainResult, pretrain_policy,
                            simulate_paths, train_policy)
from execkit.seeds import stream_rng, stream_seed

log = logging.getLogger(__name__)

STAGES = ("ortho", "dp", "pretrain", "train")
WORKERS_ENV = "EXECKIT_WORKERS"

# The scalar DP baseline needs a curvature even when the final objective is
# mean-variance; the moderate default matches the fixtures' CRRA setting.
BASELINE_GAMMA = -1.0


class PipelineError(RuntimeError):
    """A stage failed; the message carries the stage tag."""

    def __init__(self, stage: str, original: BaseException):
        super().__init__(f"stage {stage}: {original}")
        self.stage = stage
        self.original = original


@dataclass
class PipelineSettings:
    """Per-config knobs, read from the config's pipeline section."""

    hidden_units: int = 4
    dp_samples: int = 1000
    dp_iterations: int = 3
    eval_paths: int = 10000
    train: TrainConfig = field(default_factory=TrainConfig)


def pipeline_settings(cfg: LoadedConfig) -> PipelineSettings:
    raw = dict(cfg.raw.get("pipeline") or {})
    settings = PipelineSettings()
    for name in ("hidden_units", "dp_samples", "dp_iterations", "eval_paths"):
        if name in raw:
            setattr(settings, name, int(raw.pop(name)))
    train_fields = {
        "batch_size": int, "train_steps": int, "pretrain_states": int,
        "pretrain_steps": int, "lr": float, "pretrain_lr": float,
        "turbulence": float,
    }
    for name, cast in train_fields.items():
        if name in raw:
            setattr(settings.train, name, cast(raw.pop(name)))
    for name in raw:
        log.warning("ignoring unknown pipeline setting %r", name)
    return settings


def worker_count(serial: bool = False) -> int:
    if serial:
        return 1
    env = os.environ.get(WORKERS_ENV)
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _solve_one(args):
    sub, mc_samples, mc_iterations, master_seed, k = args
    t0 = time.perf_counter()
    mc = McConfig(n_samples=mc_samples, n_iterations=mc_iterations,
                  seed=stream_seed(master_seed, "dp", k))
    table = solve_dp(sub, mc)
    return k, table, time.perf_counter() - t0


def solve_portfolios(dec: OrthoDecomposition, seed: int,
                     settings: PipelineSettings, group_size: int = 1,
                     serial: bool = False):
    """Stage (ii): one DP per tradable portfolio, optionally in parallel.

    Portfolio k always consumes random stream (seed, dp, k), so results do
    not depend on the worker count. Returns (tables, per-portfolio seconds);
    non-tradable portfolios get None entries.
    """
    jobs = []
    for k, sub in enumerate(dec.sub_specs):
        if sub is None:
            continue
        if group_size > 1:
            sub = aggregate_steps(sub, group_size)
        jobs.append((sub, settings.dp_samples, settings.dp_iterations, seed, k))
    tables: list[ValueTable | None] = [None] * len(dec.sub_specs)
    seconds: list[float | None] = [None] * len(dec.sub_specs)
    workers = min(worker_count(serial), max(1, len(jobs)))
    if workers == 1:
        results = map(_solve_one, jobs)
    else:
        pool = ProcessPoolExecutor(max_workers=workers)
        try:
            results = list(pool.map(_solve_one, jobs))
        finally:
            pool.shutdown()
    for k, table, secs in results:
        tables[k] = table
        seconds[k] = secs
    return tables, seconds


@dataclass
class PipelineResult:
    manifest: dict
    decomposition: OrthoDecomposition | None = None
    tables: list | None = None
    policy: MlpPolicy | None = None
    pretrained: MlpPolicy | None = None
    reports: dict[str, EvalReport] | None = None
    out_dir: Path | None = None


def _utc_now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def run_pipeline(cfg: LoadedConfig, objective: Objective | None = None,
                 seed: int = 0, out_dir: str | Path = "runs/out",
                 stop_after: str | None = None, group_size: int = 1,
                 serial: bool = False, variant: tuple[int, ...] = (),
                 command: str = "run") -> PipelineResult:
    """Execute stages (i)-(iv) plus evaluation, emitting artifacts as it goes.

    stop_after names the last stage to run ("ortho", "dp", "pretrain",
    "train"). On a stage failure the manifest of the completed stages is
    still written before the error propagates, tagged with the stage name.
    """
    if stop_after is not None and stop_after not in STAGES:
        raise ValueError(f"stop_after must be one of {STAGES}, got {stop_after!r}")
    objective = objective or cfg.objective
    spec = cfg.spec
    settings = pipeline_settings(cfg)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    run_id = artifacts.make_run_id(cfg.hash, seed, command)
    stage_seconds: dict = {}
    outputs: dict[str, Path] = {}
    result = PipelineResult(manifest={}, out_dir=out)

    def finish() -> PipelineResult:
        result.manifest = artifacts.write_manifest(
            out / "manifest.json", cfg.hash, seed, command, stage_seconds,
            outputs, _utc_now())
        return result

    def stage(name):
        class _Guard:
            def __enter__(self):
                self.t0 = time.perf_counter()
                log.info("stage %s starting", name)

            def __exit__(self, exc_type, exc, tb):
                stage_seconds[name] = time.perf_counter() - self.t0
                if exc is not None:
                    finish()
                    raise PipelineError(name, exc) from exc
                log.info("stage %s done in %.2fs", name, stage_seconds[name])
        return _Guard()

    gamma = objective.gamma if objective.kind == "crra" else (
        cfg.objective.gamma if cfg.objective.kind == "crra" else BASELINE_GAMMA)

    # (i) orthogonal decomposition
    with stage("ortho"):
        dec = decompose_market(spec, gamma)
        result.decomposition = dec
        artifacts.write_ortho_json(out / "ortho.json", dec, run_id)
        outputs["ortho"] = out / "ortho.json"
    if stop_after == "ortho":
        return finish()

    # (ii) scalar DP per portfolio
    with stage("dp"):
        tables, per_portfolio = solve_portfolios(dec, seed, settings,
                                                 group_size, serial)
        stage_seconds["dp_per_portfolio"] = per_portfolio
        result.tables = tables
        table_paths = []
        for k, table in enumerate(tables):
            if table is None:
                table_paths.append(None)
                continue
            p = out / f"table_{k:02d}.bin"
            save_table(table, p)
            outputs[f"table_{k:02d}"] = p
            table_paths.append(p.name)
        artifacts.write_json(out / "baseline.json", {
            "format_version": artifacts.FORMAT_VERSION,
            "run_id": run_id,
            "gamma": gamma,
            "group_size": group_size,
            "ortho": "ortho.json",
            "tables": table_paths,
        })
        outputs["baseline"] = out / "baseline.json"
    if stop_after == "dp":
        return finish()

    # (iii) supervised pretraining toward the DP baseline
    with stage("pretrain"):
        baseline = OrthoDpStrategy(dec, tables)
        policy = MlpPolicy.init(spec, settings.hidden_units,
                                rng=stream_rng(seed, "pretrain", *variant, 0))
        pre = pretrain_policy(policy, spec, baseline, settings.train,
                              stream_rng(seed, "pretrain", *variant, 1),
                              stream_rng(seed, "turbulence", *variant))
        result.pretrained = policy.copy()
        artifacts.save_policy(out / "policy_pretrained.json", policy, run_id)
        artifacts.write_pretrain_curve_csv(out / "pretrain_curve.csv", pre.curve,
                                           run_id)
        outputs["policy_pretrained"] = out / "policy_pretrained.json"
        outputs["pretrain_curve"] = out / "pretrain_curve.csv"
    if stop_after == "pretrain":
        return finish()

    # (iv) pathwise training of the objective
    with stage("train"):
        trained = train_policy(policy, spec, objective, settings.train,
                               stream_rng(seed, "train", *variant))
        result.policy = policy
        artifacts.save_policy(out / "policy.json", policy, run_id)
        artifacts.write_train_curve_csv(out / "train_curve.csv", trained.curve,
                                        trained.wealth_curve, run_id)
        outputs["policy"] = out / "policy.json"
        outputs["train_curve"] = out / "train_curve.csv"
    if stop_after == "train":
        return finish()

    with stage("eval"):
        strategies = {
            "benchmark": BenchmarkStrategy(spec),
            "orthodp": OrthoDpStrategy(dec, tables),
            "mlp": MlpStrategy(policy),
        }
        reports, _, _ = evaluate_strategies(spec, strategies, settings.eval_paths,
                                            stream_rng(seed, "eval"))
        result.reports = reports
        gamma_col = objective.gamma if objective.kind == "crra" else None
        artifacts.write_eval_csv(out / "eval.csv", reports, gamma_col, run_id)
        outputs["eval"] = out / "eval.csv"
    return finish()


# ------------------------------------------------------------- sweeps

@dataclass
class FrontierRow:
    """Best-of-k summary for one risk-aversion level."""

    risk_aversion: float
    mean: float
    std: float
    restart_id: int
    points: list[dict]  # every restart, including non-best ones


def frontier_sweep(cfg: LoadedConfig, lambdas, restarts: int, seed: int = 0,
                   serial: bool = False, dec: OrthoDecomposition | None = None,
                   tables: list | None = None):
    """Mean-variance frontier: multi-restart training per risk aversion.

    The decomposition and DP schedules do not depend on the risk-aversion
    coefficient, so they are computed once and shared; restarts differ in
    the pretrain/turbulence/train streams through the (lambda index,
    restart index) substream. Every candidate is scored on one common
    held-out noise set by its own objective; the best restart per lambda
    wins. A restart that raises is recorded as failed and excluded.
    """
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    spec = cfg.spec
    settings = pipeline_settings(cfg)
    gamma = cfg.objective.gamma if cfg.objective.kind == "crra" else BASELINE_GAMMA
    if dec is None:
        dec = decompose_market(spec, gamma)
    if tables is None:
        tables, _ = solve_portfolios(dec, seed, settings, serial=serial)
    baseline = OrthoDpStrategy(dec, tables)
    eval_regimes, eval_eps = draw_noise(spec, settings.eval_paths,
                                        stream_rng(seed, "eval"))
    rows: list[FrontierRow] = []
    csv_rows: list[dict] = []
    for li, lam in enumerate(lambdas):
        objective = Objective(kind="mean_variance", risk_aversion=float(lam))
        points = []
        for ri in range(restarts):
            try:
                policy = MlpPolicy.init(spec, settings.hidden_units,
                                        rng=stream_rng(seed, "pretrain", li, ri, 0))
                pretrain_policy(policy, spec, baseline, settings.train,
                                stream_rng(seed, "pretrain", li, ri, 1),
                                stream_rng(seed, "turbulence", li, ri))
                train_policy(policy, spec, objective, settings.train,
                             stream_rng(seed, "train", li, ri))
                wealth = simulate_paths(policy, spec, eval_regimes, eval_eps)
            except Exception as exc:  # noqa: BLE001 - restart isolation
                log.warning("frontier restart lambda=%s #%d failed: %s",
                            lam, ri, exc)
                points.append({"restart_id": ri, "failed": True, "error": str(exc)})
                continue
            points.append({
                "restart_id": ri,
                "failed": False,
                "mean": float(wealth.mean()),
                "std": float(wealth.std(ddof=1)),
                "objective": float(wealth.mean() - lam * wealth.var(ddof=1)),
                "policy": policy,
                "wealth": wealth,
            })
        alive = [p for p in points if not p["failed"]]
        if not alive:
            log.warning("all %d restarts failed for lambda=%s", restarts, lam)
            continue
        best = max(alive, key=lambda p: p["objective"])
        rows.append(FrontierRow(risk_aversion=float(lam), mean=best["mean"],
                                std=best["std"], restart_id=best["restart_id"],
                                points=points))
        for p in alive:
            csv_rows.append({
                "lambda": lam, "mean": p["mean"], "std": p["std"],
                "restart_id": p["restart_id"],
                "is_best": p["restart_id"] == best["restart_id"],
            })
    return rows, csv_rows


def sweep_crra(cfg: LoadedConfig, gammas, seed: int = 0, serial: bool = False):
    """Full pipeline per CRRA exponent, all scored on one common noise set.

    Decomposition and DP both sit inside the loop: the eigen portfolios do
    not depend on gamma, but the scalar sub-problems and their schedule
    tables do. Returns (reports keyed by gamma, benchmark report, csv rows).
    """
    spec = cfg.spec
    settings = pipeline_settings(cfg)
    eval_regimes, eval_eps = draw_noise(spec, settings.eval_paths,
                                        stream_rng(seed, "eval"))
    bench_w = run_strategy(spec, BenchmarkStrategy(spec), eval_regimes, eval_eps,
                           name="benchmark")
    bench = EvalReport.from_wealth("benchmark", bench_w)
    reports: dict[float, EvalReport] = {}
    csv_rows: list[dict] = []

    def add_row(gamma, report):
        mu, se_u = report.utility_stats(gamma)
        csv_rows.append({
            "gamma": gamma, "strategy": report.name, "n_paths": report.n_paths,
            "mean_wealth": report.mean, "se_mean": report.se_mean,
            "median_wealth": report.median, "std_wealth": report.std,
            "se_std": report.se_std, "mean_utility": mu, "se_utility": se_u,
        })

    for gi, gamma in enumerate(gammas):
        dec = decompose_market(spec, float(gamma))
        tables, _ = solve_portfolios(dec, seed, settings, serial=serial)
        baseline = OrthoDpStrategy(dec, tables)
        policy = MlpPolicy.init(spec, settings.hidden_units,
                                rng=stream_rng(seed, "pretrain", gi, 0))
        pretrain_policy(policy, spec, baseline, settings.train,
                        stream_rng(seed, "pretrain", gi, 1),
                        stream_rng(seed, "turbulence", gi))
        train_policy(policy, spec, Objective(kind="crra", gamma=float(gamma)),
                     settings.train, stream_rng(seed, "train", gi))
        wealth = simulate_paths(policy, spec, eval_regimes, eval_eps)
        report = EvalReport.from_wealth(f"mlp_gamma_{gamma}", wealth)
        reports[float(gamma)] = report
        add_row(gamma, report)
        # same benchmark wealth every time, utility re-scored under this gamma
        add_row(gamma, bench)
    return reports, bench, csv_rows
