"""Command-line front end.

Subcommands mirror the pipeline stages plus the two sweeps. Everything is
seeded explicitly (--seed, default 0) and writes into --out-dir together
with a manifest.json recording config hash, seed, tool version, stage
timings and artifact digests. EXECKIT_WORKERS caps stage parallelism.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from execkit import __version__, artifacts
from execkit.config import ConfigError, LoadedConfig, Objective, load_config
from execkit.dp import (McConfig, SingleAssetSpec, rollout_policy, save_table,
                        solve_dp)
from execkit.evaluate import (BenchmarkStrategy, EvalReport, MlpStrategy,
                              evaluate_strategies)
from execkit.market import MarketSpec
from execkit.ortho import decompose_market
from execkit.pipeline import (BASELINE_GAMMA, PipelineError, frontier_sweep,
                              pipeline_settings, run_pipeline, sweep_crra)
from execkit.seeds import stream_rng, stream_seed

log = logging.getLogger("execkit")


def scalar_spec(spec: MarketSpec, gamma: float) -> SingleAssetSpec:
    """View a one-asset market as the scalar DP problem it is."""
    if spec.n_assets != 1:
        raise ValueError(
            f"the dp subcommand needs a single-asset config, got {spec.n_assets} assets"
        )
    regs = spec.regimes
    return SingleAssetSpec(
        horizon=spec.horizon,
        n_regimes=spec.n_regimes,
        transition=spec.transition,
        mean_return=np.array([r.mean_return[0] for r in regs]),
        var_return=np.array([r.return_cov[0, 0] for r in regs]),
        temp_linear=np.array([r.temp_linear[0, 0] for r in regs]),
        temp_quad=np.array([r.temp_quad[0, 0] for r in regs]),
        perm_linear=np.array([r.perm_linear[0, 0] for r in regs]),
        perm_quad=np.array([r.perm_quad[0, 0] for r in regs]),
        total_chunks=int(round(spec.initial_chunks[0])),
        gamma=gamma,
    )


def _load(path: str) -> LoadedConfig:
    cfg = load_config(path)
    for w in cfg.warnings:
        log.warning("%s", w)
    return cfg


def _objective_from_flags(args, cfg: LoadedConfig) -> Objective:
    if getattr(args, "crra", None) is not None:
        return Objective(kind="crra", gamma=args.crra)
    if getattr(args, "mv", None) is not None:
        return Objective(kind="mean_variance", risk_aversion=args.mv)
    return cfg.objective


def _gamma_for_dp(objective: Objective, cfg: LoadedConfig) -> float:
    if objective.kind == "crra":
        return objective.gamma
    if cfg.objective.kind == "crra":
        return cfg.objective.gamma
    return BASELINE_GAMMA


def _add_common(p: argparse.ArgumentParser, out_dir: bool = True) -> None:
    p.add_argument("--config", required=True, help="market config file")
    p.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    if out_dir:
        p.add_argument("--out-dir", default="runs/out", help="artifact directory")


def _add_objective(p: argparse.ArgumentParser) -> None:
    g = p.add_mutually_exclusive_group()
    g.add_argument("--crra", type=float, metavar="GAMMA",
                   help="CRRA exponent (< 1)")
    g.add_argument("--mv", type=float, metavar="LAMBDA",
                   help="mean-variance risk aversion (>= 0)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="execkit",
                                 description="regime-switching optimal "
                                             "liquidation toolkit")
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true",
                    help="info-level logging")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("validate", help="check a config file")
    p.add_argument("--config", required=True)

    p = sub.add_parser("dp", help="solve the scalar DP for a 1-asset config")
    _add_common(p, out_dir=False)
    p.add_argument("--out", required=True, help="value-table file to write")
    p.add_argument("--rollout", help="scenario CSV (t, regime, return) to "
                                     "replay the solved policy on")
    p.add_argument("--schedule-out", help="where the replayed schedule CSV "
                                          "goes (default: next to --out)")
    p.add_argument("--gamma", type=float, help="override the config's CRRA "
                                               "exponent")
    p.add_argument("--samples", type=int, help="Monte-Carlo draws per backup")
    p.add_argument("--iterations", type=int,
                   help="Monte-Carlo batches averaged per backup")
    p.add_argument("--group-size", type=int, default=1,
                   help="periods per DP decision (default 1)")

    p = sub.add_parser("ortho", help="orthogonal portfolio decomposition")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="ortho.json to write")

    p = sub.add_parser("ortho-solve",
                       help="decompose, then solve every portfolio's DP")
    _add_common(p)
    p.add_argument("--serial", action="store_true",
                   help="disable per-portfolio parallelism")
    p.add_argument("--group-size", type=int, default=1)
    p.add_argument("--samples", type=int, help="Monte-Carlo draws per backup")

    p = sub.add_parser("pretrain", help="stages (i)-(iii): fit the network "
                                        "to the DP baseline")
    _add_common(p)
    p.add_argument("--serial", action="store_true")
    p.add_argument("--steps", type=int, help="pretrain gradient steps")
    p.add_argument("--states", type=int, help="baseline states to collect")
    p.add_argument("--lr", type=float, help="pretrain learning rate")

    p = sub.add_parser("train", help="stages (i)-(iv): full training")
    _add_common(p)
    _add_objective(p)
    p.add_argument("--serial", action="store_true")
    p.add_argument("--group-size", type=int, default=1)
    p.add_argument("--steps", type=int, help="training gradient steps")
    p.add_argument("--batch", type=int, help="paths per gradient step")
    p.add_argument("--lr", type=float, help="training learning rate")

    p = sub.add_parser("eval", help="evaluate a saved policy against the "
                                    "benchmark")
    _add_common(p)
    p.add_argument("--policy", help="policy.json from a train run")
    p.add_argument("--paths", type=int, help="evaluation paths")

    p = sub.add_parser("run", help="full pipeline incl. evaluation report")
    _add_common(p)
    _add_objective(p)
    p.add_argument("--serial", action="store_true")
    p.add_argument("--stop-after", choices=("ortho", "dp", "pretrain", "train"),
                   help="halt after this stage")
    p.add_argument("--group-size", type=int, default=1)

    p = sub.add_parser("frontier", help="mean-variance frontier sweep")
    _add_common(p)
    p.add_argument("--lambdas", default="0.2,0.5,1,5",
                   help="comma-separated risk aversions")
    p.add_argument("--restarts", type=int, default=3)
    p.add_argument("--serial", action="store_true")

    p = sub.add_parser("sweep-crra", help="full pipeline per CRRA exponent")
    _add_common(p)
    p.add_argument("--gammas", default="-1,-20",
                   help="comma-separated CRRA exponents")
    p.add_argument("--serial", action="store_true")
    return ap


def _override_pipeline(cfg: LoadedConfig, **kv) -> None:
    """Fold CLI overrides into the config's pipeline section."""
    section = dict(cfg.raw.get("pipeline") or {})
    for key, value in kv.items():
        if value is not None:
            section[key] = value
    cfg.raw["pipeline"] = section


def cmd_validate(args) -> int:
    try:
        cfg = _load(args.config)
    except ConfigError as exc:
        for line in str(exc).splitlines():
            print(line, file=sys.stderr)
        return 2
    print(f"ok: {cfg.spec.name} ({cfg.spec.n_assets} assets, "
          f"{cfg.spec.n_regimes} regimes, horizon {cfg.spec.horizon}); "
          f"objective {cfg.objective.describe()}; hash {cfg.hash[:12]}")
    return 0


def cmd_dp(args) -> int:
    cfg = _load(args.config)
    gamma = args.gamma if args.gamma is not None else _gamma_for_dp(cfg.objective, cfg)
    try:
        sub = scalar_spec(cfg.spec, gamma)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.group_size > 1:
        from execkit.dp import aggregate_steps
        sub = aggregate_steps(sub, args.group_size)
    settings = pipeline_settings(cfg)
    mc = McConfig(n_samples=args.samples or settings.dp_samples,
                  n_iterations=args.iterations or settings.dp_iterations,
                  seed=stream_seed(args.seed, "dp", 0))
    run_id = artifacts.make_run_id(cfg.hash, args.seed, "dp")
    t0 = time.perf_counter()
    table = solve_dp(sub, mc)
    secs = time.perf_counter() - t0
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_table(table, out)
    outputs = {"table": out}
    if args.rollout:
        regimes, returns = artifacts.read_path_file(args.rollout, sub.horizon)
        roll = rollout_policy(table, sub, regimes, returns)
        sched_path = Path(args.schedule_out) if args.schedule_out else (
            out.parent / "schedule.csv")
        artifacts.write_schedule_csv(sched_path, roll, regimes, run_id)
        outputs["schedule"] = sched_path
        print(f"terminal wealth (per unit initial price): {roll['terminal_wealth']:.6f}")
    artifacts.write_manifest(out.parent / "manifest.json", cfg.hash, args.seed,
                             "dp", {"dp": secs}, outputs,
                             time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()))
    print(f"table written to {out} ({secs:.2f}s)")
    return 0


def cmd_ortho(args) -> int:
    cfg = _load(args.config)
    dec = decompose_market(cfg.spec, _gamma_for_dp(cfg.objective, cfg))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    artifacts.write_ortho_json(out, dec, artifacts.make_run_id(cfg.hash, 0, "ortho"))
    np.set_printoptions(precision=4, suppress=True)
    print(f"eigenvalues: {dec.eigenvalues}")
    print(f"chunk targets: {dec.chunk_targets}")
    print(f"written to {out}")
    return 0


def _run_stages(args, stop_after: str | None, objective=None,
                command: str = "run") -> int:
    cfg = _load(args.config)
    _override_pipeline(
        cfg,
        train_steps=getattr(args, "steps", None) if command == "train" else None,
        batch_size=getattr(args, "batch", None),
        lr=getattr(args, "lr", None) if command == "train" else None,
        pretrain_steps=getattr(args, "steps", None) if command == "pretrain" else None,
        pretrain_states=getattr(args, "states", None),
        pretrain_lr=getattr(args, "lr", None) if command == "pretrain" else None,
        dp_samples=getattr(args, "samples", None),
    )
    try:
        result = run_pipeline(
            cfg,
            objective=objective,
            seed=args.seed,
            out_dir=args.out_dir,
            stop_after=stop_after,
            group_size=getattr(args, "group_size", 1),
            serial=getattr(args, "serial", False),
            command=command,
        )
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if result.reports:
        for name, rep in result.reports.items():
            print(f"{name:>10}: mean {rep.mean:10.3f}  median {rep.median:10.3f}  "
                  f"std {rep.std:8.3f}")
    print(f"artifacts in {result.out_dir} (run {result.manifest['run_id']})")
    return 0


def cmd_eval(args) -> int:
    cfg = _load(args.config)
    if args.paths:
        _override_pipeline(cfg, eval_paths=args.paths)
    settings = pipeline_settings(cfg)
    strategies = {"benchmark": BenchmarkStrategy(cfg.spec)}
    if args.policy:
        strategies["mlp"] = MlpStrategy(artifacts.load_policy(args.policy))
    reports, _, _ = evaluate_strategies(cfg.spec, strategies, settings.eval_paths,
                                        stream_rng(args.seed, "eval"))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    run_id = artifacts.make_run_id(cfg.hash, args.seed, "eval")
    gamma = cfg.objective.gamma if cfg.objective.kind == "crra" else None
    artifacts.write_eval_csv(out / "eval.csv", reports, gamma, run_id)
    artifacts.write_manifest(out / "manifest.json", cfg.hash, args.seed, "eval",
                             {}, {"eval": out / "eval.csv"},
                             time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()))
    for name, rep in reports.items():
        print(f"{name:>10}: mean {rep.mean:10.3f}  median {rep.median:10.3f}  "
              f"std {rep.std:8.3f}")
    return 0


def cmd_frontier(args) -> int:
    cfg = _load(args.config)
    lambdas = [float(tok) for tok in args.lambdas.split(",") if tok.strip()]
    t0 = time.perf_counter()
    rows, csv_rows = frontier_sweep(cfg, lambdas, args.restarts, seed=args.seed,
                                    serial=args.serial)
    secs = time.perf_counter() - t0
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    run_id = artifacts.make_run_id(cfg.hash, args.seed, "frontier")
    artifacts.write_frontier_csv(out / "frontier.csv", csv_rows, run_id)
    artifacts.write_manifest(out / "manifest.json", cfg.hash, args.seed,
                             "frontier", {"frontier": secs},
                             {"frontier": out / "frontier.csv"},
                             time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()))
    for row in rows:
        print(f"lambda {row.risk_aversion:6.2f}: best mean {row.mean:9.3f} "
              f"std {row.std:7.3f} (restart {row.restart_id})")
    print(f"frontier written to {out / 'frontier.csv'} ({secs:.1f}s)")
    return 0


def cmd_sweep_crra(args) -> int:
    cfg = _load(args.config)
    gammas = [float(tok) for tok in args.gammas.split(",") if tok.strip()]
    t0 = time.perf_counter()
    reports, bench, csv_rows = sweep_crra(cfg, gammas, seed=args.seed,
                                          serial=args.serial)
    secs = time.perf_counter() - t0
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    run_id = artifacts.make_run_id(cfg.hash, args.seed, "sweep-crra")
    artifacts.write_crra_csv(out / "crra.csv", csv_rows, run_id)
    artifacts.write_manifest(out / "manifest.json", cfg.hash, args.seed,
                             "sweep-crra", {"sweep": secs},
                             {"crra": out / "crra.csv"},
                             time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()))
    print(f"{'benchmark':>12}: mean {bench.mean:9.3f} std {bench.std:7.3f}")
    for gamma, rep in reports.items():
        print(f"gamma {gamma:6.1f}: mean {rep.mean:9.3f} std {rep.std:7.3f}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.cmd == "validate":
            return cmd_validate(args)
        if args.cmd == "dp":
            return cmd_dp(args)
        if args.cmd == "ortho":
            return cmd_ortho(args)
        if args.cmd == "ortho-solve":
            return _run_stages(args, "dp", command="ortho-solve")
        if args.cmd == "pretrain":
            return _run_stages(args, "pretrain", command="pretrain")
        if args.cmd == "train":
            cfg = _load(args.config)
            return _run_stages(args, "train",
                               objective=_objective_from_flags(args, cfg),
                               command="train")
        if args.cmd == "eval":
            return cmd_eval(args)
        if args.cmd == "run":
            cfg = _load(args.config)
            return _run_stages(args, args.stop_after,
                               objective=_objective_from_flags(args, cfg),
                               command="run")
        if args.cmd == "frontier":
            return cmd_frontier(args)
        if args.cmd == "sweep-crra":
            return cmd_sweep_crra(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    raise AssertionError(f"unhandled command {args.cmd}")


if __name__ == "__main__":
    sys.exit(main())
