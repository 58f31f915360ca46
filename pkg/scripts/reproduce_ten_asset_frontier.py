"""Mean-variance frontier on the 10-asset fixture, best of k restarts.

Slow on one core: every (lambda, restart) pair is a full pretrain + train.
Writes frontier.csv next to the printed table.
"""
from __future__ import annotations

import argparse
from pathlib import Path

from execkit import artifacts
from execkit.config import load_config
from execkit.evaluate import BenchmarkStrategy, EvalReport, run_strategy
from execkit.market import draw_noise
from execkit.pipeline import frontier_sweep, pipeline_settings
from execkit.seeds import stream_rng

ROOT = Path(__file__).resolve().parent.parent


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=ROOT / "configs/ten_asset_two_regime.yaml")
    ap.add_argument("--lambdas", default="0.2,0.5,1,5")
    ap.add_argument("--restarts", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out-dir", default="runs/ten_asset_frontier")
    ap.add_argument("--serial", action="store_true")
    args = ap.parse_args()

    cfg = load_config(args.config)
    lambdas = [float(s) for s in args.lambdas.split(",")]
    rows, csv_rows = frontier_sweep(cfg, lambdas, args.restarts, seed=args.seed,
                                    serial=args.serial)

    spec = cfg.spec
    regimes, eps = draw_noise(spec, pipeline_settings(cfg).eval_paths,
                              stream_rng(args.seed, "eval"))
    bench = EvalReport.from_wealth(
        "benchmark", run_strategy(spec, BenchmarkStrategy(spec), regimes, eps,
                                  name="benchmark"))

    print(f"{'lambda':>7} {'mean':>9} {'std':>7}  best restart")
    print(f"{'bench':>7} {bench.mean:9.3f} {bench.std:7.3f}")
    for row in rows:
        print(f"{row.risk_aversion:7.2f} {row.mean:9.3f} {row.std:7.3f}  "
              f"#{row.restart_id} of {args.restarts}")

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    run_id = artifacts.make_run_id(cfg.hash, args.seed, "frontier")
    artifacts.write_frontier_csv(out / "frontier.csv", csv_rows, run_id)
    print(f"\nwrote {out / 'frontier.csv'}")


if __name__ == "__main__":
    main()
