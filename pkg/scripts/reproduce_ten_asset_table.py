"""CRRA sweep on the 10-asset fixture: one full pipeline per gamma.

More negative exponents should buy lower std at the cost of mean wealth.
"""
from __future__ import annotations

import argparse
from pathlib import Path

from execkit import artifacts
from execkit.config import load_config
from execkit.pipeline import sweep_crra

ROOT = Path(__file__).resolve().parent.parent


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=ROOT / "configs/ten_asset_two_regime.yaml")
    ap.add_argument("--gammas", default="-1,-5,-10,-20")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out-dir", default="runs/ten_asset_crra")
    ap.add_argument("--serial", action="store_true")
    args = ap.parse_args()

    cfg = load_config(args.config)
    gammas = [float(s) for s in args.gammas.split(",")]
    reports, bench, csv_rows = sweep_crra(cfg, gammas, seed=args.seed,
                                          serial=args.serial)

    print(f"{'gamma':>7} {'mean':>9} {'median':>9} {'std':>7}")
    print(f"{'bench':>7} {bench.mean:9.3f} {bench.median:9.3f} {bench.std:7.3f}")
    for gamma in gammas:
        rep = reports[float(gamma)]
        print(f"{gamma:7.1f} {rep.mean:9.3f} {rep.median:9.3f} {rep.std:7.3f}")

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    run_id = artifacts.make_run_id(cfg.hash, args.seed, "sweep-crra")
    artifacts.write_crra_csv(out / "crra.csv", csv_rows, run_id)
    print(f"\nwrote {out / 'crra.csv'}")


if __name__ == "__main__":
    main()
